#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "svh/errors.hpp"

// Dense symmetric linear algebra for the d-by-d quadratic forms produced by
// the hedging optimizer. d is the number of static instruments, single digits
// in every intended use, so everything here is O(d^3) with no blocking.

namespace svh {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline std::vector<double> mat_vec(const Matrix& m, const std::vector<double>& x) {
  std::vector<double> y(m.rows(), 0.0);
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) y[i] += m(i, j) * x[j];
  return y;
}

struct SymmetricEigen {
  std::vector<double> values;  // ascending
  Matrix vectors;              // columns are eigenvectors
};

// Cyclic Jacobi rotations. Converges quadratically; for d <= 16 the sweep cap
// is never hit in practice.
inline SymmetricEigen eigen_symmetric(const Matrix& m) {
  const std::size_t n = m.rows();
  if (n != m.cols()) throw DomainError("eigen_symmetric: matrix not square");

  Matrix a = m;
  Matrix v(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off <= 1e-300) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  SymmetricEigen out;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = a(i, i);
  out.vectors = Matrix(n, n);

  // sort ascending, carrying the eigenvector columns
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (out.values[order[j]] < out.values[order[i]]) std::swap(order[i], order[j]);

  std::vector<double> sorted(n);
  for (std::size_t i = 0; i < n; ++i) sorted[i] = out.values[order[i]];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, i) = v(k, order[i]);
  out.values = sorted;
  return out;
}

struct SymmetricSolve {
  std::vector<double> x;
  double cond = 0.0;               // |lambda|_max / |lambda|_min before truncation
  bool used_pseudo_inverse = false;
  double min_eigenvalue = 0.0;
  double max_eigenvalue = 0.0;
};

// Solve m x = rhs through the eigendecomposition. Modes with
// |lambda| <= rel_cutoff * |lambda|_max are truncated (minimum-norm solution),
// and used_pseudo_inverse reports whether truncation actually happened.
inline SymmetricSolve solve_symmetric(const Matrix& m, const std::vector<double>& rhs,
                                      double rel_cutoff = 1e-12) {
  const std::size_t n = m.rows();
  if (rhs.size() != n) throw DomainError("solve_symmetric: size mismatch");

  SymmetricEigen eig = eigen_symmetric(m);
  double amax = 0.0, amin = std::numeric_limits<double>::infinity();
  for (double lam : eig.values) {
    amax = std::max(amax, std::abs(lam));
    amin = std::min(amin, std::abs(lam));
  }

  SymmetricSolve out;
  out.min_eigenvalue = eig.values.empty() ? 0.0 : eig.values.front();
  out.max_eigenvalue = eig.values.empty() ? 0.0 : eig.values.back();
  out.cond = (amin > 0.0) ? amax / amin : std::numeric_limits<double>::infinity();
  out.x.assign(n, 0.0);

  const double cutoff = rel_cutoff * (amax > 0.0 ? amax : 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double lam = eig.values[i];
    if (std::abs(lam) <= cutoff) {
      out.used_pseudo_inverse = true;
      continue;
    }
    double proj = 0.0;
    for (std::size_t k = 0; k < n; ++k) proj += eig.vectors(k, i) * rhs[k];
    proj /= lam;
    for (std::size_t k = 0; k < n; ++k) out.x[k] += eig.vectors(k, i) * proj;
  }
  return out;
}

}  // namespace svh
