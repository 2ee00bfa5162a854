#pragma once

// Independent reference implementations the tests compare against. None of
// these call into the library's arithmetic.

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "tvalign/linalg.hpp"
#include "tvalign/random.hpp"

namespace oracle {

inline tvalign::Matrix naive_matmul(const tvalign::Matrix& a, const tvalign::Matrix& b) {
  tvalign::Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

inline tvalign::Matrix naive_transpose(const tvalign::Matrix& a) {
  tvalign::Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  return out;
}

inline double naive_frob(const tvalign::Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * a(i, j);
  return std::sqrt(s);
}

// Rank by Gaussian elimination with full pivoting, relative tolerance on the
// largest pivot. Deliberately unrelated to the QR path under test.
inline std::size_t elimination_rank(tvalign::Matrix a, double tol_rel = 1e-8) {
  const std::size_t m = a.rows(), n = a.cols();
  double first_pivot = 0.0;
  std::size_t rank = 0;
  for (std::size_t step = 0; step < std::min(m, n); ++step) {
    std::size_t pr = step, pc = step;
    double best = 0.0;
    for (std::size_t i = step; i < m; ++i)
      for (std::size_t j = step; j < n; ++j)
        if (std::abs(a(i, j)) > best) {
          best = std::abs(a(i, j));
          pr = i;
          pc = j;
        }
    if (step == 0) first_pivot = best;
    if (best == 0.0 || best <= tol_rel * first_pivot) break;
    for (std::size_t j = 0; j < n; ++j) std::swap(a(step, j), a(pr, j));
    for (std::size_t i = 0; i < m; ++i) std::swap(a(i, step), a(i, pc));
    for (std::size_t i = step + 1; i < m; ++i) {
      const double f = a(i, step) / a(step, step);
      for (std::size_t j = step; j < n; ++j) a(i, j) -= f * a(step, j);
    }
    ++rank;
  }
  return rank;
}

// Central finite difference of f with respect to every entry of x.
inline tvalign::Matrix central_difference(const std::function<double(const tvalign::Matrix&)>& f,
                                          tvalign::Matrix x, double h = 1e-5) {
  tvalign::Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double keep = x(i, j);
      x(i, j) = keep + h;
      const double up = f(x);
      x(i, j) = keep - h;
      const double down = f(x);
      x(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * h);
    }
  return g;
}

// Largest relative error over entries whose magnitude exceeds floor.
inline double max_rel_error(const tvalign::Matrix& got, const tvalign::Matrix& want,
                            double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < got.rows(); ++i)
    for (std::size_t j = 0; j < got.cols(); ++j) {
      const double scale = std::max(std::abs(got(i, j)), std::abs(want(i, j)));
      if (scale <= floor) continue;
      worst = std::max(worst, std::abs(got(i, j) - want(i, j)) / scale);
    }
  return worst;
}

}  // namespace oracle
