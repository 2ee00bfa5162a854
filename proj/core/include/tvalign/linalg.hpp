#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tvalign/random.hpp"

namespace tvalign {

/// Raised when operand shapes are incompatible. The message names the
/// operation and both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries);

  /// Builds from nested rows, e.g. Matrix::from_rows({{1, 2}, {3, 4}}).
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Matrix identity(std::size_t n);
  static Matrix gaussian(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  bool is_square() const { return rows_ == cols_; }

  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  std::span<const double> entries() const { return data_; }
  std::span<double> entries() { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  bool all_finite() const;
  std::string shape_string() const;

  /// Exact entrywise equality (no tolerance).
  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scaled(const Matrix& m, double factor);

/// aᵀ · b · a, the similarity (congruence) transform used for alignment.
Matrix conjugate(const Matrix& delta, const Matrix& u);

double frob_norm(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

struct QrResult {
  Matrix q;  // rows × cols, orthonormal columns
  Matrix r;  // cols × cols, upper triangular
};

/// Thin Householder QR. Requires rows ≥ cols. Rank-deficient input is
/// accepted; R then carries near-zero diagonal entries.
QrResult qr_decompose(const Matrix& m);

/// Number of pivoted-QR diagonal magnitudes exceeding tol_rel times the
/// largest one.
std::size_t numerical_rank(const Matrix& m, double tol_rel = 1e-8);

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
/// of R's diagonal folded into Q.
Matrix random_orthogonal(std::size_t d, Rng& rng);
Matrix random_orthogonal(std::size_t d, std::uint64_t seed);

/// ‖UᵀU − I‖_F², zero exactly when U is orthogonal.
double orthogonality_defect(const Matrix& u);

}  // namespace tvalign
