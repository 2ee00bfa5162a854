#include "tvalign/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

namespace tvalign {
namespace {

[[noreturn]] void shape_mismatch(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                   b.shape_string());
}

void require_same_shape(const char* op, const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_mismatch(op, a, b);
}

// Householder reflector for x: returns v with H = I - 2 v vᵀ / (vᵀ v) mapping
// x to (alpha, 0, ..., 0). When x is already of that form, v_sq = 0 and H = I.
double make_reflector(std::vector<double>& v, double& alpha) {
  double tail_sq = 0.0;
  for (std::size_t i = 1; i < v.size(); ++i) tail_sq += v[i] * v[i];
  const double norm = std::sqrt(v[0] * v[0] + tail_sq);
  // Nothing to eliminate below the diagonal: H = I keeps 1×1 blocks exact.
  if (tail_sq == 0.0) {
    alpha = v[0];
    return 0.0;
  }
  alpha = v[0] >= 0.0 ? -norm : norm;
  v[0] -= alpha;
  double v_sq = 0.0;
  for (double x : v) v_sq += x * x;
  return v_sq;
}

// Applies H = I - 2 v vᵀ / v_sq to rows [k, rows) of columns [col_begin, cols).
void apply_reflector(Matrix& a, std::size_t k, std::size_t col_begin,
                     const std::vector<double>& v, double v_sq) {
  if (v_sq == 0.0) return;
  for (std::size_t j = col_begin; j < a.cols(); ++j) {
    double dot = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) dot += v[i] * a(k + i, j);
    const double f = 2.0 * dot / v_sq;
    for (std::size_t i = 0; i < v.size(); ++i) a(k + i, j) -= f * v[i];
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> entries)
    : rows_(rows), cols_(cols), data_(std::move(entries)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("Matrix: " + std::to_string(data_.size()) + " entries for shape " +
                     shape_string());
  }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw ShapeError("Matrix::from_rows: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::gaussian(std::size_t rows, std::size_t cols, Rng& rng, double stddev) {
  Matrix m(rows, cols);
  for (double& x : m.data_) x = stddev * rng.normal();
  return m;
}

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

std::string Matrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) shape_mismatch("matmul", a, b);
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape("add", a, b);
  Matrix out = a;
  auto dst = out.entries();
  auto src = b.entries();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  require_same_shape("subtract", a, b);
  Matrix out = a;
  auto dst = out.entries();
  auto src = b.entries();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= src[i];
  return out;
}

Matrix scaled(const Matrix& m, double factor) {
  Matrix out = m;
  for (double& x : out.entries()) x *= factor;
  return out;
}

Matrix conjugate(const Matrix& delta, const Matrix& u) {
  return matmul(matmul(transpose(u), delta), u);
}

double frob_norm(const Matrix& m) {
  double sum = 0.0;
  for (double x : m.entries()) sum += x * x;
  return std::sqrt(sum);
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_same_shape("max_abs_diff", a, b);
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a.entries()[i] - b.entries()[i]));
  return worst;
}

QrResult qr_decompose(const Matrix& m) {
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  if (rows < cols) {
    throw ShapeError("qr_decompose: needs rows >= cols, got " + m.shape_string());
  }
  Matrix work = m;
  std::vector<std::vector<double>> reflectors(cols);
  std::vector<double> norms(cols, 0.0);

  for (std::size_t k = 0; k < cols; ++k) {
    std::vector<double> v(rows - k);
    for (std::size_t i = k; i < rows; ++i) v[i - k] = work(i, k);
    double alpha = 0.0;
    const double v_sq = make_reflector(v, alpha);
    apply_reflector(work, k, k, v, v_sq);
    norms[k] = v_sq;
    reflectors[k] = std::move(v);
  }

  QrResult out{Matrix(rows, cols), Matrix(cols, cols)};
  for (std::size_t i = 0; i < cols; ++i)
    for (std::size_t j = i; j < cols; ++j) out.r(i, j) = work(i, j);

  // Q = H_0 H_1 ... H_{n-1} applied to the leading columns of the identity.
  for (std::size_t i = 0; i < cols; ++i) out.q(i, i) = 1.0;
  for (std::size_t k = cols; k-- > 0;) apply_reflector(out.q, k, 0, reflectors[k], norms[k]);

  // Normalize so that diag(R) >= 0.
  for (std::size_t k = 0; k < cols; ++k) {
    if (out.r(k, k) < 0.0) {
      for (std::size_t j = k; j < cols; ++j) out.r(k, j) = -out.r(k, j);
      for (std::size_t i = 0; i < rows; ++i) out.q(i, k) = -out.q(i, k);
    }
  }
  return out;
}

std::size_t numerical_rank(const Matrix& m, double tol_rel) {
  if (!(tol_rel > 0.0)) throw std::invalid_argument("numerical_rank: tol_rel must be > 0");
  Matrix work = m;
  const std::size_t rows = m.rows();
  const std::size_t cols = m.cols();
  const std::size_t steps = std::min(rows, cols);
  std::vector<double> diag;
  diag.reserve(steps);

  for (std::size_t k = 0; k < steps; ++k) {
    // Pivot on the remaining column of largest norm.
    std::size_t pivot = k;
    double best = -1.0;
    for (std::size_t j = k; j < cols; ++j) {
      double s = 0.0;
      for (std::size_t i = k; i < rows; ++i) s += work(i, j) * work(i, j);
      if (s > best) {
        best = s;
        pivot = j;
      }
    }
    if (pivot != k)
      for (std::size_t i = 0; i < rows; ++i) std::swap(work(i, k), work(i, pivot));

    std::vector<double> v(rows - k);
    for (std::size_t i = k; i < rows; ++i) v[i - k] = work(i, k);
    double alpha = 0.0;
    const double v_sq = make_reflector(v, alpha);
    apply_reflector(work, k, k, v, v_sq);
    diag.push_back(std::abs(alpha));
  }

  if (diag.empty() || diag.front() == 0.0) return 0;
  const double threshold = tol_rel * diag.front();
  return static_cast<std::size_t>(
      std::count_if(diag.begin(), diag.end(), [&](double d) { return d > threshold; }));
}

Matrix random_orthogonal(std::size_t d, Rng& rng) {
  if (d == 0) throw std::invalid_argument("random_orthogonal: d must be >= 1");
  // qr_decompose already folds the signs of diag(R) into Q.
  return qr_decompose(Matrix::gaussian(d, d, rng)).q;
}

Matrix random_orthogonal(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  return random_orthogonal(d, rng);
}

double orthogonality_defect(const Matrix& u) {
  if (!u.is_square()) {
    throw ShapeError("orthogonality_defect: expected square matrix, got " + u.shape_string());
  }
  const Matrix gram = matmul(transpose(u), u);
  double sum = 0.0;
  for (std::size_t i = 0; i < gram.rows(); ++i) {
    for (std::size_t j = 0; j < gram.cols(); ++j) {
      const double e = gram(i, j) - (i == j ? 1.0 : 0.0);
      sum += e * e;
    }
  }
  return sum;
}

}  // namespace tvalign
