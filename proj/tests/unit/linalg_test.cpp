#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "tvalign/linalg.hpp"

using tvalign::Matrix;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  tvalign::Rng rng(seed);
  return Matrix::gaussian(r, c, rng);
}

}  // namespace

TEST(Matmul, IdentityLeavesOperand) {
  const Matrix x = Matrix::from_rows({{3, 4}, {5, 6}});
  EXPECT_EQ(tvalign::matmul(Matrix::identity(2), x), x);
}

TEST(Matmul, PermutationSwapsColumns) {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix p = Matrix::from_rows({{0, 1}, {1, 0}});
  EXPECT_EQ(tvalign::matmul(a, p), Matrix::from_rows({{2, 1}, {4, 3}}));
}

TEST(Matmul, MatchesTripleLoop) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix a = random_matrix(5, 5, seed);
    const Matrix b = random_matrix(5, 5, seed + 100);
    EXPECT_LE(tvalign::max_abs_diff(tvalign::matmul(a, b), oracle::naive_matmul(a, b)), 1e-12);
  }
  const Matrix a = random_matrix(3, 7, 9);
  const Matrix b = random_matrix(7, 2, 10);
  EXPECT_LE(tvalign::max_abs_diff(tvalign::matmul(a, b), oracle::naive_matmul(a, b)), 1e-12);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  try {
    tvalign::matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL() << "expected ShapeError";
  } catch (const tvalign::ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2x3", msg.find("2x3") + 1), std::string::npos) << msg;
  }
  EXPECT_THROW(tvalign::add(Matrix(2, 2), Matrix(2, 3)), tvalign::ShapeError);
  EXPECT_THROW(tvalign::subtract(Matrix(1, 2), Matrix(2, 1)), tvalign::ShapeError);
}

TEST(Elementwise, AddSubtractScale) {
  const Matrix a = random_matrix(3, 4, 1);
  const Matrix b = random_matrix(3, 4, 2);
  const Matrix s = tvalign::add(a, b);
  const Matrix d = tvalign::subtract(a, b);
  const Matrix k = tvalign::scaled(a, -2.5);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(s(i, j), a(i, j) + b(i, j));
      EXPECT_EQ(d(i, j), a(i, j) - b(i, j));
      EXPECT_EQ(k(i, j), -2.5 * a(i, j));
    }
  EXPECT_EQ(tvalign::transpose(a), oracle::naive_transpose(a));
}

TEST(FrobNorm, HandValues) {
  EXPECT_EQ(tvalign::frob_norm(Matrix(3, 3)), 0.0);
  EXPECT_EQ(tvalign::frob_norm(Matrix::from_rows({{3, 4}})), 5.0);
}

TEST(FrobNorm, InvariantUnderOrthogonalConjugation) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix m = random_matrix(8, 8, seed);
    const Matrix q = tvalign::random_orthogonal(8, seed + 50);
    const Matrix qt_m_q = oracle::naive_matmul(oracle::naive_matmul(oracle::naive_transpose(q), m), q);
    EXPECT_NEAR(tvalign::frob_norm(qt_m_q) / tvalign::frob_norm(m), 1.0, 1e-10);
    EXPECT_LE(tvalign::max_abs_diff(tvalign::conjugate(m, q), qt_m_q), 1e-12);
  }
}

TEST(Qr, IdentityAndZero) {
  const auto id = tvalign::qr_decompose(Matrix::identity(4));
  EXPECT_LE(tvalign::max_abs_diff(id.q, Matrix::identity(4)), 1e-15);
  EXPECT_LE(tvalign::max_abs_diff(id.r, Matrix::identity(4)), 1e-15);

  const auto zero = tvalign::qr_decompose(Matrix(2, 2));
  EXPECT_EQ(zero.r, Matrix(2, 2));
}

TEST(Qr, ReconstructsTallMatrix) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix a = random_matrix(6, 3, seed);
    const auto [q, r] = tvalign::qr_decompose(a);
    ASSERT_EQ(q.rows(), 6u);
    ASSERT_EQ(q.cols(), 3u);
    ASSERT_EQ(r.rows(), 3u);
    EXPECT_LE(tvalign::frob_norm(tvalign::subtract(oracle::naive_matmul(q, r), a)) /
                  tvalign::frob_norm(a),
              1e-10);
    const Matrix qtq = oracle::naive_matmul(oracle::naive_transpose(q), q);
    EXPECT_LE(tvalign::max_abs_diff(qtq, Matrix::identity(3)), 1e-12);
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_GE(r(i, i), 0.0);
      for (std::size_t j = 0; j < i; ++j) EXPECT_EQ(r(i, j), 0.0);
    }
  }
}

TEST(Qr, RejectsWideInput) {
  EXPECT_THROW(tvalign::qr_decompose(Matrix(2, 3)), tvalign::ShapeError);
}

TEST(NumericalRank, HandCases) {
  EXPECT_EQ(tvalign::numerical_rank(Matrix(5, 5)), 0u);
  for (std::size_t d : {1, 4, 9}) EXPECT_EQ(tvalign::numerical_rank(Matrix::identity(d)), d);
}

TEST(NumericalRank, LowRankProductAgreesWithEliminationOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (std::size_t r : {1, 2, 4}) {
      const Matrix p = oracle::naive_matmul(random_matrix(16, r, seed), random_matrix(r, 16, seed + 7));
      EXPECT_EQ(tvalign::numerical_rank(p), r);
      EXPECT_EQ(oracle::elimination_rank(p), r);
    }
  }
  const Matrix wide = random_matrix(3, 7, 4);
  EXPECT_EQ(tvalign::numerical_rank(wide), 3u);
}

TEST(RandomOrthogonal, OneByOneIsPlusMinusOne) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Matrix q = tvalign::random_orthogonal(1, seed);
    EXPECT_EQ(std::abs(q(0, 0)), 1.0);
  }
}

TEST(RandomOrthogonal, DeterministicAndOrthogonal) {
  const Matrix a = tvalign::random_orthogonal(8, 42);
  const Matrix b = tvalign::random_orthogonal(8, 42);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, tvalign::random_orthogonal(8, 43));
  const Matrix qtq = oracle::naive_matmul(oracle::naive_transpose(a), a);
  EXPECT_LE(oracle::naive_frob(tvalign::subtract(qtq, Matrix::identity(8))), 1e-10);
}

TEST(OrthogonalityDefect, HandValues) {
  EXPECT_EQ(tvalign::orthogonality_defect(Matrix::identity(5)), 0.0);
  EXPECT_EQ(tvalign::orthogonality_defect(tvalign::scaled(Matrix::identity(2), 2.0)), 18.0);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_LE(tvalign::orthogonality_defect(tvalign::random_orthogonal(6, seed)), 1e-18);
  }
  EXPECT_THROW(tvalign::orthogonality_defect(Matrix(2, 3)), tvalign::ShapeError);
}
