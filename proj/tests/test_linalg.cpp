#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "mcgnn/linalg.hpp"
#include "mcgnn/rng.hpp"

namespace mcgnn {
namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-2.0, 2.0);
  return m;
}

Vector random_vector(std::size_t n, Rng& rng) {
  Vector v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

// Plain triple loop; the "third" loop is the column index of a 1-column rhs.
Vector matvec_oracle(const Matrix& m, const Vector& v) {
  Vector out(m.rows(), 0.0);
  const std::size_t rhs_cols = 1;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t k = 0; k < rhs_cols; ++k) {
      double s = 0.0;
      for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * v[j];
      out[i] += s;
    }
  }
  return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  EXPECT_EQ(a.size(), b.size());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

TEST(Matrix, ConstructionAndShape) {
  Matrix m(2, 3, 1.5);
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m.size(), 6u);
  EXPECT_EQ(m.shape(), "2x3");
  for (double v : m.values()) EXPECT_EQ(v, 1.5);
  EXPECT_THROW(Matrix(2, 2, Vector{1, 2, 3}), DimensionError);
}

TEST(Matrix, IdentityAndRows) {
  const Matrix id = Matrix::identity(3);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(id(i, j), i == j ? 1.0 : 0.0);
  }
  Matrix m(2, 2, Vector{1, 2, 3, 4});
  EXPECT_EQ(m.row(1)[0], 3.0);
  EXPECT_EQ(Matrix::column(Vector{7, 8}).shape(), "2x1");
}

TEST(Matvec, IdentityCase) {
  const Vector out = matvec(Matrix::identity(2), Vector{3, -1});
  EXPECT_EQ(out, (Vector{3, -1}));
}

TEST(Matvec, ZeroAnnihilates) {
  const Vector out = matvec(Matrix(3, 2), Vector{5, -7});
  EXPECT_EQ(out, (Vector{0, 0, 0}));
}

TEST(Matvec, MatchesTripleLoopOracle) {
  Rng rng(11);
  const Matrix m = random_matrix(4, 3, rng);
  const Vector v = random_vector(3, rng);
  EXPECT_LT(max_abs_diff(matvec(m, v), matvec_oracle(m, v)), 1e-12);
}

TEST(Matvec, MatchesOracleAcrossShapes) {
  Rng rng(12);
  for (std::size_t r : {1u, 5u, 8u, 17u, 128u}) {
    for (std::size_t c : {1u, 3u, 8u, 9u, 33u, 128u}) {
      const Matrix m = random_matrix(r, c, rng);
      const Vector v = random_vector(c, rng);
      EXPECT_LT(max_abs_diff(matvec(m, v), matvec_oracle(m, v)), 1e-12) << r << "x" << c;
    }
  }
}

TEST(Matvec, DimensionMismatchNamesShapes) {
  try {
    matvec(Matrix(2, 3), Vector{1, 2});
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find('2'), std::string::npos) << msg;
  }
}

TEST(Matvec, DistributesOverAddition) {
  Rng rng(13);
  for (int t = 0; t < 50; ++t) {
    const Matrix m = random_matrix(7, 11, rng);
    const Vector a = random_vector(11, rng);
    const Vector b = random_vector(11, rng);
    const Vector lhs = matvec(m, add(a, b));
    const Vector rhs = add(matvec(m, a), matvec(m, b));
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-10);
  }
}

TEST(Matvec, TransposedAndOuterMatchOracles) {
  Rng rng(14);
  const Matrix m = random_matrix(5, 9, rng);
  const Vector dy = random_vector(5, rng);
  const Vector x = random_vector(9, rng);
  Vector dx(9, 0.0);
  matvec_transposed_add(m, dy, dx);
  for (std::size_t j = 0; j < 9; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i) s += m(i, j) * dy[i];
    EXPECT_NEAR(dx[j], s, 1e-12);
  }
  Matrix acc(5, 9);
  outer_add(acc, dy, x);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 9; ++j) EXPECT_EQ(acc(i, j), dy[i] * x[j]);
  }
  EXPECT_THROW(matvec_transposed_add(m, x, dx), DimensionError);
  EXPECT_THROW(outer_add(acc, x, dy), DimensionError);
}

TEST(Relu, Examples) {
  EXPECT_EQ(relu(Vector{1, -2, 0}), (Vector{1, 0, 0}));
  EXPECT_EQ(relu(Vector{-1, -0.5, -3}), (Vector{0, 0, 0}));
}

TEST(Relu, Idempotent) {
  Rng rng(15);
  for (int t = 0; t < 100; ++t) {
    const Vector v = random_vector(10, rng);
    const Vector once = relu(v);
    EXPECT_EQ(relu(once), once);
  }
}

TEST(Sigmoid, SymmetryPointAndRange) {
  EXPECT_EQ(sigmoid(Vector{0.0}), (Vector{0.5}));
  EXPECT_EQ(mcgnn::tanh(Vector{0.0}), (Vector{0.0}));
  for (double x : {-30.0, -5.0, -1e-3, 1e-3, 5.0, 30.0}) {
    const double s = sigmoid(x);
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
    const double t = mcgnn::tanh(Vector{x})[0];
    EXPECT_GE(t, -1.0);
    EXPECT_LE(t, 1.0);
  }
}

TEST(Sigmoid, ReflectionIdentity) {
  Rng rng(16);
  for (int t = 0; t < 1000; ++t) {
    const double x = rng.uniform(-20.0, 20.0);
    EXPECT_NEAR(sigmoid(-x), 1.0 - sigmoid(x), 1e-15) << x;
  }
}

TEST(Softmax, UniformCase) {
  const Vector p = softmax_stable(Vector{0, 0, 0});
  for (double v : p) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsStayFinite) {
  const Vector p = softmax_stable(Vector{1000, 0});
  EXPECT_TRUE(all_finite(p));
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_GE(p[1], 0.0);
}

TEST(Softmax, ShiftInvariance) {
  Rng rng(17);
  for (int t = 0; t < 200; ++t) {
    const Vector v = random_vector(6, rng);
    const double c = rng.uniform(-100.0, 100.0);
    Vector shifted = v;
    for (double& x : shifted) x += c;
    EXPECT_LT(max_abs_diff(softmax_stable(v), softmax_stable(shifted)), 1e-12);
  }
}

TEST(Softmax, NormalizedOnAnyFiniteLogits) {
  Rng rng(18);
  for (int t = 0; t < 500; ++t) {
    Vector v = random_vector(1 + rng.index(10), rng);
    for (double& x : v) x *= rng.uniform(0.0, 800.0);
    const Vector p = softmax_stable(v);
    double s = 0.0;
    for (double x : p) {
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, EmptyInputRejected) {
  EXPECT_THROW(softmax_stable(Vector{}), DimensionError);
}

TEST(Hadamard, Examples) {
  EXPECT_EQ(hadamard(Vector{1, 2}, Vector{3, 4}), (Vector{3, 8}));
  EXPECT_EQ(hadamard(Vector{1.5, -2}, Vector{0, 0}), (Vector{0, 0}));
  EXPECT_THROW(hadamard(Vector{1}, Vector{1, 2}), DimensionError);
}

TEST(Hadamard, Commutative) {
  Rng rng(19);
  for (int t = 0; t < 100; ++t) {
    const Vector a = random_vector(9, rng);
    const Vector b = random_vector(9, rng);
    EXPECT_EQ(hadamard(a, b), hadamard(b, a));
  }
}

TEST(Kernels, FiniteInFiniteOut) {
  Rng rng(20);
  for (int t = 0; t < 100; ++t) {
    const Vector v = random_vector(12, rng);
    EXPECT_TRUE(all_finite(relu(v)));
    EXPECT_TRUE(all_finite(sigmoid(v)));
    EXPECT_TRUE(all_finite(mcgnn::tanh(v)));
    EXPECT_TRUE(all_finite(softmax_stable(v)));
  }
  EXPECT_FALSE(all_finite(Vector{1.0, std::numeric_limits<double>::quiet_NaN()}));
}

TEST(Argmax, FirstMaximumWins) {
  EXPECT_EQ(argmax(Vector{0.2, 0.5, 0.5}), 1u);
  EXPECT_EQ(argmax(Vector{3.0}), 0u);
}

TEST(Rng, DeterministicAndInRange) {
  Rng a(5), b(5), c(6);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double x = a.uniform();
    EXPECT_EQ(x, b.uniform());
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
    differs |= x != c.uniform();
  }
  EXPECT_TRUE(differs);
  Rng s1(5, 1), s2(5, 2);
  EXPECT_NE(s1.next(), s2.next());
}

TEST(Rng, NormalMoments) {
  Rng rng(21);
  const int n = 200000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s += x;
    s2 += x * x;
  }
  const double mean = s / n;
  const double var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(var, 1.0, 0.02);
}

}  // namespace
}  // namespace mcgnn
