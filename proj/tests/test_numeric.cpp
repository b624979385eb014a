#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "councilnd/numeric.hpp"

using namespace councilnd;

TEST(Softmax, SymmetricLogitsGiveUniform) {
  const Vector p = softmax(Vector{0.0, 0.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Softmax, TwoClassClosedForm) {
  const Vector p = softmax(Vector{1.0, 0.0});
  const double e = std::exp(1.0);
  EXPECT_NEAR(p[0], e / (e + 1.0), 1e-15);
  EXPECT_NEAR(p[1], 1.0 / (e + 1.0), 1e-15);
  EXPECT_NEAR(p[0], 0.73106, 1e-5);
}

TEST(Softmax, LargeLogitDoesNotOverflow) {
  const Vector p = softmax(Vector{1000.0, 0.0});
  EXPECT_TRUE(all_finite(p));
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_GE(p[1], 0.0);
  EXPECT_LT(p[1], 1e-300);
}

TEST(Softmax, EmptyInputThrows) { EXPECT_THROW(softmax(Vector{}), DimensionError); }

TEST(Softmax, ShiftInvarianceAndNormalization) {
  RandomStream rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    Vector v(1 + rng.uniform_index(12));
    for (double& x : v) x = 20.0 * rng.normal();
    const double t = 100.0 * rng.normal();
    Vector shifted = v;
    for (double& x : shifted) x += t;
    const Vector a = softmax(v);
    const Vector b = softmax(shifted);
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      EXPECT_NEAR(a[i], b[i], 1e-12);
      sum += a[i];
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Relu, Examples) {
  EXPECT_EQ(relu(Vector{-1.0, 0.0, 2.0}), (Vector{0.0, 0.0, 2.0}));
  EXPECT_EQ(relu(Vector{-3.0, -0.5}), (Vector{0.0, 0.0}));
  EXPECT_EQ(relu(Vector{0.0, 4.5, 1.0}), (Vector{0.0, 4.5, 1.0}));
}

TEST(DropoutMask, ZeroProbabilityIsIdentity) {
  RandomStream rng(3);
  const DropoutMask m = sample_dropout_mask(50, 0.0, rng);
  EXPECT_EQ(m.kept(), 50u);
  for (double v : m.multipliers()) EXPECT_EQ(v, 1.0);
}

TEST(DropoutMask, RetainedFractionConcentrates) {
  RandomStream rng(2024);
  const DropoutMask m = sample_dropout_mask(100000, 0.7, rng);
  const double frac = static_cast<double>(m.kept()) / 100000.0;
  EXPECT_GE(frac, 0.295);
  EXPECT_LE(frac, 0.305);
}

TEST(DropoutMask, SameSeedSameMask) {
  RandomStream a(77), b(77);
  EXPECT_EQ(sample_dropout_mask(1000, 0.4, a).keep, sample_dropout_mask(1000, 0.4, b).keep);
}

TEST(DropoutMask, InvertedScaling) {
  RandomStream rng(5);
  const DropoutMask m = sample_dropout_mask(20, 0.75, rng);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_DOUBLE_EQ(m.multipliers()[i], m.keep[i] ? 4.0 : 0.0);
  }
}

TEST(DropoutMask, RejectsInvalidProbability) {
  RandomStream rng(1);
  EXPECT_THROW(sample_dropout_mask(4, 1.0, rng), ParameterError);
  EXPECT_THROW(sample_dropout_mask(4, -0.1, rng), ParameterError);
  EXPECT_THROW(sample_dropout_mask(4, std::nan(""), rng), ParameterError);
}

TEST(ColumnMeanVariance, HandExample) {
  const MeanVariance mv = column_mean_variance(Matrix(2, 2, {1.0, 0.0, 0.0, 1.0}));
  EXPECT_EQ(mv.mean, (Vector{0.5, 0.5}));
  EXPECT_EQ(mv.variance, (Vector{0.5, 0.5}));
}

TEST(ColumnMeanVariance, ConstantRowsHaveZeroVariance) {
  Matrix m(5, 3);
  for (std::size_t r = 0; r < 5; ++r) {
    m(r, 0) = 0.1;
    m(r, 1) = 0.3;
    m(r, 2) = 0.6;
  }
  for (double v : column_mean_variance(m).variance) EXPECT_EQ(v, 0.0);
}

TEST(ColumnMeanVariance, SingleRowThrows) {
  EXPECT_THROW(column_mean_variance(Matrix(1, 3, 0.5)), InsufficientSamplesError);
}

TEST(ColumnMeanVariance, MatchesTwoPassReference) {
  RandomStream rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 2 + rng.uniform_index(150);
    const std::size_t k = 1 + rng.uniform_index(10);
    Matrix s(m, k);
    const double offset = 1e3 * rng.normal();
    for (double& v : s.data()) v = offset + rng.normal();
    const MeanVariance mv = column_mean_variance(s);
    for (std::size_t c = 0; c < k; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < m; ++r) mean += s(r, c);
      mean /= static_cast<double>(m);
      double ss = 0.0;
      for (std::size_t r = 0; r < m; ++r) ss += (s(r, c) - mean) * (s(r, c) - mean);
      const double var = ss / static_cast<double>(m - 1);
      EXPECT_NEAR(mv.mean[c], mean, 1e-12 * std::max(1.0, std::abs(mean)));
      EXPECT_NEAR(mv.variance[c], var, 1e-12 * std::max(1.0, var));
      EXPECT_GE(mv.variance[c], 0.0);
    }
  }
}

TEST(RandomStream, ReplayIsIdentical) {
  RandomStream a(123456789), b(123456789);
  for (int i = 0; i < 10000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
}

// Reference values from an independent splitmix64 + xoshiro256** implementation.
TEST(RandomStream, MatchesReferenceXoshiro) {
  RandomStream a(0);
  EXPECT_EQ(a.next_u64(), 0x99ec5f36cb75f2b4ULL);
  EXPECT_EQ(a.next_u64(), 0xbf6e1f784956452aULL);
  EXPECT_EQ(a.next_u64(), 0x1a5f849d4933e6e0ULL);
  RandomStream b(12345);
  EXPECT_EQ(b.next_u64(), 0xbe6a36374160d49bULL);
  EXPECT_EQ(b.next_u64(), 0x214aaa0637a688c6ULL);
  EXPECT_EQ(b.next_u64(), 0xf69d16de9954d388ULL);
}

TEST(RandomStream, ChildDependsOnLabelNotParentPosition) {
  RandomStream parent(42);
  const RandomStream before = parent.child("alpha");
  for (int i = 0; i < 100; ++i) parent.next_u64();
  RandomStream after = parent.child("alpha");
  RandomStream before_copy = before;
  for (int i = 0; i < 50; ++i) ASSERT_EQ(before_copy.next_u64(), after.next_u64());
  EXPECT_NE(parent.child("alpha").seed(), parent.child("beta").seed());
  EXPECT_NE(parent.child(std::uint64_t{1}).seed(), parent.child(std::uint64_t{2}).seed());
  EXPECT_NE(RandomStream(43).child("alpha").seed(), parent.child("alpha").seed());
}

TEST(RandomStream, UniformAndNormalMoments) {
  RandomStream rng(8);
  const int n = 200000;
  double su = 0.0, sn = 0.0, sn2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(su / n, 0.5, 0.005);
  EXPECT_NEAR(sn / n, 0.0, 0.01);
  EXPECT_NEAR(sn2 / n, 1.0, 0.02);
}

TEST(RandomStream, UniformIndexCoversRange) {
  RandomStream rng(4);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.uniform_index(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
  EXPECT_THROW(rng.uniform_index(0), ParameterError);
}

TEST(RandomStream, ShuffleIsAPermutation) {
  RandomStream rng(6);
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  rng.shuffle(v);
  EXPECT_EQ(std::set<int>(v.begin(), v.end()).size(), 100u);
  EXPECT_NE(v[0] * 1000 + v[1], 1);
}

TEST(Matrix, ShapeChecksAndRows) {
  EXPECT_THROW(Matrix(2, 3, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Matrix::from_rows({{1.0, 2.0}, {3.0}}), DimensionError);
  const Matrix m = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}});
  EXPECT_EQ(m.rows(), 3u);
  EXPECT_EQ(m.cols(), 2u);
  EXPECT_EQ(m(2, 1), 6.0);
  EXPECT_EQ(m.row_vector(1), (Vector{3.0, 4.0}));
}

TEST(VectorOps, NormsAndCosine) {
  EXPECT_DOUBLE_EQ(l2_norm(Vector{3.0, 4.0}), 5.0);
  EXPECT_DOUBLE_EQ(dot(Vector{1.0, 2.0}, Vector{3.0, 4.0}), 11.0);
  EXPECT_DOUBLE_EQ(squared_distance(Vector{1.0, 1.0}, Vector{4.0, 5.0}), 25.0);
  EXPECT_NEAR(cosine_similarity(Vector{1.0, 0.0}, Vector{1.0, 1.0}), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(l2_norm(l2_normalized(Vector{2.0, -7.0, 1.0})), 1.0, 1e-15);
  EXPECT_EQ(argmax(Vector{0.2, 0.5, 0.5}), 1u);
}

TEST(TextNumbers, RoundTripIsExact) {
  RandomStream rng(10);
  for (int i = 0; i < 5000; ++i) {
    const double v = std::ldexp(rng.normal(), static_cast<int>(rng.uniform_index(200)) - 100);
    double back = 0.0;
    ASSERT_TRUE(parse_double(format_double(v), back));
    ASSERT_EQ(back, v);
  }
  double x = 0.0;
  EXPECT_TRUE(parse_double("+1.5", x));
  EXPECT_EQ(x, 1.5);
  EXPECT_FALSE(parse_double("1.5abc", x));
  EXPECT_FALSE(parse_double("", x));
}

TEST(Cholesky, SolvesSpdSystem) {
  const Matrix a = Matrix::from_rows({{4.0, 2.0, 0.6}, {2.0, 5.0, 1.0}, {0.6, 1.0, 3.0}});
  const Matrix b = Matrix::from_rows({{1.0, 0.0}, {2.0, 1.0}, {3.0, -1.0}});
  const Matrix x = cholesky_solve(a, b);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      double ax = 0.0;
      for (std::size_t k = 0; k < 3; ++k) ax += a(r, k) * x(k, c);
      EXPECT_NEAR(ax, b(r, c), 1e-12);
    }
  }
}

TEST(Cholesky, SingularSystemThrows) {
  const Matrix a = Matrix::from_rows({{1.0, 1.0}, {1.0, 1.0}});
  EXPECT_THROW(cholesky_solve(a, Matrix(2, 1, 1.0)), SingularMatrixError);
}

TEST(Statistics, SampleStddev) {
  EXPECT_DOUBLE_EQ(sample_stddev(Vector{2.0}), 0.0);
  EXPECT_DOUBLE_EQ(mean_of(Vector{1.0, 2.0, 3.0}), 2.0);
  EXPECT_DOUBLE_EQ(sample_stddev(Vector{1.0, 2.0, 3.0}), 1.0);
}
