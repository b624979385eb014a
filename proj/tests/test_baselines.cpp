#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "councilnd/baselines.hpp"
#include "support.hpp"

using namespace councilnd;
using namespace testing_support;

namespace {

Matrix random_points(std::size_t n, std::size_t d, RandomStream& rng, std::size_t clusters = 3) {
  std::vector<Vector> centers;
  for (std::size_t c = 0; c < clusters; ++c) centers.push_back(random_vector(d, rng, 3.0));
  Matrix x(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector& mu = centers[rng.uniform_index(clusters)];
    for (std::size_t j = 0; j < d; ++j) x(i, j) = mu[j] + rng.normal();
  }
  return x;
}

}  // namespace

TEST(Gmm, SingleComponentClosedForm) {
  RandomStream rng(51);
  const GmmFit fit = fit_gmm(Matrix(2, 1, {0.0, 2.0}), GmmOptions{.components = 1}, rng);
  EXPECT_NEAR(fit.model.means(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(fit.model.variances(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(fit.model.weights[0], 1.0, 1e-12);
  // At the mean: -log p = 1/2 log(2 pi sigma^2).
  EXPECT_NEAR(gmm_novelty_score(fit.model, Vector{1.0}), 0.5 * std::log(2.0 * std::numbers::pi), 1e-12);
}

TEST(Gmm, SingleComponentMatchesSampleMoments) {
  RandomStream rng(52);
  for (int t = 0; t < 20; ++t) {
    const Matrix x = random_points(30, 4, rng, 1);
    const GmmFit fit = fit_gmm(x, GmmOptions{.components = 1}, rng);
    for (std::size_t j = 0; j < 4; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < 30; ++i) mean += x(i, j);
      mean /= 30.0;
      double var = 0.0;
      for (std::size_t i = 0; i < 30; ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
      var /= 30.0;
      EXPECT_NEAR(fit.model.means(0, j), mean, 1e-9);
      EXPECT_NEAR(fit.model.variances(0, j), var, 1e-9);
    }
  }
}

TEST(Gmm, LogLikelihoodNonDecreasing) {
  RandomStream rng(53);
  for (int t = 0; t < 30; ++t) {
    const Matrix x = random_points(60, 3, rng);
    const GmmFit fit = fit_gmm(x, GmmOptions{.components = 4}, rng);
    for (std::size_t i = 1; i < fit.log_likelihood.size(); ++i) {
      EXPECT_GE(fit.log_likelihood[i], fit.log_likelihood[i - 1] - 1e-9);
    }
  }
}

TEST(Gmm, WeightsAndResponsibilitiesAreSimplices) {
  RandomStream rng(54);
  const Matrix x = random_points(80, 5, rng);
  const GmmFit fit = fit_gmm(x, GmmOptions{}, rng);
  EXPECT_NEAR(std::accumulate(fit.model.weights.begin(), fit.model.weights.end(), 0.0), 1.0, 1e-9);
  const Matrix r = gmm_responsibilities(fit.model, x);
  for (std::size_t i = 0; i < r.rows(); ++i) {
    double s = 0.0;
    for (double v : r.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  for (double v : fit.model.variances.data()) EXPECT_GE(v, 1e-6);
}

TEST(Gmm, CollapsedComponentsHitTheFloor) {
  RandomStream rng(55);
  const Matrix x(3, 2, {0.0, 0.0, 1.0, 1.0, 5.0, -1.0});
  const GmmFit fit = fit_gmm(x, GmmOptions{.components = 3}, rng);
  for (double v : fit.model.variances.data()) EXPECT_GE(v, 1e-6);
  for (double ll : fit.log_likelihood) EXPECT_TRUE(std::isfinite(ll));
  const Matrix same(4, 2, 0.5);
  EXPECT_TRUE(std::isfinite(fit_gmm(same, GmmOptions{.components = 2}, rng).log_likelihood.back()));
}

TEST(Gmm, ScoreGrowsAwayFromMean) {
  RandomStream rng(56);
  const GmmFit fit = fit_gmm(random_points(50, 2, rng, 1), GmmOptions{.components = 1}, rng);
  const Vector mu = fit.model.means.row_vector(0);
  double prev = gmm_novelty_score(fit.model, mu);
  for (double step = 0.5; step < 5.0; step += 0.5) {
    Vector x = mu;
    x[1] += step;
    const double s = gmm_novelty_score(fit.model, x);
    EXPECT_GT(s, prev);
    prev = s;
  }
}

TEST(Gmm, RejectsTooFewSamples) {
  RandomStream rng(57);
  EXPECT_THROW(fit_gmm(Matrix(3, 2, 0.0), GmmOptions{.components = 4}, rng), InsufficientSamplesError);
}

TEST(Gmm, FileRoundTrip) {
  RandomStream rng(58);
  const GmmModel g = fit_gmm(random_points(40, 3, rng), GmmOptions{.components = 3}, rng).model;
  std::stringstream buf;
  write_gmm(buf, g);
  const GmmModel back = read_gmm(buf);
  EXPECT_EQ(back.weights, g.weights);
  EXPECT_EQ(back.means, g.means);
  EXPECT_EQ(back.variances, g.variances);
  EXPECT_EQ(back.variance_floor, g.variance_floor);
}

TEST(OcSvm, NuOneGivesUniformAlphas) {
  RandomStream rng(61);
  const OcSvmModel m = fit_ocsvm(random_points(12, 3, rng), OcSvmOptions{.nu = 1.0, .gamma = std::nullopt}, rng);
  ASSERT_EQ(m.alphas.size(), 12u);
  for (double a : m.alphas) EXPECT_NEAR(a, 1.0 / 12.0, 1e-12);
}

TEST(OcSvm, DualFeasibility) {
  RandomStream rng(62);
  for (int t = 0; t < 30; ++t) {
    const std::size_t n = 5 + rng.uniform_index(60);
    const OcSvmOptions opts{.nu = 0.05 + 0.5 * rng.uniform(), .gamma = std::nullopt};
    const OcSvmModel m = fit_ocsvm(random_points(n, 4, rng), opts, rng);
    EXPECT_TRUE(m.converged);
    EXPECT_NEAR(std::accumulate(m.alphas.begin(), m.alphas.end(), 0.0), 1.0, 1e-6);
    for (double a : m.alphas) {
      EXPECT_GT(a, 0.0);
      EXPECT_LE(a, m.upper_bound + 1e-15);
    }
  }
}

TEST(OcSvm, FaceEnumerationAgreesWithGrid) {
  // Cross-check of the two test oracles on instances where the grid is cheap.
  RandomStream rng(63);
  for (int t = 0; t < 6; ++t) {
    const std::size_t n = 2 + static_cast<std::size_t>(t % 2);
    const Matrix k = rbf_gram(random_points(n, 2, rng), 0.5);
    const double c = 1.0 / (0.6 * static_cast<double>(n));
    const double exact = ocsvm_dual_minimum_by_faces(k, c);
    const double grid = ocsvm_dual_minimum_by_grid(k, c, 1e-3);
    EXPECT_LE(exact, grid + 1e-12);
    EXPECT_NEAR(exact, grid, 1e-3);
  }
}

TEST(OcSvm, ObjectiveMatchesExactMinimum) {
  RandomStream rng(64);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 2 + rng.uniform_index(7);
    const Matrix x = random_points(n, 2, rng);
    const OcSvmOptions opts{.nu = 0.2 + 0.7 * rng.uniform(), .gamma = 0.5};
    const OcSvmModel m = fit_ocsvm(x, opts, rng);
    const double exact = ocsvm_dual_minimum_by_faces(rbf_gram(x, 0.5), m.upper_bound);
    EXPECT_NEAR(m.dual_objective, exact, 1e-3);
  }
}

TEST(OcSvm, DuplicatedDataKeepsDecisionFunction) {
  RandomStream rng(65);
  const Matrix x = random_points(20, 2, rng);
  std::vector<Vector> rows;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    rows.push_back(x.row_vector(i));
    rows.push_back(x.row_vector(i));
  }
  const OcSvmOptions opts{.nu = 0.2, .gamma = 0.5, .tolerance = 1e-8};
  const OcSvmModel a = fit_ocsvm(x, opts, rng);
  const OcSvmModel b = fit_ocsvm(Matrix::from_rows(rows), opts, rng);
  for (int t = 0; t < 20; ++t) {
    const Vector q = random_vector(2, rng, 3.0);
    EXPECT_NEAR(ocsvm_decision(a, q), ocsvm_decision(b, q), 1e-4);
  }
}

TEST(OcSvm, FarPointsScoreHigher) {
  RandomStream rng(66);
  const Matrix x = random_points(40, 2, rng, 1);
  const OcSvmModel m = fit_ocsvm(x, OcSvmOptions{.gamma = 0.5}, rng);
  std::size_t heaviest = 0;
  for (std::size_t i = 1; i < m.alphas.size(); ++i) {
    if (m.alphas[i] > m.alphas[heaviest]) heaviest = i;
  }
  Vector far = m.support_vectors.row_vector(heaviest);
  far[0] += 50.0;
  EXPECT_LT(ocsvm_novelty_score(m, m.support_vectors.row(heaviest)), ocsvm_novelty_score(m, far));
  EXPECT_EQ(ocsvm_novelty_score(m, far), ocsvm_novelty_score(m, far));
}

TEST(OcSvm, ScoreIsLipschitz) {
  // |d score / dx| <= sum alpha * sqrt(2 gamma / e) for the RBF kernel.
  RandomStream rng(67);
  const double gamma = 0.7;
  const OcSvmModel m = fit_ocsvm(random_points(30, 3, rng), OcSvmOptions{.gamma = gamma}, rng);
  const double bound = std::sqrt(2.0 * gamma / std::exp(1.0));
  for (int t = 0; t < 200; ++t) {
    const Vector a = random_vector(3, rng, 3.0);
    Vector b = a;
    const Vector dir = random_vector(3, rng, 1e-3);
    double len = 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      b[j] += dir[j];
      len += dir[j] * dir[j];
    }
    EXPECT_LE(std::abs(ocsvm_novelty_score(m, a) - ocsvm_novelty_score(m, b)), bound * std::sqrt(len) + 1e-12);
  }
}

TEST(OcSvm, RejectsBadInputs) {
  RandomStream rng(68);
  EXPECT_THROW(fit_ocsvm(Matrix(1, 2, 0.0), OcSvmOptions{}, rng), InsufficientSamplesError);
  EXPECT_THROW(fit_ocsvm(Matrix(4, 2, 0.0), OcSvmOptions{.nu = 0.0, .gamma = std::nullopt}, rng), ParameterError);
  EXPECT_THROW(fit_ocsvm(Matrix(4, 2, 0.0), OcSvmOptions{.nu = 0.5, .gamma = -1.0}, rng), ParameterError);
}

TEST(OcSvm, FileRoundTrip) {
  RandomStream rng(69);
  const OcSvmModel m = fit_ocsvm(random_points(25, 3, rng), OcSvmOptions{}, rng);
  std::stringstream buf;
  write_ocsvm(buf, m);
  const OcSvmModel back = read_ocsvm(buf);
  EXPECT_EQ(back.alphas, m.alphas);
  EXPECT_EQ(back.support_vectors, m.support_vectors);
  EXPECT_EQ(back.rho, m.rho);
  EXPECT_EQ(back.gamma, m.gamma);
  const Vector q{0.3, -0.2, 1.0};
  EXPECT_EQ(ocsvm_decision(back, q), ocsvm_decision(m, q));
}

TEST(SoftmaxConfidence, Definition) {
  // Logits log(0.9), log(0.05), log(0.05) through an identity-like head.
  const DropoutHead head(Matrix(1, 1, {1.0}), Vector{0.0},
                         Matrix(1, 3, {std::log(0.9), std::log(0.05), std::log(0.05)}), 0.5, class_names(3));
  EXPECT_NEAR(softmax_confidence_score(head, Vector{1.0}), 0.1, 1e-12);
  const DropoutHead flat(Matrix(1, 1, {1.0}), Vector{0.0}, Matrix(1, 4, 0.0), 0.5, class_names(4));
  EXPECT_NEAR(softmax_confidence_score(flat, Vector{1.0}), 0.75, 1e-15);
}

TEST(SoftmaxConfidence, Range) {
  RandomStream rng(70);
  for (int t = 0; t < 200; ++t) {
    const std::size_t k = 2 + rng.uniform_index(6);
    const DropoutHead head = random_head(3, 4, k, 0.5, rng);
    const double s = softmax_confidence_score(head, random_vector(3, rng));
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0 - 1.0 / static_cast<double>(k) + 1e-15);
  }
}
