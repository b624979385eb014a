#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "councilnd/zsl.hpp"
#include "support.hpp"

using namespace councilnd;
using namespace testing_support;

namespace {

EmbeddingTable random_table(const std::vector<std::string>& labels, std::size_t dim, RandomStream& rng) {
  EmbeddingTable t(dim);
  for (const auto& l : labels) t.add(l, random_vector(dim, rng));
  return t;
}

Matrix random_orthogonal(std::size_t n, RandomStream& rng) {
  std::vector<Vector> basis;
  while (basis.size() < n) {
    Vector v = random_vector(n, rng);
    for (const Vector& b : basis) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += v[i] * b[i];
      for (std::size_t i = 0; i < n; ++i) v[i] -= dot * b[i];
    }
    basis.push_back(l2_normalized(v));
  }
  return Matrix::from_rows(basis);
}

Vector rotate(const Matrix& q, std::span<const double> v) {
  Vector out(q.rows(), 0.0);
  for (std::size_t i = 0; i < q.rows(); ++i) {
    for (std::size_t j = 0; j < q.cols(); ++j) out[i] += q(i, j) * v[j];
  }
  return out;
}

double ridge_objective(const Matrix& x, const Matrix& e, const Matrix& v, double lambda) {
  double s = 0.0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = 0; c < e.cols(); ++c) {
      double pred = 0.0;
      for (std::size_t i = 0; i < x.cols(); ++i) pred += x(r, i) * v(i, c);
      s += (pred - e(r, c)) * (pred - e(r, c));
    }
  }
  for (double w : v.data()) s += lambda * w * w;
  return s;
}

// Plain gradient descent on the ridge objective.
Matrix ridge_by_descent(const Matrix& x, const Matrix& e, double lambda, int iterations, double step) {
  Matrix v(x.cols(), e.cols(), 0.0);
  for (int it = 0; it < iterations; ++it) {
    Matrix grad(x.cols(), e.cols(), 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < e.cols(); ++c) {
        double pred = 0.0;
        for (std::size_t i = 0; i < x.cols(); ++i) pred += x(r, i) * v(i, c);
        const double res = pred - e(r, c);
        for (std::size_t i = 0; i < x.cols(); ++i) grad(i, c) += 2.0 * res * x(r, i);
      }
    }
    for (std::size_t i = 0; i < v.data().size(); ++i) v.data()[i] -= step * (grad.data()[i] + 2.0 * lambda * v.data()[i]);
  }
  return v;
}

}  // namespace

TEST(EmbeddingTable, NormalizesAndComposes) {
  EmbeddingTable t;
  t.add("brush", Vector{3.0, 4.0});
  t.add("hair", Vector{0.0, 2.0});
  EXPECT_DOUBLE_EQ(t.embedding("brush")[0], 0.6);
  const Vector e = t.embedding("brush_hair");
  EXPECT_NEAR(l2_norm(e), 1.0, 1e-12);
  EXPECT_NEAR(e[1] / e[0], (0.8 + 1.0) / 0.6, 1e-12);
  EXPECT_EQ(t.embedding("brush_xyzzy"), t.embedding("brush"));
  EXPECT_THROW(t.embedding("xyzzy"), DataError);
  EXPECT_THROW(t.add("brush", Vector{1.0, 0.0}), DataError);
  EXPECT_THROW(t.add("zero", Vector{0.0, 0.0}), DataError);
  EXPECT_THROW(t.add("short", Vector{1.0}), DimensionError);
}

TEST(EmbeddingTable, FileRoundTripAndWord2VecHeader) {
  RandomStream rng(71);
  const EmbeddingTable t = random_table({"a", "b", "c"}, 5, rng);
  std::stringstream buf;
  write_embeddings(buf, t);
  const EmbeddingTable back = read_embeddings(buf);
  EXPECT_EQ(back.entries(), t.entries());
  std::istringstream w2v("2 3\nfoo 1 0 0\nbar 0 2 0\n");
  const EmbeddingTable w = read_embeddings(w2v);
  EXPECT_EQ(w.size(), 2u);
  EXPECT_EQ(w.embedding("bar"), (Vector{0.0, 1.0, 0.0}));
  std::istringstream bad("foo 1 x\n");
  EXPECT_THROW(read_embeddings(bad), ParseError);
}

TEST(ConseEmbed, TopOneIsArgmaxEmbedding) {
  RandomStream rng(72);
  const auto labels = class_names(5);
  const EmbeddingTable t = random_table(labels, 4, rng);
  const Vector p{0.1, 0.4, 0.2, 0.2, 0.1};
  EXPECT_EQ(conse_embed(p, labels, t, 1), t.embedding("c1"));
  const Vector onehot{0.0, 0.0, 1.0, 0.0, 0.0};
  const Vector s = conse_embed(onehot, labels, t, 5);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(s[i], t.embedding("c2")[i], 1e-12);
}

TEST(ConseEmbed, OrthogonalPair) {
  EmbeddingTable t;
  t.add("a", Vector{1.0, 0.0});
  t.add("b", Vector{0.0, 1.0});
  const std::vector<std::string> labels{"a", "b"};
  const Vector s = conse_embed(Vector{0.5, 0.5}, labels, t, 2);
  EXPECT_NEAR(s[0], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(s[1], 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(ConseEmbed, BoundaryTieKeepsLowerIndex) {
  EmbeddingTable t;
  t.add("a", Vector{1.0, 0.0});
  t.add("b", Vector{0.0, 1.0});
  t.add("c", Vector{-1.0, 0.0});
  const std::vector<std::string> labels{"a", "b", "c"};
  EXPECT_EQ(conse_embed(Vector{0.2, 0.4, 0.4}, labels, t, 1), t.embedding("b"));
}

TEST(ConseEmbed, AlwaysUnitNorm) {
  RandomStream rng(73);
  const auto labels = class_names(6);
  const EmbeddingTable t = random_table(labels, 8, rng);
  for (int i = 0; i < 200; ++i) {
    Vector p = random_vector(6, rng);
    p = softmax(p);
    const Vector s = conse_embed(p, labels, t, 1 + static_cast<int>(rng.uniform_index(6)));
    EXPECT_NEAR(l2_norm(s), 1.0, 1e-9);
  }
  EXPECT_THROW(conse_embed(Vector(6, 1.0 / 6), labels, t, 0), ParameterError);
  EXPECT_THROW(conse_embed(Vector(6, 1.0 / 6), labels, t, 7), ParameterError);
}

TEST(NnClassify, Basics) {
  EmbeddingTable t;
  t.add("x", Vector{0.9, std::sqrt(1 - 0.81), 0.0});
  t.add("y", Vector{0.2, 0.0, std::sqrt(1 - 0.04)});
  t.add("z", Vector{-0.1, std::sqrt(1 - 0.01), 0.0});
  const std::vector<std::string> c{"z", "y", "x"};
  EXPECT_EQ(nn_classify(Vector{1.0, 0.0, 0.0}, c, t), "x");
  EXPECT_EQ(nn_classify(t.embedding("y"), c, t), "y");
  EXPECT_THROW(nn_classify(Vector{1.0, 0.0}, c, t), DimensionError);
  EXPECT_THROW(nn_classify(Vector{1.0, 0.0, 0.0}, std::vector<std::string>{}, t), ParameterError);
}

TEST(NnClassify, TieGoesToSmallerLabel) {
  EmbeddingTable t;
  t.add("b", Vector{1.0, 1.0});
  t.add("a", Vector{1.0, -1.0});
  EXPECT_EQ(nn_classify(Vector{1.0, 0.0}, std::vector<std::string>{"b", "a"}, t), "a");
}

TEST(NnClassify, RotationInvariant) {
  RandomStream rng(74);
  const auto labels = class_names(7);
  for (int trial = 0; trial < 50; ++trial) {
    const EmbeddingTable t = random_table(labels, 6, rng);
    const Matrix q = random_orthogonal(6, rng);
    EmbeddingTable rotated(6);
    for (const auto& [l, v] : t.entries()) rotated.add(l, rotate(q, v));
    const Vector query = random_vector(6, rng);
    EXPECT_EQ(nn_classify(query, labels, t), nn_classify(rotate(q, query), labels, rotated));
    for (const auto& l : labels) {
      EXPECT_NEAR(cosine_similarity(query, t.embedding(l)),
                  cosine_similarity(rotate(q, query), rotated.embedding(l)), 1e-9);
    }
  }
}

TEST(Devise, RecoversRealizableMap) {
  RandomStream rng(75);
  const std::size_t n = 40, d = 5, de = 3;
  Matrix vstar(d, de);
  for (double& v : vstar.data()) v = rng.normal();
  Matrix x(n, d);
  for (double& v : x.data()) v = rng.normal();
  EmbeddingTable t(de);
  std::vector<std::string> labels;
  // Each sample gets its own label whose unit embedding is x V*; scale x so
  // the target row is already unit length.
  for (std::size_t r = 0; r < n; ++r) {
    Vector e(de, 0.0);
    for (std::size_t c = 0; c < de; ++c) {
      for (std::size_t i = 0; i < d; ++i) e[c] += x(r, i) * vstar(i, c);
    }
    const double norm = l2_norm(e);
    for (std::size_t i = 0; i < d; ++i) x(r, i) /= norm;
    labels.push_back("s" + std::to_string(r));
    t.add(labels.back(), e);
  }
  const DeviseMap m = devise_train(x, labels, t, 0.0);
  for (std::size_t i = 0; i < vstar.data().size(); ++i) EXPECT_NEAR(m.projection.data()[i], vstar.data()[i], 1e-8);
}

TEST(Devise, ClosedFormMatchesGradientDescent) {
  RandomStream rng(76);
  for (int trial = 0; trial < 5; ++trial) {
    const auto labels_k = class_names(3);
    const EmbeddingTable t = random_table(labels_k, 2, rng);
    const std::size_t n = 15, d = 3;
    Matrix x(n, d);
    for (double& v : x.data()) v = 0.5 * rng.normal();
    std::vector<std::string> labels;
    Matrix e(n, 2);
    for (std::size_t r = 0; r < n; ++r) {
      labels.push_back(labels_k[rng.uniform_index(3)]);
      const Vector v = t.embedding(labels.back());
      e(r, 0) = v[0];
      e(r, 1) = v[1];
    }
    const double lambda = 0.5;
    const DeviseMap closed = devise_train(x, labels, t, lambda);
    const Matrix iter = ridge_by_descent(x, e, lambda, 20000, 0.01);
    EXPECT_NEAR(ridge_objective(x, e, closed.projection, lambda), ridge_objective(x, e, iter, lambda), 1e-6);
  }
}

TEST(Devise, ShrinksWithLargeLambda) {
  RandomStream rng(77);
  const auto labels_k = class_names(3);
  const EmbeddingTable t = random_table(labels_k, 4, rng);
  Matrix x(12, 3);
  for (double& v : x.data()) v = rng.normal();
  std::vector<std::string> labels;
  for (int r = 0; r < 12; ++r) labels.push_back(labels_k[static_cast<std::size_t>(r) % 3]);
  double prev = std::numeric_limits<double>::infinity();
  for (double lambda : {1.0, 1e2, 1e4, 1e8}) {
    const double fro = l2_norm(devise_train(x, labels, t, lambda).projection.data());
    EXPECT_LT(fro, prev);
    prev = fro;
  }
  EXPECT_LT(prev, 1e-6);
}

TEST(Devise, RankDeficientWithoutRidgeIsSingular) {
  EmbeddingTable t;
  t.add("a", Vector{1.0, 0.0});
  const Matrix x(3, 2, {1.0, 1.0, 2.0, 2.0, -1.0, -1.0});
  const std::vector<std::string> labels{"a", "a", "a"};
  EXPECT_THROW(devise_train(x, labels, t, 0.0), SingularMatrixError);
  EXPECT_NO_THROW(devise_train(x, labels, t, 0.1));
  EXPECT_THROW(devise_train(x, labels, t, -1.0), ParameterError);
}

namespace {

struct GzslFixture {
  DropoutHead head;
  EmbeddingTable table;
  std::vector<std::string> seen{"c0", "c1", "c2"};
  std::vector<std::string> unseen{"u0", "u1"};
};

GzslFixture gzsl_fixture() {
  RandomStream rng(78);
  GzslFixture f{random_head(4, 6, 3, 0.5, rng), EmbeddingTable(5)};
  for (const auto& l : {"c0", "c1", "c2", "u0", "u1"}) f.table.add(l, random_vector(5, rng));
  return f;
}

}  // namespace

TEST(Gzsl, RoutingFollowsTheGate) {
  const GzslFixture f = gzsl_fixture();
  const ZslContext ctx{f.head, f.table, 10};
  const ZslMethod conse = ConseConfig{2};
  RandomStream rng(79);
  for (int t = 0; t < 100; ++t) {
    const Vector x = random_vector(4, rng);
    const bool novel = rng.bernoulli(0.5);
    const std::size_t leader = rng.uniform_index(3);
    auto gate = [&](std::span<const double>, const RandomStream&) { return verdict(novel ? 1.0 : 0.0, leader, 0.5); };
    const std::string out = gzsl_predict(x, gate, conse, ctx, f.seen, f.unseen, GzslMode::AllToAll, rng);
    if (novel) {
      EXPECT_TRUE(out == "u0" || out == "u1");
      EXPECT_EQ(out, zsl_classify(conse, ctx, x, f.unseen, rng));
    } else {
      EXPECT_EQ(out, f.seen[leader]);
    }
  }
}

TEST(Gzsl, KnownNeverInvokesZsl) {
  const GzslFixture f = gzsl_fixture();
  int calls = 0;
  const std::string out = gzsl_route(verdict(0.1, 1, 0.5), f.head.class_labels(), f.seen, [&] {
    ++calls;
    return std::string("u0");
  });
  EXPECT_EQ(out, "c1");
  EXPECT_EQ(calls, 0);
}

TEST(Gzsl, UnseenToUnseenIgnoresGate) {
  const GzslFixture f = gzsl_fixture();
  const CouncilTable councils = elect_from_evidence(
      ElectionEvidence{f.head.class_labels(), std::vector<std::vector<std::size_t>>(3),
                       std::vector<std::vector<Vector>>(3)},
      1e-3);
  NoveltyDetector lo(f.head, councils, Variant::InformedDemocracy, 10);
  NoveltyDetector hi = lo;
  lo.set_tau(0.0);
  hi.set_tau(1e300);
  const ZslMethod conse = ConseConfig{3};
  RandomStream rng(80);
  for (int t = 0; t < 20; ++t) {
    const Vector x = random_vector(4, rng);
    EXPECT_EQ(gzsl_predict(x, lo, conse, f.table, f.seen, f.unseen, GzslMode::UnseenToUnseen, rng),
              gzsl_predict(x, hi, conse, f.table, f.seen, f.unseen, GzslMode::UnseenToUnseen, rng));
    // tau = 0 rejects everything, so U->U+S reduces to U->U.
    EXPECT_EQ(gzsl_predict(x, lo, conse, f.table, f.seen, f.unseen, GzslMode::UnseenToAll, rng),
              gzsl_predict(x, lo, conse, f.table, f.seen, f.unseen, GzslMode::UnseenToUnseen, rng));
  }
}

TEST(Gzsl, OverlappingLabelSetsRejected) {
  const GzslFixture f = gzsl_fixture();
  const ZslContext ctx{f.head, f.table, 10};
  auto gate = [](std::span<const double>, const RandomStream&) { return verdict(0.0, 0, 1.0); };
  const std::vector<std::string> overlap{"u0", "c1"};
  EXPECT_THROW(gzsl_predict(Vector(4, 0.0), gate, ZslMethod{ConseConfig{}}, ctx, f.seen, overlap,
                            GzslMode::AllToAll, RandomStream(1)),
               ParameterError);
}
