#pragma once

// Seeded Gaussian-cluster datasets for desk-scale experiments.
//
// Seen class means are drawn from N(0, s^2 I) with s chosen so the typical
// pairwise distance is 1.5x the requested separation, rejecting any draw
// closer than `separation` to an earlier mean. Each novel class starts at a
// randomly chosen seen mean and moves `displacement` toward a random convex
// combination of the other seen means, so novel categories fall between known
// ones rather than off in directions the classifier never looks at. Placements
// closer than `displacement` to any seen mean are redrawn. With
// displacement = 0 a novel class coincides with a seen class.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "councilnd/dataset.hpp"
#include "councilnd/errors.hpp"
#include "councilnd/numeric.hpp"
#include "councilnd/zsl.hpp"

namespace councilnd {

struct SyntheticSpec {
  int seen_classes = 8;
  int novel_classes = 4;
  int samples_per_class = 150;
  int dim = 64;
  double separation = 8.0;
  double noise = 1.0;          // per-coordinate standard deviation
  double displacement = 6.0;
  int embedding_dim = 32;      // 0 disables the label embedding table
  double embedding_noise = 0.05;
  std::uint64_t seed = 0;
  int max_attempts = 2000;     // per class mean

  void validate() const {
    if (seen_classes < 2) throw ParameterError("synthetic: need at least two seen classes");
    if (novel_classes < 0) throw ParameterError("synthetic: novel_classes must be >= 0");
    if (samples_per_class < 1) throw ParameterError("synthetic: samples_per_class must be >= 1");
    if (dim < 1) throw ParameterError("synthetic: dim must be >= 1");
    if (!(separation >= 0.0) || !(noise >= 0.0) || !(displacement >= 0.0)) {
      throw ParameterError("synthetic: separation, noise and displacement must be >= 0");
    }
    if (embedding_dim < 0) throw ParameterError("synthetic: embedding_dim must be >= 0");
  }
};

struct SyntheticData {
  FeatureDataset seen;
  FeatureDataset novel;
  std::vector<std::string> seen_labels;
  std::vector<std::string> novel_labels;
  Matrix seen_means;
  Matrix novel_means;
  EmbeddingTable embeddings;  // empty when embedding_dim == 0

  FeatureDataset combined() const { return FeatureDataset::concat(seen, novel); }
};

namespace detail {

inline std::string indexed_name(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%02d", prefix, i);
  return buf;
}

inline FeatureDataset sample_clusters(const Matrix& means, const std::vector<std::string>& labels, int per_class,
                                      double noise, RandomStream rng, const std::string& provenance) {
  const std::size_t d = means.cols();
  const std::size_t n = means.rows() * static_cast<std::size_t>(per_class);
  FeatureDataset ds;
  ds.provenance = provenance;
  ds.features = Matrix(n, d);
  std::size_t row = 0;
  for (std::size_t c = 0; c < means.rows(); ++c) {
    for (int s = 0; s < per_class; ++s, ++row) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s-%04d", labels[c].c_str(), s);
      ds.ids.emplace_back(id);
      ds.labels.push_back(labels[c]);
      auto x = ds.features.row(row);
      auto mu = means.row(c);
      for (std::size_t j = 0; j < d; ++j) x[j] = mu[j] + noise * rng.normal();
    }
  }
  return ds;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto d = static_cast<std::size_t>(spec.dim);
  const auto ks = static_cast<std::size_t>(spec.seen_classes);
  const auto kn = static_cast<std::size_t>(spec.novel_classes);
  const RandomStream base(spec.seed);
  RandomStream geo = base.child("geometry");

  SyntheticData out;
  for (int c = 0; c < spec.seen_classes; ++c) out.seen_labels.push_back(detail::indexed_name("seen", c));
  for (int c = 0; c < spec.novel_classes; ++c) out.novel_labels.push_back(detail::indexed_name("novel", c));

  const double spread = 1.5 * spec.separation / std::sqrt(2.0 * static_cast<double>(d));
  out.seen_means = Matrix(ks, d);
  for (std::size_t c = 0; c < ks; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
      auto m = out.seen_means.row(c);
      for (double& v : m) v = spread * geo.normal();
      placed = true;
      for (std::size_t o = 0; o < c && placed; ++o) {
        placed = std::sqrt(squared_distance(m, out.seen_means.row(o))) >= spec.separation;
      }
    }
    if (!placed) {
      throw ParameterError("synthetic: cannot place " + std::to_string(ks) + " classes at separation " +
                           format_double(spec.separation) + " in dimension " + std::to_string(d));
    }
  }

  out.novel_means = Matrix(kn, d);
  for (std::size_t c = 0; c < kn; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < spec.max_attempts && !placed; ++attempt) {
      const std::size_t anchor = geo.uniform_index(ks);
      // Target: a random convex combination of the other seen means (flat
      // Dirichlet weights via normalized exponentials).
      Vector dir(d, 0.0);
      double total = 0.0;
      for (std::size_t o = 0; o < ks; ++o) {
        if (o == anchor) continue;
        const double w = -std::log(1.0 - geo.uniform());
        total += w;
        auto mo = out.seen_means.row(o);
        auto ma = out.seen_means.row(anchor);
        for (std::size_t j = 0; j < d; ++j) dir[j] += w * (mo[j] - ma[j]);
      }
      if (!(total > 0.0)) continue;
      if (l2_norm(dir) == 0.0) continue;
      dir = l2_normalized(dir);
      auto m = out.novel_means.row(c);
      auto a = out.seen_means.row(anchor);
      for (std::size_t j = 0; j < d; ++j) m[j] = a[j] + spec.displacement * dir[j];
      placed = true;
      for (std::size_t o = 0; o < ks && placed; ++o) {
        placed = std::sqrt(squared_distance(m, out.seen_means.row(o))) >= spec.displacement * (1.0 - 1e-12);
      }
    }
    if (!placed) {
      throw ParameterError("synthetic: cannot place novel classes at displacement " +
                           format_double(spec.displacement));
    }
  }

  const std::string provenance = "synthetic gaussian clusters (seed " + std::to_string(spec.seed) + ")";
  out.seen = detail::sample_clusters(out.seen_means, out.seen_labels, spec.samples_per_class, spec.noise,
                                     base.child("seen-samples"), provenance);
  out.novel = detail::sample_clusters(out.novel_means, out.novel_labels, spec.samples_per_class, spec.noise,
                                      base.child("novel-samples"), provenance);

  // Label embeddings: a fixed random linear image of each class mean plus a
  // little noise, so feature-to-embedding regression is well posed.
  if (spec.embedding_dim > 0) {
    RandomStream emb = base.child("embeddings");
    const auto de = static_cast<std::size_t>(spec.embedding_dim);
    Matrix proj(de, d);
    for (double& v : proj.data()) v = emb.normal() / std::sqrt(static_cast<double>(d));
    out.embeddings = EmbeddingTable(de);
    auto add = [&](const std::string& label, std::span<const double> mean) {
      Vector e(de, 0.0);
      for (std::size_t r = 0; r < de; ++r) e[r] = dot(proj.row(r), mean);
      const double scale = l2_norm(e);
      for (double& v : e) v += spec.embedding_noise * scale * emb.normal() / std::sqrt(static_cast<double>(de));
      out.embeddings.add(label, e);
    };
    for (std::size_t c = 0; c < ks; ++c) add(out.seen_labels[c], out.seen_means.row(c));
    for (std::size_t c = 0; c < kn; ++c) add(out.novel_labels[c], out.novel_means.row(c));
  }
  return out;
}

}  // namespace councilnd
