#pragma once

// Zero-shot classification in a word-embedding space and the generalized
// zero-shot pipeline that routes each sample through a novelty gate.
//
// ConSE: embed x as the probability-weighted mean of its top-k seen-class
//        embeddings, then take the nearest candidate label by cosine.
// DeViSE: ridge regression from features to embeddings, then nearest label.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "councilnd/dropout_head.hpp"
#include "councilnd/errors.hpp"
#include "councilnd/novelty.hpp"
#include "councilnd/numeric.hpp"
#include "councilnd/textio.hpp"

namespace councilnd {

// Word vectors, unit-normalized on insert. A multi-word label "a_b_c" that
// has no vector of its own is the renormalized mean of its in-vocabulary
// word vectors.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {}

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return vectors_.size(); }
  bool contains(const std::string& word) const { return vectors_.count(word) != 0; }
  const std::map<std::string, Vector>& entries() const noexcept { return vectors_; }

  void add(const std::string& word, std::span<const double> v) {
    if (dim_ == 0) dim_ = v.size();
    if (v.size() != dim_) throw DimensionError("embedding for '" + word + "' has wrong dimension");
    if (!all_finite(v)) throw DataError("embedding for '" + word + "' is not finite");
    if (l2_norm(v) == 0.0) throw DataError("embedding for '" + word + "' is the zero vector");
    if (!vectors_.emplace(word, l2_normalized(v)).second) throw DataError("duplicate embedding label '" + word + "'");
  }

  Vector embedding(const std::string& label) const {
    if (auto it = vectors_.find(label); it != vectors_.end()) return it->second;
    Vector sum(dim_, 0.0);
    std::size_t found = 0;
    for (auto word : detail::split_view(label, '_')) {
      auto it = vectors_.find(std::string(word));
      if (it == vectors_.end()) continue;
      for (std::size_t i = 0; i < dim_; ++i) sum[i] += it->second[i];
      ++found;
    }
    if (found == 0) throw DataError("no in-vocabulary word for label '" + label + "'");
    for (double& v : sum) v /= static_cast<double>(found);
    if (l2_norm(sum) == 0.0) throw DataError("composed embedding for '" + label + "' is the zero vector");
    return l2_normalized(sum);
  }

 private:
  std::size_t dim_ = 0;
  std::map<std::string, Vector> vectors_;
};

inline constexpr std::string_view kEmbeddingsMagic = "councilnd-embeddings";
inline constexpr int kEmbeddingsVersion = 1;

// Rows `label v_1 ... v_de`. Accepts an optional version marker and an
// optional word2vec-style "<count> <dim>" first line.
inline EmbeddingTable read_embeddings(std::istream& in, const std::string& source = {}) {
  detail::LineReader reader(in, source);
  EmbeddingTable table;
  std::string line;
  bool first = true;
  while (reader.next(line)) {
    std::string_view v = detail::trim(line);
    if (v.front() == '#') {
      detail::check_version_line(v, kEmbeddingsMagic, kEmbeddingsVersion, reader.line_no());
      continue;
    }
    auto tokens = detail::split_ws(v);
    if (first && tokens.size() == 2) {
      first = false;
      std::size_t a = 0;
      auto [p, ec] = std::from_chars(tokens[0].data(), tokens[0].data() + tokens[0].size(), a);
      if (ec == std::errc{} && p == tokens[0].data() + tokens[0].size()) continue;  // word2vec header
    }
    first = false;
    if (tokens.size() < 2) reader.fail("embedding row needs a label and at least one value");
    Vector values(tokens.size() - 1);
    for (std::size_t i = 1; i < tokens.size(); ++i) {
      if (!parse_double(tokens[i], values[i - 1])) reader.fail("bad number '" + std::string(tokens[i]) + "'", i + 1);
    }
    try {
      table.add(std::string(tokens[0]), values);
    } catch (const Error& e) {
      reader.fail(e.what());
    }
  }
  if (table.size() == 0) throw ParseError("embedding file has no rows", reader.line_no(), 0, source);
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path) {
  auto in = detail::open_for_read(path);
  return read_embeddings(in, path);
}

inline void write_embeddings(std::ostream& out, const EmbeddingTable& t) {
  out << "# " << kEmbeddingsMagic << " v" << kEmbeddingsVersion << "\n";
  for (const auto& [label, v] : t.entries()) {
    out << label << ' ';
    detail::write_row(out, v);
  }
}

inline void save_embeddings(const std::string& path, const EmbeddingTable& t) {
  auto out = detail::open_for_write(path);
  write_embeddings(out, t);
}

// ---------------------------------------------------------------------------

inline constexpr int kDefaultConseTopK = 10;
inline constexpr double kDefaultDeviseLambda = 1.0;

// Probability-weighted mean of the top_k class embeddings, unit-normalized.
// Ties at the top-k boundary keep the lower class index.
inline Vector conse_embed(std::span<const double> probabilities, std::span<const std::string> class_labels,
                          const EmbeddingTable& table, int top_k) {
  const std::size_t k = probabilities.size();
  if (class_labels.size() != k) throw DimensionError("conse: probability and label counts differ");
  if (top_k < 1 || static_cast<std::size_t>(top_k) > k) {
    throw ParameterError("conse: top_k must lie in [1, " + std::to_string(k) + "]");
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probabilities[a] > probabilities[b]; });
  if (top_k == 1) return table.embedding(class_labels[order[0]]);  // exact, no rescaling round-off
  Vector s(table.dim(), 0.0);
  double weight = 0.0;
  for (int r = 0; r < top_k; ++r) {
    const std::size_t c = order[static_cast<std::size_t>(r)];
    const Vector e = table.embedding(class_labels[c]);
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += probabilities[c] * e[i];
    weight += probabilities[c];
  }
  if (weight <= 0.0) {
    // All selected probabilities are zero: fall back to the unweighted top-1.
    return table.embedding(class_labels[order[0]]);
  }
  for (double& v : s) v /= weight;
  if (l2_norm(s) == 0.0) return table.embedding(class_labels[order[0]]);
  return l2_normalized(s);
}

// Candidate with the largest cosine similarity; ties go to the
// lexicographically smaller label.
inline std::string nn_classify(std::span<const double> semantic, std::span<const std::string> candidates,
                               const EmbeddingTable& table) {
  if (candidates.empty()) throw ParameterError("nn_classify: no candidate labels");
  if (semantic.size() != table.dim()) throw DimensionError("nn_classify: semantic vector has wrong dimension");
  const std::string* best = nullptr;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (const auto& label : candidates) {
    const double sim = cosine_similarity(semantic, table.embedding(label));
    if (best == nullptr || sim > best_sim || (sim == best_sim && label < *best)) {
      best = &label;
      best_sim = sim;
    }
  }
  return *best;
}

struct DeviseMap {
  Matrix projection;  // d x d_e
  double lambda = kDefaultDeviseLambda;
};

// V = (X^T X + lambda I)^{-1} X^T E
inline DeviseMap devise_train(const Matrix& features, std::span<const std::string> labels, const EmbeddingTable& table,
                              double lambda = kDefaultDeviseLambda) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  if (labels.size() != n) throw DimensionError("devise: feature and label counts differ");
  if (n == 0) throw InsufficientSamplesError("devise: no training samples");
  if (lambda < 0.0 || !std::isfinite(lambda)) throw ParameterError("devise: lambda must be finite and >= 0");
  const std::size_t de = table.dim();

  std::map<std::string, Vector> cache;
  Matrix gram(d, d, 0.0);
  Matrix rhs(d, de, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    auto x = features.row(r);
    auto it = cache.find(labels[r]);
    if (it == cache.end()) it = cache.emplace(labels[r], table.embedding(labels[r])).first;
    const Vector& e = it->second;
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = x[i];
      if (xi == 0.0) continue;
      auto g = gram.row(i);
      for (std::size_t j = i; j < d; ++j) g[j] += xi * x[j];
      auto b = rhs.row(i);
      for (std::size_t c = 0; c < de; ++c) b[c] += xi * e[c];
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    gram(i, i) += lambda;
    for (std::size_t j = 0; j < i; ++j) gram(i, j) = gram(j, i);
  }
  return {cholesky_solve(gram, rhs), lambda};
}

inline Vector devise_project(const DeviseMap& map, std::span<const double> x) {
  const Matrix& v = map.projection;
  if (x.size() != v.rows()) throw DimensionError("devise: input dimension mismatch");
  Vector out(v.cols(), 0.0);
  for (std::size_t i = 0; i < v.rows(); ++i) {
    if (x[i] == 0.0) continue;
    auto row = v.row(i);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += x[i] * row[c];
  }
  return l2_normalized(out);
}

inline std::string devise_classify(std::span<const double> x, const DeviseMap& map,
                                   std::span<const std::string> candidates, const EmbeddingTable& table) {
  return nn_classify(devise_project(map, x), candidates, table);
}

// ---------------------------------------------------------------------------
// Generalized zero-shot routing.

struct ConseConfig {
  int top_k = kDefaultConseTopK;
};

using ZslMethod = std::variant<ConseConfig, DeviseMap>;

inline std::string_view zsl_method_name(const ZslMethod& m) {
  return std::holds_alternative<ConseConfig>(m) ? "conse" : "devise";
}

// What a ZSL method needs besides the sample: the closed-set head (ConSE
// consumes its MC predictive mean) and the embedding table.
struct ZslContext {
  const DropoutHead& head;
  const EmbeddingTable& table;
  int passes = kDefaultPasses;
};

// ConSE from an already computed predictive mean.
inline std::string conse_classify(std::span<const double> mean, const ZslContext& ctx, const ConseConfig& cfg,
                                  std::span<const std::string> candidates) {
  const int top_k = std::min<int>(cfg.top_k, static_cast<int>(mean.size()));
  return nn_classify(conse_embed(mean, ctx.head.class_labels(), ctx.table, top_k), candidates, ctx.table);
}

// ConSE runs mc_predict with `rng`; use the same stream as the gate to see
// the same predictive mean.
inline std::string zsl_classify(const ZslMethod& method, const ZslContext& ctx, std::span<const double> x,
                                std::span<const std::string> candidates, const RandomStream& rng) {
  if (const auto* conse = std::get_if<ConseConfig>(&method)) {
    const MCPrediction pred = mc_predict(ctx.head, x, ctx.passes, rng);
    return conse_classify(pred.mean, ctx, *conse, candidates);
  }
  return devise_classify(x, std::get<DeviseMap>(method), candidates, ctx.table);
}

enum class GzslMode {
  UnseenToUnseen,  // U->U: unseen test samples, unseen labels only, no gate
  UnseenToAll,     // U->U+S
  AllToAll,        // U+S->U+S
};

inline std::string_view to_string(GzslMode m) {
  switch (m) {
    case GzslMode::UnseenToUnseen: return "U->U";
    case GzslMode::UnseenToAll: return "U->U+S";
    case GzslMode::AllToAll: return "U+S->U+S";
  }
  return "?";
}

inline void check_label_sets(std::span<const std::string> seen, std::span<const std::string> unseen) {
  std::set<std::string> s(seen.begin(), seen.end());
  for (const auto& u : unseen) {
    if (s.count(u)) throw ParameterError("label '" + u + "' is both seen and unseen");
  }
}

// Known -> the leader's seen label; Novel -> whatever `unseen_zsl()` returns
// (a ZSL prediction restricted to unseen labels).
template <typename UnseenZsl>
std::string gzsl_route(const NoveltyVerdict& v, std::span<const std::string> class_labels,
                       std::span<const std::string> seen_labels, UnseenZsl&& unseen_zsl) {
  if (v.novel) return unseen_zsl();
  if (v.leader >= class_labels.size()) throw DimensionError("gate leader index out of range");
  const std::string& label = class_labels[v.leader];
  if (std::find(seen_labels.begin(), seen_labels.end(), label) == seen_labels.end()) {
    throw DataError("leader label '" + label + "' is not among the seen labels");
  }
  return label;
}

// Gate: callable (x, rng) -> NoveltyVerdict.
template <typename Gate>
std::string gzsl_predict(std::span<const double> x, Gate&& gate, const ZslMethod& method, const ZslContext& ctx,
                         std::span<const std::string> seen_labels, std::span<const std::string> unseen_labels,
                         GzslMode mode, const RandomStream& rng) {
  check_label_sets(seen_labels, unseen_labels);
  if (mode == GzslMode::UnseenToUnseen) return zsl_classify(method, ctx, x, unseen_labels, rng);
  return gzsl_route(gate(x, rng), ctx.head.class_labels(), seen_labels,
                    [&] { return zsl_classify(method, ctx, x, unseen_labels, rng); });
}

inline std::string gzsl_predict(std::span<const double> x, const NoveltyDetector& detector, const ZslMethod& method,
                                const EmbeddingTable& table, std::span<const std::string> seen_labels,
                                std::span<const std::string> unseen_labels, GzslMode mode, const RandomStream& rng) {
  const ZslContext ctx{detector.model(), table, detector.passes()};
  auto gate = [&](std::span<const double> v, const RandomStream& r) { return decide(detector, v, r); };
  return gzsl_predict(x, gate, method, ctx, seen_labels, unseen_labels, mode, rng);
}

}  // namespace councilnd
