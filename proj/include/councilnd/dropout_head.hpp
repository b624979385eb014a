#pragma once

// Two-layer MC-dropout classification head over pre-extracted features:
//
//   p(x) = softmax( relu( (x . D1) W1 + b1 ) . D2  W2 )
//
// D1 and D2 are inverted-dropout masks over the input features and the
// hidden activations. There is no output bias.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "councilnd/dataset.hpp"
#include "councilnd/errors.hpp"
#include "councilnd/numeric.hpp"
#include "councilnd/textio.hpp"

namespace councilnd {

struct TrainConfig {
  double learning_rate = 0.005;
  double momentum = 0.9;
  int epochs = 100;
  int hidden_size = 256;
  double dropout_p = 0.7;
  int batch_size = 64;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ParameterError("learning_rate must be positive");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
    if (epochs < 1) throw ParameterError("epochs must be at least 1");
    if (hidden_size < 1) throw ParameterError("hidden_size must be at least 1");
    if (batch_size < 1) throw ParameterError("batch_size must be at least 1");
    check_dropout_probability(dropout_p);
  }
};

class DropoutHead {
 public:
  DropoutHead(Matrix w1, Vector b1, Matrix w2, double p, std::vector<std::string> class_labels)
      : w1_(std::move(w1)), b1_(std::move(b1)), w2_(std::move(w2)), p_(p),
        labels_(std::move(class_labels)) {
    check_dropout_probability(p_);
    if (w1_.rows() < 1 || w1_.cols() < 1) throw DimensionError("W1 must be non-empty");
    if (b1_.size() != w1_.cols()) throw DimensionError("b1 length must equal hidden size");
    if (w2_.rows() != w1_.cols()) throw DimensionError("W2 rows must equal hidden size");
    if (w2_.cols() < 2) throw ParameterError("a head needs at least two classes");
    if (labels_.size() != w2_.cols()) throw DimensionError("class label count must equal W2 columns");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (!index_.emplace(labels_[i], i).second) {
        throw ParameterError("duplicate class label '" + labels_[i] + "'");
      }
    }
    if (!all_finite(w1_.data()) || !all_finite(b1_) || !all_finite(w2_.data())) {
      throw NumericalError("non-finite head weights");
    }
  }

  // He-initialized head; b1 = 0.
  static DropoutHead initialize(std::size_t input_dim, std::size_t hidden, double p,
                                std::vector<std::string> class_labels, RandomStream& rng) {
    const std::size_t k = class_labels.size();
    Matrix w1(input_dim, hidden);
    Matrix w2(hidden, k);
    const double s1 = std::sqrt(2.0 / static_cast<double>(input_dim));
    const double s2 = std::sqrt(2.0 / static_cast<double>(hidden));
    for (double& w : w1.data()) w = s1 * rng.normal();
    for (double& w : w2.data()) w = s2 * rng.normal();
    return {std::move(w1), Vector(hidden, 0.0), std::move(w2), p, std::move(class_labels)};
  }

  std::size_t input_dim() const noexcept { return w1_.rows(); }
  std::size_t hidden_size() const noexcept { return w1_.cols(); }
  std::size_t num_classes() const noexcept { return w2_.cols(); }
  double dropout_p() const noexcept { return p_; }

  const Matrix& w1() const noexcept { return w1_; }
  const Vector& b1() const noexcept { return b1_; }
  const Matrix& w2() const noexcept { return w2_; }
  const std::vector<std::string>& class_labels() const noexcept { return labels_; }

  std::optional<std::size_t> find_class(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::size_t class_index(const std::string& label) const {
    auto idx = find_class(label);
    if (!idx) throw DataError("label '" + label + "' is not a class of this model");
    return *idx;
  }

  bool operator==(const DropoutHead& o) const {
    return w1_ == o.w1_ && b1_ == o.b1_ && w2_ == o.w2_ && p_ == o.p_ && labels_ == o.labels_;
  }

 private:
  friend class HeadTrainer;

  Matrix w1_;
  Vector b1_;
  Matrix w2_;
  double p_;
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Forward passes.

struct HeadMasks {
  DropoutMask input;
  DropoutMask hidden;

  static HeadMasks identity(const DropoutHead& head) {
    return {DropoutMask::identity(head.input_dim()), DropoutMask::identity(head.hidden_size())};
  }
  static HeadMasks sample(const DropoutHead& head, RandomStream& rng) {
    DropoutMask in = sample_dropout_mask(head.input_dim(), head.dropout_p(), rng);
    DropoutMask hid = sample_dropout_mask(head.hidden_size(), head.dropout_p(), rng);
    return {std::move(in), std::move(hid)};
  }
};

// Intermediate values of one pass, kept for backpropagation.
struct ForwardTrace {
  Vector input;         // x after D1 and scaling
  Vector pre_activation;
  Vector hidden;        // relu output after D2 and scaling
  Vector probabilities;
};

inline void check_input(const DropoutHead& head, std::span<const double> x) {
  if (x.size() != head.input_dim()) {
    throw DimensionError("input has length " + std::to_string(x.size()) + ", model expects " +
                         std::to_string(head.input_dim()));
  }
}

inline ForwardTrace forward_with_masks(const DropoutHead& head, std::span<const double> x,
                                       const HeadMasks& masks) {
  check_input(head, x);
  const std::size_t d = head.input_dim();
  const std::size_t h = head.hidden_size();
  const std::size_t k = head.num_classes();
  if (masks.input.size() != d || masks.hidden.size() != h) {
    throw DimensionError("dropout masks do not match the model dimensions");
  }

  ForwardTrace t;
  t.input.resize(d);
  const double in_scale = masks.input.scale();
  for (std::size_t i = 0; i < d; ++i) t.input[i] = masks.input.keep[i] ? x[i] * in_scale : 0.0;

  t.pre_activation = head.b1();
  const Matrix& w1 = head.w1();
  for (std::size_t i = 0; i < d; ++i) {
    const double xi = t.input[i];
    if (xi == 0.0) continue;
    auto row = w1.row(i);
    for (std::size_t j = 0; j < h; ++j) t.pre_activation[j] += xi * row[j];
  }

  t.hidden.resize(h);
  const double hid_scale = masks.hidden.scale();
  for (std::size_t j = 0; j < h; ++j) {
    const double a = t.pre_activation[j];
    t.hidden[j] = (masks.hidden.keep[j] && a > 0.0) ? a * hid_scale : 0.0;
  }

  Vector logits(k, 0.0);
  const Matrix& w2 = head.w2();
  for (std::size_t j = 0; j < h; ++j) {
    const double hj = t.hidden[j];
    if (hj == 0.0) continue;
    auto row = w2.row(j);
    for (std::size_t c = 0; c < k; ++c) logits[c] += hj * row[c];
  }
  t.probabilities = softmax(logits);
  return t;
}

// One pass with freshly sampled D1 (input) then D2 (hidden).
inline Vector forward_stochastic(const DropoutHead& head, std::span<const double> x, RandomStream& rng) {
  check_input(head, x);
  const HeadMasks masks = HeadMasks::sample(head, rng);
  return forward_with_masks(head, x, masks).probabilities;
}

// Identity masks, no rescaling.
inline Vector forward_deterministic(const DropoutHead& head, std::span<const double> x) {
  return forward_with_masks(head, x, HeadMasks::identity(head)).probabilities;
}

// ---------------------------------------------------------------------------
// Loss and gradients.

inline constexpr double kLogFloor = 1e-12;

struct HeadGradient {
  Matrix w1;
  Vector b1;
  Matrix w2;

  explicit HeadGradient(const DropoutHead& head)
      : w1(head.input_dim(), head.hidden_size()), b1(head.hidden_size(), 0.0),
        w2(head.hidden_size(), head.num_classes()) {}
};

inline double cross_entropy(std::span<const double> probabilities, std::size_t label) {
  return -std::log(std::max(probabilities[label], kLogFloor));
}

// Adds d(loss)/d(params) for one sample with the given masks into grad and
// returns the sample's cross-entropy.
inline double accumulate_gradient(const DropoutHead& head, std::span<const double> x, std::size_t label,
                                  const HeadMasks& masks, HeadGradient& grad) {
  const ForwardTrace t = forward_with_masks(head, x, masks);
  const std::size_t h = head.hidden_size();
  const std::size_t k = head.num_classes();
  const std::size_t d = head.input_dim();
  const double loss = cross_entropy(t.probabilities, label);

  // The log floor is flat, so no gradient flows once it engages.
  if (t.probabilities[label] < kLogFloor) return loss;

  Vector dlogits = t.probabilities;
  dlogits[label] -= 1.0;

  Vector dpre(h, 0.0);
  const Matrix& w2 = head.w2();
  const double hid_scale = masks.hidden.scale();
  for (std::size_t j = 0; j < h; ++j) {
    auto grow = grad.w2.row(j);
    const double hj = t.hidden[j];
    if (hj != 0.0) {
      for (std::size_t c = 0; c < k; ++c) grow[c] += hj * dlogits[c];
    }
    if (masks.hidden.keep[j] && t.pre_activation[j] > 0.0) {
      auto wrow = w2.row(j);
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += wrow[c] * dlogits[c];
      dpre[j] = s * hid_scale;
    }
  }

  for (std::size_t j = 0; j < h; ++j) grad.b1[j] += dpre[j];
  for (std::size_t i = 0; i < d; ++i) {
    const double xi = t.input[i];
    if (xi == 0.0) continue;
    auto grow = grad.w1.row(i);
    for (std::size_t j = 0; j < h; ++j) grow[j] += xi * dpre[j];
  }
  return loss;
}

struct LossAndGradient {
  double loss;
  HeadGradient gradient;
};

inline LossAndGradient loss_and_gradient(const DropoutHead& head, std::span<const double> x,
                                         std::size_t label, const HeadMasks& masks) {
  HeadGradient g(head);
  const double loss = accumulate_gradient(head, x, label, masks, g);
  return {loss, std::move(g)};
}

// ---------------------------------------------------------------------------
// Training: mini-batch SGD with momentum on mean cross-entropy. One mask draw
// per sample per presentation.

struct TrainResult {
  DropoutHead head;
  std::vector<double> epoch_loss;  // mean per-sample loss of each epoch
};

class HeadTrainer {
 public:
  static TrainResult fit(const FeatureDataset& data, const TrainConfig& cfg,
                         std::vector<std::string> class_labels = {}) {
    cfg.validate();
    if (data.empty()) throw DataError("training set is empty");
    data.validate();
    if (class_labels.empty()) class_labels = data.distinct_labels();
    if (class_labels.size() < 2) throw DataError("training set must contain at least two classes");

    const RandomStream base(cfg.seed);
    RandomStream init_rng = base.child("init");
    RandomStream order_rng = base.child("order");
    RandomStream mask_rng = base.child("dropout");

    DropoutHead head = DropoutHead::initialize(data.dim(), static_cast<std::size_t>(cfg.hidden_size),
                                               cfg.dropout_p, std::move(class_labels), init_rng);
    std::vector<std::size_t> targets(data.size());
    std::vector<bool> present(head.num_classes(), false);
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto idx = head.find_class(data.labels[i]);
      if (!idx) throw DataError("training label '" + data.labels[i] + "' not in class list");
      targets[i] = *idx;
      present[*idx] = true;
    }
    for (std::size_t c = 0; c < present.size(); ++c) {
      if (!present[c]) throw DataError("class '" + head.class_labels()[c] + "' has no training samples");
    }

    HeadGradient velocity(head);
    HeadGradient grad(head);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> epoch_loss;
    epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));
    const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      order_rng.shuffle(order);
      double total = 0.0;
      for (std::size_t start = 0; start < order.size(); start += batch) {
        const std::size_t stop = std::min(order.size(), start + batch);
        zero(grad);
        for (std::size_t n = start; n < stop; ++n) {
          const std::size_t i = order[n];
          const HeadMasks masks = HeadMasks::sample(head, mask_rng);
          total += accumulate_gradient(head, data.x(i), targets[i], masks, grad);
        }
        step(head, velocity, grad, cfg, static_cast<double>(stop - start));
      }
      const double mean_loss = total / static_cast<double>(data.size());
      if (!std::isfinite(mean_loss)) throw NumericalError("training diverged (non-finite loss)");
      epoch_loss.push_back(mean_loss);
    }
    if (!all_finite(head.w1_.data()) || !all_finite(head.b1_) || !all_finite(head.w2_.data())) {
      throw NumericalError("training produced non-finite weights");
    }
    return {std::move(head), std::move(epoch_loss)};
  }

 private:
  static void zero(HeadGradient& g) {
    std::fill(g.w1.data().begin(), g.w1.data().end(), 0.0);
    std::fill(g.b1.begin(), g.b1.end(), 0.0);
    std::fill(g.w2.data().begin(), g.w2.data().end(), 0.0);
  }

  static void update(std::span<double> param, std::span<double> vel, std::span<const double> g,
                     double lr_over_n, double momentum) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      vel[i] = momentum * vel[i] - lr_over_n * g[i];
      param[i] += vel[i];
    }
  }

  static void step(DropoutHead& head, HeadGradient& vel, const HeadGradient& g, const TrainConfig& cfg,
                   double batch_count) {
    const double scale = cfg.learning_rate / batch_count;
    update(head.w1_.data(), vel.w1.data(), g.w1.data(), scale, cfg.momentum);
    update(head.b1_, vel.b1, g.b1, scale, cfg.momentum);
    update(head.w2_.data(), vel.w2.data(), g.w2.data(), scale, cfg.momentum);
  }
};

inline TrainResult fit_head(const FeatureDataset& data, const TrainConfig& cfg,
                            std::vector<std::string> class_labels = {}) {
  return HeadTrainer::fit(data, cfg, std::move(class_labels));
}

inline DropoutHead train(const FeatureDataset& data, const TrainConfig& cfg) {
  return HeadTrainer::fit(data, cfg).head;
}

// ---------------------------------------------------------------------------
// Monte-Carlo prediction.

inline constexpr int kDefaultPasses = 100;

struct MCPrediction {
  Vector mean;         // E(A_i | x)
  Vector uncertainty;  // U(A_i | x), sample variance over passes
  int num_passes = 0;
  std::optional<Matrix> raw_samples;  // M x K, when retained
};

inline MCPrediction prediction_from_samples(Matrix samples, bool keep_raw = false) {
  MeanVariance mv = column_mean_variance(samples);
  MCPrediction out{std::move(mv.mean), std::move(mv.variance), static_cast<int>(samples.rows()),
                   std::nullopt};
  if (keep_raw) out.raw_samples = std::move(samples);
  return out;
}

// Pass m draws its masks from rng.child(m), so any single pass can be
// replayed independently.
inline MCPrediction mc_predict(const DropoutHead& head, std::span<const double> x, int passes,
                               const RandomStream& rng, bool keep_raw = false) {
  if (passes < 2) throw InsufficientSamplesError("mc_predict needs at least 2 passes");
  check_input(head, x);
  Matrix samples(static_cast<std::size_t>(passes), head.num_classes());
  for (int m = 0; m < passes; ++m) {
    RandomStream pass_rng = rng.child(static_cast<std::uint64_t>(m));
    const Vector p = forward_stochastic(head, x, pass_rng);
    std::copy(p.begin(), p.end(), samples.row(static_cast<std::size_t>(m)).begin());
  }
  return prediction_from_samples(std::move(samples), keep_raw);
}

// ---------------------------------------------------------------------------
// Checkpoint file.

inline constexpr std::string_view kCheckpointMagic = "councilnd-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& out, const DropoutHead& head) {
  out << "# " << kCheckpointMagic << " v" << kCheckpointVersion << "\n";
  out << "dims " << head.input_dim() << ' ' << head.hidden_size() << ' ' << head.num_classes() << "\n";
  out << "dropout " << format_double(head.dropout_p()) << "\n";
  for (const auto& label : head.class_labels()) out << "label " << label << "\n";
  out << "W1\n";
  for (std::size_t r = 0; r < head.w1().rows(); ++r) detail::write_row(out, head.w1().row(r));
  out << "b1\n";
  detail::write_row(out, head.b1());
  out << "W2\n";
  for (std::size_t r = 0; r < head.w2().rows(); ++r) detail::write_row(out, head.w2().row(r));
}

inline DropoutHead read_checkpoint(std::istream& in, const std::string& source = {}) {
  detail::LineReader reader(in, source);
  reader.require_version(kCheckpointMagic, kCheckpointVersion);
  const std::string dims_line = reader.require_keyed("dims");
  auto dims = detail::split_ws(dims_line);
  if (dims.size() != 3) reader.fail("dims needs three integers");
  const auto d = detail::parse_int<std::size_t>(reader, dims[0]);
  const auto h = detail::parse_int<std::size_t>(reader, dims[1]);
  const auto k = detail::parse_int<std::size_t>(reader, dims[2]);
  double p = 0.0;
  const std::string p_text = reader.require_keyed("dropout");
  if (!parse_double(p_text, p)) reader.fail("bad dropout probability");
  std::vector<std::string> labels;
  for (std::size_t c = 0; c < k; ++c) labels.push_back(reader.require_keyed("label"));

  auto read_matrix = [&](std::string_view name, std::size_t rows, std::size_t cols) {
    if (detail::trim(reader.require(name)) != name) reader.fail("expected '" + std::string(name) + "'");
    std::vector<double> data;
    data.reserve(rows * cols);
    for (std::size_t r = 0; r < rows; ++r) {
      Vector row = detail::parse_doubles(reader, reader.require("matrix row"), cols);
      data.insert(data.end(), row.begin(), row.end());
    }
    return Matrix(rows, cols, std::move(data));
  };
  Matrix w1 = read_matrix("W1", d, h);
  Matrix b1 = read_matrix("b1", 1, h);
  Matrix w2 = read_matrix("W2", h, k);
  try {
    return {std::move(w1), b1.row_vector(0), std::move(w2), p, std::move(labels)};
  } catch (const Error& e) {
    reader.fail(std::string("invalid checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const DropoutHead& head) {
  auto out = detail::open_for_write(path);
  write_checkpoint(out, head);
}

inline DropoutHead load_checkpoint(const std::string& path) {
  auto in = detail::open_for_read(path);
  return read_checkpoint(in, path);
}

}  // namespace councilnd
