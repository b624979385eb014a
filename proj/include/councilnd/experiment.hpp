#pragma once

// End-to-end evaluation over materialized splits: train, elect councils,
// calibrate tau on pseudo-novel classes, score the test pool, and aggregate
// mean +- std across splits into a JSON metrics report.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "councilnd/baselines.hpp"
#include "councilnd/council.hpp"
#include "councilnd/dataset.hpp"
#include "councilnd/dropout_head.hpp"
#include "councilnd/errors.hpp"
#include "councilnd/metrics.hpp"
#include "councilnd/novelty.hpp"
#include "councilnd/splits.hpp"
#include "councilnd/textio.hpp"
#include "councilnd/zsl.hpp"

namespace councilnd {

using ojson = nlohmann::ordered_json;

struct CalibrationConfig {
  double pseudo_novel_fraction = 0.25;  // of the seen classes, at least one
  bool per_leader_tau = false;
};

struct BaselineConfig {
  bool softmax = true;
  bool gmm = true;
  bool ocsvm = true;
  std::string normalization = "l2";  // applied to GMM / OC-SVM inputs: "l2" or "none"
  GmmOptions gmm_options;
  OcSvmOptions ocsvm_options;
};

struct ZslConfig {
  std::vector<std::string> methods{"conse", "devise"};
  int conse_top_k = kDefaultConseTopK;
  double devise_lambda = kDefaultDeviseLambda;
};

struct ExperimentConfig {
  std::string features;
  std::string embeddings;  // optional; enables the GZSL section
  std::string splits;      // optional; generated from seed when empty
  std::string output_dir;
  std::uint64_t seed = 0;
  int repetitions = kDefaultRepetitions;
  std::vector<std::string> fixed_unseen;
  TrainConfig train;
  int mc_passes = kDefaultPasses;
  double credibility_threshold = kDefaultCredibility;
  Variant variant = Variant::InformedDemocracy;
  CalibrationConfig calibration;
  BaselineConfig baselines;
  ZslConfig zsl;
  bool write_score_dumps = true;
  bool write_models = true;

  void validate() const {
    try {
      train.validate();
    } catch (const ParameterError& e) {
      throw ConfigError(e.what());
    }
    if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
    if (mc_passes < 2) throw ConfigError("mc_passes must be >= 2");
    if (!(credibility_threshold > 0.0)) throw ConfigError("credibility_threshold must be positive");
    if (!(calibration.pseudo_novel_fraction > 0.0 && calibration.pseudo_novel_fraction < 1.0)) {
      throw ConfigError("calibration.pseudo_novel_fraction must lie in (0, 1)");
    }
    if (baselines.normalization != "l2" && baselines.normalization != "none") {
      throw ConfigError("baselines.normalization must be 'l2' or 'none'");
    }
    if (baselines.gmm_options.components < 1) throw ConfigError("baselines.gmm_components must be >= 1");
    if (!(baselines.ocsvm_options.nu > 0.0 && baselines.ocsvm_options.nu <= 1.0)) {
      throw ConfigError("baselines.ocsvm_nu must lie in (0, 1]");
    }
    if (baselines.ocsvm_options.gamma && !(*baselines.ocsvm_options.gamma > 0.0)) {
      throw ConfigError("baselines.ocsvm_gamma must be positive");
    }
    for (const auto& m : zsl.methods) {
      if (m != "conse" && m != "devise") throw ConfigError("unknown zsl method '" + m + "' (conse|devise)");
    }
    if (zsl.conse_top_k < 1) throw ConfigError("zsl.conse_top_k must be >= 1");
    if (!(zsl.devise_lambda >= 0.0) || !std::isfinite(zsl.devise_lambda)) {
      throw ConfigError("zsl.devise_lambda must be finite and >= 0");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON config. Unknown keys are rejected so typos cannot silently fall back
// to defaults.

namespace detail {

class JsonFields {
 public:
  JsonFields(const ojson& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ConfigError(where_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    used_.insert(key);
    if (!obj_.contains(key)) return;
    const ojson& v = obj_.at(key);
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_unsigned()) throw ConfigError(path(key) + ": expected a non-negative integer");
    } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v.is_number_integer()) throw ConfigError(path(key) + ": expected an integer");
    }
    try {
      out = v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path(key) + ": " + e.what());
    }
  }

  // Positive real that may also be the string "inf".
  void get_extended(const std::string& key, double& out) {
    used_.insert(key);
    if (!obj_.contains(key)) return;
    const ojson& v = obj_.at(key);
    if (v.is_string() && v.get<std::string>() == "inf") {
      out = std::numeric_limits<double>::infinity();
    } else if (v.is_number()) {
      out = v.get<double>();
    } else {
      throw ConfigError(path(key) + ": expected a number or \"inf\"");
    }
  }

  void get_optional(const std::string& key, std::optional<double>& out) {
    used_.insert(key);
    if (!obj_.contains(key) || obj_.at(key).is_null()) return;
    if (!obj_.at(key).is_number()) throw ConfigError(path(key) + ": expected a number or null");
    out = obj_.at(key).get<double>();
  }

  const ojson* child(const std::string& key) {
    used_.insert(key);
    return obj_.contains(key) ? &obj_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!used_.count(key)) throw ConfigError(where_ + ": unknown key '" + key + "'");
    }
  }

 private:
  std::string path(const std::string& key) const { return where_ + "." + key; }

  const ojson& obj_;
  std::string where_;
  std::set<std::string> used_;
};

inline ojson extended_number(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  return v;
}

}  // namespace detail

inline ExperimentConfig config_from_json(const ojson& j) {
  ExperimentConfig c;
  detail::JsonFields top(j, "config");
  top.get("features", c.features);
  top.get("embeddings", c.embeddings);
  top.get("splits", c.splits);
  top.get("output_dir", c.output_dir);
  top.get("seed", c.seed);
  top.get("repetitions", c.repetitions);
  top.get("fixed_unseen", c.fixed_unseen);
  top.get("mc_passes", c.mc_passes);
  top.get_extended("credibility_threshold", c.credibility_threshold);
  std::string variant(to_string(c.variant));
  top.get("variant", variant);
  c.variant = parse_variant(variant);
  top.get("write_score_dumps", c.write_score_dumps);
  top.get("write_models", c.write_models);

  if (const ojson* t = top.child("train")) {
    detail::JsonFields f(*t, "config.train");
    f.get("learning_rate", c.train.learning_rate);
    f.get("momentum", c.train.momentum);
    f.get("epochs", c.train.epochs);
    f.get("hidden_size", c.train.hidden_size);
    f.get("dropout_p", c.train.dropout_p);
    f.get("batch_size", c.train.batch_size);
    f.get("seed", c.train.seed);
    f.finish();
  }
  if (const ojson* t = top.child("calibration")) {
    detail::JsonFields f(*t, "config.calibration");
    f.get("pseudo_novel_fraction", c.calibration.pseudo_novel_fraction);
    f.get("per_leader_tau", c.calibration.per_leader_tau);
    f.finish();
  }
  if (const ojson* t = top.child("baselines")) {
    detail::JsonFields f(*t, "config.baselines");
    f.get("softmax", c.baselines.softmax);
    f.get("gmm", c.baselines.gmm);
    f.get("ocsvm", c.baselines.ocsvm);
    f.get("normalization", c.baselines.normalization);
    f.get("gmm_components", c.baselines.gmm_options.components);
    f.get("gmm_max_iterations", c.baselines.gmm_options.max_iterations);
    f.get("gmm_tolerance", c.baselines.gmm_options.tolerance);
    f.get("gmm_variance_floor", c.baselines.gmm_options.variance_floor);
    f.get("gmm_kmeans_iterations", c.baselines.gmm_options.kmeans_iterations);
    f.get("ocsvm_nu", c.baselines.ocsvm_options.nu);
    f.get_optional("ocsvm_gamma", c.baselines.ocsvm_options.gamma);
    f.get("ocsvm_tolerance", c.baselines.ocsvm_options.tolerance);
    f.get("ocsvm_max_iterations", c.baselines.ocsvm_options.max_iterations);
    f.finish();
  }
  if (const ojson* t = top.child("zsl")) {
    detail::JsonFields f(*t, "config.zsl");
    f.get("methods", c.zsl.methods);
    f.get("conse_top_k", c.zsl.conse_top_k);
    f.get("devise_lambda", c.zsl.devise_lambda);
    f.finish();
  }
  top.finish();
  c.validate();
  return c;
}

// Every field, defaults included. The output directory is left out: it says
// where the report is, not how its numbers were produced.
inline ojson config_to_json(const ExperimentConfig& c) {
  ojson j;
  j["features"] = c.features;
  j["embeddings"] = c.embeddings;
  j["splits"] = c.splits;
  j["seed"] = c.seed;
  j["repetitions"] = c.repetitions;
  j["fixed_unseen"] = c.fixed_unseen;
  j["mc_passes"] = c.mc_passes;
  j["credibility_threshold"] = detail::extended_number(c.credibility_threshold);
  j["variant"] = std::string(to_string(c.variant));
  j["write_score_dumps"] = c.write_score_dumps;
  j["write_models"] = c.write_models;
  j["train"] = {{"learning_rate", c.train.learning_rate}, {"momentum", c.train.momentum},
                {"epochs", c.train.epochs},               {"hidden_size", c.train.hidden_size},
                {"dropout_p", c.train.dropout_p},         {"batch_size", c.train.batch_size},
                {"seed", c.train.seed}};
  j["calibration"] = {{"pseudo_novel_fraction", c.calibration.pseudo_novel_fraction},
                      {"per_leader_tau", c.calibration.per_leader_tau}};
  const auto& b = c.baselines;
  j["baselines"] = {{"softmax", b.softmax},
                    {"gmm", b.gmm},
                    {"ocsvm", b.ocsvm},
                    {"normalization", b.normalization},
                    {"gmm_components", b.gmm_options.components},
                    {"gmm_max_iterations", b.gmm_options.max_iterations},
                    {"gmm_tolerance", b.gmm_options.tolerance},
                    {"gmm_variance_floor", b.gmm_options.variance_floor},
                    {"gmm_kmeans_iterations", b.gmm_options.kmeans_iterations},
                    {"ocsvm_nu", b.ocsvm_options.nu},
                    {"ocsvm_gamma", b.ocsvm_options.gamma ? ojson(*b.ocsvm_options.gamma) : ojson(nullptr)},
                    {"ocsvm_tolerance", b.ocsvm_options.tolerance},
                    {"ocsvm_max_iterations", b.ocsvm_options.max_iterations}};
  j["zsl"] = {{"methods", c.zsl.methods}, {"conse_top_k", c.zsl.conse_top_k}, {"devise_lambda", c.zsl.devise_lambda}};
  return j;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  auto in = detail::open_for_read(path);
  ojson j;
  try {
    j = ojson::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Score dump: one row per test sample with the raw MC statistics.

inline constexpr std::string_view kScoresMagic = "councilnd-scores";
inline constexpr int kScoresVersion = 1;

struct ScoreRow {
  std::string id;
  std::string label;
  std::string leader;
  double score = 0.0;
  Vector mean;
  Vector uncertainty;

  bool operator==(const ScoreRow&) const = default;
};

struct ScoreDump {
  std::vector<std::string> class_labels;
  std::vector<ScoreRow> rows;

  bool operator==(const ScoreDump&) const = default;
};

inline void write_score_dump(std::ostream& out, const ScoreDump& dump) {
  out << "# " << kScoresMagic << " v" << kScoresVersion << "\n";
  out << "id,label,leader,score";
  for (const auto& c : dump.class_labels) out << ",mean:" << c;
  for (const auto& c : dump.class_labels) out << ",uncertainty:" << c;
  out << "\n";
  for (const auto& r : dump.rows) {
    out << r.id << ',' << r.label << ',' << r.leader << ',' << format_double(r.score);
    for (double v : r.mean) out << ',' << format_double(v);
    for (double v : r.uncertainty) out << ',' << format_double(v);
    out << "\n";
  }
}

inline ScoreDump read_score_dump(std::istream& in, const std::string& source = {}) {
  detail::LineReader reader(in, source);
  reader.require_version(kScoresMagic, kScoresVersion);
  const std::string header_line = reader.require("header");
  const auto header = detail::split_view(header_line, ',');
  if (header.size() < 4 || (header.size() - 4) % 2 != 0 || header[0] != "id" || header[3] != "score") {
    reader.fail("expected header 'id,label,leader,score,mean:...,uncertainty:...'");
  }
  ScoreDump dump;
  const std::size_t k = (header.size() - 4) / 2;
  for (std::size_t c = 0; c < k; ++c) {
    const std::string_view h = header[4 + c];
    if (h.substr(0, 5) != "mean:") reader.fail("bad mean column '" + std::string(h) + "'");
    dump.class_labels.emplace_back(h.substr(5));
  }
  std::string line;
  while (reader.next(line)) {
    const auto f = detail::split_view(line, ',');
    if (f.size() != header.size()) reader.fail("expected " + std::to_string(header.size()) + " fields");
    ScoreRow r{std::string(f[0]), std::string(f[1]), std::string(f[2]), 0.0, Vector(k), Vector(k)};
    auto number = [&](std::size_t i) {
      double v = 0.0;
      if (!parse_double(f[i], v)) reader.fail("non-numeric field '" + std::string(f[i]) + "'");
      return v;
    };
    r.score = number(3);
    for (std::size_t c = 0; c < k; ++c) {
      r.mean[c] = number(4 + c);
      r.uncertainty[c] = number(4 + k + c);
    }
    dump.rows.push_back(std::move(r));
  }
  return dump;
}

inline void save_score_dump(const std::string& path, const ScoreDump& dump) {
  auto out = detail::open_for_write(path);
  write_score_dump(out, dump);
}

inline ScoreDump load_score_dump(const std::string& path) {
  auto in = detail::open_for_read(path);
  return read_score_dump(in, path);
}

// ---------------------------------------------------------------------------
// Per-split machinery.

namespace detail {

// The models behind every novelty method for one training set.
struct MethodModels {
  DropoutHead head;
  CouncilTable councils;
  std::optional<GmmModel> gmm;
  std::optional<OcSvmModel> ocsvm;
};

inline Matrix baseline_features(const FeatureDataset& ds, const BaselineConfig& b) {
  return b.normalization == "l2" ? l2_normalize_rows(ds).features : ds.features;
}

inline Vector baseline_input(std::span<const double> x, const BaselineConfig& b) {
  Vector v(x.begin(), x.end());
  if (b.normalization == "l2" && l2_norm(v) > 0.0) v = l2_normalized(v);
  return v;
}

inline MethodModels fit_method_models(const FeatureDataset& train_set, const FeatureDataset& holdout,
                                      const std::vector<std::string>& classes, const ExperimentConfig& cfg,
                                      const RandomStream& rng) {
  TrainConfig tc = cfg.train;
  tc.seed = RandomStream(cfg.train.seed).child(rng.seed()).seed();
  DropoutHead head = fit_head(train_set, tc, classes).head;
  CouncilTable councils = elect_councils(head, holdout, cfg.credibility_threshold, cfg.mc_passes, rng.child("elect"));
  MethodModels m{std::move(head), std::move(councils), std::nullopt, std::nullopt};
  if (cfg.baselines.gmm || cfg.baselines.ocsvm) {
    const Matrix xb = baseline_features(train_set, cfg.baselines);
    if (cfg.baselines.gmm) {
      RandomStream g = rng.child("gmm");
      m.gmm = fit_gmm(xb, cfg.baselines.gmm_options, g).model;
    }
    if (cfg.baselines.ocsvm) {
      RandomStream o = rng.child("ocsvm");
      m.ocsvm = fit_ocsvm(xb, cfg.baselines.ocsvm_options, o);
    }
  }
  return m;
}

inline std::vector<std::string> method_names(const ExperimentConfig& cfg) {
  std::vector<std::string> out{"informed", "uninformed", "dictator"};
  if (cfg.baselines.softmax) out.emplace_back("softmax");
  if (cfg.baselines.gmm) out.emplace_back("gmm");
  if (cfg.baselines.ocsvm) out.emplace_back("ocsvm");
  return out;
}

inline bool uses_councils(const std::string& method) {
  return method == "informed" || method == "uninformed" || method == "dictator";
}

struct PoolScores {
  std::vector<MCPrediction> predictions;
  std::vector<std::size_t> leaders;
  std::vector<std::vector<double>> by_method;  // parallel to method_names(cfg)
};

// One MC prediction per sample (stream rng.child(id)) shared by all three
// council variants; baselines score the same sample independently.
inline PoolScores score_pool(const MethodModels& m, const FeatureDataset& pool, const ExperimentConfig& cfg,
                             const RandomStream& rng) {
  const auto names = method_names(cfg);
  PoolScores out;
  out.by_method.assign(names.size(), std::vector<double>(pool.size()));
  for (std::size_t i = 0; i < pool.size(); ++i) {
    MCPrediction pred = mc_predict(m.head, pool.x(i), cfg.mc_passes, rng.child(pool.ids[i]));
    const std::size_t leader = select_leader(pred.mean);
    std::optional<Vector> xb;
    for (std::size_t k = 0; k < names.size(); ++k) {
      const std::string& n = names[k];
      double s = 0.0;
      if (n == "informed") {
        s = vote(pred, m.councils, Variant::InformedDemocracy).score;
      } else if (n == "uninformed") {
        s = vote(pred, m.councils, Variant::UninformedDemocracy).score;
      } else if (n == "dictator") {
        s = vote(pred, m.councils, Variant::Dictator).score;
      } else if (n == "softmax") {
        s = softmax_confidence_score(m.head, pool.x(i));
      } else {
        if (!xb) xb = baseline_input(pool.x(i), cfg.baselines);
        s = n == "gmm" ? gmm_novelty_score(*m.gmm, *xb) : ocsvm_novelty_score(*m.ocsvm, *xb);
      }
      if (!std::isfinite(s)) throw NumericalError("non-finite " + n + " score for sample '" + pool.ids[i] + "'");
      out.by_method[k][i] = s;
    }
    out.leaders.push_back(leader);
    out.predictions.push_back(std::move(pred));
  }
  return out;
}

struct Thresholds {
  double tau = 0.0;
  std::map<std::string, double> leader_tau;  // by class label

  double for_leader(const std::string& label) const {
    auto it = leader_tau.find(label);
    return it == leader_tau.end() ? tau : it->second;
  }
};

inline std::vector<std::string> labels_of(const std::vector<std::size_t>& leaders, const DropoutHead& head) {
  std::vector<std::string> out;
  out.reserve(leaders.size());
  for (std::size_t l : leaders) out.push_back(head.class_labels()[l]);
  return out;
}

inline std::vector<bool> novelty_flags(const FeatureDataset& pool, const std::set<std::string>& novel_classes) {
  std::vector<bool> out(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) out[i] = novel_classes.count(pool.labels[i]) > 0;
  return out;
}

inline double fraction_correct(const std::vector<std::string>& pred, const std::vector<std::string>& truth,
                               const std::vector<bool>& mask) {
  std::size_t n = 0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!mask[i]) continue;
    ++n;
    ok += pred[i] == truth[i];
  }
  if (n == 0) throw InsufficientSamplesError("accuracy over an empty sample set");
  return static_cast<double>(ok) / static_cast<double>(n);
}

inline std::vector<bool> negate(const std::vector<bool>& v) {
  std::vector<bool> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = !v[i];
  return out;
}

inline std::string split_dir_name(int repetition) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "split_%02d", repetition);
  return buf;
}

}  // namespace detail

struct SplitInputs {
  const FeatureDataset& data;
  const SplitSpec& split;
  const EmbeddingTable* embeddings = nullptr;
};

// Runs one split and returns its report section. Artifacts go to `dir` when
// it is non-empty.
inline ojson run_split(const ExperimentConfig& cfg, const SplitInputs& in, const std::string& dir) {
  using namespace detail;
  const SplitSpec& sp = in.split;
  const RandomStream rng = RandomStream(cfg.seed).child("experiment").child(static_cast<std::uint64_t>(sp.repetition));
  const auto names = method_names(cfg);

  if (sp.seen_classes.size() < 3) {
    throw CalibrationError("calibration needs at least 3 seen classes (one pseudo-novel, two known)");
  }
  const FeatureDataset sub = in.data.subset_by_ids(sp.subtrain);
  const FeatureDataset hold = in.data.subset_by_ids(sp.holdout);
  const FeatureDataset pool = FeatureDataset::concat(in.data.subset_by_ids(sp.test), in.data.subset_by_ids(sp.unseen));
  const std::set<std::string> unseen_set(sp.unseen_classes.begin(), sp.unseen_classes.end());

  // Pseudo-novel calibration: an auxiliary model set trained without a few
  // seen classes. Those classes' subtrain + holdout samples play "novel", the
  // remaining classes' holdout samples play "known".
  std::vector<std::string> pseudo = sp.seen_classes;
  RandomStream pick = rng.child("pseudo-novel");
  pick.shuffle(pseudo);
  const std::size_t n_pseudo = std::min(
      sp.seen_classes.size() - 2,
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(cfg.calibration.pseudo_novel_fraction *
                                                                   static_cast<double>(sp.seen_classes.size())))));
  pseudo.resize(n_pseudo);
  std::sort(pseudo.begin(), pseudo.end());
  const std::set<std::string> pseudo_set(pseudo.begin(), pseudo.end());
  std::set<std::string> aux_known;
  std::vector<std::string> aux_classes;
  for (const auto& c : sp.seen_classes) {
    if (!pseudo_set.count(c)) {
      aux_known.insert(c);
      aux_classes.push_back(c);
    }
  }
  const FeatureDataset aux_hold = hold.filter_labels(aux_known);
  const MethodModels aux = fit_method_models(sub.filter_labels(aux_known), aux_hold, aux_classes, cfg,
                                             rng.child("calibration-models"));
  const FeatureDataset calib_pool =
      FeatureDataset::concat(aux_hold, FeatureDataset::concat(sub.filter_labels(pseudo_set), hold.filter_labels(pseudo_set)));
  const std::vector<bool> calib_flags = novelty_flags(calib_pool, pseudo_set);
  const PoolScores calib = score_pool(aux, calib_pool, cfg, rng.child("calibration-scores"));
  const std::vector<std::string> calib_leaders = labels_of(calib.leaders, aux.head);

  std::vector<Thresholds> thresholds(names.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    thresholds[k].tau = calibrate_tau(calib.by_method[k], calib_flags);
    if (cfg.calibration.per_leader_tau && uses_councils(names[k])) {
      const auto per = calibrate_leader_tau(calib.by_method[k], calib_flags, calib.leaders);
      for (const auto& [leader, tau] : per) thresholds[k].leader_tau[aux.head.class_labels()[leader]] = tau;
    }
  }

  // Main models on the full seen-class training set.
  const MethodModels main = fit_method_models(sub, hold, sp.seen_classes, cfg, rng.child("models"));
  const PoolScores scored = score_pool(main, pool, cfg, rng.child("test-scores"));
  const std::vector<bool> flags = novelty_flags(pool, unseen_set);
  const std::vector<bool> seen_mask = negate(flags);
  const std::vector<std::string> leaders = labels_of(scored.leaders, main.head);

  ojson out;
  out["repetition"] = sp.repetition;
  out["status"] = "ok";
  out["seen_classes"] = sp.seen_classes;
  out["unseen_classes"] = sp.unseen_classes;
  out["pseudo_novel_classes"] = pseudo;
  out["counts"] = {{"subtrain", sub.size()},
                   {"holdout", hold.size()},
                   {"test_seen", sp.test.size()},
                   {"test_unseen", sp.unseen.size()},
                   {"calibration_known", aux_hold.size()},
                   {"calibration_novel", calib_pool.size() - aux_hold.size()}};
  out["closed_set_accuracy"] = fraction_correct(leaders, pool.labels, seen_mask);

  ojson councils;
  for (std::size_t l = 0; l < main.councils.num_classes(); ++l) {
    councils[main.councils.class_labels[l]] = {{"status", std::string(to_string(main.councils.status[l]))},
                                              {"size", main.councils.members[l].size()},
                                              {"true_positives", main.councils.tp_counts[l]}};
  }
  out["councils"] = councils;

  // Verdicts per method at its calibrated threshold.
  std::vector<std::vector<bool>> novel_verdicts(names.size(), std::vector<bool>(pool.size()));
  ojson novelty;
  for (std::size_t k = 0; k < names.size(); ++k) {
    const auto& s = scored.by_method[k];
    std::size_t fp = 0;
    std::size_t fn = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const bool v = verdict(s[i], scored.leaders[i], thresholds[k].for_leader(leaders[i])).novel;
      novel_verdicts[k][i] = v;
      if (v && !flags[i]) ++fp;
      if (!v && flags[i]) ++fn;
    }
    const double n_known = static_cast<double>(std::count(flags.begin(), flags.end(), false));
    const double n_novel = static_cast<double>(pool.size()) - n_known;
    ojson m = {{"roc_auc", roc_auc(s, flags)},
               {"pr_auc", pr_auc(s, flags)},
               {"eer", eer(s, flags).rate},
               {"tau", thresholds[k].tau},
               {"fpr_at_tau", static_cast<double>(fp) / n_known},
               {"fnr_at_tau", static_cast<double>(fn) / n_novel}};
    if (!thresholds[k].leader_tau.empty()) m["leader_tau"] = thresholds[k].leader_tau;
    novelty[names[k]] = m;
  }
  out["novelty"] = novelty;

  // Generalized zero-shot routing.
  if (in.embeddings != nullptr && !cfg.zsl.methods.empty()) {
    const EmbeddingTable& table = *in.embeddings;
    std::vector<std::string> all_labels = sp.seen_classes;
    all_labels.insert(all_labels.end(), sp.unseen_classes.begin(), sp.unseen_classes.end());
    std::sort(all_labels.begin(), all_labels.end());
    const ZslContext ctx{main.head, table, cfg.mc_passes};

    ojson gzsl;
    for (const auto& method_name : cfg.zsl.methods) {
      std::vector<std::string> zsl_unseen(pool.size());
      std::vector<std::string> zsl_all(pool.size());
      if (method_name == "conse") {
        const ConseConfig cc{std::min<int>(cfg.zsl.conse_top_k, static_cast<int>(main.head.num_classes()))};
        for (std::size_t i = 0; i < pool.size(); ++i) {
          zsl_unseen[i] = conse_classify(scored.predictions[i].mean, ctx, cc, sp.unseen_classes);
          zsl_all[i] = conse_classify(scored.predictions[i].mean, ctx, cc, all_labels);
        }
      } else {
        const DeviseMap map = devise_train(sub.features, sub.labels, table, cfg.zsl.devise_lambda);
        for (std::size_t i = 0; i < pool.size(); ++i) {
          const Vector proj = devise_project(map, pool.x(i));
          zsl_unseen[i] = nn_classify(proj, sp.unseen_classes, table);
          zsl_all[i] = nn_classify(proj, all_labels, table);
        }
      }
      const double u_to_u = fraction_correct(zsl_unseen, pool.labels, flags);

      auto gate_entry = [&](const std::vector<std::string>& routed) {
        const double seen_acc = fraction_correct(routed, pool.labels, seen_mask);
        const double unseen_acc = fraction_correct(routed, pool.labels, flags);
        return ojson{{"u_to_u", u_to_u},
                     {"u_to_us", unseen_acc},
                     {"seen_accuracy", seen_acc},
                     {"unseen_accuracy", unseen_acc},
                     {"harmonic_mean", harmonic_mean(seen_acc, unseen_acc)}};
      };
      auto routed_by = [&](const std::vector<bool>& novel) {
        std::vector<std::string> routed(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) {
          const NoveltyVerdict v{0.0, scored.leaders[i], novel[i], 0, false};
          routed[i] = gzsl_route(v, main.head.class_labels(), sp.seen_classes, [&] { return zsl_unseen[i]; });
        }
        return routed;
      };

      ojson entry;
      entry["standard"] = gate_entry(zsl_all);
      for (std::size_t k = 0; k < names.size(); ++k) entry[names[k]] = gate_entry(routed_by(novel_verdicts[k]));
      entry["oracle"] = gate_entry(routed_by(flags));
      gzsl[method_name] = entry;
    }
    out["gzsl"] = gzsl;
  }

  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    if (cfg.write_models) {
      save_checkpoint(dir + "/checkpoint.txt", main.head);
      save_councils(dir + "/councils.txt", main.councils);
      const auto vi = static_cast<std::size_t>(
          std::find(names.begin(), names.end(), std::string(to_string(cfg.variant))) - names.begin());
      DetectorSettings ds{cfg.variant, cfg.mc_passes, thresholds[vi].tau, thresholds[vi].leader_tau};
      save_detector_settings(dir + "/detector.txt", ds);
      if (main.gmm) {
        auto f = detail::open_for_write(dir + "/gmm.txt");
        write_gmm(f, *main.gmm);
      }
      if (main.ocsvm) {
        auto f = detail::open_for_write(dir + "/ocsvm.txt");
        write_ocsvm(f, *main.ocsvm);
      }
    }
    if (cfg.write_score_dumps) {
      const auto vi = static_cast<std::size_t>(
          std::find(names.begin(), names.end(), std::string(to_string(cfg.variant))) - names.begin());
      ScoreDump dump{main.head.class_labels(), {}};
      for (std::size_t i = 0; i < pool.size(); ++i) {
        dump.rows.push_back({pool.ids[i], pool.labels[i], leaders[i], scored.by_method[vi][i],
                             scored.predictions[i].mean, scored.predictions[i].uncertainty});
      }
      save_score_dump(dir + "/scores.csv", dump);
    }
  }
  return out;
}

// Mean and sample standard deviation of every metric under
// closed_set_accuracy / novelty / gzsl, over completed splits.
inline ojson aggregate_splits(const std::vector<ojson>& splits) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> values;
  for (const auto& s : splits) {
    if (s.value("status", "") != "ok") continue;
    ojson part;
    for (const char* key : {"closed_set_accuracy", "novelty", "gzsl"}) {
      if (s.contains(key)) part[key] = s.at(key);
    }
    const ojson flat_part = part.flatten();
    for (const auto& [path, v] : flat_part.items()) {
      if (!v.is_number() || path.find("/leader_tau/") != std::string::npos) continue;
      auto [it, fresh] = values.try_emplace(path);
      if (fresh) order.push_back(path);
      it->second.push_back(v.get<double>());
    }
  }
  ojson flat = ojson::object();
  for (const auto& path : order) {
    const auto& v = values[path];
    flat[path + "/mean"] = mean_of(v);
    flat[path + "/std"] = sample_stddev(v);
    flat[path + "/n"] = v.size();
  }
  return flat.empty() ? ojson::object() : flat.unflatten();
}

struct ExperimentResult {
  ojson report;
  std::vector<SplitSpec> splits;
};

inline ojson report_metadata(const ExperimentConfig& cfg) {
  return {{"format", "councilnd-report"},
          {"version", 1},
          {"methods", detail::method_names(cfg)},
          {"mc_uncertainty", "per-class sample variance over MC passes (divisor M-1)"},
          {"council_variance", "population variance over the leader's holdout true positives"},
          {"tau_calibration", "EER on pseudo-novel seen classes held out from an auxiliary model"},
          {"decision_rule", "known iff score < tau"},
          {"baseline_feature_normalization", cfg.baselines.normalization},
          {"conse_probabilities", "MC predictive mean"},
          {"devise_objective", "ridge regression, closed form"},
          {"gzsl_leader", "MC predictive-mean argmax for every gate"},
          {"aggregate", "mean and sample standard deviation over completed splits (std 0 for one split)"}};
}

// In-memory entry point. Artifacts are written when cfg.output_dir is set.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg_in, const FeatureDataset& data,
                                       std::vector<SplitSpec> splits, const EmbeddingTable* embeddings = nullptr) {
  cfg_in.validate();
  data.validate();
  ExperimentConfig cfg = cfg_in;
  if (!cfg.baselines.ocsvm_options.gamma) cfg.baselines.ocsvm_options.gamma = 1.0 / static_cast<double>(data.dim());
  if (embeddings != nullptr && !cfg.zsl.methods.empty()) {
    for (const auto& label : data.distinct_labels()) (void)embeddings->embedding(label);
  }
  const std::string out_dir = cfg.output_dir;

  std::vector<ojson> sections;
  std::size_t failed = 0;
  for (const auto& sp : splits) {
    const std::string dir = out_dir.empty() ? std::string() : out_dir + "/" + detail::split_dir_name(sp.repetition);
    try {
      sections.push_back(run_split(cfg, SplitInputs{data, sp, embeddings}, dir));
    } catch (const Error& e) {
      ++failed;
      sections.push_back({{"repetition", sp.repetition}, {"status", "failed"}, {"error", e.what()}});
    }
  }

  ojson report;
  report["metadata"] = report_metadata(cfg);
  report["config"] = config_to_json(cfg);
  report["data"] = {{"samples", data.size()},
                    {"dim", data.dim()},
                    {"classes", data.distinct_labels().size()},
                    {"provenance", data.provenance}};
  report["summary"] = {{"splits", splits.size()},
                       {"completed", splits.size() - failed},
                       {"failed", failed},
                       {"partial", failed > 0}};
  report["summary"]["metrics"] = aggregate_splits(sections);
  report["splits"] = sections;

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    save_splits(out_dir + "/splits.txt", splits);
    auto f = detail::open_for_write(out_dir + "/report.json");
    f << report.dump(2) << "\n";
  }
  return {std::move(report), std::move(splits)};
}

// File-driven entry point: loads features, embeddings and splits named in
// the config (generating splits from the seed when no split file is given).
inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  if (cfg.features.empty()) throw ConfigError("config.features is required");
  const FeatureDataset data = load_features(cfg.features);
  std::optional<EmbeddingTable> table;
  if (!cfg.embeddings.empty()) table = load_embeddings(cfg.embeddings);
  std::vector<SplitSpec> splits;
  if (!cfg.splits.empty()) {
    splits = load_splits(cfg.splits);
  } else {
    SplitOptions opts;
    opts.repetitions = cfg.repetitions;
    if (!cfg.fixed_unseen.empty()) opts.fixed_unseen = cfg.fixed_unseen;
    splits = make_splits(data, cfg.seed, opts);
  }
  return run_experiment(cfg, data, std::move(splits), table ? &*table : nullptr);
}

}  // namespace councilnd
