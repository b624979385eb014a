#pragma once

// Novelty scoring by council vote, rejection-threshold calibration and the
// open-set decision rule (Known(leader) iff score < tau).

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "councilnd/council.hpp"
#include "councilnd/dropout_head.hpp"
#include "councilnd/errors.hpp"
#include "councilnd/metrics.hpp"
#include "councilnd/textio.hpp"

namespace councilnd {

enum class Variant {
  InformedDemocracy,    // mean uncertainty of the leader's council
  UninformedDemocracy,  // mean uncertainty of all K classifiers
  Dictator,             // the leader's own uncertainty
};

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::InformedDemocracy: return "informed";
    case Variant::UninformedDemocracy: return "uninformed";
    case Variant::Dictator: return "dictator";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "informed" || s == "InformedDemocracy") return Variant::InformedDemocracy;
  if (s == "uninformed" || s == "UninformedDemocracy") return Variant::UninformedDemocracy;
  if (s == "dictator" || s == "Dictator") return Variant::Dictator;
  throw ConfigError("unknown variant '" + std::string(s) + "' (informed|uninformed|dictator)");
}

struct CouncilVote {
  double score = 0.0;
  std::size_t leader = 0;
  std::size_t council_size = 0;
  bool fallback = false;  // empty council, leader's own uncertainty used
};

// Applies the voting rule to an existing MC prediction.
inline CouncilVote vote(const MCPrediction& pred, const CouncilTable& councils, Variant variant) {
  const std::size_t k = pred.mean.size();
  if (pred.uncertainty.size() != k) throw DimensionError("prediction mean/uncertainty length mismatch");
  CouncilVote v;
  v.leader = select_leader(pred.mean);
  const auto& u = pred.uncertainty;
  switch (variant) {
    case Variant::Dictator:
      v.score = u[v.leader];
      v.council_size = 0;
      break;
    case Variant::UninformedDemocracy: {
      double s = 0.0;
      for (std::size_t i = 0; i < k; ++i) s += u[i];
      v.score = s / static_cast<double>(k);
      v.council_size = k;
      break;
    }
    case Variant::InformedDemocracy: {
      if (councils.num_classes() != k) throw DimensionError("council table does not match the model classes");
      // Summed in index order so member order in the table cannot change the bits.
      std::vector<std::size_t> members = councils.members[v.leader];
      std::sort(members.begin(), members.end());
      if (members.empty()) {
        v.score = u[v.leader];
        v.fallback = true;
        break;
      }
      double s = 0.0;
      for (std::size_t j : members) s += u.at(j);
      v.score = s / static_cast<double>(members.size());
      v.council_size = members.size();
      break;
    }
  }
  return v;
}

class NoveltyDetector {
 public:
  NoveltyDetector(DropoutHead model, CouncilTable councils, Variant variant, int passes = kDefaultPasses)
      : model_(std::move(model)), councils_(std::move(councils)), variant_(variant), passes_(passes) {
    if (passes_ < 2) throw InsufficientSamplesError("novelty detector needs at least 2 MC passes");
    if (councils_.class_labels != model_.class_labels()) {
      throw DataError("council table classes do not match the model classes");
    }
  }

  const DropoutHead& model() const noexcept { return model_; }
  const CouncilTable& councils() const noexcept { return councils_; }
  Variant variant() const noexcept { return variant_; }
  int passes() const noexcept { return passes_; }

  const std::optional<double>& tau() const noexcept { return tau_; }
  void set_tau(double tau) {
    if (!std::isfinite(tau)) throw ParameterError("tau must be finite");
    tau_ = tau;
  }

  // Optional per-leader thresholds; leaders without an entry use the global tau.
  const std::map<std::size_t, double>& leader_tau() const noexcept { return leader_tau_; }
  void set_leader_tau(std::size_t leader, double tau) {
    if (leader >= model_.num_classes()) throw ParameterError("leader index out of range");
    if (!std::isfinite(tau)) throw ParameterError("tau must be finite");
    leader_tau_[leader] = tau;
  }

  bool calibrated() const noexcept { return tau_.has_value(); }

  double threshold_for(std::size_t leader) const {
    if (auto it = leader_tau_.find(leader); it != leader_tau_.end()) return it->second;
    if (!tau_) throw CalibrationError("detector is not calibrated");
    return *tau_;
  }

 private:
  DropoutHead model_;
  CouncilTable councils_;
  Variant variant_;
  int passes_;
  std::optional<double> tau_;
  std::map<std::size_t, double> leader_tau_;
};

struct NoveltyScore {
  double score;
  std::size_t leader;
  std::size_t council_size;
  bool fallback;
  MCPrediction prediction;
};

inline NoveltyScore novelty_score(const NoveltyDetector& det, std::span<const double> x, const RandomStream& rng) {
  MCPrediction pred = mc_predict(det.model(), x, det.passes(), rng);
  const CouncilVote v = vote(pred, det.councils(), det.variant());
  return {v.score, v.leader, v.council_size, v.fallback, std::move(pred)};
}

inline double calibrate_tau(std::span<const double> scores, const std::vector<bool>& is_novel) {
  return eer(scores, is_novel).threshold;
}

// Per-leader EER thresholds for leaders whose scores include both known and
// novel samples.
inline std::map<std::size_t, double> calibrate_leader_tau(std::span<const double> scores,
                                                          const std::vector<bool>& is_novel,
                                                          std::span<const std::size_t> leaders) {
  if (scores.size() != is_novel.size() || scores.size() != leaders.size()) {
    throw DimensionError("calibrate_leader_tau: length mismatch");
  }
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<bool>>> groups;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto& g = groups[leaders[i]];
    g.first.push_back(scores[i]);
    g.second.push_back(is_novel[i]);
  }
  std::map<std::size_t, double> out;
  for (auto& [leader, g] : groups) {
    const bool any_novel = std::find(g.second.begin(), g.second.end(), true) != g.second.end();
    const bool any_known = std::find(g.second.begin(), g.second.end(), false) != g.second.end();
    if (!any_novel || !any_known) continue;
    out[leader] = calibrate_tau(g.first, g.second);
  }
  return out;
}

struct NoveltyVerdict {
  double score;
  std::size_t leader;
  bool novel;  // Known(leader) when false
  std::size_t council_size;
  bool fallback;
};

inline NoveltyVerdict verdict(double score, std::size_t leader, double tau, std::size_t council_size = 0,
                              bool fallback = false) {
  return {score, leader, !(score < tau), council_size, fallback};
}

inline NoveltyVerdict decide(const NoveltyDetector& det, std::span<const double> x, const RandomStream& rng) {
  if (!det.calibrated()) throw CalibrationError("detector is not calibrated");
  const NoveltyScore s = novelty_score(det, x, rng);
  return verdict(s.score, s.leader, det.threshold_for(s.leader), s.council_size, s.fallback);
}

// ---------------------------------------------------------------------------
// Detector settings file (variant, passes, thresholds). Model and councils
// live in their own files.

inline constexpr std::string_view kDetectorMagic = "councilnd-detector";
inline constexpr int kDetectorVersion = 1;

struct DetectorSettings {
  Variant variant = Variant::InformedDemocracy;
  int passes = kDefaultPasses;
  std::optional<double> tau;
  std::map<std::string, double> leader_tau;  // keyed by class label

  bool operator==(const DetectorSettings&) const = default;
};

inline DetectorSettings settings_of(const NoveltyDetector& det) {
  DetectorSettings s{det.variant(), det.passes(), det.tau(), {}};
  for (const auto& [leader, tau] : det.leader_tau()) s.leader_tau[det.model().class_labels()[leader]] = tau;
  return s;
}

inline void apply_settings(NoveltyDetector& det, const DetectorSettings& s) {
  if (s.tau) det.set_tau(*s.tau);
  for (const auto& [label, tau] : s.leader_tau) det.set_leader_tau(det.model().class_index(label), tau);
}

inline void write_detector_settings(std::ostream& out, const DetectorSettings& s) {
  out << "# " << kDetectorMagic << " v" << kDetectorVersion << "\n";
  out << "variant " << to_string(s.variant) << "\n";
  out << "passes " << s.passes << "\n";
  out << "tau " << (s.tau ? format_double(*s.tau) : std::string("none")) << "\n";
  for (const auto& [label, tau] : s.leader_tau) out << "leader_tau " << format_double(tau) << ' ' << label << "\n";
}

inline DetectorSettings read_detector_settings(std::istream& in, const std::string& source = {}) {
  detail::LineReader reader(in, source);
  reader.require_version(kDetectorMagic, kDetectorVersion);
  DetectorSettings s;
  try {
    s.variant = parse_variant(reader.require_keyed("variant"));
  } catch (const ConfigError& e) {
    reader.fail(e.what());
  }
  s.passes = detail::parse_int<int>(reader, reader.require_keyed("passes"));
  const std::string tau = reader.require_keyed("tau");
  if (tau != "none") {
    double t = 0.0;
    if (!parse_double(tau, t) || !std::isfinite(t)) reader.fail("bad tau");
    s.tau = t;
  }
  std::string line;
  while (reader.next(line)) {
    std::string_view v = detail::trim(line);
    if (v.substr(0, 11) != "leader_tau ") reader.fail("expected 'leader_tau'");
    v = detail::trim(v.substr(11));
    const std::size_t sp = v.find(' ');
    double t = 0.0;
    if (sp == std::string_view::npos || !parse_double(v.substr(0, sp), t)) reader.fail("bad leader_tau line");
    s.leader_tau[std::string(detail::trim(v.substr(sp + 1)))] = t;
  }
  return s;
}

inline void save_detector_settings(const std::string& path, const DetectorSettings& s) {
  auto out = detail::open_for_write(path);
  write_detector_settings(out, s);
}

inline DetectorSettings load_detector_settings(const std::string& path) {
  auto in = detail::open_for_read(path);
  return read_detector_settings(in, path);
}

}  // namespace councilnd
