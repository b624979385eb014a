#pragma once

// Leader selection and council election.
//
// For every class i, the holdout samples of class i that the model also
// predicts as i form its true-positive set. Over that set we look at the
// MC uncertainty of every other classifier j; classifiers whose uncertainty
// barely varies (population variance below the credibility threshold c) are
// elected to the council of leader i.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "councilnd/dataset.hpp"
#include "councilnd/dropout_head.hpp"
#include "councilnd/errors.hpp"
#include "councilnd/numeric.hpp"
#include "councilnd/textio.hpp"

namespace councilnd {

inline constexpr double kDefaultCredibility = 0.001;

// Argmax of the predictive mean, lowest index on ties.
inline std::size_t select_leader(std::span<const double> mean) {
  if (mean.empty()) throw DimensionError("select_leader: empty prediction");
  return argmax(mean);
}

// Population variance (divisor N). Values are shifted by the first element so
// a constant list gives exactly 0.
inline double uncertainty_variance(std::span<const double> uncertainties) {
  if (uncertainties.empty()) throw InsufficientSamplesError("uncertainty_variance of empty set");
  const double n = static_cast<double>(uncertainties.size());
  const double shift = uncertainties.front();
  double mean = 0.0;
  for (double u : uncertainties) mean += u - shift;
  mean /= n;
  double s = 0.0;
  for (double u : uncertainties) s += (u - shift - mean) * (u - shift - mean);
  return s / n;
}

enum class CouncilStatus {
  Elected,     // N >= 2 and at least one member passed the threshold
  Empty,       // N >= 2 but nobody passed; scoring falls back to the leader
  Degenerate,  // N < 2; council is the full complement
};

inline std::string_view to_string(CouncilStatus s) {
  switch (s) {
    case CouncilStatus::Elected: return "elected";
    case CouncilStatus::Empty: return "empty";
    case CouncilStatus::Degenerate: return "degenerate";
  }
  return "?";
}

inline CouncilStatus parse_council_status(std::string_view s) {
  if (s == "elected") return CouncilStatus::Elected;
  if (s == "empty") return CouncilStatus::Empty;
  if (s == "degenerate") return CouncilStatus::Degenerate;
  throw DataError("unknown council status '" + std::string(s) + "'");
}

struct CouncilTable {
  double credibility_threshold = kDefaultCredibility;
  std::vector<std::string> class_labels;
  std::vector<std::vector<std::size_t>> members;  // ascending member indices per leader
  Matrix variance;                                // (i, j) = Var(A_j | A_i)
  std::vector<std::size_t> tp_counts;
  std::vector<CouncilStatus> status;

  std::size_t num_classes() const noexcept { return class_labels.size(); }

  bool is_member(std::size_t leader, std::size_t j) const {
    const auto& m = members.at(leader);
    return std::binary_search(m.begin(), m.end(), j);
  }

  bool operator==(const CouncilTable&) const = default;
};

// Per-leader evidence gathered from one MC prediction per holdout sample.
struct ElectionEvidence {
  std::vector<std::string> class_labels;
  std::vector<std::vector<std::size_t>> tp_samples;  // holdout row indices per class
  std::vector<std::vector<Vector>> tp_uncertainty;   // matching U(. | x_n) vectors
};

inline std::vector<std::size_t> holdout_targets(const DropoutHead& model, const FeatureDataset& holdout) {
  std::vector<std::size_t> targets(holdout.size());
  for (std::size_t n = 0; n < holdout.size(); ++n) {
    auto idx = model.find_class(holdout.labels[n]);
    if (!idx) throw DataError("holdout label '" + holdout.labels[n] + "' is not a model class");
    targets[n] = *idx;
  }
  return targets;
}

// Sample n uses the child stream rng.child(holdout.ids[n]), so the result does
// not depend on iteration order.
inline ElectionEvidence collect_election_evidence(const DropoutHead& model, const FeatureDataset& holdout,
                                                  int passes, const RandomStream& rng) {
  if (!holdout.empty()) check_input(model, holdout.x(0));
  const std::vector<std::size_t> targets = holdout_targets(model, holdout);
  const std::size_t k = model.num_classes();
  ElectionEvidence ev{model.class_labels(), std::vector<std::vector<std::size_t>>(k),
                      std::vector<std::vector<Vector>>(k)};
  for (std::size_t n = 0; n < holdout.size(); ++n) {
    MCPrediction pred = mc_predict(model, holdout.x(n), passes, rng.child(holdout.ids[n]));
    const std::size_t leader = select_leader(pred.mean);
    if (leader != targets[n]) continue;
    ev.tp_samples[leader].push_back(n);
    ev.tp_uncertainty[leader].push_back(std::move(pred.uncertainty));
  }
  return ev;
}

inline std::vector<std::vector<std::size_t>> build_true_positive_sets(const DropoutHead& model,
                                                                      const FeatureDataset& holdout,
                                                                      int passes, const RandomStream& rng) {
  return collect_election_evidence(model, holdout, passes, rng).tp_samples;
}

inline CouncilTable elect_from_evidence(const ElectionEvidence& ev, double credibility) {
  if (!(credibility > 0.0)) throw ParameterError("credibility threshold must be positive");
  const std::size_t k = ev.class_labels.size();
  CouncilTable table;
  table.credibility_threshold = credibility;
  table.class_labels = ev.class_labels;
  table.members.assign(k, {});
  table.variance = Matrix(k, k, 0.0);
  table.tp_counts.assign(k, 0);
  table.status.assign(k, CouncilStatus::Degenerate);

  for (std::size_t leader = 0; leader < k; ++leader) {
    const auto& samples = ev.tp_uncertainty[leader];
    const std::size_t n = samples.size();
    table.tp_counts[leader] = n;
    if (n > 0) {
      Vector column(n);
      for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t s = 0; s < n; ++s) column[s] = samples[s][j];
        table.variance(leader, j) = uncertainty_variance(column);
      }
    }
    auto& members = table.members[leader];
    if (n < 2) {
      for (std::size_t j = 0; j < k; ++j) {
        if (j != leader) members.push_back(j);
      }
      table.status[leader] = CouncilStatus::Degenerate;
      continue;
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (j != leader && table.variance(leader, j) < credibility) members.push_back(j);
    }
    table.status[leader] = members.empty() ? CouncilStatus::Empty : CouncilStatus::Elected;
  }
  return table;
}

inline CouncilTable elect_councils(const DropoutHead& model, const FeatureDataset& holdout, double credibility,
                                   int passes, const RandomStream& rng) {
  if (!(credibility > 0.0)) throw ParameterError("credibility threshold must be positive");
  return elect_from_evidence(collect_election_evidence(model, holdout, passes, rng), credibility);
}

// ---------------------------------------------------------------------------
// Council file.

inline constexpr std::string_view kCouncilMagic = "councilnd-councils";
inline constexpr int kCouncilVersion = 1;

inline void write_councils(std::ostream& out, const CouncilTable& t) {
  out << "# " << kCouncilMagic << " v" << kCouncilVersion << "\n";
  out << "credibility_threshold " << format_double(t.credibility_threshold) << "\n";
  out << "classes " << t.num_classes() << "\n";
  for (const auto& label : t.class_labels) out << "label " << label << "\n";
  for (std::size_t i = 0; i < t.num_classes(); ++i) {
    out << "leader " << t.class_labels[i] << "\n";
    out << "n " << t.tp_counts[i] << "\n";
    out << "status " << to_string(t.status[i]) << "\n";
    for (std::size_t j : t.members[i]) out << "member " << t.class_labels[j] << "\n";
    out << "var ";
    detail::write_row(out, t.variance.row(i));
    out << "end\n";
  }
}

inline CouncilTable read_councils(std::istream& in, const std::string& source = {}) {
  detail::LineReader reader(in, source);
  reader.require_version(kCouncilMagic, kCouncilVersion);
  CouncilTable t;
  if (!parse_double(reader.require_keyed("credibility_threshold"), t.credibility_threshold) ||
      !(t.credibility_threshold > 0.0)) {
    reader.fail("bad credibility threshold");
  }
  const auto k = detail::parse_int<std::size_t>(reader, reader.require_keyed("classes"));
  for (std::size_t c = 0; c < k; ++c) t.class_labels.push_back(reader.require_keyed("label"));
  auto index_of = [&](const std::string& label) {
    auto it = std::find(t.class_labels.begin(), t.class_labels.end(), label);
    if (it == t.class_labels.end()) reader.fail("unknown class label '" + label + "'");
    return static_cast<std::size_t>(it - t.class_labels.begin());
  };
  t.members.assign(k, {});
  t.variance = Matrix(k, k);
  t.tp_counts.assign(k, 0);
  t.status.assign(k, CouncilStatus::Degenerate);
  for (std::size_t i = 0; i < k; ++i) {
    if (index_of(reader.require_keyed("leader")) != i) reader.fail("leaders out of order");
    t.tp_counts[i] = detail::parse_int<std::size_t>(reader, reader.require_keyed("n"));
    try {
      t.status[i] = parse_council_status(reader.require_keyed("status"));
    } catch (const DataError& e) {
      reader.fail(e.what());
    }
    while (true) {
      const std::string line = reader.require("member, var");
      std::string_view v = detail::trim(line);
      if (v.substr(0, 7) == "member ") {
        const std::size_t j = index_of(std::string(detail::trim(v.substr(7))));
        if (j == i) reader.fail("leader cannot sit in its own council");
        t.members[i].push_back(j);
      } else if (v.substr(0, 4) == "var ") {
        Vector row = detail::parse_doubles(reader, v.substr(4), k);
        for (double x : row) {
          if (!(x >= 0.0) || !std::isfinite(x)) reader.fail("variance values must be finite and >= 0");
        }
        std::copy(row.begin(), row.end(), t.variance.row(i).begin());
        break;
      } else {
        reader.fail("expected 'member' or 'var'");
      }
    }
    if (detail::trim(reader.require("end")) != "end") reader.fail("expected 'end'");
    std::sort(t.members[i].begin(), t.members[i].end());
  }
  return t;
}

inline void save_councils(const std::string& path, const CouncilTable& t) {
  auto out = detail::open_for_write(path);
  write_councils(out, t);
}

inline CouncilTable load_councils(const std::string& path) {
  auto in = detail::open_for_read(path);
  return read_councils(in, path);
}

}  // namespace councilnd
