#pragma once

// Threshold-free and thresholded evaluation metrics. Novel is the positive
// class throughout, and higher scores mean "more novel".

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "councilnd/errors.hpp"
#include "councilnd/numeric.hpp"

namespace councilnd {

namespace detail {

struct ScoreBlock {
  double score;
  std::size_t positives;
  std::size_t negatives;
};

// Groups equal scores into blocks, highest score first.
inline std::vector<ScoreBlock> score_blocks(std::span<const double> scores, const std::vector<bool>& is_novel) {
  if (scores.size() != is_novel.size()) throw DimensionError("scores and flags differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<ScoreBlock> blocks;
  for (std::size_t idx : order) {
    if (!std::isfinite(scores[idx])) throw NumericalError("non-finite score");
    if (blocks.empty() || blocks.back().score != scores[idx]) blocks.push_back({scores[idx], 0, 0});
    if (is_novel[idx]) {
      ++blocks.back().positives;
    } else {
      ++blocks.back().negatives;
    }
  }
  return blocks;
}

inline std::pair<std::size_t, std::size_t> count_classes(const std::vector<bool>& is_novel) {
  const auto pos = static_cast<std::size_t>(std::count(is_novel.begin(), is_novel.end(), true));
  return {pos, is_novel.size() - pos};
}

}  // namespace detail

// Trapezoidal area under the ROC curve, tie blocks processed together.
inline double roc_auc(std::span<const double> scores, const std::vector<bool>& is_novel) {
  const auto [pos, neg] = detail::count_classes(is_novel);
  if (pos == 0 || neg == 0) throw CalibrationError("roc_auc needs both novel and known samples");
  double twice_area = 0.0;  // in units of (1/pos)(1/neg)
  std::size_t tp = 0;
  for (const auto& b : detail::score_blocks(scores, is_novel)) {
    twice_area += static_cast<double>(b.negatives) * static_cast<double>(2 * tp + b.positives);
    tp += b.positives;
  }
  return twice_area / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

// Average precision: sum over tie blocks of (recall gain) x (precision after
// the block).
inline double pr_auc(std::span<const double> scores, const std::vector<bool>& is_novel) {
  const auto [pos, neg] = detail::count_classes(is_novel);
  if (pos == 0 || neg == 0) throw CalibrationError("pr_auc needs both novel and known samples");
  double ap = 0.0;
  std::size_t tp = 0;
  std::size_t seen = 0;
  for (const auto& b : detail::score_blocks(scores, is_novel)) {
    tp += b.positives;
    seen += b.positives + b.negatives;
    if (b.positives > 0) {
      ap += (static_cast<double>(b.positives) / static_cast<double>(pos)) *
            (static_cast<double>(tp) / static_cast<double>(seen));
    }
  }
  return ap;
}

struct ErrorRates {
  double false_positive;  // known samples flagged novel
  double false_negative;  // novel samples passed as known
};

// Rates for the rule "novel iff score >= threshold".
inline ErrorRates error_rates_at(std::span<const double> scores, const std::vector<bool>& is_novel, double threshold) {
  const auto [pos, neg] = detail::count_classes(is_novel);
  if (pos == 0 || neg == 0) throw CalibrationError("error rates need both novel and known samples");
  std::size_t fp = 0;
  std::size_t fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool flagged = scores[i] >= threshold;
    if (is_novel[i] && !flagged) ++fn;
    if (!is_novel[i] && flagged) ++fp;
  }
  return {static_cast<double>(fp) / static_cast<double>(neg), static_cast<double>(fn) / static_cast<double>(pos)};
}

struct EqualErrorRate {
  double rate;
  double threshold;
};

// Candidate thresholds are the lowest score (everything flagged novel), the
// midpoints between consecutive distinct scores, and a point above the
// highest score (nothing flagged). FPR - FNR falls strictly along that list;
// the threshold is interpolated linearly between the two candidates that
// bracket its sign change.
inline EqualErrorRate eer(std::span<const double> scores, const std::vector<bool>& is_novel) {
  const auto [pos, neg] = detail::count_classes(is_novel);
  if (pos == 0 || neg == 0) throw CalibrationError("EER calibration needs both novel and known samples");

  auto blocks = detail::score_blocks(scores, is_novel);
  std::reverse(blocks.begin(), blocks.end());  // ascending

  struct Candidate {
    double threshold;
    double fpr;
    double fnr;
  };
  std::vector<Candidate> cands;
  cands.reserve(blocks.size() + 1);
  // At threshold t_b (just at/below block b), blocks b.. are flagged novel.
  std::size_t known_below = 0;
  std::size_t novel_below = 0;
  const double dpos = static_cast<double>(pos);
  const double dneg = static_cast<double>(neg);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const double t = (b == 0) ? blocks[0].score : 0.5 * (blocks[b - 1].score + blocks[b].score);
    cands.push_back({t, static_cast<double>(neg - known_below) / dneg, static_cast<double>(novel_below) / dpos});
    known_below += blocks[b].negatives;
    novel_below += blocks[b].positives;
  }
  const double top = blocks.back().score;
  const double gap = blocks.size() > 1 ? 0.5 * (top - blocks[blocks.size() - 2].score)
                                       : std::max(0.5, 0.5 * std::abs(top));
  cands.push_back({top + gap, 0.0, 1.0});

  for (std::size_t c = 0; c < cands.size(); ++c) {
    const double diff = cands[c].fpr - cands[c].fnr;
    if (diff == 0.0) return {cands[c].fpr, cands[c].threshold};
    if (diff < 0.0) {
      // c >= 1 because the first candidate has FPR = 1, FNR = 0.
      const Candidate& a = cands[c - 1];
      const Candidate& b = cands[c];
      const double da = a.fpr - a.fnr;
      const double w = da / (da - diff);
      return {a.fpr + w * (b.fpr - a.fpr), a.threshold + w * (b.threshold - a.threshold)};
    }
  }
  return {cands.back().fpr, cands.back().threshold};  // unreachable: last candidate has diff = -1
}

// Fraction of correct predictions over samples whose truth is in restrict_to
// (or over all samples).
inline double accuracy(std::span<const std::string> predictions, std::span<const std::string> truths,
                       const std::optional<std::set<std::string>>& restrict_to = std::nullopt) {
  if (predictions.size() != truths.size()) throw DimensionError("accuracy: length mismatch");
  std::size_t total = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (restrict_to && !restrict_to->count(truths[i])) continue;
    ++total;
    if (predictions[i] == truths[i]) ++correct;
  }
  if (total == 0) throw InsufficientSamplesError("accuracy undefined: no sample in the evaluated label set");
  return static_cast<double>(correct) / static_cast<double>(total);
}

inline double harmonic_mean(double acc_seen, double acc_unseen) {
  if (acc_seen <= 0.0 || acc_unseen <= 0.0) return 0.0;
  return 2.0 * acc_seen * acc_unseen / (acc_seen + acc_unseen);
}

}  // namespace councilnd
