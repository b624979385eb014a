#pragma once

// Helpers shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "councilnd/dataset.hpp"
#include "councilnd/dropout_head.hpp"
#include "councilnd/numeric.hpp"

namespace testing_support {

using namespace councilnd;

inline std::vector<std::string> class_names(std::size_t k, const std::string& prefix = "c") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(prefix + std::to_string(i));
  return out;
}

inline DropoutHead random_head(std::size_t d, std::size_t h, std::size_t k, double p, RandomStream& rng,
                               double weight_scale = 1.0) {
  Matrix w1(d, h), w2(h, k);
  Vector b1(h);
  for (double& v : w1.data()) v = weight_scale * rng.normal();
  for (double& v : b1) v = 0.5 * weight_scale * rng.normal();
  for (double& v : w2.data()) v = weight_scale * rng.normal();
  return {std::move(w1), std::move(b1), std::move(w2), p, class_names(k)};
}

inline Vector random_vector(std::size_t d, RandomStream& rng, double scale = 1.0) {
  Vector x(d);
  for (double& v : x) v = scale * rng.normal();
  return x;
}

// Isotropic Gaussian blobs, `per_class` samples around each mean.
inline FeatureDataset blobs(const std::vector<Vector>& means, std::size_t per_class, double noise, RandomStream& rng,
                            const std::string& label_prefix = "c") {
  FeatureDataset ds;
  const std::size_t d = means.front().size();
  ds.features = Matrix(means.size() * per_class, d);
  std::size_t row = 0;
  for (std::size_t c = 0; c < means.size(); ++c) {
    for (std::size_t s = 0; s < per_class; ++s, ++row) {
      ds.ids.push_back(label_prefix + std::to_string(c) + "-" + std::to_string(s));
      ds.labels.push_back(label_prefix + std::to_string(c));
      for (std::size_t j = 0; j < d; ++j) ds.features(row, j) = means[c][j] + noise * rng.normal();
    }
  }
  return ds;
}

// Copy of `head` with one parameter nudged. which: 0 = W1, 1 = b1, 2 = W2.
inline DropoutHead perturbed(const DropoutHead& head, int which, std::size_t index, double delta) {
  Matrix w1 = head.w1();
  Vector b1 = head.b1();
  Matrix w2 = head.w2();
  if (which == 0) w1.data()[index] += delta;
  if (which == 1) b1[index] += delta;
  if (which == 2) w2.data()[index] += delta;
  return {std::move(w1), std::move(b1), std::move(w2), head.dropout_p(), head.class_labels()};
}

// Largest per-parameter relative error between the analytic gradient and a
// central finite difference, masks frozen.
inline double max_gradient_error(const DropoutHead& head, std::span<const double> x, std::size_t label,
                                 const HeadMasks& masks, double step = 1e-5, double floor = 1e-6) {
  const LossAndGradient lg = loss_and_gradient(head, x, label, masks);
  const std::vector<std::span<const double>> analytic = {lg.gradient.w1.data(), lg.gradient.b1,
                                                         lg.gradient.w2.data()};
  double worst = 0.0;
  for (int which = 0; which < 3; ++which) {
    for (std::size_t i = 0; i < analytic[static_cast<std::size_t>(which)].size(); ++i) {
      const double up = cross_entropy(forward_with_masks(perturbed(head, which, i, step), x, masks).probabilities, label);
      const double dn =
          cross_entropy(forward_with_masks(perturbed(head, which, i, -step), x, masks).probabilities, label);
      const double numeric = (up - dn) / (2.0 * step);
      const double a = analytic[static_cast<std::size_t>(which)][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Pair-counting AUC: P(novel > known) + 0.5 P(equal).
inline double pair_count_auc(const std::vector<double>& scores, const std::vector<bool>& novel) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!novel[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (novel[j]) continue;
      pairs += 1.0;
      if (scores[i] > scores[j]) wins += 1.0;
      if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

// Dense solve with partial pivoting; false when (near) singular.
inline bool solve_linear(std::vector<std::vector<double>> a, std::vector<double> b, std::vector<double>& x) {
  const std::size_t n = b.size();
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    if (std::abs(a[piv][c]) < 1e-12) return false;
    std::swap(a[c], a[piv]);
    std::swap(b[c], b[piv]);
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
      b[r] -= f * b[c];
    }
  }
  x.assign(n, 0.0);
  for (std::size_t c = n; c-- > 0;) {
    double s = b[c];
    for (std::size_t k = c + 1; k < n; ++k) s -= a[c][k] * x[k];
    x[c] = s / a[c][c];
  }
  return true;
}

inline Matrix rbf_gram(const Matrix& x, double gamma) {
  Matrix k(x.rows(), x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.rows(); ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) d2 += (x(i, c) - x(j, c)) * (x(i, c) - x(j, c));
      k(i, j) = std::exp(-gamma * d2);
    }
  }
  return k;
}

inline double quadratic_form(const Matrix& k, const std::vector<double>& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a.size(); ++j) s += a[i] * k(i, j) * a[j];
  }
  return 0.5 * s;
}

// Exact minimum of 1/2 a^T K a over {0 <= a <= C, sum a = 1}: every face of
// the box is tried (each index at 0, at C, or free) and the stationary point
// of the equality-constrained problem on that face kept when feasible.
inline double ocsvm_dual_minimum_by_faces(const Matrix& k, double c) {
  const std::size_t n = k.rows();
  std::size_t faces = 1;
  for (std::size_t i = 0; i < n; ++i) faces *= 3;
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> state(n);
  for (std::size_t f = 0; f < faces; ++f) {
    std::size_t code = f;
    std::vector<std::size_t> free_idx;
    double fixed_mass = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      state[i] = static_cast<int>(code % 3);
      code /= 3;
      if (state[i] == 2) free_idx.push_back(i);
      if (state[i] == 1) fixed_mass += c;
    }
    std::vector<double> a(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) a[i] = state[i] == 1 ? c : 0.0;
    if (free_idx.empty()) {
      if (std::abs(fixed_mass - 1.0) > 1e-12) continue;
    } else {
      const std::size_t m = free_idx.size();
      std::vector<std::vector<double>> sys(m + 1, std::vector<double>(m + 1, 0.0));
      std::vector<double> rhs(m + 1, 0.0), sol;
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t q = 0; q < m; ++q) sys[r][q] = k(free_idx[r], free_idx[q]);
        sys[r][m] = -1.0;
        sys[m][r] = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (state[i] == 1) rhs[r] -= k(free_idx[r], i) * c;
        }
      }
      rhs[m] = 1.0 - fixed_mass;
      if (!solve_linear(sys, rhs, sol)) continue;
      bool feasible = true;
      for (std::size_t r = 0; r < m; ++r) {
        if (sol[r] < -1e-12 || sol[r] > c + 1e-12) feasible = false;
        a[free_idx[r]] = sol[r];
      }
      if (!feasible) continue;
    }
    best = std::min(best, quadratic_form(k, a));
  }
  return best;
}

// Brute-force grid over the feasible set with the given step (small n only).
inline double ocsvm_dual_minimum_by_grid(const Matrix& k, double c, double step) {
  const std::size_t n = k.rows();
  const auto units = static_cast<long>(std::llround(1.0 / step));
  const auto cap = static_cast<long>(std::floor(c / step + 1e-9));
  double best = std::numeric_limits<double>::infinity();
  std::vector<long> count(n, 0);
  std::vector<double> a(n);
  // Enumerate the first n-1 coordinates; the last takes the remainder.
  auto recurse = [&](auto&& self, std::size_t i, long used) -> void {
    if (i + 1 == n) {
      const long last = units - used;
      if (last < 0 || last > cap) return;
      count[i] = last;
      for (std::size_t t = 0; t < n; ++t) a[t] = static_cast<double>(count[t]) * step;
      best = std::min(best, quadratic_form(k, a));
      return;
    }
    for (long v = 0; v <= std::min(cap, units - used); ++v) {
      count[i] = v;
      self(self, i + 1, used + v);
    }
  };
  recurse(recurse, 0, 0);
  return best;
}

}  // namespace testing_support
