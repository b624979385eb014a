#pragma once

// Comparison novelty scorers. Every score is oriented like the council score:
// higher means more novel.
//
//   GMM       : -log p(x) under a diagonal-covariance mixture fitted by EM
//   OC-SVM    : rho - sum_i alpha_i k(s_i, x), RBF kernel
//   softmax   : 1 - max_i p_i of the deterministic head
//
// GMM and OC-SVM expect L2-normalized features (see l2_normalize_rows).

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "councilnd/dropout_head.hpp"
#include "councilnd/errors.hpp"
#include "councilnd/numeric.hpp"
#include "councilnd/textio.hpp"

namespace councilnd {

// ---------------------------------------------------------------------------
// Gaussian mixture with diagonal covariances.

struct GmmOptions {
  int components = 8;
  int max_iterations = 200;
  double tolerance = 1e-6;  // relative log-likelihood improvement
  double variance_floor = 1e-6;
  int kmeans_iterations = 25;
};

struct GmmModel {
  Vector weights;     // k
  Matrix means;       // k x d
  Matrix variances;   // k x d, every entry >= variance_floor
  double variance_floor = 1e-6;

  std::size_t components() const noexcept { return weights.size(); }
  std::size_t dim() const noexcept { return means.cols(); }
  bool operator==(const GmmModel&) const = default;
};

struct GmmFit {
  GmmModel model;
  std::vector<double> log_likelihood;  // total, at init and after each iteration
  bool converged = false;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// log(w_c) + log N(x | mu_c, diag(var_c)) for every component.
inline void component_log_terms(const GmmModel& g, std::span<const double> x, std::span<const double> log_norm,
                                Vector& out) {
  const std::size_t k = g.components();
  const std::size_t d = g.dim();
  out.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (g.weights[c] <= 0.0) {
      out[c] = -std::numeric_limits<double>::infinity();
      continue;
    }
    auto mu = g.means.row(c);
    auto var = g.variances.row(c);
    double q = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = x[j] - mu[j];
      q += diff * diff / var[j];
    }
    out[c] = std::log(g.weights[c]) + log_norm[c] - 0.5 * q;
  }
}

inline Vector gmm_log_norms(const GmmModel& g) {
  Vector out(g.components());
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  for (std::size_t c = 0; c < g.components(); ++c) {
    double s = 0.0;
    for (double v : g.variances.row(c)) s += log_2pi + std::log(v);
    out[c] = -0.5 * s;
  }
  return out;
}

// k-means++ seeding followed by Lloyd iterations. Ties go to the lowest
// center index; empty clusters keep their previous center.
inline std::vector<std::size_t> kmeans(const Matrix& x, std::size_t k, int iterations, RandomStream& rng,
                                       Matrix& centers) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  centers = Matrix(k, d);
  std::size_t first = rng.uniform_index(n);
  std::copy(x.row(first).begin(), x.row(first).end(), centers.row(0).begin());
  Vector nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(x.row(i), centers.row(c - 1)));
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        target -= nearest[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_index(n);
    }
    std::copy(x.row(pick).begin(), x.row(pick).end(), centers.row(c).begin());
  }

  std::vector<std::size_t> assign(n, 0);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = squared_distance(x.row(i), centers.row(0));
      for (std::size_t c = 1; c < k; ++c) {
        const double dist = squared_distance(x.row(i), centers.row(c));
        if (dist < best_d) {
          best_d = dist;
          best = c;
        }
      }
      if (it == 0 || assign[i] != best) changed = true;
      assign[i] = best;
    }
    Matrix sums(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      auto s = sums.row(assign[i]);
      auto xi = x.row(i);
      for (std::size_t j = 0; j < d; ++j) s[j] += xi[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      auto s = sums.row(c);
      auto ctr = centers.row(c);
      for (std::size_t j = 0; j < d; ++j) ctr[j] = s[j] / static_cast<double>(counts[c]);
    }
    if (!changed) break;
  }
  return assign;
}

}  // namespace detail

inline double gmm_log_density(const GmmModel& g, std::span<const double> x) {
  if (x.size() != g.dim()) throw DimensionError("gmm: input dimension mismatch");
  Vector terms;
  detail::component_log_terms(g, x, detail::gmm_log_norms(g), terms);
  return detail::log_sum_exp(terms);
}

inline double gmm_novelty_score(const GmmModel& g, std::span<const double> x) { return -gmm_log_density(g, x); }

// Posterior component probabilities, one row per sample.
inline Matrix gmm_responsibilities(const GmmModel& g, const Matrix& x) {
  const Vector log_norm = detail::gmm_log_norms(g);
  Matrix out(x.rows(), g.components());
  Vector terms;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    detail::component_log_terms(g, x.row(i), log_norm, terms);
    const double lse = detail::log_sum_exp(terms);
    auto r = out.row(i);
    for (std::size_t c = 0; c < terms.size(); ++c) r[c] = std::exp(terms[c] - lse);
  }
  return out;
}

inline GmmFit fit_gmm(const Matrix& x, const GmmOptions& opts, RandomStream& rng) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (opts.components < 1) throw ParameterError("gmm: components must be at least 1");
  const auto k = static_cast<std::size_t>(opts.components);
  if (d == 0) throw DimensionError("gmm: data dimension must be positive");
  if (n < k) {
    throw InsufficientSamplesError("gmm: need at least as many samples as components (" + std::to_string(n) +
                                   " < " + std::to_string(k) + ")");
  }
  if (!(opts.variance_floor > 0.0)) throw ParameterError("gmm: variance floor must be positive");
  if (!all_finite(x.data())) throw DataError("gmm: non-finite input");

  GmmModel g;
  g.variance_floor = opts.variance_floor;
  const std::vector<std::size_t> assign = detail::kmeans(x, k, opts.kmeans_iterations, rng, g.means);
  g.weights.assign(k, 0.0);
  g.variances = Matrix(k, d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    g.weights[assign[i]] += 1.0;
    auto var = g.variances.row(assign[i]);
    auto mu = g.means.row(assign[i]);
    auto xi = x.row(i);
    for (std::size_t j = 0; j < d; ++j) var[j] += (xi[j] - mu[j]) * (xi[j] - mu[j]);
  }
  for (std::size_t c = 0; c < k; ++c) {
    auto var = g.variances.row(c);
    for (double& v : var) v = std::max(opts.variance_floor, g.weights[c] > 0 ? v / g.weights[c] : 1.0);
    g.weights[c] /= static_cast<double>(n);
  }

  Matrix resp(n, k);
  Vector terms;
  auto e_step = [&]() {
    const Vector log_norm = detail::gmm_log_norms(g);
    double ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      detail::component_log_terms(g, x.row(i), log_norm, terms);
      const double lse = detail::log_sum_exp(terms);
      ll += lse;
      auto r = resp.row(i);
      for (std::size_t c = 0; c < k; ++c) r[c] = std::exp(terms[c] - lse);
    }
    return ll;
  };

  GmmFit fit;
  fit.log_likelihood.push_back(e_step());
  for (int it = 0; it < opts.max_iterations; ++it) {
    // M-step. Components with no responsibility mass keep their parameters.
    for (std::size_t c = 0; c < k; ++c) {
      double nk = 0.0;
      for (std::size_t i = 0; i < n; ++i) nk += resp(i, c);
      g.weights[c] = nk / static_cast<double>(n);
      if (nk <= 0.0) continue;
      auto mu = g.means.row(c);
      std::fill(mu.begin(), mu.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp(i, c);
        if (r == 0.0) continue;
        auto xi = x.row(i);
        for (std::size_t j = 0; j < d; ++j) mu[j] += r * xi[j];
      }
      for (double& m : mu) m /= nk;
      auto var = g.variances.row(c);
      std::fill(var.begin(), var.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double r = resp(i, c);
        if (r == 0.0) continue;
        auto xi = x.row(i);
        for (std::size_t j = 0; j < d; ++j) var[j] += r * (xi[j] - mu[j]) * (xi[j] - mu[j]);
      }
      for (double& v : var) v = std::max(opts.variance_floor, v / nk);
    }
    const double prev = fit.log_likelihood.back();
    const double ll = e_step();
    if (!std::isfinite(ll)) throw NumericalError("gmm: non-finite log-likelihood");
    fit.log_likelihood.push_back(ll);
    if (std::abs(ll - prev) <= opts.tolerance * std::abs(prev)) {
      fit.converged = true;
      break;
    }
  }
  fit.model = std::move(g);
  return fit;
}

// ---------------------------------------------------------------------------
// One-class SVM (RBF kernel), dual form
//
//   min 1/2 a^T K a   s.t.  0 <= a_i <= 1/(nu n),  sum a_i = 1
//
// solved by pairwise coordinate descent on the maximal violating pair.

struct OcSvmOptions {
  double nu = 0.1;
  std::optional<double> gamma;  // default 1/d
  double tolerance = 1e-4;      // KKT violation
  long max_iterations = 10'000'000;
  std::size_t max_cached_samples = 6000;  // precompute the kernel matrix up to this n
};

struct OcSvmModel {
  Matrix support_vectors;  // rows with alpha > 0
  Vector alphas;
  double rho = 0.0;
  double nu = 0.1;
  double gamma = 1.0;
  double upper_bound = 1.0;  // 1/(nu n) at fit time
  double dual_objective = 0.0;
  bool converged = false;

  bool operator==(const OcSvmModel&) const = default;
};

inline double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma) {
  return std::exp(-gamma * squared_distance(a, b));
}

inline double ocsvm_decision(const OcSvmModel& m, std::span<const double> x) {
  if (x.size() != m.support_vectors.cols()) throw DimensionError("ocsvm: input dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < m.alphas.size(); ++i) s += m.alphas[i] * rbf_kernel(m.support_vectors.row(i), x, m.gamma);
  return s - m.rho;
}

inline double ocsvm_novelty_score(const OcSvmModel& m, std::span<const double> x) { return -ocsvm_decision(m, x); }

inline OcSvmModel fit_ocsvm(const Matrix& x, const OcSvmOptions& opts, RandomStream& rng) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (n < 2) throw InsufficientSamplesError("ocsvm: need at least two samples");
  if (!(opts.nu > 0.0 && opts.nu <= 1.0)) throw ParameterError("ocsvm: nu must lie in (0, 1]");
  const double gamma = opts.gamma.value_or(1.0 / static_cast<double>(d));
  if (!(gamma > 0.0)) throw ParameterError("ocsvm: gamma must be positive");
  if (!all_finite(x.data())) throw DataError("ocsvm: non-finite input");

  const double upper = 1.0 / (opts.nu * static_cast<double>(n));

  // Kernel access: full matrix when small enough, columns on demand otherwise.
  const bool cached = n <= opts.max_cached_samples;
  Matrix kmat;
  if (cached) {
    kmat = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      kmat(i, i) = 1.0;
      for (std::size_t j = i + 1; j < n; ++j) kmat(i, j) = kmat(j, i) = rbf_kernel(x.row(i), x.row(j), gamma);
    }
  }
  Vector col_i(n), col_j(n);
  auto kernel_column = [&](std::size_t c, Vector& out) {
    if (cached) {
      auto r = kmat.row(c);
      std::copy(r.begin(), r.end(), out.begin());
    } else {
      for (std::size_t i = 0; i < n; ++i) out[i] = rbf_kernel(x.row(i), x.row(c), gamma);
    }
  };

  // Feasible start: fill a random order with mass `upper` until it sums to 1.
  Vector alpha(n, 0.0);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  double remaining = 1.0;
  for (std::size_t idx : order) {
    if (remaining <= 0.0) break;
    alpha[idx] = std::min(upper, remaining);
    remaining -= alpha[idx];
  }

  // Gradient of the objective: G = K alpha.
  Vector grad(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) {
    if (alpha[c] == 0.0) continue;
    kernel_column(c, col_i);
    for (std::size_t i = 0; i < n; ++i) grad[i] += alpha[c] * col_i[i];
  }

  const double eps = 1e-12 * upper;
  OcSvmModel model;
  long it = 0;
  for (; it < opts.max_iterations; ++it) {
    // i receives mass (alpha_i < C, smallest gradient); j gives (alpha_j > 0, largest).
    std::size_t up = n, down = n;
    double g_up = std::numeric_limits<double>::infinity();
    double g_down = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (alpha[t] < upper - eps && grad[t] < g_up) {
        g_up = grad[t];
        up = t;
      }
      if (alpha[t] > eps && grad[t] > g_down) {
        g_down = grad[t];
        down = t;
      }
    }
    if (up == n || down == n || g_down - g_up < opts.tolerance) {
      model.converged = true;
      break;
    }
    kernel_column(up, col_i);
    kernel_column(down, col_j);
    const double eta = std::max(col_i[up] + col_j[down] - 2.0 * col_i[down], 1e-12);
    double delta = (g_down - g_up) / eta;
    delta = std::min({delta, upper - alpha[up], alpha[down]});
    alpha[up] += delta;
    alpha[down] -= delta;
    if (alpha[down] < eps) alpha[down] = 0.0;
    if (alpha[up] > upper - eps) alpha[up] = upper;
    for (std::size_t t = 0; t < n; ++t) grad[t] += delta * (col_i[t] - col_j[t]);
  }

  // rho: average gradient over free vectors, else the middle of the KKT bracket.
  double free_sum = 0.0;
  std::size_t free_count = 0;
  double lower_bracket = -std::numeric_limits<double>::infinity();  // max G over alpha = C
  double upper_bracket = std::numeric_limits<double>::infinity();   // min G over alpha = 0
  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > eps && alpha[t] < upper - eps) {
      free_sum += grad[t];
      ++free_count;
    } else if (alpha[t] >= upper - eps) {
      lower_bracket = std::max(lower_bracket, grad[t]);
    } else {
      upper_bracket = std::min(upper_bracket, grad[t]);
    }
  }
  if (free_count > 0) {
    model.rho = free_sum / static_cast<double>(free_count);
  } else if (std::isfinite(lower_bracket) && std::isfinite(upper_bracket)) {
    model.rho = 0.5 * (lower_bracket + upper_bracket);
  } else {
    model.rho = std::isfinite(lower_bracket) ? lower_bracket : upper_bracket;
  }

  double objective = 0.0;
  for (std::size_t t = 0; t < n; ++t) objective += alpha[t] * grad[t];
  model.dual_objective = 0.5 * objective;
  model.nu = opts.nu;
  model.gamma = gamma;
  model.upper_bound = upper;

  std::vector<Vector> svs;
  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 0.0) {
      svs.push_back(x.row_vector(t));
      model.alphas.push_back(alpha[t]);
    }
  }
  model.support_vectors = Matrix::from_rows(svs);
  return model;
}

// ---------------------------------------------------------------------------
// Softmax confidence.

inline double softmax_confidence_score(const DropoutHead& head, std::span<const double> x) {
  const Vector p = forward_deterministic(head, x);
  return 1.0 - *std::max_element(p.begin(), p.end());
}

// ---------------------------------------------------------------------------
// Model files.

inline constexpr std::string_view kGmmMagic = "councilnd-gmm";
inline constexpr std::string_view kOcSvmMagic = "councilnd-ocsvm";
inline constexpr int kBaselineVersion = 1;

inline void write_gmm(std::ostream& out, const GmmModel& g) {
  out << "# " << kGmmMagic << " v" << kBaselineVersion << "\n";
  out << "dims " << g.components() << ' ' << g.dim() << "\n";
  out << "variance_floor " << format_double(g.variance_floor) << "\n";
  out << "weights ";
  detail::write_row(out, g.weights);
  out << "means\n";
  for (std::size_t c = 0; c < g.components(); ++c) detail::write_row(out, g.means.row(c));
  out << "variances\n";
  for (std::size_t c = 0; c < g.components(); ++c) detail::write_row(out, g.variances.row(c));
}

inline GmmModel read_gmm(std::istream& in, const std::string& source = {}) {
  detail::LineReader reader(in, source);
  reader.require_version(kGmmMagic, kBaselineVersion);
  const std::string dims_line = reader.require_keyed("dims");
  auto dims = detail::split_ws(dims_line);
  if (dims.size() != 2) reader.fail("dims needs two integers");
  const auto k = detail::parse_int<std::size_t>(reader, dims[0]);
  const auto d = detail::parse_int<std::size_t>(reader, dims[1]);
  GmmModel g;
  if (!parse_double(reader.require_keyed("variance_floor"), g.variance_floor)) reader.fail("bad variance floor");
  g.weights = detail::parse_doubles(reader, reader.require_keyed("weights"), k);
  auto read_block = [&](std::string_view name) {
    if (detail::trim(reader.require(name)) != name) reader.fail("expected '" + std::string(name) + "'");
    Matrix m(k, d);
    for (std::size_t c = 0; c < k; ++c) {
      Vector row = detail::parse_doubles(reader, reader.require("row"), d);
      std::copy(row.begin(), row.end(), m.row(c).begin());
    }
    return m;
  };
  g.means = read_block("means");
  g.variances = read_block("variances");
  return g;
}

inline void write_ocsvm(std::ostream& out, const OcSvmModel& m) {
  out << "# " << kOcSvmMagic << " v" << kBaselineVersion << "\n";
  out << "dims " << m.alphas.size() << ' ' << m.support_vectors.cols() << "\n";
  out << "nu " << format_double(m.nu) << "\n";
  out << "gamma " << format_double(m.gamma) << "\n";
  out << "rho " << format_double(m.rho) << "\n";
  out << "upper_bound " << format_double(m.upper_bound) << "\n";
  out << "dual_objective " << format_double(m.dual_objective) << "\n";
  out << "converged " << (m.converged ? 1 : 0) << "\n";
  out << "alphas ";
  detail::write_row(out, m.alphas);
  out << "support_vectors\n";
  for (std::size_t r = 0; r < m.support_vectors.rows(); ++r) detail::write_row(out, m.support_vectors.row(r));
}

inline OcSvmModel read_ocsvm(std::istream& in, const std::string& source = {}) {
  detail::LineReader reader(in, source);
  reader.require_version(kOcSvmMagic, kBaselineVersion);
  const std::string dims_line = reader.require_keyed("dims");
  auto dims = detail::split_ws(dims_line);
  if (dims.size() != 2) reader.fail("dims needs two integers");
  const auto n = detail::parse_int<std::size_t>(reader, dims[0]);
  const auto d = detail::parse_int<std::size_t>(reader, dims[1]);
  OcSvmModel m;
  auto number = [&](std::string_view key) {
    double v = 0.0;
    if (!parse_double(reader.require_keyed(key), v)) reader.fail("bad value for " + std::string(key));
    return v;
  };
  m.nu = number("nu");
  m.gamma = number("gamma");
  m.rho = number("rho");
  m.upper_bound = number("upper_bound");
  m.dual_objective = number("dual_objective");
  m.converged = detail::parse_int<int>(reader, reader.require_keyed("converged")) != 0;
  m.alphas = detail::parse_doubles(reader, reader.require_keyed("alphas"), n);
  if (detail::trim(reader.require("support_vectors")) != "support_vectors") reader.fail("expected 'support_vectors'");
  Matrix sv(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    Vector row = detail::parse_doubles(reader, reader.require("row"), d);
    std::copy(row.begin(), row.end(), sv.row(r).begin());
  }
  m.support_vectors = std::move(sv);
  return m;
}

}  // namespace councilnd
