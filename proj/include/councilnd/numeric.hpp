#pragma once

// Dense linear algebra, seeded randomness and the statistical primitives the
// rest of the library is built on. Everything is 64-bit floating point.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

#include "councilnd/errors.hpp"

namespace councilnd {

using Vector = std::vector<double>;

// Row-major dense matrix. Shape is fixed at construction.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("matrix data size " + std::to_string(data_.size()) +
                           " does not match " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }

  static Matrix from_rows(const std::vector<Vector>& rows) {
    if (rows.empty()) return {};
    const std::size_t cols = rows.front().size();
    Matrix m(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != cols) throw DimensionError("ragged rows in Matrix::from_rows");
      std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }
  Vector row_vector(std::size_t r) const {
    auto s = row(r);
    return {s.begin(), s.end()};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("squared_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Unit-L2 copy of v. The zero vector is returned unchanged.
inline Vector l2_normalized(std::span<const double> v) {
  Vector out(v.begin(), v.end());
  const double n = l2_norm(v);
  if (n > 0.0) {
    for (double& x : out) x /= n;
  }
  return out;
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

inline std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw DimensionError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// Shortest decimal text that parses back to the identical double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw NumericalError("format_double failed");
  return {buf, ptr};
}

inline bool parse_double(std::string_view text, double& out) {
  // from_chars rejects a leading '+', which some writers emit.
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size();
}

// ---------------------------------------------------------------------------
// RandomStream
//
// xoshiro256** seeded through splitmix64. Only integer arithmetic feeds the
// state, so sequences are identical across compilers and platforms. Child
// streams are keyed by (seed, label) and do not depend on how many draws the
// parent has made.

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  std::uint64_t s = x;
  return splitmix64(s);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& s : state_) s = detail::splitmix64(sm);
  }

  std::uint64_t seed() const noexcept { return seed_; }

  RandomStream child(std::uint64_t label) const {
    return RandomStream(detail::mix64(seed_ ^ detail::mix64(label + 0x632BE59BD9B4E019ULL)));
  }
  RandomStream child(std::string_view label) const { return child(detail::fnv1a(label)); }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = std::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = std::rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), unbiased.
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw ParameterError("uniform_index: n must be positive");
    const std::uint64_t bound = n;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return static_cast<std::size_t>(r % bound);
  }

  // Standard normal via the Marsaglia polar method. No cached second value,
  // so the stream position depends only on the number of calls.
  double normal() {
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    return u * std::sqrt(-2.0 * std::log(s) / s);
  }

  bool bernoulli(double probability) noexcept { return uniform() < probability; }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t state_[4];
};

// ---------------------------------------------------------------------------
// Activation and dropout primitives.

inline Vector softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("softmax of empty vector");
  const double shift = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - shift);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

inline Vector relu(std::span<const double> v) {
  Vector out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return x > 0.0 ? x : 0.0; });
  return out;
}

// Diagonal binary mask D of a dropout layer. A unit is kept with probability
// 1 - p; kept units are scaled by 1/(1 - p) where the mask is applied
// (inverted dropout), identically at training and at MC inference.
struct DropoutMask {
  std::vector<unsigned char> keep;
  double p = 0.0;

  std::size_t size() const noexcept { return keep.size(); }
  double scale() const noexcept { return 1.0 / (1.0 - p); }
  std::size_t kept() const noexcept {
    return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), 1));
  }

  static DropoutMask identity(std::size_t dim) { return {std::vector<unsigned char>(dim, 1), 0.0}; }

  // Per-unit multiplier: keep[i] / (1 - p).
  Vector multipliers() const {
    Vector m(keep.size());
    const double s = scale();
    for (std::size_t i = 0; i < keep.size(); ++i) m[i] = keep[i] ? s : 0.0;
    return m;
  }
};

inline void check_dropout_probability(double p) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ParameterError("dropout probability must lie in [0, 1), got " + format_double(p));
  }
}

inline DropoutMask sample_dropout_mask(std::size_t dim, double p, RandomStream& rng) {
  check_dropout_probability(p);
  if (dim == 0) throw DimensionError("dropout mask dimension must be positive");
  DropoutMask mask{std::vector<unsigned char>(dim, 1), p};
  if (p == 0.0) return mask;
  const double keep_probability = 1.0 - p;
  for (auto& k : mask.keep) k = rng.bernoulli(keep_probability) ? 1 : 0;
  return mask;
}

// ---------------------------------------------------------------------------
// Statistics.

struct MeanVariance {
  Vector mean;
  Vector variance;
};

// Per-column sample mean and variance (divisor M - 1), single streaming pass
// (Welford).
inline MeanVariance column_mean_variance(const Matrix& samples) {
  const std::size_t m = samples.rows();
  if (m < 2) {
    throw InsufficientSamplesError("column_mean_variance needs at least 2 rows, got " +
                                   std::to_string(m));
  }
  const std::size_t k = samples.cols();
  Vector mean(k, 0.0);
  Vector m2(k, 0.0);
  for (std::size_t r = 0; r < m; ++r) {
    const double n = static_cast<double>(r + 1);
    auto row = samples.row(r);
    for (std::size_t c = 0; c < k; ++c) {
      const double delta = row[c] - mean[c];
      mean[c] += delta / n;
      m2[c] += delta * (row[c] - mean[c]);
    }
  }
  Vector variance(k);
  for (std::size_t c = 0; c < k; ++c) variance[c] = std::max(0.0, m2[c] / static_cast<double>(m - 1));
  return {std::move(mean), std::move(variance)};
}

inline double mean_of(std::span<const double> v) {
  if (v.empty()) throw InsufficientSamplesError("mean of empty sequence");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Sample standard deviation (divisor n - 1); 0 for fewer than two values.
inline double sample_stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------------------
// Small dense solvers.

// Solves A X = B for symmetric positive definite A (n x n) by Cholesky.
// Throws SingularMatrixError if A is not numerically positive definite.
inline Matrix cholesky_solve(const Matrix& a, const Matrix& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionError("cholesky_solve: matrix not square");
  if (b.rows() != n) throw DimensionError("cholesky_solve: right-hand side row mismatch");

  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a(i, i)));
  const double pivot_floor = std::max(max_diag, 1.0) * 1e-12;

  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > pivot_floor)) {
      throw SingularMatrixError("matrix is singular or not positive definite (pivot " +
                                std::to_string(j) + ")");
    }
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }

  Matrix x = b;
  const std::size_t cols = b.cols();
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = x(i, c);
      for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x(k, c);
      x(i, c) = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x(ii, c);
      for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x(k, c);
      x(ii, c) = s / l(ii, ii);
    }
  }
  return x;
}

}  // namespace councilnd
