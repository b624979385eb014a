#pragma once

// Seen/unseen class split plus per-class sample partitions:
//   seen class samples -> train (70%) / test (30%), train -> subtrain (90%) / holdout (10%)
//   unseen class samples -> unseen test pool
// Fractions use floor rounding; every class needs at least four samples so
// that every cell is non-empty.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "councilnd/dataset.hpp"
#include "councilnd/errors.hpp"
#include "councilnd/numeric.hpp"
#include "councilnd/textio.hpp"

namespace councilnd {

inline constexpr int kDefaultRepetitions = 10;
inline constexpr double kTrainFraction = 0.7;
inline constexpr double kSubtrainFraction = 0.9;
inline constexpr std::size_t kMinSamplesPerClass = 4;

enum class SplitRole { Subtrain, Holdout, Test, Unseen };

inline std::string_view to_string(SplitRole r) {
  switch (r) {
    case SplitRole::Subtrain: return "subtrain";
    case SplitRole::Holdout: return "holdout";
    case SplitRole::Test: return "test";
    case SplitRole::Unseen: return "unseen";
  }
  return "?";
}

inline std::optional<SplitRole> parse_split_role(std::string_view s) {
  if (s == "subtrain") return SplitRole::Subtrain;
  if (s == "holdout") return SplitRole::Holdout;
  if (s == "test") return SplitRole::Test;
  if (s == "unseen") return SplitRole::Unseen;
  return std::nullopt;
}

struct SplitSpec {
  std::uint64_t seed = 0;
  int repetition = 0;
  std::vector<std::string> seen_classes;    // sorted
  std::vector<std::string> unseen_classes;  // sorted
  std::vector<std::string> subtrain;        // sample ids
  std::vector<std::string> holdout;
  std::vector<std::string> test;
  std::vector<std::string> unseen;

  const std::vector<std::string>& ids(SplitRole r) const {
    switch (r) {
      case SplitRole::Subtrain: return subtrain;
      case SplitRole::Holdout: return holdout;
      case SplitRole::Test: return test;
      case SplitRole::Unseen: return unseen;
    }
    return subtrain;
  }
  std::vector<std::string>& ids(SplitRole r) {
    return const_cast<std::vector<std::string>&>(std::as_const(*this).ids(r));
  }

  bool operator==(const SplitSpec&) const = default;
};

struct SplitOptions {
  int repetitions = kDefaultRepetitions;
  // When set, these classes are unseen in every repetition instead of a
  // random half.
  std::optional<std::vector<std::string>> fixed_unseen;
};

// One SplitSpec per repetition; repetition r draws from
// RandomStream(seed).child(r).
inline std::vector<SplitSpec> make_splits(std::span<const std::string> ids, std::span<const std::string> labels,
                                          std::uint64_t seed, const SplitOptions& opts = {}) {
  if (ids.size() != labels.size()) throw DimensionError("make_splits: ids and labels differ in length");
  if (opts.repetitions < 1) throw ParameterError("make_splits: repetitions must be at least 1");
  std::map<std::string, std::vector<std::string>> by_class;
  for (std::size_t i = 0; i < ids.size(); ++i) by_class[labels[i]].push_back(ids[i]);
  if (by_class.size() < 2) throw DataError("make_splits needs at least two classes");
  for (const auto& [label, members] : by_class) {
    if (members.size() < kMinSamplesPerClass) {
      throw DataError("class '" + label + "' has " + std::to_string(members.size()) +
                      " samples; at least " + std::to_string(kMinSamplesPerClass) + " are required");
    }
  }
  std::vector<std::string> classes;
  for (const auto& kv : by_class) classes.push_back(kv.first);

  if (opts.fixed_unseen) {
    for (const auto& u : *opts.fixed_unseen) {
      if (!by_class.count(u)) throw DataError("fixed unseen class '" + u + "' has no samples");
    }
    if (opts.fixed_unseen->empty() || opts.fixed_unseen->size() >= classes.size()) {
      throw ParameterError("fixed unseen classes must leave at least one seen class");
    }
  }

  const RandomStream base(seed);
  std::vector<SplitSpec> out;
  for (int r = 0; r < opts.repetitions; ++r) {
    RandomStream rng = base.child(static_cast<std::uint64_t>(r));
    SplitSpec spec;
    spec.seed = seed;
    spec.repetition = r;

    std::set<std::string> unseen_set;
    if (opts.fixed_unseen) {
      unseen_set.insert(opts.fixed_unseen->begin(), opts.fixed_unseen->end());
    } else {
      std::vector<std::string> shuffled = classes;
      rng.shuffle(shuffled);
      const std::size_t n_seen = (classes.size() + 1) / 2;  // seen takes the odd class
      unseen_set.insert(shuffled.begin() + static_cast<std::ptrdiff_t>(n_seen), shuffled.end());
    }
    for (const auto& c : classes) {
      (unseen_set.count(c) ? spec.unseen_classes : spec.seen_classes).push_back(c);
    }

    for (const auto& c : classes) {
      std::vector<std::string> members = by_class[c];
      if (unseen_set.count(c)) {
        spec.unseen.insert(spec.unseen.end(), members.begin(), members.end());
        continue;
      }
      rng.shuffle(members);
      const auto n = members.size();
      const auto n_train = static_cast<std::size_t>(std::floor(kTrainFraction * static_cast<double>(n)));
      const auto n_sub = static_cast<std::size_t>(std::floor(kSubtrainFraction * static_cast<double>(n_train)));
      auto it = members.begin();
      spec.subtrain.insert(spec.subtrain.end(), it, it + static_cast<std::ptrdiff_t>(n_sub));
      spec.holdout.insert(spec.holdout.end(), it + static_cast<std::ptrdiff_t>(n_sub),
                          it + static_cast<std::ptrdiff_t>(n_train));
      spec.test.insert(spec.test.end(), it + static_cast<std::ptrdiff_t>(n_train), members.end());
    }
    out.push_back(std::move(spec));
  }
  return out;
}

inline std::vector<SplitSpec> make_splits(const FeatureDataset& data, std::uint64_t seed,
                                          const SplitOptions& opts = {}) {
  return make_splits(data.ids, data.labels, seed, opts);
}

// ---------------------------------------------------------------------------
// Split file: materialized partitions so every method sees identical data.

inline constexpr std::string_view kSplitsMagic = "councilnd-splits";
inline constexpr int kSplitsVersion = 1;

inline void write_splits(std::ostream& out, const std::vector<SplitSpec>& splits) {
  out << "# " << kSplitsMagic << " v" << kSplitsVersion << "\n";
  out << "repetitions " << splits.size() << "\n";
  for (const auto& s : splits) {
    out << "split " << s.repetition << " seed " << s.seed << "\n";
    for (const auto& c : s.seen_classes) out << "seen " << c << "\n";
    for (const auto& c : s.unseen_classes) out << "unseen_class " << c << "\n";
    for (SplitRole role : {SplitRole::Subtrain, SplitRole::Holdout, SplitRole::Test, SplitRole::Unseen}) {
      for (const auto& id : s.ids(role)) out << "sample " << to_string(role) << ' ' << id << "\n";
    }
    out << "end\n";
  }
}

inline std::vector<SplitSpec> read_splits(std::istream& in, const std::string& source = {}) {
  detail::LineReader reader(in, source);
  reader.require_version(kSplitsMagic, kSplitsVersion);
  const auto count = detail::parse_int<std::size_t>(reader, reader.require_keyed("repetitions"));
  std::vector<SplitSpec> out;
  for (std::size_t r = 0; r < count; ++r) {
    const std::string head_line = reader.require_keyed("split");
    auto head = detail::split_ws(head_line);
    if (head.size() != 3 || head[1] != "seed") reader.fail("expected 'split <rep> seed <seed>'");
    SplitSpec s;
    s.repetition = detail::parse_int<int>(reader, head[0]);
    s.seed = detail::parse_int<std::uint64_t>(reader, head[2]);
    std::string line;
    while (true) {
      line = reader.require("split entry");
      std::string_view v = detail::trim(line);
      if (v == "end") break;
      const std::size_t sp = v.find(' ');
      if (sp == std::string_view::npos) reader.fail("malformed split entry");
      const std::string_view key = v.substr(0, sp);
      const std::string_view rest = detail::trim(v.substr(sp + 1));
      if (key == "seen") {
        s.seen_classes.emplace_back(rest);
      } else if (key == "unseen_class") {
        s.unseen_classes.emplace_back(rest);
      } else if (key == "sample") {
        const std::size_t sp2 = rest.find(' ');
        auto role = sp2 == std::string_view::npos ? std::nullopt : parse_split_role(rest.substr(0, sp2));
        if (!role) reader.fail("expected 'sample <role> <id>'");
        s.ids(*role).emplace_back(detail::trim(rest.substr(sp2 + 1)));
      } else {
        reader.fail("unknown split entry '" + std::string(key) + "'");
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline void save_splits(const std::string& path, const std::vector<SplitSpec>& splits) {
  auto out = detail::open_for_write(path);
  write_splits(out, splits);
}

inline std::vector<SplitSpec> load_splits(const std::string& path) {
  auto in = detail::open_for_read(path);
  return read_splits(in, path);
}

}  // namespace councilnd
