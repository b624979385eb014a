#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "councilnd/errors.hpp"
#include "councilnd/numeric.hpp"
#include "councilnd/textio.hpp"

namespace councilnd {

inline constexpr std::string_view kFeaturesMagic = "councilnd-features";
inline constexpr int kFeaturesVersion = 1;

// Labeled feature vectors, one row per sample.
struct FeatureDataset {
  std::vector<std::string> ids;
  std::vector<std::string> labels;
  Matrix features;
  std::string provenance;

  std::size_t size() const noexcept { return ids.size(); }
  std::size_t dim() const noexcept { return features.cols(); }
  bool empty() const noexcept { return ids.empty(); }

  std::span<const double> x(std::size_t i) const { return features.row(i); }

  void validate() const {
    if (labels.size() != ids.size() || features.rows() != ids.size()) {
      throw DataError("dataset: ids, labels and feature rows differ in length");
    }
    std::unordered_set<std::string> seen;
    for (const auto& id : ids) {
      if (!seen.insert(id).second) throw DataError("dataset: duplicate sample id '" + id + "'");
    }
    if (!all_finite(features.data())) throw DataError("dataset: non-finite feature value");
  }

  // Sorted distinct labels.
  std::vector<std::string> distinct_labels() const {
    std::set<std::string> s(labels.begin(), labels.end());
    return {s.begin(), s.end()};
  }

  FeatureDataset subset(std::span<const std::size_t> indices) const {
    FeatureDataset out;
    out.provenance = provenance;
    out.ids.reserve(indices.size());
    out.labels.reserve(indices.size());
    Matrix m(indices.size(), dim());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const std::size_t i = indices[r];
      out.ids.push_back(ids.at(i));
      out.labels.push_back(labels.at(i));
      auto src = features.row(i);
      std::copy(src.begin(), src.end(), m.row(r).begin());
    }
    out.features = std::move(m);
    return out;
  }

  FeatureDataset subset_by_ids(std::span<const std::string> wanted) const {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
    std::vector<std::size_t> rows;
    rows.reserve(wanted.size());
    for (const auto& id : wanted) {
      auto it = index.find(id);
      if (it == index.end()) throw DataError("dataset: unknown sample id '" + id + "'");
      rows.push_back(it->second);
    }
    return subset(rows);
  }

  FeatureDataset filter_labels(const std::set<std::string>& keep) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < size(); ++i) {
      if (keep.count(labels[i])) rows.push_back(i);
    }
    return subset(rows);
  }

  static FeatureDataset concat(const FeatureDataset& a, const FeatureDataset& b) {
    if (!a.empty() && !b.empty() && a.dim() != b.dim()) {
      throw DimensionError("dataset concat: dimension mismatch");
    }
    FeatureDataset out;
    out.provenance = a.provenance.empty() ? b.provenance : a.provenance;
    out.ids = a.ids;
    out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
    out.labels = a.labels;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    const std::size_t d = a.empty() ? b.dim() : a.dim();
    Matrix m(a.size() + b.size(), d);
    std::copy(a.features.data().begin(), a.features.data().end(), m.data().begin());
    std::copy(b.features.data().begin(), b.features.data().end(),
              m.data().begin() + static_cast<std::ptrdiff_t>(a.size() * d));
    out.features = std::move(m);
    return out;
  }
};

// Copy with every feature row scaled to unit L2 norm.
inline FeatureDataset l2_normalize_rows(FeatureDataset ds) {
  for (std::size_t r = 0; r < ds.size(); ++r) {
    auto row = ds.features.row(r);
    const double n = l2_norm(row);
    if (n > 0.0) {
      for (double& v : row) v /= n;
    }
  }
  if (!ds.provenance.empty()) ds.provenance += "; ";
  ds.provenance += "l2-normalized";
  return ds;
}


// Feature file: optional leading "# councilnd-features v1" and
// "# provenance: ..." lines, then header `id,label,f0,...,f{d-1}`, then one
// sample per row.
inline FeatureDataset read_features(std::istream& in, const std::string& source = {}) {
  FeatureDataset ds;
  std::string line;
  std::size_t line_no = 0;
  std::size_t d = 0;
  bool have_header = false;
  std::unordered_set<std::string> seen_ids;
  std::vector<double> values;

  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = detail::trim(line);
    if (view.empty()) continue;
    if (!have_header && view.front() == '#') {
      if (detail::check_version_line(view, kFeaturesMagic, kFeaturesVersion, line_no)) continue;
      auto body = detail::trim(view.substr(1));
      constexpr std::string_view key = "provenance:";
      if (body.substr(0, key.size()) == key) ds.provenance = std::string(detail::trim(body.substr(key.size())));
      continue;
    }
    auto fields = detail::split_view(view, ',');
    if (!have_header) {
      if (fields.size() < 3 || detail::trim(fields[0]) != "id" || detail::trim(fields[1]) != "label") {
        throw ParseError("expected header 'id,label,f0,...'", line_no, 0, source);
      }
      d = fields.size() - 2;
      have_header = true;
      continue;
    }
    if (fields.size() != d + 2) {
      throw ParseError("expected " + std::to_string(d + 2) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no, 0, source);
    }
    std::string id(detail::trim(fields[0]));
    std::string label(detail::trim(fields[1]));
    if (id.empty()) throw ParseError("empty sample id", line_no, 1, source);
    if (label.empty()) throw ParseError("empty label", line_no, 2, source);
    if (!seen_ids.insert(id).second) throw ParseError("duplicate sample id '" + id + "'", line_no, 1, source);
    for (std::size_t c = 0; c < d; ++c) {
      double v = 0.0;
      if (!parse_double(detail::trim(fields[c + 2]), v)) {
        throw ParseError("non-numeric field '" + std::string(fields[c + 2]) + "'", line_no, c + 3, source);
      }
      if (!std::isfinite(v)) throw ParseError("non-finite feature value", line_no, c + 3, source);
      values.push_back(v);
    }
    ds.ids.push_back(std::move(id));
    ds.labels.push_back(std::move(label));
  }
  if (!have_header) throw ParseError("empty feature file", line_no == 0 ? 1 : line_no, 0, source);
  if (ds.ids.empty()) throw ParseError("feature file has a header but no samples", line_no, 0, source);
  ds.features = Matrix(ds.ids.size(), d, std::move(values));
  return ds;
}

inline FeatureDataset load_features(const std::string& path) {
  auto in = detail::open_for_read(path);
  return read_features(in, path);
}

inline void write_features(std::ostream& out, const FeatureDataset& ds) {
  out << "# " << kFeaturesMagic << " v" << kFeaturesVersion << "\n";
  if (!ds.provenance.empty()) out << "# provenance: " << ds.provenance << "\n";
  out << "id,label";
  for (std::size_t c = 0; c < ds.dim(); ++c) out << ",f" << c;
  out << "\n";
  for (std::size_t r = 0; r < ds.size(); ++r) {
    out << ds.ids[r] << ',' << ds.labels[r];
    for (double v : ds.features.row(r)) out << ',' << format_double(v);
    out << "\n";
  }
}

inline void save_features(const std::string& path, const FeatureDataset& ds) {
  auto out = detail::open_for_write(path);
  write_features(out, ds);
}

}  // namespace councilnd
