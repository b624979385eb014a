#pragma once

// Line-oriented helpers shared by the textual file formats.

#include <charconv>
#include <fstream>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "councilnd/errors.hpp"
#include "councilnd/numeric.hpp"

namespace councilnd {
namespace detail {

inline std::vector<std::string_view> split_view(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Parses "# <magic> v<N>" and checks the version. Returns false if the line
// is a comment that is not a version marker.
inline bool check_version_line(std::string_view line, std::string_view magic, int version,
                               std::size_t line_no) {
  line = trim(line.substr(1));
  if (line.substr(0, magic.size()) != magic) return false;
  auto rest = trim(line.substr(magic.size()));
  if (rest.size() < 2 || rest.front() != 'v') {
    throw ParseError("malformed format-version marker", line_no);
  }
  int v = 0;
  auto [ptr, ec] = std::from_chars(rest.data() + 1, rest.data() + rest.size(), v);
  if (ec != std::errc{} || ptr != rest.data() + rest.size()) {
    throw ParseError("malformed format-version marker", line_no);
  }
  if (v != version) {
    throw ParseError("unsupported " + std::string(magic) + " version " + std::to_string(v), line_no);
  }
  return true;
}

inline std::ifstream open_for_read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_for_write(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  return out;
}

}  // namespace detail

namespace detail {

// Reads non-blank lines and tracks line numbers for error reporting.
class LineReader {
 public:
  LineReader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  bool next(std::string& line) {
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!trim(line).empty()) return true;
    }
    return false;
  }

  std::string require(std::string_view what) {
    std::string line;
    if (!next(line)) fail("unexpected end of file, expected " + std::string(what));
    return line;
  }

  // Reads "<key> <rest>" and returns rest.
  std::string require_keyed(std::string_view key) {
    const std::string line = require(key);
    std::string_view v(line);
    if (v.substr(0, key.size()) != key || (v.size() > key.size() && v[key.size()] != ' ' && v[key.size()] != '\t')) {
      fail("expected '" + std::string(key) + "'");
    }
    return std::string(trim(v.substr(key.size())));
  }

  void require_version(std::string_view magic, int version) {
    const std::string line = require("format-version marker");
    std::string_view v = trim(line);
    if (v.empty() || v.front() != '#' || !check_version_line(v, magic, version, line_no_)) {
      fail("missing '# " + std::string(magic) + " v" + std::to_string(version) + "' marker");
    }
  }

  [[noreturn]] void fail(const std::string& what, std::size_t column = 0) const {
    throw ParseError(what, line_no_, column, source_);
  }

  std::size_t line_no() const noexcept { return line_no_; }
  const std::string& source() const noexcept { return source_; }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_no_ = 0;
};

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

inline Vector parse_doubles(const LineReader& reader, std::string_view line, std::size_t expected) {
  auto tokens = split_ws(line);
  if (tokens.size() != expected) {
    reader.fail("expected " + std::to_string(expected) + " values, found " + std::to_string(tokens.size()));
  }
  Vector out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    if (!parse_double(tokens[i], out[i])) reader.fail("bad number '" + std::string(tokens[i]) + "'", i + 1);
  }
  return out;
}

template <typename Int>
Int parse_int(const LineReader& reader, std::string_view token) {
  Int v{};
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
  if (ec != std::errc{} || ptr != token.data() + token.size()) {
    reader.fail("bad integer '" + std::string(token) + "'");
  }
  return v;
}

inline void write_row(std::ostream& out, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ' ';
    out << format_double(values[i]);
  }
  out << '\n';
}

}  // namespace detail

}  // namespace councilnd
