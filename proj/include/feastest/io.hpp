#pragma once

// Numeric CSV with a mandatory header row, and the FNV-1a hash used to tag
// outputs with their inputs.

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "feastest/error.hpp"

namespace feastest::io {

// A malformed number or ragged row in a data file.
class CsvError : public Error {
 public:
  using Error::Error;
};

struct Table {
  std::vector<std::string> header;
  Eigen::MatrixXd values;  // rows x header.size()

  Eigen::Index rows() const noexcept { return values.rows(); }

  Eigen::Index index_of(const std::string& name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return static_cast<Eigen::Index>(j);
    std::string known;
    for (const auto& h : header) known += (known.empty() ? "" : ", ") + h;
    throw SchemaError("no column '" + name + "' (columns: " + known + ")");
  }
  bool has(const std::string& name) const {
    for (const auto& h : header)
      if (h == name) return true;
    return false;
  }
  Eigen::VectorXd column(const std::string& name) const { return values.col(index_of(name)); }
  Eigen::MatrixXd columns(const std::vector<std::string>& names) const {
    Eigen::MatrixXd out(rows(), static_cast<Eigen::Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j)
      out.col(static_cast<Eigen::Index>(j)) = column(names[j]);
    return out;
  }
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  if (in.bad()) throw IoError("error reading '" + path + "'");
  return s.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("error writing '" + path + "'");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    out.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

// Comma separated, '.' decimal, header row first; blank lines are skipped.
inline Table parse_csv(std::string_view text, const std::string& origin = "<csv>") {
  if (text.size() >= 3 && text.substr(0, 3) == "\xEF\xBB\xBF") text.remove_prefix(3);
  Table t;
  std::vector<double> cells;
  std::size_t line_no = 0, rows = 0, pos = 0;
  bool have_header = false;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string_view line = detail::trim(text.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    const auto fields = detail::split(line);
    if (!have_header) {
      for (auto f : fields) {
        if (f.empty()) throw CsvError(origin + ":" + std::to_string(line_no) + ": empty column name");
        t.header.emplace_back(f);
      }
      for (std::size_t a = 0; a < t.header.size(); ++a)
        for (std::size_t b = a + 1; b < t.header.size(); ++b)
          if (t.header[a] == t.header[b])
            throw CsvError(origin + ":" + std::to_string(line_no) + ": duplicate column '" +
                           t.header[a] + "'");
      have_header = true;
    } else {
      if (fields.size() != t.header.size())
        throw CsvError(origin + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(t.header.size()) + " fields, found " +
                       std::to_string(fields.size()));
      for (std::size_t j = 0; j < fields.size(); ++j) {
        const std::string_view f = fields[j];
        double v = 0.0;
        const char* first = f.data();
        if (!f.empty() && f.front() == '+') ++first;
        const auto [ptr, ec] = std::from_chars(first, f.data() + f.size(), v);
        if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v))
          throw CsvError(origin + ":" + std::to_string(line_no) + ": column '" + t.header[j] +
                         "' is not a finite number: '" + std::string(f) + "'");
        cells.push_back(v);
      }
      ++rows;
    }
    if (end == text.size()) break;
  }
  if (!have_header) throw CsvError(origin + ": missing header row");
  if (rows == 0) throw CsvError(origin + ": no data rows");
  t.values.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(t.header.size()));
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < t.header.size(); ++j)
      t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          cells[i * t.header.size() + j];
  return t;
}

inline Table read_csv(const std::string& path) { return parse_csv(read_file(path), path); }

// Shortest text that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw NumericalFailure("cannot format number");
  return std::string(buf, ptr);
}

inline std::string to_csv(const std::vector<std::string>& header,
                          const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (std::size_t j = 0; j < header.size(); ++j) out += (j ? "," : "") + header[j];
  out += '\n';
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < r.size(); ++j) out += (j ? "," : "") + r[j];
    out += '\n';
  }
  return out;
}

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
  return s;
}

}  // namespace feastest::io
