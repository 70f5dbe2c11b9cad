#pragma once

// Trial CSV input. Header row required with columns z, a, y in any order;
// every other column is a covariate, kept in file order. An empty `a` is
// accepted only on control rows (structural zero); any other empty cell is
// an error.

#include <charconv>
#include <cstddef>
#include <fstream>
#include <istream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "late_bounds/error.hpp"
#include "late_bounds/model.hpp"

namespace late_bounds {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::optional<double> parse_cell(const std::string& cell) {
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = cell.data();
  const char* last = first + cell.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) throw std::invalid_argument(cell);
  return v;
}

}  // namespace detail

struct CsvTrial {
  TrialDataset data;
  std::string bytes;  ///< raw input, for digests
};

inline TrialDataset parse_trial_csv(const std::string& text, const std::string& source = "input") {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;

  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = detail::split_csv_line(line);
    break;
  }
  if (header.empty()) throw Error(Errc::ParseError, source + ": missing header row");
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);

  std::optional<std::size_t> iz, ia, iy;
  std::vector<std::size_t> cov_idx;
  std::vector<std::string> cov_names;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& h = header[c];
    if (h.empty()) throw Error(Errc::ParseError, source + ": empty column name at position " + std::to_string(c + 1));
    for (std::size_t d = 0; d < c; ++d)
      if (header[d] == h) throw Error(Errc::ParseError, source + ": duplicate column '" + h + "'");
    if (h == "z") iz = c;
    else if (h == "a") ia = c;
    else if (h == "y") iy = c;
    else {
      cov_idx.push_back(c);
      cov_names.push_back(h);
    }
  }
  for (auto [idx, name] : {std::pair{iz, "z"}, std::pair{ia, "a"}, std::pair{iy, "y"}}) {
    if (!idx) throw Error(Errc::ParseError, source + ": required column '" + std::string(name) + "' missing");
  }

  std::vector<RawRow> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = detail::split_csv_line(line);
    const std::string where = source + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) {
      throw Error(Errc::ParseError, where + ": expected " + std::to_string(header.size()) + " fields, got " +
                                        std::to_string(cells.size()));
    }
    const auto cell = [&](std::size_t c) -> std::optional<double> {
      try {
        return detail::parse_cell(cells[c]);
      } catch (const std::invalid_argument&) {
        throw Error(Errc::ParseError, where + ", column '" + header[c] + "': not a number: '" + cells[c] + "'");
      }
    };
    const auto require = [&](std::size_t c) {
      const auto v = cell(c);
      if (!v) throw Error(Errc::MissingValue, where + ", column '" + header[c] + "': empty cell");
      return *v;
    };
    RawRow r;
    r.z = require(*iz);
    r.y = require(*iy);
    r.a = cell(*ia);
    if (!r.a && r.z != 0.0) throw Error(Errc::MissingValue, where + ", column 'a': empty cell in intervention arm");
    for (std::size_t c : cov_idx) r.covariates.push_back(require(c));
    rows.push_back(std::move(r));
  }
  try {
    return validate_dataset(rows, cov_names);
  } catch (const Error& e) {
    throw Error(e.code(), source + ": " + e.message());
  }
}

inline CsvTrial load_trial_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open data file '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return {parse_trial_csv(bytes, path), std::move(bytes)};
}

}  // namespace late_bounds
