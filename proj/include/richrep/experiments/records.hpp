#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "richrep/errors.hpp"

namespace richrep {

enum class Split { id_train, id_test, ood_tune, ood_test, fewshot };

inline constexpr std::string_view kSplitNames[] = {"id_train", "id_test", "ood_tune", "ood_test",
                                                   "fewshot"};

inline std::string_view to_string(Split s) { return kSplitNames[static_cast<int>(s)]; }

inline std::optional<Split> parse_split(std::string_view s) {
  for (int i = 0; i < 5; ++i) {
    if (kSplitNames[i] == s) return static_cast<Split>(i);
  }
  return std::nullopt;
}

using Extras = std::vector<std::pair<std::string, std::string>>;

/// One measurement row.
struct RunRecord {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string method;
  std::string task;
  Split split = Split::id_test;
  std::string metric;
  double value = 0.0;
  Extras extra;

  std::optional<std::string> get(std::string_view key) const {
    for (const auto& [k, v] : extra) {
      if (k == key) return v;
    }
    return std::nullopt;
  }
};

inline constexpr std::string_view kCsvHeader = "run_id,seed,method,task,split,metric,value,extra";

/// Six significant digits, printf %g style.
inline std::string format_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

inline std::string encode_extras(const Extras& extra) {
  std::string out;
  for (std::size_t i = 0; i < extra.size(); ++i) {
    if (i) out += ';';
    out += extra[i].first + '=' + extra[i].second;
  }
  return out;
}

inline Extras decode_extras(std::string_view s) {
  Extras out;
  while (!s.empty()) {
    const auto semi = s.find(';');
    const std::string_view item = s.substr(0, semi);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) throw DataError("extra field without '=': " + std::string(item));
    out.emplace_back(std::string(item.substr(0, eq)), std::string(item.substr(eq + 1)));
    if (semi == std::string_view::npos) break;
    s.remove_prefix(semi + 1);
  }
  return out;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

inline void check_unique(const std::vector<RunRecord>& records) {
  std::set<std::tuple<std::string, std::string, std::string, int, std::string>> seen;
  for (const auto& r : records) {
    if (!seen.emplace(r.run_id, r.method, r.task, static_cast<int>(r.split), r.metric).second) {
      throw DataError("duplicate record key: " + r.run_id + "/" + r.method + "/" + r.task + "/" +
                      std::string(to_string(r.split)) + "/" + r.metric);
    }
  }
}

/// Header plus one LF-terminated line per record. Records must be unique by
/// (run_id, method, task, split, metric) and have finite values.
inline void write_csv(std::ostream& out, const std::vector<RunRecord>& records) {
  check_unique(records);
  out << kCsvHeader << '\n';
  for (const auto& r : records) {
    if (!std::isfinite(r.value)) throw DataError("record " + r.run_id + ": non-finite value");
    out << csv_field(r.run_id) << ',' << r.seed << ',' << csv_field(r.method) << ','
        << csv_field(r.task) << ',' << to_string(r.split) << ',' << csv_field(r.metric) << ','
        << format_value(r.value) << ',' << csv_field(encode_extras(r.extra)) << '\n';
  }
}

inline std::string to_csv(const std::vector<RunRecord>& records) {
  std::ostringstream out;
  write_csv(out, records);
  return out.str();
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          fields.back() += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  if (quoted) throw DataError("unterminated quote in CSV line");
  return fields;
}

/// Thrown when the first line is not the exact record header.
class HeaderError : public DataError {
 public:
  using DataError::DataError;
};

inline std::vector<RunRecord> read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) {
    throw HeaderError("CSV header must be exactly: " + std::string(kCsvHeader));
  }
  std::vector<RunRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 8) throw DataError("line " + std::to_string(line_no) + ": expected 8 fields");
    RunRecord r;
    r.run_id = f[0];
    auto [p, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), r.seed);
    if (ec != std::errc{} || p != f[1].data() + f[1].size()) {
      throw DataError("line " + std::to_string(line_no) + ": bad seed");
    }
    r.method = f[2];
    r.task = f[3];
    const auto split = parse_split(f[4]);
    if (!split) throw DataError("line " + std::to_string(line_no) + ": unknown split " + f[4]);
    r.split = *split;
    r.metric = f[5];
    try {
      std::size_t used = 0;
      r.value = std::stod(f[6], &used);
      if (used != f[6].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError("line " + std::to_string(line_no) + ": bad value");
    }
    r.extra = decode_extras(f[7]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace richrep
