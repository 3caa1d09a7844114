#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "richrep/experiments/records.hpp"
#include "richrep/probing/probe.hpp"
#include "richrep/rich/bank.hpp"

namespace richrep {

/// Base seed of seed group g. Groups are 1000 apart so every per-group
/// offset used by the pipelines (< 1000) stays inside its own group.
inline std::uint64_t group_seed(std::uint64_t master_seed, int group) {
  return master_seed + 1000ULL * static_cast<std::uint64_t>(group + 1);
}

/// Seed of episode i inside a group.
inline std::uint64_t episode_seed(std::uint64_t base, std::size_t i) { return base + 100ULL * i; }

/// Accuracy on `eval` of a probe fit on `train`; features are given already
/// materialized. The probe starts from Rng(0) so results depend on the data only.
inline double probe_accuracy(const Matrix& train_x, std::span<const int> train_y, const Matrix& eval_x,
                             std::span<const int> eval_y, int n_classes, const ProbeConfig& config) {
  Rng rng(0);
  return fit_probe(train_x, train_y, n_classes, config, rng, LabeledFeatures{eval_x, eval_y})
      .eval_accuracy;
}

/// Shortest decimal that reads back to the same double, for run ids and
/// extra fields.
inline std::string number_tag(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

/// 64-bit FNV-1a, rendered as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline RunRecord make_record(std::string run_id, std::uint64_t seed, std::string method, std::string task,
                             Split split, std::string metric, double value, Extras extra = {}) {
  return RunRecord{std::move(run_id), seed, std::move(method), std::move(task), split,
                   std::move(metric),  value, std::move(extra)};
}

/// Finds the single record matching the key fields; throws DataError when
/// absent. Used by tests and the acceptance checks.
inline const RunRecord& find_record(const std::vector<RunRecord>& records, std::string_view run_id,
                                    std::string_view method, Split split, std::string_view metric) {
  for (const auto& r : records) {
    if (r.run_id == run_id && r.method == method && r.split == split && r.metric == metric) return r;
  }
  throw DataError("no record " + std::string(run_id) + "/" + std::string(method) + "/" +
                  std::string(to_string(split)) + "/" + std::string(metric));
}

}  // namespace richrep
