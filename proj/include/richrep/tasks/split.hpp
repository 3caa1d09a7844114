#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "richrep/dataset.hpp"
#include "richrep/errors.hpp"
#include "richrep/rng.hpp"

namespace richrep {

/// Rows whose class is in `base` or `novel`, split in two. Labels are
/// re-indexed densely in ascending class order within each split; row order
/// is preserved.
inline std::pair<Dataset, Dataset> split_classes(const Dataset& ds, std::span<const int> base,
                                                 std::span<const int> novel) {
  if (base.empty() || novel.empty()) throw ParameterError("split_classes: both class sets must be nonempty");
  const std::set<int> b(base.begin(), base.end());
  const std::set<int> n(novel.begin(), novel.end());
  for (int c : b) {
    if (n.count(c)) throw ParameterError("split_classes: class " + std::to_string(c) + " in both sets");
  }
  for (const auto* s : {&b, &n}) {
    for (int c : *s) {
      if (c < 0 || c >= ds.n_classes) throw ParameterError("split_classes: class out of range");
    }
  }
  auto build = [&](const std::set<int>& classes) {
    std::vector<int> remap(static_cast<std::size_t>(ds.n_classes), -1);
    int next = 0;
    for (int c : classes) remap[static_cast<std::size_t>(c)] = next++;
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < ds.size(); ++r) {
      if (remap[static_cast<std::size_t>(ds.y[r])] >= 0) rows.push_back(r);
    }
    Dataset out = subset(ds, rows);
    for (int& y : out.y) y = remap[static_cast<std::size_t>(y)];
    out.n_classes = next;
    return out;
  };
  return {build(b), build(n)};
}

struct EpisodeSpec {
  int n_way = 5;
  int k_shot = 1;
  int n_query = 15;

  void validate() const {
    if (n_way < 1 || k_shot < 1 || n_query < 1) throw ParameterError("episode spec: sizes must be positive");
  }
};

struct Episode {
  Dataset support;
  Dataset query;
  std::vector<std::size_t> support_rows;  // row indices into the source dataset
  std::vector<std::size_t> query_rows;
  std::vector<int> classes;  // source class of episode label i
};

/// N-way K-shot episode. Classes are drawn without replacement by a partial
/// Fisher-Yates pass; within each drawn class the rows are partially shuffled
/// and the first k_shot go to support, the next n_query to query. Episode
/// labels follow the order in which classes were drawn.
inline Episode sample_episode(const Dataset& novel, const EpisodeSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.n_way > novel.n_classes) {
    throw SamplingError("episode needs " + std::to_string(spec.n_way) + " classes, only " +
                        std::to_string(novel.n_classes) + " available");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(novel.n_classes));
  for (std::size_t r = 0; r < novel.size(); ++r) by_class[static_cast<std::size_t>(novel.y[r])].push_back(r);

  std::vector<int> classes(static_cast<std::size_t>(novel.n_classes));
  for (int c = 0; c < novel.n_classes; ++c) classes[static_cast<std::size_t>(c)] = c;
  for (int i = 0; i < spec.n_way; ++i) {
    const auto j = static_cast<std::size_t>(i) + rng.below(classes.size() - static_cast<std::size_t>(i));
    std::swap(classes[static_cast<std::size_t>(i)], classes[j]);
  }
  classes.resize(static_cast<std::size_t>(spec.n_way));

  Episode ep;
  ep.classes = classes;
  std::vector<int> support_labels, query_labels;
  const auto need = static_cast<std::size_t>(spec.k_shot + spec.n_query);
  for (int label = 0; label < spec.n_way; ++label) {
    auto rows = by_class[static_cast<std::size_t>(classes[static_cast<std::size_t>(label)])];
    if (rows.size() < need) {
      throw SamplingError("class " + std::to_string(classes[static_cast<std::size_t>(label)]) + " has " +
                          std::to_string(rows.size()) + " rows, episode needs " + std::to_string(need));
    }
    for (std::size_t i = 0; i < need; ++i) {
      const std::size_t j = i + rng.below(rows.size() - i);
      std::swap(rows[i], rows[j]);
    }
    for (std::size_t i = 0; i < need; ++i) {
      const bool in_support = i < static_cast<std::size_t>(spec.k_shot);
      (in_support ? ep.support_rows : ep.query_rows).push_back(rows[i]);
      (in_support ? support_labels : query_labels).push_back(label);
    }
  }
  ep.support = subset(novel, ep.support_rows);
  ep.support.y = std::move(support_labels);
  ep.support.n_classes = spec.n_way;
  ep.query = subset(novel, ep.query_rows);
  ep.query.y = std::move(query_labels);
  ep.query.n_classes = spec.n_way;
  return ep;
}

struct EnvRoles {
  std::vector<std::size_t> train;
  std::size_t tune = 0;
  std::size_t test = 0;
};

/// Environments grouped by evaluation role.
struct OodTask {
  std::vector<Dataset> train;
  Dataset tune;
  Dataset test;
};

inline OodTask env_partition(std::span<const Dataset> envs, const EnvRoles& roles) {
  if (roles.train.empty()) throw ParameterError("env_partition: no training environments");
  std::set<std::size_t> used;
  auto claim = [&](std::size_t i) {
    if (i >= envs.size()) throw ParameterError("env_partition: environment index out of range");
    if (!used.insert(i).second) throw ParameterError("env_partition: environment assigned twice");
  };
  for (std::size_t i : roles.train) claim(i);
  claim(roles.tune);
  claim(roles.test);
  OodTask task;
  for (std::size_t i : roles.train) task.train.push_back(envs[i]);
  task.tune = envs[roles.tune];
  task.test = envs[roles.test];
  return task;
}

/// Seeded hold-out: a Fisher-Yates shuffle of the row indices, the first
/// round(fraction * n) rows are held out. Both parts keep the source order.
inline std::pair<Dataset, Dataset> holdout_split(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ParameterError("holdout fraction outside [0, 1]");
  std::vector<std::size_t> order = iota_rows(ds.size());
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const auto n_held = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(ds.size())));
  std::vector<std::size_t> held(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_held));
  std::vector<std::size_t> kept(order.begin() + static_cast<std::ptrdiff_t>(n_held), order.end());
  std::sort(held.begin(), held.end());
  std::sort(kept.begin(), kept.end());
  return {subset(ds, kept), subset(ds, held)};
}

}  // namespace richrep
