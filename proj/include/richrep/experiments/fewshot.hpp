#pragma once

#include <charconv>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "richrep/experiments/common.hpp"
#include "richrep/experiments/defaults.hpp"
#include "richrep/experiments/task_source.hpp"
#include "richrep/rich/bank.hpp"
#include "richrep/rich/distill.hpp"
#include "richrep/tasks/split.hpp"

namespace richrep {

enum class EpisodeClassifier { linear, cosine };

struct EpisodeClassifierConfig {
  EpisodeClassifier kind = EpisodeClassifier::linear;
  ProbeConfig probe = desk::episode_probe();
  /// Full-batch training of the cosine head on the support set.
  TrainConfig cosine = [] {
    TrainConfig c;
    c.lr = 0.1;
    c.momentum = 0.9;
    c.epochs = 100;
    c.batch_size = 1 << 20;
    return c;
  }();
};

/// Accuracy on the query set of a classifier fit on the support set.
inline double episode_accuracy(const Matrix& support, std::span<const int> support_y, const Matrix& query,
                               std::span<const int> query_y, int n_way, const EpisodeClassifierConfig& cfg) {
  if (cfg.kind == EpisodeClassifier::linear) {
    return probe_accuracy(support, support_y, query, query_y, n_way, cfg.probe);
  }
  Rng rng(cfg.cosine.seed + SeedOffsets::init);
  Network head{{}, make_cosine_head(support.cols(), n_way, rng)};
  const Dataset train_set{support, Labels(support_y.begin(), support_y.end()),
                          Labels(support_y.size(), 0), n_way};
  head = train(std::move(head), train_set, LossKind::cross_entropy, cfg.cosine).net;
  return accuracy(forward(head, query).logits, query_y);
}

/// Materialized representation of every novel row for one method.
struct FewshotMethod {
  std::string name;
  Matrix features;
};

/// Per-method query accuracies over `n_eval` episodes drawn from Rng(seed).
/// Every method is scored on the same episodes.
inline std::vector<std::vector<double>> evaluate_episodes(std::span<const FewshotMethod> methods,
                                                          const Dataset& novel, const EpisodeSpec& spec,
                                                          int n_eval, const EpisodeClassifierConfig& cfg,
                                                          std::uint64_t seed) {
  for (const auto& m : methods) {
    if (static_cast<std::size_t>(m.features.rows()) != novel.size()) {
      throw ShapeError("fewshot: features of " + m.name + " do not cover the novel rows");
    }
  }
  std::vector<std::vector<double>> acc(methods.size());
  Rng rng(seed);
  for (int e = 0; e < n_eval; ++e) {
    const Episode ep = sample_episode(novel, spec, rng);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const Matrix s = gather_rows(methods[m].features, ep.support_rows);
      const Matrix q = gather_rows(methods[m].features, ep.query_rows);
      acc[m].push_back(episode_accuracy(s, ep.support.y, q, ep.query.y, spec.n_way, cfg));
    }
  }
  return acc;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1 denominator)
};

inline MeanStd mean_std(std::span<const double> xs) {
  if (xs.size() < 2) throw DataError("mean_std: need at least two values");
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0))};
}

struct FewshotConfig {
  TaskSource task = desk::fewshot_spec();
  std::vector<int> base_classes{0, 1, 2, 3, 4};
  std::vector<int> novel_classes{5, 6, 7, 8, 9};
  Architecture arch = desk::architecture();
  TrainConfig train = desk::train_config();
  int n_groups = 5;
  /// erm, cat{n}, distill{n}, cat{n}-s (n = n_snapshots) or snap{i}
  /// (1-based single snapshot).
  std::vector<std::string> methods{"erm", "cat5", "distill5", "cat5-s", "snap1", "snap2",
                                   "snap3", "snap4", "snap5"};
  EpisodeSpec episode{5, 5, 15};
  int n_eval = 600;
  EpisodeClassifierConfig classifier;

  double snapshot_lr_multiplier = 8.0;
  int snapshot_epochs = 50;
  int n_snapshots = 5;

  DistillSpec distill_spec = desk::distill_spec();
  TrainConfig distill_train = desk::distill_config();

  void validate() const {
    train.validate();
    if (n_groups < 1) throw ParameterError("fewshot: n_groups must be >= 1");
    if (n_eval < 2) throw ParameterError("fewshot: n_eval must be >= 2 for a sample std");
    if (methods.empty()) throw ParameterError("fewshot: no methods");
    if (!(snapshot_lr_multiplier > 0.0)) throw ParameterError("fewshot: snapshot lr multiplier must be > 0");
    even_snapshot_epochs(snapshot_epochs, n_snapshots);
    for (const auto& m : methods) parse_method(m);
  }

  struct Method {
    enum class Kind { erm, cat, distill, snapshots, snapshot } kind;
    int n = 1;
  };

  /// Decodes a method name; throws ParameterError on anything unknown.
  Method parse_method(const std::string& name) const {
    auto number = [&](std::string_view digits) {
      int v = 0;
      const auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
      if (ec != std::errc{} || p != digits.data() + digits.size() || v < 1) {
        throw ParameterError("fewshot: bad method name '" + name + "'");
      }
      return v;
    };
    const std::string_view s(name);
    if (s == "erm") return {Method::Kind::erm, 1};
    if (s.starts_with("cat") && s.ends_with("-s")) {
      const int n = number(s.substr(3, s.size() - 5));
      if (n != n_snapshots) throw ParameterError("fewshot: " + name + " needs n_snapshots = " + std::to_string(n));
      return {Method::Kind::snapshots, n};
    }
    if (s.starts_with("cat")) return {Method::Kind::cat, number(s.substr(3))};
    if (s.starts_with("distill")) return {Method::Kind::distill, number(s.substr(7))};
    if (s.starts_with("snap")) {
      const int i = number(s.substr(4));
      if (i > n_snapshots) throw ParameterError("fewshot: " + name + " exceeds n_snapshots");
      return {Method::Kind::snapshot, i};
    }
    throw ParameterError("fewshot: unknown method '" + name + "'");
  }
};

namespace fewshot_seeds {
inline constexpr std::uint64_t data = 2, episodes = 5, distill = 7;
}

/// Few-shot evaluation of representations trained on the base classes.
///
/// Per group: independent episodes (seeds b + 100 i) for erm / cat{n} /
/// distill{n}, one high-step-size episode (seed b) for the snapshot methods,
/// then `n_eval` shared N-way K-shot episodes on the novel classes. Emits the
/// mean and sample std of the per-episode query accuracy for every method.
inline std::vector<RunRecord> run_fewshot(const FewshotConfig& cfg, std::uint64_t master_seed,
                                          std::size_t jobs = 1) {
  cfg.validate();
  std::vector<FewshotConfig::Method> parsed;
  int n_bank = 0;
  bool need_snapshots = false;
  for (const auto& m : cfg.methods) {
    parsed.push_back(cfg.parse_method(m));
    using K = FewshotConfig::Method::Kind;
    if (parsed.back().kind == K::erm || parsed.back().kind == K::cat || parsed.back().kind == K::distill) {
      n_bank = std::max(n_bank, parsed.back().n);
    } else {
      need_snapshots = true;
    }
  }

  std::vector<RunRecord> out;
  for (int g = 0; g < cfg.n_groups; ++g) {
    const std::uint64_t b = group_seed(master_seed, g);
    auto [base, novel] = make_fewshot_data(cfg.task, cfg.base_classes, cfg.novel_classes, b + fewshot_seeds::data);

    RepresentationBank bank;
    if (n_bank > 0) {
      std::vector<std::uint64_t> seeds;
      for (int i = 0; i < n_bank; ++i) seeds.push_back(episode_seed(b, static_cast<std::size_t>(i)));
      bank = train_episodes(base, cfg.arch, cfg.train, seeds, jobs);
    }
    RepresentationBank snaps;
    if (need_snapshots) {
      TrainConfig sc = cfg.train;
      sc.lr *= cfg.snapshot_lr_multiplier;
      sc.schedule = Schedule::constant();
      sc.epochs = cfg.snapshot_epochs;
      sc.seed = b;
      snaps = snapshot_episode(base, cfg.arch, sc, even_snapshot_epochs(sc.epochs, cfg.n_snapshots));
    }

    std::vector<FewshotMethod> methods;
    for (std::size_t i = 0; i < parsed.size(); ++i) {
      const auto& m = parsed[i];
      std::vector<std::size_t> first(static_cast<std::size_t>(m.n));
      std::iota(first.begin(), first.end(), std::size_t{0});
      Matrix feat;
      switch (m.kind) {
        case FewshotConfig::Method::Kind::erm:
        case FewshotConfig::Method::Kind::cat:
          feat = cat_features(select_members(bank, first), novel.x);
          break;
        case FewshotConfig::Method::Kind::distill: {
          TrainConfig dc = cfg.distill_train;
          dc.seed = b + fewshot_seeds::distill;
          const DistillResult st = distill(select_members(bank, first), cfg.distill_spec, base, dc);
          feat = trunk_forward(st.student.trunk, novel.x);
          break;
        }
        case FewshotConfig::Method::Kind::snapshots:
          feat = cat_features(snaps, novel.x);
          break;
        case FewshotConfig::Method::Kind::snapshot:
          feat = member_features(snaps, static_cast<std::size_t>(m.n - 1), novel.x);
          break;
      }
      methods.push_back({cfg.methods[i], std::move(feat)});
    }

    const auto acc = evaluate_episodes(methods, novel, cfg.episode, cfg.n_eval, cfg.classifier,
                                       b + fewshot_seeds::episodes);
    const Extras extra{{"way", std::to_string(cfg.episode.n_way)},
                       {"shot", std::to_string(cfg.episode.k_shot)},
                       {"query", std::to_string(cfg.episode.n_query)},
                       {"episodes", std::to_string(cfg.n_eval)},
                       {"classifier", cfg.classifier.kind == EpisodeClassifier::linear ? "linear" : "cosine"}};
    const std::string run_id = "fewshot-g" + std::to_string(g);
    const std::string task = task_name(cfg.task);
    for (std::size_t m = 0; m < methods.size(); ++m) {
      const MeanStd ms = mean_std(acc[m]);
      out.push_back(make_record(run_id, b, methods[m].name, task, Split::fewshot, "acc_mean", ms.mean, extra));
      out.push_back(make_record(run_id, b, methods[m].name, task, Split::fewshot, "acc_std", ms.std, extra));
    }
  }
  return out;
}

}  // namespace richrep
