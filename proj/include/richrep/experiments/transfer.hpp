#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "richrep/experiments/common.hpp"
#include "richrep/experiments/defaults.hpp"
#include "richrep/experiments/task_source.hpp"
#include "richrep/rich/bank.hpp"
#include "richrep/rich/distill.hpp"
#include "richrep/rich/finetune.hpp"

namespace richrep {

struct TransferConfig {
  TaskSource task = desk::shift_spec();
  Architecture arch = desk::architecture();
  TrainConfig train = desk::train_config();
  ProbeConfig probe = desk::probe_config();
  int n_episodes = 5;
  int n_groups = 5;
  /// Fraction of the target rows held out to score target probes.
  double probe_holdout = 0.5;

  bool distill = true;
  DistillSpec distill_spec = desk::distill_spec();
  TrainConfig distill_train = desk::distill_config();

  bool joint = true;
  int joint_legs = 2;

  bool finetune = true;
  TrainConfig finetune_train = desk::finetune_config();
  Stage2Config stage2;
  /// Fraction of the target rows held out to score fine-tuned models; the
  /// rest is the fine-tuning set.
  double finetune_holdout = 0.8;

  /// Weight-decay values trained as single episodes next to
  /// train.weight_decay for the ablation records.
  std::vector<double> wd_ablation{0.0};

  void validate() const {
    train.validate();
    probe.validate();
    if (n_episodes < 1) throw ParameterError("transfer: n_episodes must be >= 1");
    if (n_groups < 1) throw ParameterError("transfer: n_groups must be >= 1");
    if (joint && joint_legs < 1) throw ParameterError("transfer: joint_legs must be >= 1");
    if (joint && joint_legs > n_episodes) {
      throw ParameterError("transfer: joint_legs cannot exceed n_episodes (CAT baseline)");
    }
    for (double f : {probe_holdout, finetune_holdout}) {
      if (!(f > 0.0 && f < 1.0)) throw ParameterError("transfer: holdout fractions must lie in (0, 1)");
    }
    if (distill) distill_spec.validate();
  }
};

// Seed layout inside a group with base seed b:
//   b + 100 i   training episode i (b itself is the single-episode ERM)
//   b + 2       task data          b + 3   target probe / fine-tune splits
//   b + 7       distillation       b + 9   fine-tuning
//   b + 200     joint training (its own network, so reusing an episode's
//               shuffle stream is harmless)
namespace transfer_seeds {
inline constexpr std::uint64_t data = 2, split = 3, distill = 7, finetune = 9, joint = 200;
}

namespace detail {

struct ProbeScores {
  double id = 0.0;
  double ood = 0.0;
  double cost = 0.0;
};

struct TransferGroup {
  const TransferConfig& cfg;
  const TransferData& data;
  Dataset target_train, target_eval;
  std::string run_id;
  std::uint64_t seed;
  std::vector<RunRecord>& out;

  ProbeScores probe(const RepresentationBank& bank) const {
    ProbeScores s;
    const Matrix pre = cat_features(bank, data.pretrain.x);
    Rng rng(0);
    const ProbeResult id = fit_probe(pre, data.pretrain.y, data.pretrain.n_classes, cfg.probe, rng,
                                     LabeledFeatures{cat_features(bank, data.id_test.x), data.id_test.y});
    s.id = id.eval_accuracy;
    s.cost = id.cost;
    s.ood = probe_accuracy(cat_features(bank, target_train.x), target_train.y,
                           cat_features(bank, target_eval.x), target_eval.y, data.target.n_classes, cfg.probe);
    return s;
  }

  void emit(const std::string& method, Split split, const std::string& metric, double value,
            Extras extra = {}, const std::string& id_suffix = "") const {
    out.push_back(make_record(run_id + id_suffix, seed, method, data.name, split, metric, value,
                              std::move(extra)));
  }

  void emit_probe(const std::string& method, const ProbeScores& s, bool with_cost) const {
    emit(method, Split::id_test, "probe_acc", s.id);
    emit(method, Split::ood_test, "probe_acc", s.ood);
    if (with_cost) emit(method, Split::id_train, "probe_cost", s.cost);
  }
};

inline double subset_probe_accuracy(const RepresentationBank& bank, const Dataset& train,
                                    const Dataset& eval, const ProbeConfig& config) {
  std::vector<ProbeResult> probes;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    Rng rng(0);
    probes.push_back(fit_probe(member_features(bank, i, train.x), train.y, train.n_classes, config, rng));
  }
  return accuracy(subset_ensemble_predict(bank, probes, eval.x), eval.y);
}

}  // namespace detail

/// Transfer experiment over `cfg.n_groups` seed groups.
///
/// Per group: n independent episodes on the pre-training data, then probe
/// accuracy in distribution (probe fit on the pre-training rows, scored on
/// id_test) and on the shifted target (probe fit on part of the target,
/// scored on the rest) for ERM (episode 0), CAT-k for k = 1..n, the subset
/// ensemble, DISTILL-n and the joint-training baseline; per-leg probe gaps of
/// joint training vs CAT with the same leg count; naive vs two-stage
/// fine-tuning on the target; and the weight-decay ablation.
/// `on_bank(group, bank)` sees each group's episode bank, e.g. to save it.
inline std::vector<RunRecord> run_transfer(
    const TransferConfig& cfg, std::uint64_t master_seed, std::size_t jobs = 1,
    const std::function<void(int, const RepresentationBank&)>& on_bank = {}) {
  cfg.validate();
  std::vector<RunRecord> out;
  for (int g = 0; g < cfg.n_groups; ++g) {
    const std::uint64_t b = group_seed(master_seed, g);
    const TransferData data = make_transfer_data(cfg.task, b + transfer_seeds::data);
    auto [target_train, target_eval] = holdout_split(data.target, cfg.probe_holdout, b + transfer_seeds::split);
    detail::TransferGroup grp{cfg, data, std::move(target_train), std::move(target_eval),
                              "transfer-g" + std::to_string(g), b, out};

    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < cfg.n_episodes; ++i) seeds.push_back(episode_seed(b, static_cast<std::size_t>(i)));
    const RepresentationBank bank = train_episodes(data.pretrain, cfg.arch, cfg.train, seeds, jobs);
    if (on_bank) on_bank(g, bank);

    detail::ProbeScores erm;
    for (int k = 1; k <= cfg.n_episodes; ++k) {
      std::vector<std::size_t> first(static_cast<std::size_t>(k));
      std::iota(first.begin(), first.end(), std::size_t{0});
      const auto scores = grp.probe(select_members(bank, first));
      if (k == 1) erm = scores;
      grp.emit_probe("cat" + std::to_string(k), scores, true);
    }
    grp.emit_probe("erm", erm, true);
    grp.emit("catsub", Split::id_test, "probe_acc",
             detail::subset_probe_accuracy(bank, data.pretrain, data.id_test, cfg.probe));
    grp.emit("catsub", Split::ood_test, "probe_acc",
             detail::subset_probe_accuracy(bank, grp.target_train, grp.target_eval, cfg.probe));

    if (cfg.distill) {
      TrainConfig dc = cfg.distill_train;
      dc.seed = b + transfer_seeds::distill;
      const DistillResult st = distill(bank, cfg.distill_spec, data.pretrain, dc);
      const RepresentationBank sb = student_bank(st.student, data.pretrain.x.cols(), dc.seed);
      grp.emit_probe("distill" + std::to_string(cfg.n_episodes), grp.probe(sb), false);
    }

    if (cfg.joint) {
      TrainConfig jc = cfg.train;
      jc.seed = b + transfer_seeds::joint;
      const auto legs = static_cast<std::size_t>(cfg.joint_legs);
      const RepresentationBank joint = train_joint(data.pretrain, cfg.arch, legs, jc);
      const std::string jname = "joint" + std::to_string(legs);
      grp.emit_probe(jname, grp.probe(joint), false);
      std::vector<std::size_t> first(legs);
      std::iota(first.begin(), first.end(), std::size_t{0});
      const RepresentationBank cat = select_members(bank, first);
      for (const auto& [name, b2] : {std::pair{jname, &joint}, std::pair{"cat" + std::to_string(legs), &cat}}) {
        const LegGap gap = leg_probe_gap(*b2, data.pretrain, cfg.probe);
        Extras extra;
        for (std::size_t i = 0; i < gap.accuracies.size(); ++i) {
          extra.emplace_back("leg" + std::to_string(i), format_value(gap.accuracies[i]));
        }
        grp.emit(name, Split::id_train, "leg_gap", gap.gap, std::move(extra));
      }
    }

    if (cfg.finetune) {
      auto [ft_train, ft_eval] = holdout_split(data.target, cfg.finetune_holdout, b + transfer_seeds::split);
      TrainConfig fc = cfg.finetune_train;
      fc.seed = b + transfer_seeds::finetune;
      const CatNetwork naive = naive_finetune(bank, ft_train, fc);
      grp.emit("init-ft", Split::ood_test, "ft_acc", evaluate_accuracy(naive, ft_eval));
      const TwoStageResult two = two_stage_finetune(bank, ft_train, fc, cfg.stage2, jobs);
      grp.emit("2ft", Split::ood_test, "ft_acc", accuracy(two.logits(ft_eval.x), ft_eval.y));
      double best = 0.0, mean = 0.0;
      Matrix avg = Matrix::Zero(ft_eval.size(), ft_eval.n_classes);
      for (std::size_t i = 0; i < two.legs.size(); ++i) {
        const Matrix logits = forward(two.legs.member(i), ft_eval.x).logits;
        const double a = accuracy(logits, ft_eval.y);
        if (i == 0) grp.emit("erm", Split::ood_test, "ft_acc", a);
        best = std::max(best, a);
        mean += a / static_cast<double>(two.legs.size());
        avg += softmax_rows(logits);
      }
      grp.emit("2ft", Split::ood_test, "best_leg_ft_acc", best);
      grp.emit("2ft", Split::ood_test, "mean_leg_ft_acc", mean);
      grp.emit("catsub", Split::ood_test, "ft_acc", accuracy(avg, ft_eval.y));
    }

    std::vector<double> wds{cfg.train.weight_decay};
    for (double wd : cfg.wd_ablation) {
      if (std::find(wds.begin(), wds.end(), wd) == wds.end()) wds.push_back(wd);
    }
    for (double wd : wds) {
      detail::ProbeScores s = erm;
      if (wd != cfg.train.weight_decay) {
        TrainConfig wc = cfg.train;
        wc.weight_decay = wd;
        const std::uint64_t one[] = {b};
        s = grp.probe(train_episodes(data.pretrain, cfg.arch, wc, one));
      }
      const std::string suffix = "-wd" + number_tag(wd);
      grp.emit("erm", Split::id_test, "probe_acc", s.id, {{"wd", number_tag(wd)}}, suffix);
      grp.emit("erm", Split::ood_test, "probe_acc", s.ood, {{"wd", number_tag(wd)}}, suffix);
    }
  }
  return out;
}

}  // namespace richrep
