#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "richrep/experiments/common.hpp"
#include "richrep/experiments/defaults.hpp"
#include "richrep/rich/bank.hpp"
#include "richrep/rich/distill.hpp"
#include "richrep/tasks/shift.hpp"
#include "richrep/tasks/split.hpp"

namespace richrep {

enum class OodAlgorithm { erm, vrex };
enum class OodInit { scratch, cat, distill };
enum class TuneMode { iid, ood };

inline const char* to_string(OodAlgorithm a) { return a == OodAlgorithm::erm ? "erm" : "vrex"; }
inline const char* to_string(TuneMode t) { return t == TuneMode::iid ? "iid" : "ood"; }
inline const char* to_string(OodInit i) {
  switch (i) {
    case OodInit::scratch: return "scratch";
    case OodInit::cat: return "cat";
    case OodInit::distill: return "distill";
  }
  return "?";
}

struct OodConfig {
  OodAlgorithm algorithm = OodAlgorithm::erm;
  std::vector<double> beta_grid{0.5, 1.0, 5.0, 10.0, 50.0, 100.0};
  OodInit init = OodInit::scratch;
  TuneMode tune_mode = TuneMode::ood;

  void validate() const {
    if (algorithm == OodAlgorithm::vrex && beta_grid.empty()) throw ParameterError("ood: empty beta grid");
    for (double b : beta_grid) {
      if (!(b >= 0.0) || !std::isfinite(b)) throw ParameterError("ood: beta must be finite and >= 0");
    }
  }

  /// Penalty weights actually searched: {0} for ERM.
  std::vector<double> betas() const {
    return algorithm == OodAlgorithm::erm ? std::vector<double>{0.0} : beta_grid;
  }
};

/// mean(risks) + beta * population variance of the risks.
inline double vrex_objective(std::span<const double> risks, double beta) {
  if (risks.empty()) throw ParameterError("vrex_objective: no risks");
  const double n = static_cast<double>(risks.size());
  double mean = 0.0;
  for (double r : risks) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : risks) var += (r - mean) * (r - mean);
  return mean + beta * (var / n);
}

/// vREx objective over the environments present in a batch, with the
/// gradient with respect to the logits. Each environment's risk is its mean
/// cross-entropy; with beta = 0 this is the environment-averaged risk.
inline LossGrad env_risk_loss(const Matrix& logits, std::span<const int> labels, std::span<const int> env,
                              double beta) {
  if (env.size() != labels.size()) throw ShapeError("env_risk_loss: env and label counts differ");
  RowLosses rows = cross_entropy_rows(logits, labels);
  std::map<int, std::pair<double, double>> per_env;  // env -> (loss sum, row count)
  for (std::size_t i = 0; i < env.size(); ++i) {
    auto& [sum, count] = per_env[env[i]];
    sum += rows.loss(static_cast<Index>(i));
    count += 1.0;
  }
  std::vector<double> risks;
  for (const auto& [e, sc] : per_env) risks.push_back(sc.first / sc.second);
  const double n_env = static_cast<double>(risks.size());
  double mean = 0.0;
  for (double r : risks) mean += r;
  mean /= n_env;
  std::map<int, double> row_weight;
  std::size_t k = 0;
  for (const auto& [e, sc] : per_env) {
    const double d_risk = 1.0 / n_env + beta * 2.0 * (risks[k++] - mean) / n_env;
    row_weight[e] = d_risk / sc.second;
  }
  for (std::size_t i = 0; i < env.size(); ++i) rows.grad.row(static_cast<Index>(i)) *= row_weight[env[i]];
  return {vrex_objective(risks, beta), std::move(rows.grad)};
}

/// Training episode of `net` on `data` under the vREx objective. For
/// beta > 1 the objective is divided by beta while optimizing, which keeps
/// the step size meaningful across the penalty grid; beta <= 1 is untouched,
/// so beta = 0 follows the ERM trajectory exactly.
inline Network train_env_risk(Network net, const Dataset& data, const TrainConfig& config, double beta) {
  const double scale = beta > 1.0 ? 1.0 / beta : 1.0;
  if (data.x.cols() != net.input_dim()) throw ShapeError("train_env_risk: input width mismatch");
  check_labels(data.y, data.x.rows(), net.output_dim());
  run_epochs(net, data.size(), config,
             [&](const Network& model, std::span<const std::size_t> rows, Network& grad) {
               NetworkCache cache;
               const Matrix xb = gather_rows(data.x, rows);
               const Labels yb = gather(std::span<const int>(data.y), rows);
               const std::vector<int> eb = gather(std::span<const int>(data.env), rows);
               LossGrad lg = env_risk_loss(forward(model, xb, &cache).logits, yb, eb, beta);
               if (scale != 1.0) {
                 lg.loss *= scale;
                 lg.grad *= scale;
               }
               grad = backward(model, cache, lg.grad);
               return lg.loss;
             });
  return net;
}

/// Shared model and search settings for run_ood.
struct OodSetup {
  Architecture arch = desk::architecture();
  TrainConfig train = desk::train_config();  // lr and weight_decay come from the grids
  std::vector<double> lr_grid{0.05};
  std::vector<double> wd_grid{0.0, 2e-2};
  /// Share of the pooled training rows held out for IID tuning.
  double iid_holdout = 0.2;

  void validate() const {
    train.validate();
    if (lr_grid.empty() || wd_grid.empty()) throw ParameterError("ood: empty lr or wd grid");
    if (!(iid_holdout > 0.0 && iid_holdout < 1.0)) throw ParameterError("ood: iid_holdout must lie in (0, 1)");
  }
};

inline std::string ood_config_id(double beta, double lr, double wd) {
  return "b" + number_tag(beta) + "_lr" + number_tag(lr) + "_wd" + number_tag(wd);
}

/// Config id with the best tune-split accuracy. Only records of the tune
/// split (id_test for IID tuning, ood_tune for OOD tuning) are looked at;
/// ties go to the smallest beta, then lr, then wd.
inline std::string select_hyperparams(const std::vector<RunRecord>& records, TuneMode mode) {
  const Split tune = mode == TuneMode::iid ? Split::id_test : Split::ood_tune;
  std::vector<const RunRecord*> candidates;
  for (const auto& r : records) {
    if (r.split == tune) candidates.push_back(&r);
  }
  if (candidates.empty()) {
    throw DataError(std::string("select_hyperparams: no ") + std::string(to_string(tune)) + " records");
  }
  auto num = [](const RunRecord& r, const char* key) {
    const auto v = r.get(key);
    return v ? std::stod(*v) : 0.0;
  };
  auto key = [&](const RunRecord* r) {
    return std::tuple{-r->value, num(*r, "beta"), num(*r, "lr"), num(*r, "wd")};
  };
  const RunRecord* best = *std::min_element(candidates.begin(), candidates.end(),
                                            [&](auto* a, auto* b) { return key(a) < key(b); });
  const auto id = best->get("config");
  if (!id) throw DataError("select_hyperparams: record without a config id");
  return *id;
}

/// Labelled frozen-or-raw inputs for one OOD task.
struct OodInputs {
  Dataset train;     // pooled training environments minus the IID hold-out
  Dataset iid_tune;  // the IID hold-out
  Dataset tune;      // OOD tuning environment
  Dataset test;      // OOD test environment
};

inline OodInputs ood_inputs(const OodTask& task, double iid_holdout, std::uint64_t split_seed) {
  auto [train, held] = holdout_split(concat(std::span<const Dataset>(task.train)), iid_holdout, split_seed);
  return {std::move(train), std::move(held), task.tune, task.test};
}

/// Grid records for one (init, algorithm): every (beta, lr, wd) point is
/// trained on the training rows and scored on the IID hold-out (id_test),
/// the tune environment (ood_tune) and the test environment (ood_test).
/// Scratch trains the whole network from Rng(seed); cat / distill freeze
/// `init_bank` and train only a linear head.
inline std::vector<RunRecord> ood_grid(const OodInputs& in, const OodConfig& ood, const OodSetup& setup,
                                       const RepresentationBank* init_bank, std::uint64_t seed,
                                       const std::string& run_id, const std::string& method,
                                       const std::string& task_name) {
  ood.validate();
  setup.validate();
  if ((ood.init != OodInit::scratch) != (init_bank != nullptr)) {
    throw ParameterError("ood: cat and distill inits need a bank; scratch takes none");
  }
  auto feats = [&](const Dataset& d) {
    return init_bank ? with_features(d, cat_features(*init_bank, d.x)) : d;
  };
  const Dataset train = feats(in.train), iid = feats(in.iid_tune), tune = feats(in.tune), test = feats(in.test);

  std::vector<RunRecord> out;
  for (double beta : ood.betas()) {
    for (double lr : setup.lr_grid) {
      for (double wd : setup.wd_grid) {
        TrainConfig cfg = setup.train;
        cfg.lr = lr;
        cfg.weight_decay = wd;
        cfg.seed = seed;
        Network net;
        if (init_bank) {
          Rng rng(seed + SeedOffsets::init);
          net = Network{{}, glorot_layer(train.x.cols(), train.n_classes, Activation::linear, rng)};
        } else {
          net = make_network(train.x.cols(), setup.arch, train.n_classes, HeadKind::linear, seed);
        }
        const std::string id = ood_config_id(beta, lr, wd);
        const Extras extra{{"config", id},
                           {"beta", number_tag(beta)},
                           {"lr", number_tag(lr)},
                           {"wd", number_tag(wd)},
                           {"algorithm", to_string(ood.algorithm)},
                           {"init", to_string(ood.init)}};
        try {
          net = train_env_risk(std::move(net), train, cfg, beta);
        } catch (const TrainingError& e) {
          // A diverged point is reported and left out of selection.
          Extras ex = extra;
          ex.emplace_back("epoch", std::to_string(e.epoch()));
          out.push_back(make_record(run_id + "-" + id, seed, method, task_name, Split::id_train, "diverged", 1.0,
                                    std::move(ex)));
          continue;
        }
        for (const auto& [split, data] : {std::pair{Split::id_test, &iid}, std::pair{Split::ood_tune, &tune},
                                          std::pair{Split::ood_test, &test}}) {
          out.push_back(make_record(run_id + "-" + id, seed, method, task_name, split, "acc",
                                    evaluate_accuracy(net, *data), extra));
        }
      }
    }
  }
  return out;
}

/// The ood_test accuracy of the config chosen under `mode`.
inline RunRecord selected_record(const std::vector<RunRecord>& grid, TuneMode mode, const std::string& run_id) {
  const std::string id = select_hyperparams(grid, mode);
  for (const auto& r : grid) {
    if (r.split == Split::ood_test && r.get("config") == id) {
      RunRecord out = r;
      out.run_id = run_id + "-" + to_string(mode);
      out.extra.emplace_back("tune", to_string(mode));
      return out;
    }
  }
  throw DataError("selected config has no ood_test record");
}

/// One OOD experiment: the hyper-parameter grid plus the selected result
/// under `ood.tune_mode`.
inline std::vector<RunRecord> run_ood(const OodTask& task, const OodConfig& ood, const OodSetup& setup,
                                      const RepresentationBank* init_bank, std::uint64_t seed,
                                      const std::string& run_id = "ood", const std::string& method = "erm",
                                      const std::string& task_name = "shift") {
  const OodInputs in = ood_inputs(task, setup.iid_holdout, seed + 4);
  std::vector<RunRecord> out = ood_grid(in, ood, setup, init_bank, seed, run_id, method, task_name);
  RunRecord chosen = selected_record(out, ood.tune_mode, run_id);
  out.push_back(std::move(chosen));
  return out;
}

struct OodPipelineConfig {
  ShiftSpec task = desk::shift_spec();
  /// Share of the OOD rows forming the tuning environment; the rest is test.
  double tune_fraction = 0.5;
  OodSetup setup;
  std::vector<OodAlgorithm> algorithms{OodAlgorithm::erm, OodAlgorithm::vrex};
  std::vector<double> beta_grid{0.5, 1.0, 5.0, 10.0, 50.0, 100.0};
  std::vector<OodInit> inits{OodInit::scratch, OodInit::cat, OodInit::distill};
  std::vector<TuneMode> tune_modes{TuneMode::iid, TuneMode::ood};
  int n_episodes = 5;
  int n_groups = 5;
  DistillSpec distill_spec = desk::distill_spec();
  TrainConfig distill_train = desk::distill_config();
  TrainConfig bank_train = desk::train_config();

  void validate() const {
    setup.validate();
    task.validate();
    if (!(tune_fraction > 0.0 && tune_fraction < 1.0)) throw ParameterError("ood: tune_fraction must lie in (0, 1)");
    if (algorithms.empty() || inits.empty() || tune_modes.empty()) {
      throw ParameterError("ood: algorithms, inits and tune_modes must be nonempty");
    }
    if (n_episodes < 1 || n_groups < 1) throw ParameterError("ood: n_episodes and n_groups must be >= 1");
    OodConfig{OodAlgorithm::vrex, beta_grid}.validate();
  }
};

/// Environments of the synthetic task in hospital-style roles: training
/// environments 0..E-1, the OOD rows split into a tuning environment (id E)
/// and a test environment (id E + 1).
inline OodTask make_ood_task(const ShiftSpec& spec, double tune_fraction, std::uint64_t base) {
  ShiftData d = gen_shift(spec, base + 2);
  auto [test, tune] = holdout_split(d.ood_test, tune_fraction, base + 3);
  const int e = static_cast<int>(d.train_envs.size());
  std::fill(tune.env.begin(), tune.env.end(), e);
  std::fill(test.env.begin(), test.env.end(), e + 1);
  std::vector<Dataset> envs = std::move(d.train_envs);
  envs.push_back(std::move(tune));
  envs.push_back(std::move(test));
  EnvRoles roles;
  for (int i = 0; i < e; ++i) roles.train.push_back(static_cast<std::size_t>(i));
  roles.tune = static_cast<std::size_t>(e);
  roles.test = static_cast<std::size_t>(e + 1);
  return env_partition(envs, roles);
}

/// Grid search and selection for every (init, algorithm, tune mode) over
/// `n_groups` seed groups. Banks for the cat / distill inits are trained on
/// the same training rows the heads see.
inline std::vector<RunRecord> run_ood_pipeline(const OodPipelineConfig& cfg, std::uint64_t master_seed,
                                               std::size_t jobs = 1) {
  cfg.validate();
  std::vector<RunRecord> out;
  for (int g = 0; g < cfg.n_groups; ++g) {
    const std::uint64_t b = group_seed(master_seed, g);
    const OodTask task = make_ood_task(cfg.task, cfg.tune_fraction, b);
    const OodInputs in = ood_inputs(task, cfg.setup.iid_holdout, b + 4);

    std::optional<RepresentationBank> bank, student;
    const bool need_bank = std::any_of(cfg.inits.begin(), cfg.inits.end(),
                                       [](OodInit i) { return i != OodInit::scratch; });
    if (need_bank) {
      std::vector<std::uint64_t> seeds;
      for (int i = 0; i < cfg.n_episodes; ++i) seeds.push_back(episode_seed(b, static_cast<std::size_t>(i)));
      bank = train_episodes(in.train, cfg.setup.arch, cfg.bank_train, seeds, jobs);
    }
    if (std::find(cfg.inits.begin(), cfg.inits.end(), OodInit::distill) != cfg.inits.end()) {
      TrainConfig dc = cfg.distill_train;
      dc.seed = b + 7;
      student = student_bank(distill(*bank, cfg.distill_spec, in.train, dc).student, in.train.x.cols(), dc.seed);
    }

    const std::string n = std::to_string(cfg.n_episodes);
    for (OodInit init : cfg.inits) {
      const RepresentationBank* rep = init == OodInit::cat ? &*bank : init == OodInit::distill ? &*student : nullptr;
      const std::string method = init == OodInit::scratch ? "erm" : init == OodInit::cat ? "cat" + n : "distill" + n;
      for (OodAlgorithm algo : cfg.algorithms) {
        const OodConfig oc{algo, cfg.beta_grid, init, TuneMode::ood};
        const std::string run_id = "ood-g" + std::to_string(g) + "-" + to_string(algo);
        std::vector<RunRecord> grid = ood_grid(in, oc, cfg.setup, rep, b, run_id, method, "shift");
        out.insert(out.end(), grid.begin(), grid.end());
        for (TuneMode mode : cfg.tune_modes) out.push_back(selected_record(grid, mode, run_id));
      }
    }
  }
  return out;
}

}  // namespace richrep
