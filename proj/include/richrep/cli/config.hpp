#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "richrep/errors.hpp"
#include "richrep/experiments/fewshot.hpp"
#include "richrep/experiments/ood.hpp"
#include "richrep/experiments/transfer.hpp"
#include "richrep/experiments/verify.hpp"

namespace richrep::cli {

using nlohmann::json;

/// A config problem tied to a location: "line L, column C" for syntax
/// errors, a JSON pointer such as /train/lr for field errors.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& where, const std::string& what)
      : Error(where + ": " + what), where_(where) {}
  const std::string& where() const noexcept { return where_; }

 private:
  std::string where_;
};

enum class Pipeline { transfer, fewshot, ood, verify };

inline const char* to_string(Pipeline p) {
  switch (p) {
    case Pipeline::transfer: return "transfer";
    case Pipeline::fewshot: return "fewshot";
    case Pipeline::ood: return "ood";
    case Pipeline::verify: return "verify";
  }
  return "?";
}

struct ExperimentConfig {
  Pipeline pipeline = Pipeline::verify;
  std::uint64_t master_seed = 0;
  std::filesystem::path output_dir = "results";
  TransferConfig transfer;
  bool save_banks = false;
  FewshotConfig fewshot;
  OodPipelineConfig ood;
  VerifyOptions verify;
  /// The parsed document, for hashing.
  json document;
};

namespace config_detail {

/// Typed access to one JSON object. Every key read is remembered; finish()
/// rejects whatever was never asked for.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where(), "expected an object");
  }

  std::string where() const { return path_.empty() ? "/" : path_; }
  std::string child(std::string_view key) const { return path_ + "/" + std::string(key); }

  const json* find(std::string_view key) {
    seen_.insert(std::string(key));
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void get(std::string_view key, T& out) {
    if (const json* v = find(key)) out = convert<T>(*v, child(key));
  }

  template <class T>
  T require(std::string_view key) {
    const json* v = find(key);
    if (!v) throw ConfigError(child(key), "required key missing");
    return convert<T>(*v, child(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(child(k), "unknown key");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& at) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at, "expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(at, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError(at, "expected a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(at, "expected a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) throw ConfigError(at, "expected an integer");
      const auto x = v.get<std::int64_t>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
        throw ConfigError(at, "integer out of range");
      }
      return static_cast<int>(x);
    } else {
      if (!v.is_array()) throw ConfigError(at, "expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], at + "/" + std::to_string(i)));
      }
      return out;
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E>
E parse_enum(const std::string& s, const std::string& at,
             std::initializer_list<std::pair<const char*, E>> options) {
  std::string names;
  for (const auto& [name, value] : options) {
    if (s == name) return value;
    names += std::string(names.empty() ? "" : ", ") + name;
  }
  throw ConfigError(at, "'" + s + "' is not one of: " + names);
}

inline void read_schedule(Obj& parent, TrainConfig& out) {
  const json* v = parent.find("schedule");
  if (!v) return;
  Obj o(*v, parent.child("schedule"));
  const auto kind = parse_enum<Schedule::Kind>(
      o.require<std::string>("kind"), o.child("kind"),
      {{"constant", Schedule::Kind::constant}, {"step", Schedule::Kind::step}, {"cosine", Schedule::Kind::cosine}});
  out.schedule.kind = kind;
  o.get("factor", out.schedule.factor);
  o.get("every", out.schedule.every);
  if (kind != Schedule::Kind::step && (o.find("factor") || o.find("every"))) {
    throw ConfigError(o.where(), "factor and every apply to the step schedule only");
  }
  o.finish();
}

inline void read_train(const json& j, const std::string& path, TrainConfig& out) {
  Obj o(j, path);
  o.get("lr", out.lr);
  o.get("momentum", out.momentum);
  o.get("weight_decay", out.weight_decay);
  o.get("epochs", out.epochs);
  o.get("batch_size", out.batch_size);
  read_schedule(o, out);
  o.finish();
  try {
    out.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(path, e.what());
  }
}

inline void read_probe(const json& j, const std::string& path, ProbeConfig& out) {
  Obj o(j, path);
  o.get("l2", out.l2);
  o.get("max_iters", out.max_iters);
  o.get("grad_tol", out.grad_tol);
  o.get("standardize", out.standardize);
  o.finish();
  try {
    out.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(path, e.what());
  }
}

inline ShiftSpec read_shift(Obj& o, ShiftSpec s) {
  o.get("n_classes", s.n_classes);
  o.get("d_core", s.d_core);
  o.get("d_spur", s.d_spur);
  o.get("d_noise", s.d_noise);
  o.get("core_scale", s.core_scale);
  o.get("spur_scale", s.spur_scale);
  o.get("noise_std", s.noise_std);
  o.get("env_correlations", s.env_correlations);
  o.get("ood_correlation", s.ood_correlation);
  o.get("n_per_env", s.n_per_env);
  o.get("n_test", s.n_test);
  try {
    s.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(o.where(), e.what());
  }
  return s;
}

inline TaskSource read_task(const json& j, const std::string& path, const ShiftSpec& defaults,
                            const std::filesystem::path& base_dir) {
  Obj o(j, path);
  const std::string kind = o.require<std::string>("kind");
  TaskSource out;
  if (kind == "shift") {
    out = read_shift(o, defaults);
  } else if (kind == "idx") {
    IdxSource idx;
    auto resolve = [&](const std::string& p) {
      std::filesystem::path f(p);
      return f.is_absolute() ? f : base_dir / f;
    };
    idx.images = resolve(o.require<std::string>("images"));
    idx.labels = resolve(o.require<std::string>("labels"));
    o.get("base_classes", idx.base_classes);
    o.get("novel_classes", idx.novel_classes);
    o.get("id_holdout", idx.id_holdout);
    for (const auto* f : {&idx.images, &idx.labels}) {
      if (!std::filesystem::exists(*f)) throw ConfigError(path, "file not found: " + f->string());
    }
    out = std::move(idx);
  } else {
    throw ConfigError(o.child("kind"), "'" + kind + "' is not one of: shift, idx");
  }
  o.finish();
  return out;
}

inline void read_distill(const json& j, const std::string& path, DistillSpec& spec, TrainConfig& train) {
  Obj o(j, path);
  if (const json* m = o.find("mode")) {
    spec.mode = parse_enum<DistillMode>(Obj::convert<std::string>(*m, o.child("mode")), o.child("mode"),
                                        {{"kl", DistillMode::kl}, {"ce_kl", DistillMode::ce_kl},
                                         {"cosine", DistillMode::cosine}});
  }
  o.get("tau", spec.tau);
  o.get("alpha", spec.alpha);
  if (const json* h = o.find("student_hidden")) {
    const auto hidden = Obj::convert<std::vector<int>>(*h, o.child("student_hidden"));
    spec.student_arch.hidden.assign(hidden.begin(), hidden.end());
  }
  if (const json* t = o.find("train")) read_train(*t, o.child("train"), train);
  o.finish();
  try {
    spec.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace config_detail

/// Line and column (1-based) of a byte offset.
inline std::string line_col(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

/// Parses and validates an experiment config. Relative data paths resolve
/// against `base_dir` (the config file's directory).
inline ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir = ".") {
  using namespace config_detail;
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::string msg = e.what();
    throw ConfigError(line_col(text, e.byte == 0 ? 0 : e.byte - 1), "malformed JSON (" + msg + ")");
  }

  ExperimentConfig cfg;
  cfg.document = doc;
  Obj root(doc, "");
  const std::string pipeline = root.require<std::string>("pipeline");
  cfg.pipeline = parse_enum<Pipeline>(pipeline, "/pipeline",
                                      {{"transfer", Pipeline::transfer}, {"fewshot", Pipeline::fewshot},
                                       {"ood", Pipeline::ood}, {"verify", Pipeline::verify}});
  root.get("master_seed", cfg.master_seed);
  if (const json* o = root.find("output_dir")) cfg.output_dir = Obj::convert<std::string>(*o, "/output_dir");

  // Shared blocks; each pipeline copies what it uses.
  const ShiftSpec task_defaults = cfg.pipeline == Pipeline::fewshot ? desk::fewshot_spec() : desk::shift_spec();
  TaskSource task = task_defaults;
  if (const json* t = root.find("task")) task = read_task(*t, "/task", task_defaults, base_dir);
  Architecture arch = desk::architecture();
  if (const json* a = root.find("architecture")) {
    Obj o(*a, "/architecture");
    const auto hidden = o.require<std::vector<int>>("hidden");
    for (std::size_t i = 0; i < hidden.size(); ++i) {
      if (hidden[i] < 1) throw ConfigError("/architecture/hidden/" + std::to_string(i), "width must be >= 1");
    }
    arch.hidden.assign(hidden.begin(), hidden.end());
    o.finish();
  }
  TrainConfig train = desk::train_config();
  if (const json* t = root.find("train")) read_train(*t, "/train", train);
  ProbeConfig probe = desk::probe_config();
  if (const json* p = root.find("probe")) read_probe(*p, "/probe", probe);
  DistillSpec dspec = desk::distill_spec();
  dspec.student_arch = arch;
  TrainConfig dtrain = desk::distill_config();
  if (const json* d = root.find("distill")) read_distill(*d, "/distill", dspec, dtrain);

  auto only_for = [&](const char* key, Pipeline p) {
    const json* v = root.find(key);
    if (v && cfg.pipeline != p) throw ConfigError(std::string("/") + key, "block does not apply to pipeline " + pipeline);
    return v;
  };

  {
    TransferConfig& t = cfg.transfer;
    t.task = task;
    t.arch = arch;
    t.train = train;
    t.probe = probe;
    t.distill_spec = dspec;
    t.distill_train = dtrain;
    if (const json* v = only_for("transfer", Pipeline::transfer)) {
      Obj o(*v, "/transfer");
      o.get("n_episodes", t.n_episodes);
      o.get("n_groups", t.n_groups);
      o.get("probe_holdout", t.probe_holdout);
      o.get("distill", t.distill);
      o.get("joint", t.joint);
      o.get("joint_legs", t.joint_legs);
      o.get("finetune", t.finetune);
      o.get("finetune_holdout", t.finetune_holdout);
      o.get("wd_ablation", t.wd_ablation);
      o.get("save_banks", cfg.save_banks);
      if (const json* f = o.find("finetune_train")) read_train(*f, "/transfer/finetune_train", t.finetune_train);
      if (const json* s = o.find("stage2")) {
        Obj so(*s, "/transfer/stage2");
        so.get("epochs", t.stage2.epochs);
        so.get("lr", t.stage2.lr);
        so.get("momentum", t.stage2.momentum);
        so.get("batch_size", t.stage2.batch_size);
        so.finish();
      }
      o.finish();
    }
  }
  {
    FewshotConfig& f = cfg.fewshot;
    f.task = task;
    f.arch = arch;
    f.train = train;
    f.distill_spec = dspec;
    f.distill_train = dtrain;
    if (const json* v = only_for("fewshot", Pipeline::fewshot)) {
      Obj o(*v, "/fewshot");
      o.get("base_classes", f.base_classes);
      o.get("novel_classes", f.novel_classes);
      o.get("n_groups", f.n_groups);
      o.get("methods", f.methods);
      o.get("n_way", f.episode.n_way);
      o.get("k_shot", f.episode.k_shot);
      o.get("n_query", f.episode.n_query);
      o.get("n_eval", f.n_eval);
      if (const json* c = o.find("classifier")) {
        f.classifier.kind = parse_enum<EpisodeClassifier>(
            Obj::convert<std::string>(*c, "/fewshot/classifier"), "/fewshot/classifier",
            {{"linear", EpisodeClassifier::linear}, {"cosine", EpisodeClassifier::cosine}});
      }
      if (const json* p = o.find("episode_probe")) read_probe(*p, "/fewshot/episode_probe", f.classifier.probe);
      if (const json* c = o.find("cosine_train")) read_train(*c, "/fewshot/cosine_train", f.classifier.cosine);
      o.get("snapshot_lr_multiplier", f.snapshot_lr_multiplier);
      o.get("snapshot_epochs", f.snapshot_epochs);
      o.get("n_snapshots", f.n_snapshots);
      o.finish();
    }
  }
  {
    OodPipelineConfig& c = cfg.ood;
    c.setup.arch = arch;
    c.setup.train = train;
    c.bank_train = train;
    c.distill_spec = dspec;
    c.distill_train = dtrain;
    if (cfg.pipeline == Pipeline::ood) {
      if (!std::holds_alternative<ShiftSpec>(task)) {
        throw ConfigError("/task/kind", "the ood pipeline needs the shift task (IDX data has no environments)");
      }
      c.task = std::get<ShiftSpec>(task);
    }
    if (const json* v = only_for("ood", Pipeline::ood)) {
      Obj o(*v, "/ood");
      if (const json* a = o.find("algorithms")) {
        c.algorithms.clear();
        const auto names = Obj::convert<std::vector<std::string>>(*a, "/ood/algorithms");
        for (std::size_t i = 0; i < names.size(); ++i) {
          c.algorithms.push_back(parse_enum<OodAlgorithm>(names[i], "/ood/algorithms/" + std::to_string(i),
                                                          {{"erm", OodAlgorithm::erm}, {"vrex", OodAlgorithm::vrex}}));
        }
      }
      if (const json* a = o.find("inits")) {
        c.inits.clear();
        const auto names = Obj::convert<std::vector<std::string>>(*a, "/ood/inits");
        for (std::size_t i = 0; i < names.size(); ++i) {
          c.inits.push_back(parse_enum<OodInit>(
              names[i], "/ood/inits/" + std::to_string(i),
              {{"scratch", OodInit::scratch}, {"cat", OodInit::cat}, {"distill", OodInit::distill}}));
        }
      }
      if (const json* a = o.find("tune_modes")) {
        c.tune_modes.clear();
        const auto names = Obj::convert<std::vector<std::string>>(*a, "/ood/tune_modes");
        for (std::size_t i = 0; i < names.size(); ++i) {
          c.tune_modes.push_back(parse_enum<TuneMode>(names[i], "/ood/tune_modes/" + std::to_string(i),
                                                      {{"iid", TuneMode::iid}, {"ood", TuneMode::ood}}));
        }
      }
      o.get("beta_grid", c.beta_grid);
      o.get("lr_grid", c.setup.lr_grid);
      o.get("wd_grid", c.setup.wd_grid);
      o.get("iid_holdout", c.setup.iid_holdout);
      o.get("tune_fraction", c.tune_fraction);
      o.get("n_episodes", c.n_episodes);
      o.get("n_groups", c.n_groups);
      o.finish();
    }
  }
  if (const json* v = only_for("verify", Pipeline::verify)) {
    Obj o(*v, "/verify");
    if (const json* f = o.find("fault")) {
      cfg.verify.fault = parse_enum<Fault>(Obj::convert<std::string>(*f, "/verify/fault"), "/verify/fault",
                                           {{"none", Fault::none}, {"union_sign_flip", Fault::union_sign_flip}});
    }
    o.finish();
  }
  root.finish();

  // Cross-field checks owned by the pipelines.
  try {
    switch (cfg.pipeline) {
      case Pipeline::transfer: cfg.transfer.validate(); break;
      case Pipeline::fewshot: cfg.fewshot.validate(); break;
      case Pipeline::ood: cfg.ood.validate(); break;
      case Pipeline::verify: break;
    }
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("/") + to_string(cfg.pipeline), e.what());
  }
  return cfg;
}

/// Hash of the config document in canonical form (sorted keys, compact).
inline std::string config_hash(const ExperimentConfig& cfg) { return fnv1a_hex(cfg.document.dump()); }

}  // namespace richrep::cli
