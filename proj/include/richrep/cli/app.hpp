#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "richrep/cli/config.hpp"
#include "richrep/cli/report.hpp"
#include "richrep/experiments/bank_io.hpp"

#ifndef RICHREP_VERSION
#define RICHREP_VERSION "v0.1.0"
#endif

namespace richrep::cli {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int verify_failed = 1;
inline constexpr int config_error = 2;
inline constexpr int runtime_error = 3;
}  // namespace exit_code

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError(p.string(), "cannot open file");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + p.string());
}

inline void print_suites(std::ostream& out, const std::vector<SuiteResult>& results) {
  for (const auto& s : results) {
    out << (s.passed ? "PASS " : "FAIL ") << s.name << " worst=" << format_value(s.worst)
        << " tolerance=" << format_value(s.tolerance) << " instances=" << s.instances;
    if (!s.detail.empty()) out << " (" << s.detail << ")";
    out << '\n';
  }
}

/// Exit status for a verify run; failures are named on `err`.
inline int verify_status(const std::vector<SuiteResult>& results, std::ostream& err) {
  std::string failed;
  for (const auto& s : results) {
    if (!s.passed) failed += (failed.empty() ? "" : ", ") + s.name;
  }
  if (failed.empty()) return exit_code::ok;
  err << "verify failed: " << failed << '\n';
  return exit_code::verify_failed;
}

struct RunOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t jobs = 1;
};

inline std::string manifest_json(const ExperimentConfig& cfg, const std::vector<RunRecord>& records) {
  nlohmann::ordered_json m;
  m["pipeline"] = to_string(cfg.pipeline);
  m["config_hash"] = config_hash(cfg);
  m["version"] = RICHREP_VERSION;
  m["master_seed"] = cfg.master_seed;
  std::vector<std::uint64_t> seeds;
  for (const auto& r : records) {
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  }
  m["seeds"] = seeds;
  m["records"] = records.size();
  return m.dump(2) + "\n";
}

inline int cmd_run(const RunOptions& opt, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  try {
    const std::filesystem::path path(opt.config);
    cfg = parse_config(read_text(path), path.parent_path().empty() ? "." : path.parent_path());
  } catch (const ConfigError& e) {
    err << "config error: " << opt.config << ": " << e.what() << '\n';
    return exit_code::config_error;
  }
  if (opt.seed) cfg.master_seed = *opt.seed;
  if (opt.out) cfg.output_dir = *opt.out;

  std::vector<RunRecord> records;
  int status = exit_code::ok;
  try {
    std::filesystem::create_directories(cfg.output_dir);
    switch (cfg.pipeline) {
      case Pipeline::transfer: {
        std::function<void(int, const RepresentationBank&)> keep;
        if (cfg.save_banks) {
          const std::string hash = config_hash(cfg);
          keep = [&cfg, hash](int g, const RepresentationBank& bank) {
            save_bank(cfg.output_dir / "banks" / ("g" + std::to_string(g)), bank, hash);
          };
        }
        records = run_transfer(cfg.transfer, cfg.master_seed, opt.jobs, keep);
        break;
      }
      case Pipeline::fewshot: records = run_fewshot(cfg.fewshot, cfg.master_seed, opt.jobs); break;
      case Pipeline::ood: records = run_ood_pipeline(cfg.ood, cfg.master_seed, opt.jobs); break;
      case Pipeline::verify: {
        VerifyOptions v = cfg.verify;
        v.seed = cfg.master_seed;
        const auto results = run_verify(v);
        print_suites(out, results);
        records = verify_records(results, v.seed);
        status = verify_status(results, err);
        break;
      }
    }
    write_text(cfg.output_dir / "results.csv", to_csv(records));
    write_text(cfg.output_dir / "manifest.json", manifest_json(cfg, records));
  } catch (const ParameterError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_code::config_error;
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << '\n';
    return exit_code::runtime_error;
  }
  out << "wrote " << records.size() << " records to " << (cfg.output_dir / "results.csv").string() << '\n';
  return status;
}

inline int cmd_report(const std::vector<std::string>& csvs, ReportKind kind, std::ostream& out, std::ostream& err) {
  std::vector<RunRecord> records;
  for (const auto& path : csvs) {
    try {
      std::ifstream in(path, std::ios::binary);
      if (!in) {
        err << "runtime failure: cannot open " << path << '\n';
        return exit_code::runtime_error;
      }
      auto part = read_csv(in);
      records.insert(records.end(), part.begin(), part.end());
    } catch (const DataError& e) {
      err << "input error: " << path << ": " << e.what() << '\n';
      return exit_code::config_error;
    }
  }
  try {
    render_report(out, records, kind);
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << '\n';
    return exit_code::runtime_error;
  }
  return exit_code::ok;
}

inline int cmd_verify(const VerifyOptions& options, const std::optional<std::string>& out_dir, std::ostream& out,
                      std::ostream& err) {
  try {
    const auto results = run_verify(options);
    print_suites(out, results);
    if (out_dir) {
      std::filesystem::create_directories(*out_dir);
      write_text(std::filesystem::path(*out_dir) / "results.csv", to_csv(verify_records(results, options.seed)));
    }
    return verify_status(results, err);
  } catch (const std::exception& e) {
    err << "runtime failure: " << e.what() << '\n';
    return exit_code::runtime_error;
  }
}

/// Entry point shared by the executable and the tests.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Rich-representation experiments: run configs, verify probing properties, render reports"};
  app.set_version_flag("--version", std::string(RICHREP_VERSION));
  app.require_subcommand(1);

  RunOptions run;
  std::uint64_t seed_value = 0;
  std::string out_value;
  auto* run_cmd = app.add_subcommand("run", "Run the pipeline named in a JSON config");
  run_cmd->add_option("config", run.config, "Experiment config (JSON)")->required();
  auto* seed_opt = run_cmd->add_option("--seed", seed_value, "Override master_seed");
  auto* out_opt = run_cmd->add_option("--out", out_value, "Override output_dir");
  run_cmd->add_option("--jobs", run.jobs, "Parallel training episodes")->check(CLI::PositiveNumber);

  std::vector<std::string> csvs;
  std::string kind = "table";
  auto* report_cmd = app.add_subcommand("report", "Render results CSV files as markdown");
  report_cmd->add_option("csv", csvs, "results.csv files")->required();
  report_cmd->add_option("--kind", kind, "table or summary")->check(CLI::IsMember({"table", "summary"}));

  VerifyOptions verify;
  std::string fault = "none";
  std::string verify_out;
  std::size_t verify_jobs = 1;
  auto* verify_cmd = app.add_subcommand("verify", "Run the probing property suites");
  verify_cmd->add_option("--seed", verify.seed, "Seed for random instances");
  auto* verify_out_opt = verify_cmd->add_option("--out", verify_out, "Write results.csv into this directory");
  verify_cmd->add_option("--jobs", verify_jobs, "Accepted for symmetry; suites run serially")
      ->check(CLI::PositiveNumber);
  verify_cmd->add_option("--inject-fault", fault, "Deliberate fault for self-testing")
      ->check(CLI::IsMember({"none", "union_sign_flip"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_code::ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_code::ok;
  } catch (const CLI::CallForVersion&) {
    out << RICHREP_VERSION << '\n';
    return exit_code::ok;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << '\n';
    return exit_code::config_error;
  }

  if (*run_cmd) {
    if (*seed_opt) run.seed = seed_value;
    if (*out_opt) run.out = out_value;
    return cmd_run(run, out, err);
  }
  if (*report_cmd) return cmd_report(csvs, kind == "table" ? ReportKind::table : ReportKind::summary, out, err);
  verify.fault = fault == "union_sign_flip" ? Fault::union_sign_flip : Fault::none;
  return cmd_verify(verify, *verify_out_opt ? std::optional<std::string>(verify_out) : std::nullopt, out, err);
}

}  // namespace richrep::cli
