#include <gtest/gtest.h>

#include <sstream>

#include "richrep/cli/app.hpp"
#include "test_util.hpp"

using namespace richrep;
using namespace richrep::cli;
using richrep::testing::TempDir;

namespace {

std::string where_of(std::string_view text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.where();
  }
  return "<accepted>";
}

struct Cli {
  int code = 0;
  std::string out, err;
};

Cli invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "richrep");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string write(const TempDir& dir, const std::string& name, const std::string& text) {
  const auto p = dir.path() / name;
  write_text(p, text);
  return p.string();
}

const char* kSmallTransfer = R"({
  "pipeline": "transfer",
  "master_seed": 3,
  "task": {"kind": "shift", "n_per_env": 80, "n_test": 100},
  "architecture": {"hidden": [12, 6]},
  "train": {"epochs": 2},
  "probe": {"max_iters": 200},
  "transfer": {"n_episodes": 2, "n_groups": 1, "wd_ablation": [0],
               "distill": false, "save_banks": true}
})";

}  // namespace

// Config parsing

TEST(Config, MinimalVerifyConfig) {
  const ExperimentConfig c = parse_config(R"({"pipeline": "verify"})");
  EXPECT_EQ(c.pipeline, Pipeline::verify);
  EXPECT_EQ(c.master_seed, 0u);
}

TEST(Config, OverridesReachPipelineStructs) {
  const ExperimentConfig c = parse_config(kSmallTransfer);
  EXPECT_EQ(c.pipeline, Pipeline::transfer);
  EXPECT_EQ(c.master_seed, 3u);
  EXPECT_EQ(c.transfer.n_episodes, 2);
  EXPECT_EQ(c.transfer.train.epochs, 2);
  EXPECT_EQ(c.transfer.arch.hidden, (std::vector<Index>{12, 6}));
  EXPECT_EQ(c.transfer.probe.max_iters, 200);
  EXPECT_FALSE(c.transfer.distill);
  EXPECT_EQ(std::get<ShiftSpec>(c.transfer.task).n_per_env, 80);
  EXPECT_TRUE(c.save_banks);
}

TEST(Config, UnknownKeysNameTheirPath) {
  EXPECT_EQ(where_of(R"({"pipeline": "verify", "colour": 1})"), "/colour");
  EXPECT_EQ(where_of(R"({"pipeline": "transfer", "train": {"lr": 0.1, "lrr": 2}})"), "/train/lrr");
  EXPECT_EQ(where_of(R"({"pipeline": "transfer", "transfer": {"stage2": {"epoch": 1}}})"), "/transfer/stage2/epoch");
}

TEST(Config, MalformedJsonReportsLineAndColumn) {
  const std::string w = where_of("{\n  \"pipeline\": \"verify\",\n  oops\n}");
  EXPECT_EQ(w.rfind("line 3, column", 0), 0u) << w;
}

TEST(Config, TypeAndValueErrors) {
  EXPECT_EQ(where_of(R"({"pipeline": "transfer", "train": {"epochs": "ten"}})"), "/train/epochs");
  EXPECT_EQ(where_of(R"({"pipeline": "transfer", "train": {"epochs": 2.5}})"), "/train/epochs");
  EXPECT_EQ(where_of(R"({"pipeline": "boosting"})"), "/pipeline");
  EXPECT_EQ(where_of(R"({"master_seed": 1})"), "/pipeline");
  EXPECT_EQ(where_of(R"({"pipeline": "verify", "master_seed": -1})"), "/master_seed");
  EXPECT_EQ(where_of("[1, 2]"), "/");
}

TEST(Config, BlockMustMatchPipeline) {
  EXPECT_EQ(where_of(R"({"pipeline": "verify", "fewshot": {}})"), "/fewshot");
  EXPECT_NE(where_of(R"({"pipeline": "transfer", "train": {"lr": -1}})"), "<accepted>");
}

TEST(Config, HashFollowsContent) {
  const auto a = parse_config(R"({"pipeline": "verify"})");
  const auto b = parse_config(R"({ "pipeline" : "verify" })");
  const auto c = parse_config(R"({"pipeline": "verify", "master_seed": 1})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Config, ShippedConfigsParse) {
  const std::filesystem::path dir = std::filesystem::path(RICHREP_SOURCE_DIR) / "configs";
  int n = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    EXPECT_NO_THROW(parse_config(read_text(entry.path()), dir)) << entry.path();
    ++n;
  }
  EXPECT_GE(n, 4);
}

// Exit codes

TEST(CliExit, VerifyPassesAndFaultFails) {
  const Cli ok = invoke({"verify"});
  EXPECT_EQ(ok.code, exit_code::ok) << ok.err;
  EXPECT_NE(ok.out.find("PASS proposition1"), std::string::npos);
  const Cli bad = invoke({"verify", "--inject-fault", "union_sign_flip"});
  EXPECT_EQ(bad.code, exit_code::verify_failed);
  EXPECT_NE(bad.out.find("FAIL proposition1"), std::string::npos);
  EXPECT_NE(bad.err.find("proposition1"), std::string::npos);
}

TEST(CliExit, UsageErrorsAreTwo) {
  EXPECT_EQ(invoke({}).code, exit_code::config_error);
  EXPECT_EQ(invoke({"frobnicate"}).code, exit_code::config_error);
  EXPECT_EQ(invoke({"run"}).code, exit_code::config_error);
  EXPECT_EQ(invoke({"verify", "--jobs", "0"}).code, exit_code::config_error);
  EXPECT_EQ(invoke({"verify", "--inject-fault", "gremlins"}).code, exit_code::config_error);
}

TEST(CliExit, BadConfigFilesAreTwo) {
  TempDir dir("cli-bad");
  const Cli missing = invoke({"run", (dir.path() / "absent.json").string()});
  EXPECT_EQ(missing.code, exit_code::config_error);
  const Cli unknown = invoke({"run", write(dir, "u.json", R"({"pipeline": "verify", "extra": true})")});
  EXPECT_EQ(unknown.code, exit_code::config_error);
  EXPECT_NE(unknown.err.find("/extra"), std::string::npos) << unknown.err;
  const Cli syntax = invoke({"run", write(dir, "s.json", "{\"pipeline\": }")});
  EXPECT_EQ(syntax.code, exit_code::config_error);
  EXPECT_NE(syntax.err.find("line 1, column"), std::string::npos) << syntax.err;
}

TEST(CliExit, RuntimeFailureIsThree) {
  TempDir dir("cli-rt");
  // The output directory path is an existing regular file.
  const std::string blocker = write(dir, "blocker", "x");
  const std::string cfg = write(dir, "v.json", R"({"pipeline": "verify"})");
  EXPECT_EQ(invoke({"run", cfg, "--out", blocker}).code, exit_code::runtime_error);
  EXPECT_EQ(invoke({"report", (dir.path() / "none.csv").string()}).code, exit_code::runtime_error);
}

// run

TEST(CliRun, VerifyConfigWritesResultsAndManifest) {
  TempDir dir("cli-run");
  const std::string cfg = write(dir, "v.json", R"({"pipeline": "verify", "master_seed": 4})");
  const auto out = dir.path() / "out";
  const Cli r = invoke({"run", cfg, "--out", out.string()});
  ASSERT_EQ(r.code, exit_code::ok) << r.err;
  std::istringstream csv(read_text(out / "results.csv"));
  const auto records = read_csv(csv);
  EXPECT_EQ(records.size(), 12u);
  EXPECT_EQ(records[0].seed, 4u);
  const auto manifest = nlohmann::json::parse(read_text(out / "manifest.json"));
  EXPECT_EQ(manifest["pipeline"], "verify");
  EXPECT_EQ(manifest["master_seed"], 4);
  EXPECT_EQ(manifest["records"], 12);
  EXPECT_EQ(manifest["config_hash"].get<std::string>().size(), 16u);
}

TEST(CliRun, SeedFlagOverridesConfig) {
  TempDir dir("cli-seed");
  const std::string cfg = write(dir, "v.json", R"({"pipeline": "verify", "master_seed": 4})");
  ASSERT_EQ(invoke({"run", cfg, "--out", (dir.path() / "o").string(), "--seed", "9"}).code, 0);
  std::istringstream csv(read_text(dir.path() / "o" / "results.csv"));
  EXPECT_EQ(read_csv(csv)[0].seed, 9u);
}

TEST(CliRun, TransferRerunIsByteIdenticalAndSavesBanks) {
  TempDir dir("cli-transfer");
  const std::string cfg = write(dir, "t.json", kSmallTransfer);
  const auto a = dir.path() / "a", b = dir.path() / "b";
  ASSERT_EQ(invoke({"run", cfg, "--out", a.string()}).code, 0);
  ASSERT_EQ(invoke({"run", cfg, "--out", b.string(), "--jobs", "2"}).code, 0);
  EXPECT_EQ(read_text(a / "results.csv"), read_text(b / "results.csv"));
  const LoadedBank bank = load_bank(a / "banks" / "g0");
  EXPECT_EQ(bank.bank.size(), 2u);
  const auto manifest = nlohmann::json::parse(read_text(a / "manifest.json"));
  EXPECT_EQ(bank.config_hash, manifest["config_hash"].get<std::string>());
}

// report

TEST(CliReport, EmptyCsvGivesHeaderOnlyTable) {
  TempDir dir("rep-empty");
  const std::string csv = write(dir, "r.csv", to_csv({}));
  const Cli r = invoke({"report", csv});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("# Results\n\n| ", 0), 0u) << r.out;
  EXPECT_EQ(r.out.find("## Task"), std::string::npos);
  EXPECT_NE(r.out.find("id_train"), std::string::npos);
}

TEST(CliReport, FiveSeedsGiveMeanAndSampleStd) {
  std::vector<RunRecord> rs;
  const double xs[] = {0.1, 0.2, 0.3, 0.4, 0.5};
  for (int g = 0; g < 5; ++g) {
    rs.push_back(make_record("transfer-g" + std::to_string(g), 1000 * (g + 1), "cat5", "shift", Split::ood_test,
                             "probe_acc", xs[g]));
  }
  rs.push_back(make_record("transfer-g0", 1000, "erm", "shift", Split::ood_test, "probe_acc", 0.25));
  std::ostringstream out;
  render_report(out, rs, ReportKind::table);
  const std::string text = out.str();
  EXPECT_NE(text.find("| transfer | cat5 | probe_acc |"), std::string::npos) << text;
  EXPECT_NE(text.find("0.3000 ± 0.1581"), std::string::npos) << text;
  EXPECT_NE(text.find("0.2500 (n=1)"), std::string::npos) << text;
  EXPECT_LT(text.find("| cat5 |"), text.find("| erm |"));
}

TEST(CliReport, TasksInNameOrderAndSummaryKind) {
  const std::vector<RunRecord> rs{make_record("a", 0, "m", "zeta", Split::id_test, "acc", 0.5),
                                  make_record("a", 0, "m", "alpha", Split::id_test, "acc", 0.75)};
  std::ostringstream table, summary;
  render_report(table, rs, ReportKind::table);
  EXPECT_LT(table.str().find("## Task: alpha"), table.str().find("## Task: zeta"));
  render_report(summary, rs, ReportKind::summary);
  EXPECT_NE(summary.str().find("| a | m | acc | id_test | 1 | 0.7500 | n/a | 0.7500 | 0.7500 |"), std::string::npos)
      << summary.str();
}

TEST(CliReport, BadHeaderIsTwo) {
  TempDir dir("rep-bad");
  const Cli r = invoke({"report", write(dir, "r.csv", "run,seed\n")});
  EXPECT_EQ(r.code, exit_code::config_error);
  EXPECT_NE(r.err.find("header"), std::string::npos);
  EXPECT_EQ(invoke({"report", write(dir, "q.csv", to_csv({}) + "a,1,m,t,nosplit,acc,1,\n")}).code,
            exit_code::config_error);
}

TEST(CliReport, RunVariantStripsGroupMarker) {
  EXPECT_EQ(run_variant("transfer-g3"), "transfer");
  EXPECT_EQ(run_variant("transfer-g12-wd0.02"), "transfer-wd0.02");
  EXPECT_EQ(run_variant("ood-g0-vrex-ood"), "ood-vrex-ood");
  EXPECT_EQ(run_variant("verify"), "verify");
}
