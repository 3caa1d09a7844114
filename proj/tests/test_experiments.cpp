#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "richrep/experiments/fewshot.hpp"
#include "richrep/experiments/ood.hpp"
#include "richrep/experiments/records.hpp"
#include "richrep/experiments/transfer.hpp"
#include "richrep/experiments/verify.hpp"
#include "test_util.hpp"

using namespace richrep;

namespace {

std::vector<RunRecord> read_string(const std::string& s) {
  std::istringstream in(s);
  return read_csv(in);
}

ShiftSpec small_shift(int classes = 5) {
  ShiftSpec s = desk::shift_spec();
  s.n_classes = classes;
  s.d_core = classes;
  s.d_spur = classes;
  s.n_per_env = 120;
  s.n_test = 150;
  return s;
}

TrainConfig small_train(int epochs = 3) {
  TrainConfig c = desk::train_config();
  c.epochs = epochs;
  return c;
}

TransferConfig small_transfer(int episodes) {
  TransferConfig c;
  c.task = small_shift();
  c.arch = Architecture{{16, 8}};
  c.train = small_train();
  c.n_episodes = episodes;
  c.n_groups = 1;
  c.joint_legs = 1;
  c.distill_spec.student_arch = c.arch;
  c.distill_train = small_train(2);
  c.finetune_train = small_train(2);
  c.probe.max_iters = 300;
  return c;
}

}  // namespace

// CSV records

TEST(Csv, RoundTripKeepsEveryField) {
  const std::vector<RunRecord> rs{
      make_record("a", 3, "cat2", "shift", Split::ood_test, "probe_acc", 0.8125, {{"k", "v"}, {"wd", "0.02"}}),
      make_record("b,quoted \"x\"", 18446744073709551615ULL, "erm", "idx", Split::fewshot, "acc_std", -1.5e-7)};
  const std::string text = to_csv(rs);
  EXPECT_EQ(text.substr(0, text.find('\n')), "run_id,seed,method,task,split,metric,value,extra");
  const auto back = read_string(text);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].extra, rs[0].extra);
  EXPECT_EQ(back[0].value, 0.8125);
  EXPECT_EQ(back[1].run_id, rs[1].run_id);
  EXPECT_EQ(back[1].seed, rs[1].seed);
  EXPECT_EQ(back[1].split, Split::fewshot);
  EXPECT_DOUBLE_EQ(back[1].value, -1.5e-7);
  EXPECT_EQ(to_csv(back), text);
}

TEST(Csv, EmptyHasOnlyHeader) {
  EXPECT_EQ(to_csv({}), "run_id,seed,method,task,split,metric,value,extra\n");
  EXPECT_TRUE(read_string(to_csv({})).empty());
}

TEST(Csv, HeaderMustMatchExactly) {
  EXPECT_THROW(read_string(""), HeaderError);
  EXPECT_THROW(read_string("run_id,seed,method,task,split,metric,value\n"), HeaderError);
  EXPECT_THROW(read_string("run_id,seed,method,task,split,metric,value,extra \n"), HeaderError);
  EXPECT_THROW(read_string("seed,run_id,method,task,split,metric,value,extra\n"), HeaderError);
}

TEST(Csv, MalformedRowsAreDataErrors) {
  const std::string h = "run_id,seed,method,task,split,metric,value,extra\n";
  EXPECT_THROW(read_string(h + "a,1,m,t,id_test,acc,0.5\n"), DataError);
  EXPECT_THROW(read_string(h + "a,x,m,t,id_test,acc,0.5,\n"), DataError);
  EXPECT_THROW(read_string(h + "a,1,m,t,train,acc,0.5,\n"), DataError);
  EXPECT_THROW(read_string(h + "a,1,m,t,id_test,acc,0.5x,\n"), DataError);
  EXPECT_THROW(read_string(h + "\"a,1,m,t,id_test,acc,0.5,\n"), DataError);
  EXPECT_THROW(read_string(h + "a,1,m,t,id_test,acc,0.5,novalue\n"), DataError);
}

TEST(Csv, WriterRejectsDuplicatesAndNonFinite) {
  const RunRecord r = make_record("a", 1, "m", "t", Split::id_test, "acc", 0.5);
  EXPECT_THROW(to_csv({r, r}), DataError);
  RunRecord other = r;
  other.split = Split::ood_test;
  EXPECT_NO_THROW(to_csv({r, other}));
  RunRecord bad = r;
  bad.value = std::nan("");
  EXPECT_THROW(to_csv({bad}), DataError);
}

TEST(Csv, FindRecord) {
  const std::vector<RunRecord> rs{make_record("a", 1, "m", "t", Split::id_test, "acc", 0.5)};
  EXPECT_EQ(find_record(rs, "a", "m", Split::id_test, "acc").value, 0.5);
  EXPECT_THROW(find_record(rs, "a", "m", Split::ood_test, "acc"), DataError);
}

// vREx

TEST(Vrex, WorkedExamples) {
  const double same[] = {0.7, 0.7, 0.7};
  for (double beta : {0.0, 1.0, 100.0}) EXPECT_DOUBLE_EQ(vrex_objective(same, beta), 0.7);
  const double a[] = {0.2, 0.8};
  EXPECT_DOUBLE_EQ(vrex_objective(a, 0.0), 0.5);
  const double b[] = {0.0, 2.0};
  EXPECT_DOUBLE_EQ(vrex_objective(b, 1.0), 2.0);
  EXPECT_THROW(vrex_objective(std::span<const double>{}, 1.0), ParameterError);
}

TEST(Vrex, EnvRiskGradientMatchesFiniteDifferences) {
  const Matrix logits = richrep::testing::random_matrix(8, 3, 5);
  const Labels y{0, 1, 2, 0, 1, 2, 0, 1};
  const std::vector<int> env{0, 0, 0, 1, 1, 2, 2, 2};
  const double beta = 3.0, h = 1e-6;
  const LossGrad lg = env_risk_loss(logits, y, env, beta);
  for (Index i = 0; i < logits.rows(); ++i) {
    for (Index j = 0; j < logits.cols(); ++j) {
      Matrix p = logits, m = logits;
      p(i, j) += h;
      m(i, j) -= h;
      const double fd = (env_risk_loss(p, y, env, beta).loss - env_risk_loss(m, y, env, beta).loss) / (2 * h);
      EXPECT_NEAR(lg.grad(i, j), fd, 1e-7);
    }
  }
}

TEST(Vrex, BetaZeroIsEnvironmentAverage) {
  const Matrix logits = richrep::testing::random_matrix(4, 2, 6);
  const Labels y{0, 1, 1, 0};
  const std::vector<int> env{0, 1, 1, 1};
  const RowLosses rows = cross_entropy_rows(logits, y);
  const double expect = 0.5 * (rows.loss(0) + (rows.loss(1) + rows.loss(2) + rows.loss(3)) / 3.0);
  EXPECT_NEAR(env_risk_loss(logits, y, env, 0.0).loss, expect, 1e-15);
}

// Hyper-parameter selection

namespace {

RunRecord grid_record(Split split, double beta, double value) {
  const std::string id = ood_config_id(beta, 0.05, 0.0);
  return make_record("ood-" + id, 0, "erm", "shift", split, "acc", value,
                     {{"config", id}, {"beta", number_tag(beta)}, {"lr", "0.05"}, {"wd", "0"}});
}

}  // namespace

TEST(SelectHyperparams, SingleCandidate) {
  const std::vector<RunRecord> rs{grid_record(Split::ood_tune, 5.0, 0.1)};
  EXPECT_EQ(select_hyperparams(rs, TuneMode::ood), ood_config_id(5.0, 0.05, 0.0));
}

TEST(SelectHyperparams, PicksBestTuneAccuracy) {
  const std::vector<RunRecord> rs{grid_record(Split::ood_tune, 1.0, 0.7), grid_record(Split::ood_tune, 10.0, 0.9)};
  EXPECT_EQ(select_hyperparams(rs, TuneMode::ood), ood_config_id(10.0, 0.05, 0.0));
}

TEST(SelectHyperparams, TieGoesToSmallerBeta) {
  const std::vector<RunRecord> rs{grid_record(Split::ood_tune, 10.0, 0.8), grid_record(Split::ood_tune, 0.5, 0.8)};
  EXPECT_EQ(select_hyperparams(rs, TuneMode::ood), ood_config_id(0.5, 0.05, 0.0));
}

TEST(SelectHyperparams, IgnoresTestSplitAndUsesModeSplit) {
  const std::vector<RunRecord> rs{grid_record(Split::ood_tune, 1.0, 0.6), grid_record(Split::ood_test, 10.0, 0.99),
                                  grid_record(Split::ood_tune, 10.0, 0.5), grid_record(Split::id_test, 10.0, 0.9),
                                  grid_record(Split::id_test, 1.0, 0.8)};
  EXPECT_EQ(select_hyperparams(rs, TuneMode::ood), ood_config_id(1.0, 0.05, 0.0));
  EXPECT_EQ(select_hyperparams(rs, TuneMode::iid), ood_config_id(10.0, 0.05, 0.0));
  const std::vector<RunRecord> only_test{grid_record(Split::ood_test, 1.0, 0.9)};
  EXPECT_THROW(select_hyperparams(only_test, TuneMode::ood), DataError);
}

// Few-shot

TEST(MeanStd, SampleStandardDeviation) {
  const double xs[] = {1.0, 2.0, 3.0, 4.0};
  const MeanStd ms = mean_std(xs);
  EXPECT_DOUBLE_EQ(ms.mean, 2.5);
  EXPECT_NEAR(ms.std, std::sqrt(5.0 / 3.0), 1e-15);
  const double one[] = {1.0};
  EXPECT_THROW(mean_std(one), DataError);
}

TEST(Fewshot, OneHotFeaturesGivePerfectAccuracy) {
  const int n_way = 4;
  Dataset novel{Matrix::Zero(40, n_way), Labels(40), Labels(40, 0), n_way};
  for (Index i = 0; i < 40; ++i) novel.y[i] = static_cast<int>(i % n_way);
  Matrix onehot = Matrix::Zero(40, n_way);
  for (Index i = 0; i < 40; ++i) onehot(i, novel.y[i]) = 1.0;
  const std::vector<FewshotMethod> methods{{"oracle", onehot}};
  for (auto kind : {EpisodeClassifier::linear, EpisodeClassifier::cosine}) {
    EpisodeClassifierConfig cfg;
    cfg.kind = kind;
    const auto acc = evaluate_episodes(methods, novel, EpisodeSpec{n_way, 1, 5}, 10, cfg, 3);
    for (double a : acc[0]) EXPECT_EQ(a, 1.0);
  }
}

TEST(Fewshot, MethodNamesAreValidated) {
  FewshotConfig c;
  EXPECT_NO_THROW(c.validate());
  c.methods = {"cat0"};
  EXPECT_THROW(c.validate(), ParameterError);
  c.methods = {"cat3-s"};
  EXPECT_THROW(c.validate(), ParameterError);
  c.methods = {"snap6"};
  EXPECT_THROW(c.validate(), ParameterError);
  c.methods = {"boost"};
  EXPECT_THROW(c.validate(), ParameterError);
}

TEST(Fewshot, SmallPipelineEmitsMeanAndStdPerMethod) {
  FewshotConfig c;
  c.task = small_shift(6);
  c.base_classes = {0, 1, 2};
  c.novel_classes = {3, 4, 5};
  c.arch = Architecture{{16, 8}};
  c.train = small_train(2);
  c.n_groups = 1;
  c.methods = {"erm", "cat2", "distill2", "cat2-s", "snap2"};
  c.n_snapshots = 2;
  c.snapshot_epochs = 4;
  c.episode = EpisodeSpec{3, 2, 4};
  c.n_eval = 4;
  c.distill_spec.student_arch = c.arch;
  c.distill_train = small_train(2);
  const auto rs = run_fewshot(c, 0);
  ASSERT_EQ(rs.size(), 10u);
  for (const auto& r : rs) {
    EXPECT_EQ(r.split, Split::fewshot);
    EXPECT_GE(r.value, 0.0);
    EXPECT_LE(r.value, 1.0);
  }
  EXPECT_EQ(to_csv(rs), to_csv(run_fewshot(c, 0, 2)));
}

// Transfer

TEST(Transfer, SingleEpisodeCatEqualsErm) {
  const auto rs = run_transfer(small_transfer(1), 0);
  for (Split s : {Split::id_test, Split::ood_test}) {
    EXPECT_EQ(find_record(rs, "transfer-g0", "cat1", s, "probe_acc").value,
              find_record(rs, "transfer-g0", "erm", s, "probe_acc").value);
  }
  // One leg: two-stage fine-tuning without a stage-2 pass is the leg itself.
  EXPECT_GE(find_record(rs, "transfer-g0", "2ft", Split::ood_test, "ft_acc").value, 0.0);
}

TEST(Transfer, RerunsAndJobCountsGiveIdenticalBytes) {
  TransferConfig c = small_transfer(2);
  c.joint_legs = 2;
  c.wd_ablation = {0.0};
  const std::string a = to_csv(run_transfer(c, 7, 1));
  EXPECT_EQ(a, to_csv(run_transfer(c, 7, 1)));
  EXPECT_EQ(a, to_csv(run_transfer(c, 7, 3)));
  EXPECT_NE(a, to_csv(run_transfer(c, 8, 1)));
}

TEST(Transfer, EmitsExpectedMethods) {
  TransferConfig c = small_transfer(2);
  c.joint_legs = 2;
  const auto rs = run_transfer(c, 0);
  for (const char* m : {"erm", "cat1", "cat2", "distill2", "joint2", "catsub"}) {
    EXPECT_NO_THROW(find_record(rs, "transfer-g0", m, Split::ood_test, "probe_acc")) << m;
  }
  EXPECT_NO_THROW(find_record(rs, "transfer-g0", "joint2", Split::id_train, "leg_gap"));
  EXPECT_NO_THROW(find_record(rs, "transfer-g0-wd0", "erm", Split::ood_test, "probe_acc"));
  EXPECT_NO_THROW(find_record(rs, "transfer-g0-wd0.02", "erm", Split::ood_test, "probe_acc"));
  EXPECT_NO_THROW(find_record(rs, "transfer-g0", "init-ft", Split::ood_test, "ft_acc"));
}

TEST(Transfer, Validation) {
  TransferConfig c = small_transfer(1);
  c.joint_legs = 2;
  EXPECT_THROW(run_transfer(c, 0), ParameterError);
  c = small_transfer(1);
  c.probe_holdout = 1.0;
  EXPECT_THROW(run_transfer(c, 0), ParameterError);
}

TEST(Seeds, GroupsAndEpisodesDoNotOverlap) {
  EXPECT_EQ(group_seed(0, 0), 1000u);
  EXPECT_EQ(group_seed(5, 2), 3005u);
  EXPECT_EQ(episode_seed(1000, 4), 1400u);
}

// OOD pipeline

TEST(Ood, SmallPipelineSelectsFromGrid) {
  OodPipelineConfig c;
  c.task = small_shift();
  c.setup.arch = Architecture{{16, 8}};
  c.setup.train = small_train(2);
  c.setup.wd_grid = {0.0};
  c.beta_grid = {1.0, 10.0};
  c.n_episodes = 1;
  c.n_groups = 1;
  c.bank_train = small_train(2);
  c.distill_spec.student_arch = c.setup.arch;
  c.distill_train = small_train(2);
  const auto rs = run_ood_pipeline(c, 0);
  // Grid: 3 inits x (1 erm + 2 vrex points) x 3 splits, plus 3 x 2 x 2 selections.
  EXPECT_EQ(rs.size(), 3u * 3u * 3u + 12u);
  const RunRecord& chosen = find_record(rs, "ood-g0-vrex-ood", "cat1", Split::ood_test, "acc");
  EXPECT_EQ(chosen.get("tune"), "ood");
  EXPECT_EQ(to_csv(rs), to_csv(run_ood_pipeline(c, 0, 2)));
}

// Verify suites

TEST(Verify, AllSuitesPass) {
  const auto results = run_verify();
  ASSERT_EQ(results.size(), 6u);
  const char* names[] = {"gradient", "proposition1", "theorem1", "theorem2", "probe_oracle", "exact_algebra"};
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(results[i].name, names[i]);
    EXPECT_TRUE(results[i].passed) << results[i].name << ": " << results[i].detail;
    EXPECT_GT(results[i].instances, 0);
  }
}

TEST(Verify, InjectedFaultFailsOnlyProposition1) {
  const auto results = run_verify({0, Fault::union_sign_flip});
  for (const auto& r : results) EXPECT_EQ(r.passed, r.name != "proposition1") << r.name;
}

TEST(Verify, RecordsAreDeterministic) {
  EXPECT_EQ(to_csv(verify_records(run_verify(), 0)), to_csv(verify_records(run_verify(), 0)));
}
