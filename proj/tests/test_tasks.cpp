#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "richrep/binary_io.hpp"
#include "richrep/probing/probe.hpp"
#include "richrep/tasks/idx.hpp"
#include "richrep/tasks/shift.hpp"
#include "richrep/tasks/split.hpp"
#include "test_util.hpp"

using namespace richrep;

namespace {

ShiftSpec small_spec() {
  ShiftSpec s;
  s.n_classes = 4;
  s.d_core = 4;
  s.d_spur = 4;
  s.d_noise = 3;
  s.env_correlations = {0.9, 0.7};
  s.n_per_env = 400;
  s.n_test = 200;
  return s;
}

int argmax_block(const Dataset& ds, Index row, Index start, int k) {
  Index best = 0;
  ds.x.row(row).segment(start, k).maxCoeff(&best);
  return static_cast<int>(best);
}

}  // namespace

// gen_shift

TEST(GenShift, ShapesAndEnvironmentIds) {
  const ShiftSpec s = small_spec();
  const ShiftData d = gen_shift(s, 1);
  ASSERT_EQ(d.train_envs.size(), 2u);
  for (std::size_t e = 0; e < 2; ++e) {
    EXPECT_EQ(d.train_envs[e].size(), 400u);
    EXPECT_EQ(d.train_envs[e].x.cols(), s.width());
    for (int env : d.train_envs[e].env) EXPECT_EQ(env, static_cast<int>(e));
    d.train_envs[e].validate();
  }
  EXPECT_EQ(d.id_test.size(), 200u);
  for (int env : d.ood_test.env) EXPECT_EQ(env, 2);
}

TEST(GenShift, FullCorrelationAlignsSpuriousIndex) {
  ShiftSpec s = small_spec();
  s.env_correlations = {1.0};
  const ShiftDraw d = gen_shift_with_spurious(s, 2);
  const Dataset& env = d.data.train_envs[0];
  for (std::size_t r = 0; r < env.size(); ++r) {
    EXPECT_EQ(d.train_spurious[0][r], env.y[r]);
  }
}

TEST(GenShift, ChanceCorrelationMatchRateWithinThreeSigma) {
  ShiftSpec s = small_spec();
  s.env_correlations = {1.0 / s.n_classes};
  s.n_per_env = 4000;
  const ShiftDraw d = gen_shift_with_spurious(s, 3);
  int match = 0;
  for (std::size_t r = 0; r < d.data.train_envs[0].size(); ++r) match += d.train_spurious[0][r] == d.data.train_envs[0].y[r];
  const double n = s.n_per_env, p = 1.0 / s.n_classes;
  EXPECT_LE(std::abs(match - n * p), 3.0 * std::sqrt(n * p * (1 - p)));
}

TEST(GenShift, NoiselessCoreBlockIsSeparable) {
  ShiftSpec s = small_spec();
  s.noise_std = 0.0;
  const ShiftData d = gen_shift(s, 4);
  const Dataset& env = d.train_envs[0];
  const Matrix core = env.x.leftCols(s.d_core);
  ProbeConfig cfg;
  cfg.l2 = 0.0;
  cfg.max_iters = 5000;
  Rng rng(0);
  EXPECT_LT(fit_probe(core, env.y, s.n_classes, cfg, rng).cost, 0.01);
  for (std::size_t r = 0; r < env.size(); ++r) EXPECT_EQ(argmax_block(env, static_cast<Index>(r), 0, s.n_classes), env.y[r]);
}

TEST(GenShift, DeterministicGivenSeed) {
  const ShiftData a = gen_shift(small_spec(), 5), b = gen_shift(small_spec(), 5), c = gen_shift(small_spec(), 6);
  EXPECT_EQ(a.ood_test.x, b.ood_test.x);
  EXPECT_NE(a.ood_test.x, c.ood_test.x);
}

TEST(GenShift, InvalidSpecs) {
  ShiftSpec s = small_spec();
  s.env_correlations = {};
  EXPECT_THROW(gen_shift(s, 1), ParameterError);
  s = small_spec();
  s.ood_correlation = 1.5;
  EXPECT_THROW(gen_shift(s, 1), ParameterError);
  s = small_spec();
  s.d_core = 2;
  EXPECT_THROW(gen_shift(s, 1), ParameterError);
}

// IDX

TEST(Idx, HandBuiltBytes) {
  const std::uint8_t pixels[] = {0, 255, 128, 64};
  const std::uint8_t labels[] = {3};
  const Dataset ds = idx_dataset(encode_idx_images(pixels, 1, 2, 2), encode_idx_labels(labels));
  ASSERT_EQ(ds.x.rows(), 1);
  ASSERT_EQ(ds.x.cols(), 4);
  EXPECT_EQ(ds.x(0, 0), 0.0);
  EXPECT_EQ(ds.x(0, 1), 1.0);
  EXPECT_NEAR(ds.x(0, 2), 0.50196078, 1e-8);
  EXPECT_NEAR(ds.x(0, 3), 0.25098039, 1e-8);
  EXPECT_EQ(ds.y[0], 3);
  EXPECT_EQ(ds.n_classes, 4);
}

TEST(Idx, HeaderIsBigEndian) {
  const std::uint8_t pixels[] = {1, 2, 3, 4, 5, 6};
  const std::string bytes = encode_idx_images(pixels, 1, 2, 3);
  const std::string expect_header("\x00\x00\x08\x03\x00\x00\x00\x01\x00\x00\x00\x02\x00\x00\x00\x03", 16);
  EXPECT_EQ(bytes.substr(0, 16), expect_header);
}

TEST(Idx, CountMismatchAndCorruptFiles) {
  const std::uint8_t pixels[] = {0, 1, 2, 3, 4, 5, 6, 7};
  const std::uint8_t one[] = {1};
  const std::string images = encode_idx_images(pixels, 2, 2, 2);
  EXPECT_THROW(idx_dataset(images, encode_idx_labels(one)), DataError);
  EXPECT_THROW(idx_dataset("", encode_idx_labels(one)), FormatError);
  EXPECT_THROW(idx_dataset(images.substr(0, images.size() - 1), encode_idx_labels(one)), TruncationError);
  std::string wrong_magic = images;
  wrong_magic[3] = 0x01;
  EXPECT_THROW(idx_dataset(wrong_magic, encode_idx_labels(one)), FormatError);
}

TEST(Idx, LoadFromFiles) {
  richrep::testing::TempDir dir("idx");
  const std::uint8_t pixels[] = {10, 20, 30, 40};
  const std::uint8_t labels[] = {0, 1};
  binary::write_file(dir.path() / "img", encode_idx_images(pixels, 2, 1, 2));
  binary::write_file(dir.path() / "lab", encode_idx_labels(labels));
  const Dataset ds = load_idx(dir.path() / "img", dir.path() / "lab");
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_NEAR(ds.x(1, 1), 40.0 / 255.0, 1e-15);
  binary::write_file(dir.path() / "empty", "");
  EXPECT_THROW(load_idx(dir.path() / "empty", dir.path() / "lab"), FormatError);
}

// split_classes

namespace {

Dataset ten_classes() {
  Dataset ds;
  ds.n_classes = 10;
  ds.x = Matrix(40, 2);
  for (int r = 0; r < 40; ++r) {
    ds.x(r, 0) = r;
    ds.x(r, 1) = -r;
    ds.y.push_back(r % 10);
    ds.env.push_back(0);
  }
  return ds;
}

}  // namespace

TEST(SplitClasses, FiveFiveSplitReindexes) {
  const Dataset ds = ten_classes();
  const std::vector<int> base{0, 2, 4, 6, 8}, novel{1, 3, 5, 7, 9};
  const auto [b, n] = split_classes(ds, base, novel);
  EXPECT_EQ(b.n_classes, 5);
  EXPECT_EQ(n.n_classes, 5);
  for (int y : b.y) EXPECT_TRUE(y >= 0 && y < 5);
  for (int y : n.y) EXPECT_TRUE(y >= 0 && y < 5);
  EXPECT_EQ(b.size() + n.size(), ds.size());
  EXPECT_EQ(b.x(1, 0), 2.0);  // class 2 becomes label 1
  EXPECT_EQ(b.y[1], 1);
}

TEST(SplitClasses, CountsCoverSelectedRowsOnly) {
  const Dataset ds = ten_classes();
  const std::vector<int> base{0, 1}, novel{9};
  const auto [b, n] = split_classes(ds, base, novel);
  EXPECT_EQ(b.size() + n.size(), 12u);
}

TEST(SplitClasses, InvalidSets) {
  const Dataset ds = ten_classes();
  std::vector<int> all(10);
  for (int i = 0; i < 10; ++i) all[static_cast<std::size_t>(i)] = i;
  EXPECT_THROW(split_classes(ds, all, std::vector<int>{}), ParameterError);
  EXPECT_THROW(split_classes(ds, std::vector<int>{1}, std::vector<int>{1}), ParameterError);
  EXPECT_THROW(split_classes(ds, std::vector<int>{1}, std::vector<int>{11}), ParameterError);
}

// sample_episode

TEST(SampleEpisode, SizesAndDeterminism) {
  const Dataset novel = richrep::testing::blobs(30, 6, 3, 1.0, 7);
  const EpisodeSpec spec{5, 1, 15};
  Rng a(9), b(9);
  const Episode e1 = sample_episode(novel, spec, a), e2 = sample_episode(novel, spec, b);
  EXPECT_EQ(e1.support.size(), 5u);
  EXPECT_EQ(e1.query.size(), 75u);
  EXPECT_EQ(e1.support_rows, e2.support_rows);
  EXPECT_EQ(e1.query_rows, e2.query_rows);
  EXPECT_EQ(e1.classes, e2.classes);
}

TEST(SampleEpisode, SupportAndQueryNeverOverlap) {
  const Dataset novel = richrep::testing::blobs(25, 8, 2, 1.0, 8);
  Rng rng(10);
  for (int i = 0; i < 100; ++i) {
    const Episode e = sample_episode(novel, EpisodeSpec{5, 5, 15}, rng);
    std::set<std::size_t> s(e.support_rows.begin(), e.support_rows.end());
    EXPECT_EQ(s.size(), e.support_rows.size());
    for (std::size_t q : e.query_rows) EXPECT_EQ(s.count(q), 0u);
    for (std::size_t j = 0; j < e.query_rows.size(); ++j) {
      EXPECT_EQ(novel.y[e.query_rows[j]], e.classes[static_cast<std::size_t>(e.query.y[j])]);
    }
  }
}

TEST(SampleEpisode, TooFewClassesOrRows) {
  const Dataset novel = richrep::testing::blobs(10, 3, 2, 1.0, 9);
  Rng rng(1);
  EXPECT_THROW(sample_episode(novel, EpisodeSpec{5, 1, 1}, rng), SamplingError);
  EXPECT_THROW(sample_episode(novel, EpisodeSpec{3, 5, 15}, rng), SamplingError);
  EXPECT_THROW(sample_episode(novel, EpisodeSpec{0, 1, 1}, rng), ParameterError);
}

// env_partition and holdout_split

TEST(EnvPartition, Roles) {
  std::vector<Dataset> envs;
  for (int e = 0; e < 5; ++e) envs.push_back(richrep::testing::blobs(2, 2, 1, 1.0, static_cast<std::uint64_t>(e)));
  const OodTask t = env_partition(envs, EnvRoles{{0, 1, 2}, 3, 4});
  EXPECT_EQ(t.train.size(), 3u);
  EXPECT_EQ(t.test.x, envs[4].x);
  EXPECT_THROW(env_partition(envs, EnvRoles{{0, 1}, 3, 3}), ParameterError);
  EXPECT_THROW(env_partition(envs, EnvRoles{{}, 3, 4}), ParameterError);
  EXPECT_THROW(env_partition(envs, EnvRoles{{0}, 3, 9}), ParameterError);
  EXPECT_EQ(env_partition(envs, EnvRoles{{2}, 0, 1}).train.size(), 1u);
}

TEST(HoldoutSplit, FractionsAndDisjointness) {
  const Dataset ds = ten_classes();
  const auto [kept, held] = holdout_split(ds, 0.25, 3);
  EXPECT_EQ(held.size(), 10u);
  EXPECT_EQ(kept.size(), 30u);
  std::set<double> ids;
  for (Index r = 0; r < kept.x.rows(); ++r) ids.insert(kept.x(r, 0));
  for (Index r = 0; r < held.x.rows(); ++r) EXPECT_EQ(ids.count(held.x(r, 0)), 0u);
  const auto again = holdout_split(ds, 0.25, 3);
  EXPECT_EQ(again.second.x, held.x);
  EXPECT_THROW(holdout_split(ds, 1.5, 3), ParameterError);
}
