// Seeded property loops. Each property draws a fresh random instance per
// seed; a failure message names the seed so it can be replayed.

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "richrep/experiments/ood.hpp"
#include "richrep/experiments/records.hpp"
#include "richrep/experiments/verify.hpp"
#include "richrep/nn/serialize.hpp"
#include "richrep/probing/feature_io.hpp"
#include "richrep/probing/probe.hpp"
#include "richrep/tasks/shift.hpp"
#include "richrep/tasks/split.hpp"
#include "test_util.hpp"

using namespace richrep;
using richrep::testing::random_labels;
using richrep::testing::random_matrix;

namespace {

constexpr std::uint64_t kSeeds = 24;

ProbeConfig tight_probe() {
  ProbeConfig c;
  c.l2 = 1e-2;
  c.max_iters = 3000;
  c.grad_tol = 1e-9;
  return c;
}

}  // namespace

TEST(Property, AddingFeaturesNeverRaisesProbeCost) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const Matrix phi1 = random_matrix(40, 3, 3 * s), phi2 = random_matrix(40, 4, 3 * s + 1);
    const Labels y = random_labels(40, 3, 3 * s + 2);
    const UnionCosts c = union_cost(phi1, phi2, y, 3, tight_probe());
    EXPECT_LE(c.c_union, std::min(c.c1, c.c2) + 1e-6) << "seed " << s;
  }
}

TEST(Property, ProbeCostIsColumnPermutationInvariant) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const Matrix x = random_matrix(30, 5, s);
    const Labels y = random_labels(30, 3, s + 100);
    Rng rng(s);
    std::vector<Index> perm(5);
    std::iota(perm.begin(), perm.end(), Index{0});
    rng.shuffle(std::span<Index>(perm));
    Matrix xp(30, 5);
    for (Index j = 0; j < 5; ++j) xp.col(j) = x.col(perm[static_cast<std::size_t>(j)]);
    EXPECT_NEAR(optimal_cost(x, y, 3, tight_probe()), optimal_cost(xp, y, 3, tight_probe()), 1e-7) << "seed " << s;
  }
}

TEST(Property, ProbeCostBoundedByLogK) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const int k = 2 + static_cast<int>(s % 4);
    const Matrix x = random_matrix(25, 3, s);
    const Labels y = random_labels(25, k, s + 7);
    EXPECT_LE(optimal_cost(x, y, k, tight_probe()), std::log(static_cast<double>(k)) + 1e-9) << "seed " << s;
  }
}

TEST(Property, SoftmaxRowsAreDistributions) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const Matrix z = random_matrix(6, 4, s, 20.0);
    for (double tau : {0.5, 1.0, 10.0}) {
      const Matrix p = softmax_rows(z, tau);
      EXPECT_LT((p.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12) << "seed " << s;
      EXPECT_GE(p.minCoeff(), 0.0);
    }
  }
}

TEST(Property, DistillLossesVanishOnlyAtTheTeacher) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const Matrix t = random_matrix(5, 3, s, 3.0), u = random_matrix(5, 3, s + 999, 3.0);
    for (double tau : {1.0, 4.0}) {
      EXPECT_LT(kl_distill_loss(t, t, tau).loss, 1e-12) << "seed " << s;
      EXPECT_GT(kl_distill_loss(t, u, tau).loss, 0.0) << "seed " << s;
    }
    EXPECT_LT(cosine_distill_loss(t, 2.0 * t).loss, 1e-12) << "seed " << s;
    EXPECT_GE(cross_entropy_loss(u, random_labels(5, 3, s)).loss, 0.0);
  }
}

TEST(Property, CosineHeadIgnoresPositiveScale) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    const CosineHead head = make_cosine_head(4, 3, rng);
    const Matrix z = random_matrix(5, 4, s + 50);
    const Matrix base = cosine_head_forward(z, head);
    for (double c : {0.25, 2.0, 1024.0}) EXPECT_EQ(cosine_head_forward(Matrix(c * z), head), base) << "seed " << s;
  }
}

TEST(Property, NetworkFormatRoundTrips) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    Architecture arch;
    for (std::uint64_t l = 0; l < s % 3; ++l) arch.hidden.push_back(1 + static_cast<Index>(rng.below(6)));
    const HeadKind head = s % 2 ? HeadKind::cosine : HeadKind::linear;
    const Network net = make_network(1 + static_cast<Index>(rng.below(5)), arch, 2 + static_cast<Index>(rng.below(3)),
                                     head, s);
    const std::string bytes = encode_network(net);
    EXPECT_EQ(encode_network(decode_network(bytes)), bytes) << "seed " << s;
    const Matrix x = random_matrix(3, net.input_dim(), s);
    EXPECT_EQ(trunk_forward(decode_network(bytes).trunk, x), trunk_forward(net.trunk, x)) << "seed " << s;
  }
}

TEST(Property, FeatureFormatRoundTrips) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const Index rows = static_cast<Index>(s % 7), cols = 1 + static_cast<Index>(s % 5);
    const Matrix x = random_matrix(rows, cols, s, 1e3);
    const Labels y = random_labels(rows, 1 + static_cast<int>(s % 4), s);
    const LabeledMatrix back = decode_features(encode_features(x, y));
    EXPECT_EQ(back.features, x) << "seed " << s;
    EXPECT_EQ(back.labels, y) << "seed " << s;
  }
}

TEST(Property, CsvRoundTripsArbitraryText) {
  const std::string alphabet = "ab,\"= x1-";
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    auto text = [&](std::size_t n) {
      std::string out;
      for (std::size_t i = 0; i < n; ++i) out += alphabet[rng.below(alphabet.size())];
      return out;
    };
    std::vector<RunRecord> rs;
    for (int i = 0; i < 5; ++i) {
      std::string key = text(3), value = text(4);
      std::erase(key, ';');
      std::erase(key, '=');
      std::erase(value, ';');
      rs.push_back(make_record("r" + std::to_string(i) + text(4), rng.next_u64(), text(3), text(2),
                               static_cast<Split>(rng.below(5)), text(3), rng.normal() * 1e3,
                               key.empty() ? Extras{} : Extras{{key, value}}));
    }
    const std::string csv = to_csv(rs);
    std::istringstream in(csv);
    EXPECT_EQ(to_csv(read_csv(in)), csv) << "seed " << s;
  }
}

TEST(Property, VrexObjectiveAtLeastMeanAndMonotoneInBeta) {
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    std::vector<double> risks(2 + rng.below(4));
    for (double& r : risks) r = std::abs(rng.normal());
    const double mean = std::accumulate(risks.begin(), risks.end(), 0.0) / static_cast<double>(risks.size());
    EXPECT_NEAR(vrex_objective(risks, 0.0), mean, 1e-15);
    double prev = vrex_objective(risks, 0.0);
    for (double beta : {0.5, 1.0, 10.0, 100.0}) {
      const double v = vrex_objective(risks, beta);
      EXPECT_GE(v, prev) << "seed " << s;
      prev = v;
    }
  }
}

TEST(Property, EpisodesAreDisjointAndSized) {
  ShiftSpec spec;
  spec.n_per_env = 60;
  spec.n_test = 20;
  const ShiftData d = gen_shift(spec, 1);
  const Dataset pool = concat(std::span<const Dataset>(d.train_envs));
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    Rng rng(s);
    const EpisodeSpec e{3, 1 + static_cast<int>(s % 3), 4};
    const Episode ep = sample_episode(pool, e, rng);
    EXPECT_EQ(ep.support.size(), static_cast<std::size_t>(e.n_way * e.k_shot));
    EXPECT_EQ(ep.query.size(), static_cast<std::size_t>(e.n_way * e.n_query));
    std::set<std::size_t> seen(ep.support_rows.begin(), ep.support_rows.end());
    for (std::size_t r : ep.query_rows) EXPECT_FALSE(seen.count(r)) << "seed " << s;
    EXPECT_EQ(std::set<int>(ep.classes.begin(), ep.classes.end()).size(), 3u);
  }
}

TEST(Property, HoldoutSplitPartitionsRows) {
  const Dataset ds = richrep::testing::blobs(20, 3, 2, 1.0, 4);
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const double f = 0.1 + 0.8 * static_cast<double>(s) / kSeeds;
    const auto [kept, held] = holdout_split(ds, f, s);
    EXPECT_EQ(kept.size() + held.size(), ds.size()) << "seed " << s;
    EXPECT_GT(held.size(), 0u);
    std::multiset<double> a, b;
    for (Index i = 0; i < ds.x.rows(); ++i) a.insert(ds.x(i, 0));
    for (const Dataset* part : {&kept, &held}) {
      for (Index i = 0; i < part->x.rows(); ++i) b.insert(part->x(i, 0));
    }
    EXPECT_EQ(a, b) << "seed " << s;
  }
}

TEST(Property, ShiftGeneratorIsDeterministicPerSeed) {
  ShiftSpec spec;
  spec.n_per_env = 30;
  spec.n_test = 30;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const ShiftData a = gen_shift(spec, s), b = gen_shift(spec, s), c = gen_shift(spec, s + 1);
    EXPECT_EQ(a.ood_test.x, b.ood_test.x) << "seed " << s;
    EXPECT_NE(a.ood_test.x, c.ood_test.x) << "seed " << s;
  }
}

TEST(Property, VerifySuitesPassAcrossSeeds) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    for (const auto& r : run_verify({s, Fault::none})) EXPECT_TRUE(r.passed) << "seed " << s << " " << r.name << ": " << r.detail;
  }
}
