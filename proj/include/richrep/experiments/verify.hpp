#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "richrep/experiments/common.hpp"
#include "richrep/experiments/ood.hpp"
#include "richrep/nn/losses.hpp"
#include "richrep/nn/network.hpp"
#include "richrep/probing/probe.hpp"
#include "richrep/rich/finetune.hpp"

namespace richrep {

/// Outcome of one property suite. `worst` is the statistic compared against
/// `tolerance` (its direction depends on the suite; see `detail`).
struct SuiteResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;
  double tolerance = 0.0;
  int instances = 0;
  double seconds = 0.0;
  std::string detail;
};

enum class Fault { none, union_sign_flip };

struct VerifyOptions {
  std::uint64_t seed = 0;
  Fault fault = Fault::none;
};

namespace verify_detail {

inline Matrix normal_matrix(Index rows, Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.normal(0.0, scale);
  }
  return m;
}

inline Labels random_labels(Index n, int k, Rng& rng) {
  Labels y(static_cast<std::size_t>(n));
  for (auto& v : y) v = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
  return y;
}

/// Every class present at least once, the rest random.
inline Labels covering_labels(Index n, int k, Rng& rng) {
  Labels y = random_labels(n, k, rng);
  for (int c = 0; c < k && c < n; ++c) y[static_cast<std::size_t>(c)] = c;
  return y;
}

template <class Fn>
SuiteResult timed(Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  SuiteResult r = fn();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

/// Worst relative error between backprop and central differences over
/// `n_coords` randomly drawn parameters. The relative error uses
/// max(|analytic|, |numeric|, 1e-6) as denominator so coordinates with a
/// vanishing gradient are judged on absolute error.
inline double worst_fd_error(const Network& net, const std::function<LossGrad(const Matrix&)>& loss,
                             const Matrix& x, int n_coords, Rng& rng, double h = 1e-5) {
  NetworkCache cache;
  const Outputs out = forward(net, x, &cache);
  const Network grad = backward(net, cache, loss(out.logits).grad);
  const auto gblocks = param_blocks(grad);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t b = 0; b < gblocks.size(); ++b) {
    for (std::size_t j = 0; j < gblocks[b].values.size(); ++j) coords.emplace_back(b, j);
  }
  double worst = 0.0;
  for (int c = 0; c < n_coords; ++c) {
    const auto [b, j] = coords[rng.below(coords.size())];
    Network probe = net;
    auto blocks = param_blocks(probe);
    const double w0 = blocks[b].values[j];
    blocks[b].values[j] = w0 + h;
    const double up = loss(forward(probe, x).logits).loss;
    blocks[b].values[j] = w0 - h;
    const double down = loss(forward(probe, x).logits).loss;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = gblocks[b].values[j];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

/// True when every hidden pre-activation is at least `margin` away from the
/// ReLU kink and every penultimate row is clearly nonzero, so a central
/// difference with a small step never crosses a kink.
inline bool smooth_at(const Network& net, const Matrix& x, double margin = 1e-3) {
  TrunkCache cache;
  const Matrix features = trunk_forward(net.trunk, x, &cache);
  for (const auto& layer : cache) {
    if (layer.pre.size() > 0 && layer.pre.cwiseAbs().minCoeff() < margin) return false;
  }
  return features.rowwise().norm().minCoeff() > 0.1;
}

/// Draws networks until one is smooth at `x`.
inline Network smooth_network(Index d, const Architecture& arch, Index out, HeadKind head, const Matrix& x,
                              Rng& rng) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Network net = make_network(d, arch, out, head, rng.next_u64());
    if (smooth_at(net, x)) return net;
  }
  throw TrainingError("gradient suite: no smooth random network found", 0);
}

}  // namespace verify_detail

/// Backprop against central differences (h = 1e-5) on random three-layer
/// networks, redrawn until no ReLU input sits near its kink: CE, KL at tau 1 and 10, CE+KL at alpha 0.9, cosine distillation,
/// and CE through a cosine head. 100 coordinates per loss.
inline SuiteResult gradient_suite(std::uint64_t seed) {
  return verify_detail::timed([&] {
    using namespace verify_detail;
    constexpr double kTol = 1e-4;
    Rng rng(seed);
    const Index n = 6, d = 4;
    const int k = 3;
    const Architecture arch{{7, 5}};
    const Matrix x = normal_matrix(n, d, rng);
    const Labels y = covering_labels(n, k, rng);
    const Matrix teacher = normal_matrix(n, k, rng, 2.0);
    const Matrix teacher_feat = normal_matrix(n, 4, rng);

    struct Case {
      std::string name;
      Network net;
      std::function<LossGrad(const Matrix&)> loss;
    };
    std::vector<Case> cases;
    auto linear_net = [&](Index out) { return smooth_network(d, arch, out, HeadKind::linear, x, rng); };
    cases.push_back({"cross_entropy", linear_net(k), [&](const Matrix& z) { return cross_entropy_loss(z, y); }});
    for (double tau : {1.0, 10.0}) {
      cases.push_back({"kl_tau" + number_tag(tau), linear_net(k),
                       [&, tau](const Matrix& z) { return kl_distill_loss(teacher, z, tau); }});
    }
    cases.push_back({"ce_kl_alpha0.9", linear_net(k),
                     [&](const Matrix& z) { return ce_kl_distill_loss(teacher, z, y, 0.9, 10.0); }});
    cases.push_back({"cosine_distill", linear_net(4),
                     [&](const Matrix& z) { return cosine_distill_loss(teacher_feat, z); }});
    cases.push_back({"cosine_head_ce", smooth_network(d, arch, k, HeadKind::cosine, x, rng),
                     [&](const Matrix& z) { return cross_entropy_loss(z, y); }});

    SuiteResult r{"gradient", true, 0.0, kTol, 0, 0.0, ""};
    for (auto& c : cases) {
      const double err = worst_fd_error(c.net, c.loss, x, 100, rng);
      r.worst = std::max(r.worst, err);
      r.instances += 1;
      r.detail += c.name + "=" + format_value(err) + " ";
      if (!(err < kTol)) r.passed = false;
    }
    return r;
  });
}

/// Proposition 1: adding features never raises the optimal probe cost.
/// 50 random (phi1, phi2, labels) triples; c_union <= c2 + 1e-3.
inline SuiteResult proposition1_suite(std::uint64_t seed, Fault fault = Fault::none) {
  return verify_detail::timed([&] {
    using namespace verify_detail;
    constexpr double kSlack = 1e-3;
    Rng rng(seed + 1);
    ProbeConfig cfg;
    cfg.l2 = 1e-3;
    SuiteResult r{"proposition1", true, -1e300, kSlack, 0, 0.0, "max(c_union - c2)"};
    for (int t = 0; t < 50; ++t) {
      const Index n = 60;
      const int k = 3;
      const Labels y = covering_labels(n, k, rng);
      Matrix phi1 = normal_matrix(n, 3, rng);
      Matrix phi2 = normal_matrix(n, 4, rng);
      for (Index i = 0; i < n; ++i) {
        phi1(i, y[static_cast<std::size_t>(i)]) += 1.0;  // some signal in phi1
      }
      UnionCosts c = union_cost(phi1, phi2, y, k, cfg);
      if (fault == Fault::union_sign_flip) c.c_union = 2.0 * c.c2 - c.c_union;
      r.worst = std::max(r.worst, c.c_union - c.c2);
      r.instances += 1;
      if (!(c.c_union <= c.c2 + kSlack)) r.passed = false;
    }
    return r;
  });
}

/// Theorem 1 on permutation-equivalent pairs: the mixture cost of the two
/// optimal probes is flat in lambda within 2e-3. 20 instances.
inline SuiteResult theorem1_suite(std::uint64_t seed) {
  return verify_detail::timed([&] {
    using namespace verify_detail;
    constexpr double kTol = 2e-3;
    Rng rng(seed + 2);
    ProbeConfig cfg;
    cfg.l2 = 1e-2;
    cfg.grad_tol = 1e-8;
    SuiteResult r{"theorem1", true, 0.0, kTol, 0, 0.0, "max spread of mixture cost over lambda"};
    for (int t = 0; t < 20; ++t) {
      const Index n = 80, d = 4;
      const int k = 3;
      const Labels y = covering_labels(n, k, rng);
      Matrix phi1 = normal_matrix(n, d, rng);
      for (Index i = 0; i < n; ++i) phi1(i, y[static_cast<std::size_t>(i)]) += 1.0;
      std::vector<Index> perm(static_cast<std::size_t>(d));
      std::iota(perm.begin(), perm.end(), Index{0});
      while (std::is_sorted(perm.begin(), perm.end())) rng.shuffle(std::span<Index>(perm));
      Matrix phi2(n, d);
      for (Index j = 0; j < d; ++j) phi2.col(j) = phi1.col(perm[static_cast<std::size_t>(j)]);
      Rng r1(rng.next_u64()), r2(rng.next_u64());
      const ProbeResult p1 = fit_probe(phi1, y, k, cfg, r1);
      const ProbeResult p2 = fit_probe(phi2, y, k, cfg, r2);
      double lo = 1e300, hi = -1e300;
      for (double lambda : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        const double c = mixture_cost(p1, p2, lambda, phi1, phi2, y);
        lo = std::min(lo, c);
        hi = std::max(hi, c);
      }
      r.worst = std::max(r.worst, hi - lo);
      r.instances += 1;
      if (!(hi - lo <= kTol)) r.passed = false;
    }
    return r;
  });
}

/// Theorem 2 analog: probes from two initializations on identical features
/// agree on at least 99% of held-out predictions. 20 instances.
inline SuiteResult theorem2_suite(std::uint64_t seed) {
  return verify_detail::timed([&] {
    using namespace verify_detail;
    constexpr double kMin = 0.99;
    Rng rng(seed + 3);
    ProbeConfig cfg;
    cfg.l2 = 1e-2;
    cfg.init_std = 1.0;
    SuiteResult r{"theorem2", true, 1.0, kMin, 0, 0.0, "min held-out agreement"};
    for (int t = 0; t < 20; ++t) {
      const Index n = 100, d = 5;
      const int k = 4;
      const Labels y = covering_labels(n, k, rng);
      Matrix phi = normal_matrix(n, d, rng);
      for (Index i = 0; i < n; ++i) phi(i, y[static_cast<std::size_t>(i)]) += 1.0;
      const Matrix held = normal_matrix(200, d, rng, 1.5);
      Rng r1(rng.next_u64()), r2(rng.next_u64());
      const ProbeResult a = fit_probe(phi, y, k, cfg, r1);
      const ProbeResult b = fit_probe(phi, y, k, cfg, r2);
      const auto pa = argmax_rows(probe_logits(a, held));
      const auto pb = argmax_rows(probe_logits(b, held));
      std::size_t same = 0;
      for (std::size_t i = 0; i < pa.size(); ++i) same += pa[i] == pb[i];
      const double agree = static_cast<double>(same) / static_cast<double>(pa.size());
      r.worst = std::min(r.worst, agree);
      r.instances += 1;
      if (!(a.converged && b.converged && agree >= kMin)) r.passed = false;
    }
    return r;
  });
}

/// Grid-search oracle for a symmetric 1-D two-class set: rows (x_i, class 1)
/// and (-x_i, class 0). By symmetry the optimum has W = [-w, w] and equal
/// biases, so the regularized cost is mean log(1 + e^{-2 w x_i}) + l2 w^2.
inline double symmetric_oracle_cost(std::span<const double> xs, double l2) {
  double best = 1e300;
  for (int i = -10000; i <= 10000; ++i) {
    const double w = i * 1e-3;
    double c = 0.0;
    for (double x : xs) {
      const double m = -2.0 * w * x;
      c += m > 0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
    }
    best = std::min(best, c / static_cast<double>(xs.size()) + l2 * w * w);
  }
  return best;
}

/// 1-D regularized probe against the grid oracle, within 1e-3. 10 instances.
inline SuiteResult oracle_suite(std::uint64_t seed) {
  return verify_detail::timed([&] {
    constexpr double kTol = 1e-3;
    Rng rng(seed + 4);
    SuiteResult r{"probe_oracle", true, 0.0, kTol, 0, 0.0, "max |probe cost - grid oracle|"};
    for (int t = 0; t < 10; ++t) {
      const int m = 2 + static_cast<int>(rng.below(4));
      std::vector<double> xs;
      for (int i = 0; i < m; ++i) xs.push_back(rng.normal(0.5, 1.0));
      ProbeConfig cfg;
      cfg.l2 = rng.uniform(0.05, 0.5);
      cfg.grad_tol = 1e-9;
      Matrix x(2 * m, 1);
      Labels y;
      for (int i = 0; i < m; ++i) {
        x(2 * i, 0) = xs[static_cast<std::size_t>(i)];
        y.push_back(1);
        x(2 * i + 1, 0) = -xs[static_cast<std::size_t>(i)];
        y.push_back(0);
      }
      const double cost = optimal_cost(x, y, 2, cfg);
      const double oracle = symmetric_oracle_cost(xs, cfg.l2);
      r.worst = std::max(r.worst, std::abs(cost - oracle));
      r.instances += 1;
      if (!(std::abs(cost - oracle) <= kTol)) r.passed = false;
    }
    return r;
  });
}

/// Exact identities: cosine-head invariance under power-of-two scaling
/// (bitwise), concatenated-head init equals the mean of leg logits (1e-12),
/// vREx at beta 0 equals the environment-averaged ERM objective (bitwise,
/// values and gradients), self-distillation KL below 1e-10.
inline SuiteResult algebra_suite(std::uint64_t seed) {
  return verify_detail::timed([&] {
    using namespace verify_detail;
    Rng rng(seed + 5);
    SuiteResult r{"exact_algebra", true, 0.0, 1e-12, 0, 0.0, ""};
    auto check = [&](const std::string& name, bool ok, double stat) {
      r.instances += 1;
      r.worst = std::max(r.worst, stat);
      if (!ok) {
        r.passed = false;
        r.detail += name + " failed; ";
      }
    };

    // Cosine head.
    const CosineHead head{normal_matrix(4, 6, rng), normal_matrix(4, 1, rng).col(0)};
    const Matrix z = normal_matrix(5, 6, rng);
    const Matrix base = cosine_head_forward(z, head);
    bool bitwise = true;
    for (double c : {0.125, 0.5, 2.0, 4.0, 1024.0}) {
      const Matrix scaled = cosine_head_forward(Matrix(c * z), head);
      bitwise = bitwise && std::equal(base.data(), base.data() + base.size(), scaled.data(),
                                      [](double a, double b) { return std::bit_cast<std::uint64_t>(a) ==
                                                                      std::bit_cast<std::uint64_t>(b); });
    }
    check("cosine_scale_invariance", bitwise, 0.0);

    // Concatenated head init.
    std::vector<Trunk> legs;
    std::vector<DenseLayer> heads;
    for (int i = 0; i < 3; ++i) {
      Rng lr(rng.next_u64());
      legs.push_back(make_trunk(4, Architecture{{5}}, lr));
      heads.push_back(DenseLayer{normal_matrix(3, 5, lr), normal_matrix(3, 1, lr).col(0), Activation::linear});
    }
    const Matrix x = normal_matrix(7, 4, rng);
    const DenseLayer joint = concat_head_init(heads);
    std::vector<Matrix> feats;
    Matrix mean = Matrix::Zero(7, 3);
    for (std::size_t i = 0; i < legs.size(); ++i) {
      feats.push_back(trunk_forward(legs[i], x));
      mean += dense_forward(heads[i], feats.back()) / 3.0;
    }
    const double concat_err = (dense_forward(joint, hcat(feats)) - mean).cwiseAbs().maxCoeff();
    check("concat_head_init", concat_err <= 1e-12, concat_err);

    // vREx at beta 0.
    const std::vector<double> risks{0.3, 1.7, 0.9};
    const double erm = (risks[0] + risks[1] + risks[2]) / 3.0;
    check("vrex_beta0_objective", vrex_objective(risks, 0.0) == erm, std::abs(vrex_objective(risks, 0.0) - erm));
    const Matrix logits = normal_matrix(9, 3, rng);
    const Labels y = covering_labels(9, 3, rng);
    const std::vector<int> env{0, 1, 2, 0, 1, 2, 0, 1, 2};
    const LossGrad a = env_risk_loss(logits, y, env, 0.0);
    Matrix manual = Matrix::Zero(9, 3);
    double manual_loss = 0.0;
    for (int e = 0; e < 3; ++e) {
      std::vector<std::size_t> rows;
      for (std::size_t i = 0; i < env.size(); ++i) {
        if (env[i] == e) rows.push_back(i);
      }
      const LossGrad part = cross_entropy_loss(gather_rows(logits, rows), gather(std::span<const int>(y), rows));
      manual_loss += part.loss / 3.0;
      for (std::size_t i = 0; i < rows.size(); ++i) manual.row(static_cast<Index>(rows[i])) = part.grad.row(static_cast<Index>(i)) / 3.0;
    }
    const double vrex_err = std::max(std::abs(a.loss - manual_loss), (a.grad - manual).cwiseAbs().maxCoeff());
    check("vrex_beta0_erm", vrex_err <= 1e-15, vrex_err);

    // Self-distillation.
    const Matrix t = normal_matrix(6, 4, rng, 3.0);
    double kl = 0.0;
    for (double tau : {1.0, 4.0, 10.0}) kl = std::max(kl, kl_distill_loss(t, t, tau).loss);
    check("kl_self", kl < 1e-10, kl);
    if (r.detail.empty()) r.detail = "all identities hold";
    return r;
  });
}

/// The probing and exact-algebra suites in a fixed order.
inline std::vector<SuiteResult> run_verify(const VerifyOptions& options = {}) {
  return {gradient_suite(options.seed), proposition1_suite(options.seed, options.fault),
          theorem1_suite(options.seed), theorem2_suite(options.seed), oracle_suite(options.seed),
          algebra_suite(options.seed)};
}

/// CSV rows for a verify run. Wall-clock time is left out so output stays
/// byte-identical across reruns.
inline std::vector<RunRecord> verify_records(const std::vector<SuiteResult>& results, std::uint64_t seed) {
  std::vector<RunRecord> out;
  for (const auto& s : results) {
    const Extras extra{{"tolerance", format_value(s.tolerance)}, {"instances", std::to_string(s.instances)}};
    out.push_back(make_record("verify", seed, "verify", s.name, Split::id_train, "passed", s.passed ? 1.0 : 0.0, extra));
    out.push_back(make_record("verify", seed, "verify", s.name, Split::id_train, "statistic", s.worst, extra));
  }
  return out;
}

}  // namespace richrep
