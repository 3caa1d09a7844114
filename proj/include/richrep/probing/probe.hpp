#pragma once

#include <cmath>
#include <deque>
#include <optional>
#include <span>
#include <string>

#include "richrep/errors.hpp"
#include "richrep/nn/losses.hpp"
#include "richrep/rng.hpp"
#include "richrep/types.hpp"

namespace richrep {

struct ProbeConfig {
  double l2 = 1e-3;
  int max_iters = 5000;
  double grad_tol = 1e-6;
  bool standardize = false;
  /// Std of the Gaussian weight initialization; 0 starts from zero.
  double init_std = 0.01;
  /// Curvature pairs kept by the quasi-Newton direction; 0 gives plain
  /// steepest descent.
  int history = 10;

  void validate() const {
    if (!(l2 >= 0.0) || !std::isfinite(l2)) throw ParameterError("probe l2 must be >= 0");
    if (max_iters < 1) throw ParameterError("probe max_iters must be positive");
    if (!(grad_tol > 0.0)) throw ParameterError("probe grad_tol must be positive");
    if (init_std < 0.0 || history < 0) throw ParameterError("probe init_std/history must be >= 0");
  }
};

/// Linear classifier on raw features: logits = features * weights^T + bias.
struct ProbeResult {
  Matrix weights;  // n_classes x n_features
  Vector bias;
  double cost = 0.0;  // regularized objective at the returned point
  double grad_norm = 0.0;
  int iterations = 0;
  double train_accuracy = 0.0;
  double eval_accuracy = 0.0;
  bool converged = false;
};

struct LabeledFeatures {
  const Matrix& x;
  std::span<const int> y;
};

inline Matrix probe_logits(const ProbeResult& probe, const Matrix& features) {
  if (features.cols() != probe.weights.cols()) throw ShapeError("probe: feature width mismatch");
  Matrix logits = features * probe.weights.transpose();
  logits.rowwise() += probe.bias.transpose();
  return logits;
}

namespace detail {

/// Softmax cross-entropy plus (l2/2)|W|^2 over stacked parameters
/// theta = [vec(W) row-major, b].
class ProbeObjective {
 public:
  ProbeObjective(const Matrix& z, std::span<const int> y, Index k, double l2)
      : z_(z), y_(y), k_(k), d_(z.cols()), l2_(l2) {}

  Index size() const { return k_ * d_ + k_; }

  double value(const Vector& theta) const {
    const Matrix logits = logits_of(theta);
    const Matrix logp = log_softmax_rows(logits);
    double loss = 0.0;
    for (Index r = 0; r < logits.rows(); ++r) loss -= logp(r, y_[static_cast<std::size_t>(r)]);
    loss /= static_cast<double>(z_.rows());
    const auto w = theta.head(k_ * d_);
    return loss + 0.5 * l2_ * w.squaredNorm();
  }

  double value_and_grad(const Vector& theta, Vector& grad) const {
    const LossGrad ce = cross_entropy_loss(logits_of(theta), y_);
    grad.resize(size());
    Eigen::Map<Matrix> gw(grad.data(), k_, d_);
    gw = ce.grad.transpose() * z_;
    const auto w = theta.head(k_ * d_);
    grad.head(k_ * d_) += l2_ * w;
    grad.tail(k_) = ce.grad.colwise().sum().transpose();
    return ce.loss + 0.5 * l2_ * w.squaredNorm();
  }

  Matrix logits_of(const Vector& theta) const {
    const Eigen::Map<const Matrix> w(theta.data(), k_, d_);
    Matrix logits = z_ * w.transpose();
    logits.rowwise() += theta.tail(k_).transpose();
    return logits;
  }

 private:
  const Matrix& z_;
  std::span<const int> y_;
  Index k_, d_;
  double l2_;
};

struct SolveResult {
  Vector theta;
  double cost;
  double grad_norm;
  int iterations;
  bool converged;
};

/// Deterministic descent with Armijo backtracking (trial step 1, shrink 0.5,
/// sufficient-decrease 1e-4). Directions come from limited-memory BFGS and
/// fall back to steepest descent whenever they are not descent directions or
/// the line search stalls.
inline SolveResult minimize_probe(const ProbeObjective& obj, Vector theta, const ProbeConfig& cfg) {
  constexpr double kArmijo = 1e-4;
  constexpr double kShrink = 0.5;
  constexpr double kMinStep = 1e-20;
  std::deque<std::pair<Vector, Vector>> pairs;  // (s, y)
  Vector grad;
  double f = obj.value_and_grad(theta, grad);
  int it = 0;
  for (; it < cfg.max_iters; ++it) {
    if (grad.norm() <= cfg.grad_tol) return {theta, f, grad.norm(), it, true};

    Vector dir = -grad;
    if (!pairs.empty()) {
      std::vector<double> alpha(pairs.size());
      Vector q = grad;
      for (std::size_t i = pairs.size(); i-- > 0;) {
        const auto& [s, y] = pairs[i];
        alpha[i] = s.dot(q) / y.dot(s);
        q -= alpha[i] * y;
      }
      const auto& [s_last, y_last] = pairs.back();
      q *= s_last.dot(y_last) / y_last.squaredNorm();
      for (std::size_t i = 0; i < pairs.size(); ++i) {
        const auto& [s, y] = pairs[i];
        const double beta = y.dot(q) / y.dot(s);
        q += (alpha[i] - beta) * s;
      }
      dir = -q;
    }
    double slope = grad.dot(dir);
    if (!(slope < 0.0)) {
      pairs.clear();
      dir = -grad;
      slope = -grad.squaredNorm();
    }

    double step = 1.0;
    Vector trial = theta + step * dir;
    double f_trial = obj.value(trial);
    while (!(f_trial <= f + kArmijo * step * slope) && step > kMinStep) {
      step *= kShrink;
      trial = theta + step * dir;
      f_trial = obj.value(trial);
    }
    if (step <= kMinStep) {
      if (pairs.empty()) break;  // steepest descent stalled as well
      pairs.clear();
      continue;
    }
    Vector grad_new;
    f_trial = obj.value_and_grad(trial, grad_new);
    Vector s = trial - theta;
    Vector y = grad_new - grad;
    if (s.dot(y) > 1e-16 * s.norm() * y.norm()) {
      pairs.emplace_back(std::move(s), std::move(y));
      if (static_cast<int>(pairs.size()) > cfg.history) pairs.pop_front();
    }
    theta = std::move(trial);
    grad = std::move(grad_new);
    f = f_trial;
  }
  const double gn = grad.norm();
  return {theta, f, gn, it, gn <= cfg.grad_tol};
}

}  // namespace detail

/// Optimal multinomial logistic probe on frozen features.
///
/// Minimizes mean softmax cross-entropy plus (l2/2)|W|^2 (bias unpenalized),
/// full batch. With `standardize`, features are centred and scaled by their
/// training-set std (floored at 1e-8) before fitting, and the solution is
/// folded back so the result applies to raw features. `cost` is the
/// regularized objective in the space that was optimized.
inline ProbeResult fit_probe(const Matrix& features, std::span<const int> labels, int n_classes,
                             const ProbeConfig& config, Rng& rng,
                             std::optional<LabeledFeatures> eval = std::nullopt) {
  config.validate();
  check_features(features);
  if (n_classes < 1) throw ParameterError("probe needs at least one class");
  check_labels(labels, features.rows(), n_classes);

  const Index d = features.cols();
  const Index k = n_classes;
  Vector mean = Vector::Zero(d);
  Vector scale = Vector::Ones(d);
  Matrix z = features;
  if (config.standardize) {
    mean = features.colwise().mean().transpose();
    z.rowwise() -= mean.transpose();
    scale = (z.colwise().squaredNorm() / static_cast<double>(features.rows()))
                .transpose()
                .cwiseSqrt()
                .cwiseMax(1e-8);
    z = z * scale.cwiseInverse().asDiagonal();
  }

  const detail::ProbeObjective obj(z, labels, k, config.l2);
  Vector theta = Vector::Zero(obj.size());
  if (config.init_std > 0.0) {
    for (Index i = 0; i < k * d; ++i) theta(i) = rng.normal(0.0, config.init_std);
  }
  const detail::SolveResult sol = detail::minimize_probe(obj, std::move(theta), config);

  ProbeResult out;
  const Eigen::Map<const Matrix> w(sol.theta.data(), k, d);
  out.weights = w * scale.cwiseInverse().asDiagonal();
  out.bias = sol.theta.tail(k) - out.weights * mean;
  out.cost = sol.cost;
  out.grad_norm = sol.grad_norm;
  out.iterations = sol.iterations;
  out.converged = sol.converged;
  out.train_accuracy = accuracy(probe_logits(out, features), labels);
  if (eval) {
    check_labels(eval->y, eval->x.rows(), n_classes);
    out.eval_accuracy = accuracy(probe_logits(out, eval->x), eval->y);
  }
  return out;
}

/// C*: the optimal probe objective, from a fixed Rng(0) initialization.
inline double optimal_cost(const Matrix& features, std::span<const int> labels, int n_classes,
                           const ProbeConfig& config) {
  Rng rng(0);
  return fit_probe(features, labels, n_classes, config, rng).cost;
}

struct UnionCosts {
  double c1 = 0.0;
  double c2 = 0.0;
  double c_union = 0.0;
};

/// Probe costs of phi1, phi2 and their column concatenation.
inline UnionCosts union_cost(const Matrix& phi1, const Matrix& phi2, std::span<const int> labels,
                             int n_classes, const ProbeConfig& config) {
  if (phi1.rows() != phi2.rows()) throw ShapeError("union_cost: row counts differ");
  Matrix both(phi1.rows(), phi1.cols() + phi2.cols());
  both << phi1, phi2;
  return {optimal_cost(phi1, labels, n_classes, config), optimal_cost(phi2, labels, n_classes, config),
          optimal_cost(both, labels, n_classes, config)};
}

enum class InfoRelation { contains_new_info, contains_all_info, equivalent };

inline const char* to_string(InfoRelation r) {
  switch (r) {
    case InfoRelation::contains_new_info: return "contains_new_info";
    case InfoRelation::contains_all_info: return "contains_all_info";
    case InfoRelation::equivalent: return "equivalent";
  }
  return "?";
}

/// Finite-sample reading of the information relations between two
/// representations, relative to phi2:
///  - contains_new_info: the union beats phi2 by more than `margin`
///    (phi1 adds linearly usable information);
///  - contains_all_info: union and phi2 agree within `margin`;
///  - equivalent: additionally union and phi1 agree within `margin`.
/// The margin is a solver-noise guard, not part of the population-level
/// definitions.
struct InfoVerdict {
  InfoRelation relation = InfoRelation::contains_all_info;
  double cost_phi1 = 0.0;
  double cost_phi2 = 0.0;
  double cost_union = 0.0;
  double margin = 0.0;
};

inline InfoVerdict verdict_from_costs(const UnionCosts& c, double margin) {
  if (!(margin >= 0.0)) throw ParameterError("margin must be non-negative");
  InfoVerdict v{InfoRelation::contains_all_info, c.c1, c.c2, c.c_union, margin};
  if (c.c_union < c.c2 - margin) {
    v.relation = InfoRelation::contains_new_info;
  } else if (std::abs(c.c_union - c.c2) <= margin && std::abs(c.c_union - c.c1) <= margin) {
    v.relation = InfoRelation::equivalent;
  }
  return v;
}

inline InfoVerdict classify_information(const Matrix& phi1, const Matrix& phi2,
                                        std::span<const int> labels, int n_classes,
                                        const ProbeConfig& config, double margin = 0.01) {
  return verdict_from_costs(union_cost(phi1, phi2, labels, n_classes, config), margin);
}

/// Unregularized mean cross-entropy of lambda * f1 + (1 - lambda) * f2 where
/// f_i is probe i applied to phi_i.
inline double mixture_cost(const ProbeResult& probe1, const ProbeResult& probe2, double lambda,
                           const Matrix& phi1, const Matrix& phi2, std::span<const int> labels) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ParameterError("mixture weight must lie in [0, 1], got " + std::to_string(lambda));
  }
  if (phi1.rows() != phi2.rows()) throw ShapeError("mixture_cost: row counts differ");
  const Matrix logits = lambda * probe_logits(probe1, phi1) + (1.0 - lambda) * probe_logits(probe2, phi2);
  return cross_entropy_loss(logits, labels).loss;
}

}  // namespace richrep
