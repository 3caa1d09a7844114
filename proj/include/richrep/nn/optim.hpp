#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>

#include "richrep/errors.hpp"
#include "richrep/nn/network.hpp"

namespace richrep {

struct Schedule {
  enum class Kind { constant, step, cosine };
  Kind kind = Kind::constant;
  double factor = 0.1;  // step only
  int every = 30;       // step only, in epochs

  static Schedule constant() { return {}; }
  static Schedule step(double factor, int every) { return {Kind::step, factor, every}; }
  static Schedule cosine() { return {Kind::cosine, 0.1, 30}; }
};

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int epochs = 10;
  int batch_size = 64;
  Schedule schedule;
  std::uint64_t seed = 0;

  void validate() const {
    if (!std::isfinite(lr) || lr < 0.0) throw ParameterError("lr must be finite and non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ParameterError("momentum must lie in [0, 1)");
    if (!std::isfinite(weight_decay) || weight_decay < 0.0) {
      throw ParameterError("weight_decay must be finite and non-negative");
    }
    if (epochs < 0) throw ParameterError("epochs must be non-negative");
    if (batch_size < 1) throw ParameterError("batch_size must be positive");
    if (schedule.kind == Schedule::Kind::step && schedule.every < 1) {
      throw ParameterError("step schedule needs every >= 1");
    }
  }
};

/// Learning rate for a 0-based epoch.
inline double lr_at(const Schedule& schedule, double base_lr, int epoch, int total_epochs) {
  switch (schedule.kind) {
    case Schedule::Kind::constant:
      return base_lr;
    case Schedule::Kind::step:
      return base_lr * std::pow(schedule.factor, epoch / schedule.every);
    case Schedule::Kind::cosine:
      return base_lr * 0.5 *
             (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                             static_cast<double>(total_epochs)));
  }
  return base_lr;
}

/// SGD with heavy-ball momentum and L2 weight decay:
///   v <- momentum * v + (g + wd * w)   (wd only on weight blocks)
///   w <- w - lr * v
/// Gradients are checked for finiteness before anything is updated.
template <class Model>
void sgd_step(Model& params, const Model& grads, Model& velocity, const TrainConfig& config,
              double lr) {
  auto p = param_blocks(params);
  const auto g = param_blocks(grads);
  auto v = param_blocks(velocity);
  if (p.size() != g.size() || p.size() != v.size()) throw ShapeError("sgd_step: block count mismatch");
  for (std::size_t b = 0; b < g.size(); ++b) {
    if (g[b].values.size() != p[b].values.size() || v[b].values.size() != p[b].values.size()) {
      throw ShapeError("sgd_step: block size mismatch");
    }
    for (double x : g[b].values) {
      if (!std::isfinite(x)) throw NumericalError("non-finite gradient", g[b].layer);
    }
  }
  for (std::size_t b = 0; b < p.size(); ++b) {
    const double wd = p[b].decays ? config.weight_decay : 0.0;
    auto& w = p[b].values;
    const auto& gv = g[b].values;
    auto& vel = v[b].values;
    for (std::size_t i = 0; i < w.size(); ++i) {
      vel[i] = config.momentum * vel[i] + (gv[i] + wd * w[i]);
      w[i] -= lr * vel[i];
    }
  }
}

}  // namespace richrep
