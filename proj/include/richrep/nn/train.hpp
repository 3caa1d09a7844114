#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "richrep/dataset.hpp"
#include "richrep/errors.hpp"
#include "richrep/nn/losses.hpp"
#include "richrep/nn/network.hpp"
#include "richrep/nn/optim.hpp"
#include "richrep/rng.hpp"

namespace richrep {

/// Mean training loss per completed epoch.
using LossHistory = std::vector<double>;

struct NoEpochHook {
  template <class Model>
  void operator()(int, const Model&) const {}
};

/// Mini-batch SGD episode over `n_rows` examples.
///
/// Each epoch the row order is reset to 0..n-1 and Fisher-Yates shuffled with
/// Rng(seed + SeedOffsets::shuffle), whose stream continues across epochs.
/// Batches are consecutive runs of the shuffled order; the last partial batch
/// is kept. `batch_loss(model, rows, grad)` returns the batch loss and writes
/// its parameter gradient into `grad` (same shape as the model).
/// `on_epoch(epoch, model)` runs after every completed epoch (1-based).
template <class Model, class BatchLoss, class EpochHook = NoEpochHook>
LossHistory run_epochs(Model& model, std::size_t n_rows, const TrainConfig& config,
                       BatchLoss&& batch_loss, EpochHook&& on_epoch = {}) {
  config.validate();
  if (n_rows == 0) throw DataError("training set is empty");
  LossHistory history;
  history.reserve(static_cast<std::size_t>(config.epochs));
  Model velocity = zeros_like(model);
  Rng shuffle_rng(config.seed + SeedOffsets::shuffle);
  std::vector<std::size_t> order(n_rows);
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n_rows; ++i) order[i] = i;
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    const double lr = lr_at(config.schedule, config.lr, epoch, config.epochs);
    double total = 0.0;
    for (std::size_t start = 0; start < n_rows; start += batch) {
      const std::size_t len = std::min(batch, n_rows - start);
      const std::span<const std::size_t> rows(order.data() + start, len);
      Model grad = zeros_like(model);
      const double loss = batch_loss(std::as_const(model), rows, grad);
      if (!std::isfinite(loss)) throw TrainingError("non-finite training loss", epoch);
      try {
        sgd_step(model, grad, velocity, config, lr);
      } catch (const NumericalError& e) {
        throw TrainingError(e.what(), epoch);
      }
      total += loss * static_cast<double>(len);
    }
    history.push_back(total / static_cast<double>(n_rows));
    on_epoch(epoch + 1, std::as_const(model));
  }
  return history;
}

enum class LossKind { cross_entropy };

struct TrainResult {
  Network net;
  LossHistory history;
};

/// One training episode of `net` on `data`. Deterministic given the initial
/// parameters, `config.seed` and the row order of `data`.
inline TrainResult train(Network net, const Dataset& data, LossKind loss_kind,
                         const TrainConfig& config) {
  (void)loss_kind;
  if (data.x.cols() != net.input_dim()) throw ShapeError("train: input width mismatch");
  check_labels(data.y, data.x.rows(), net.output_dim());
  auto history = run_epochs(net, data.size(), config,
                            [&](const Network& model, std::span<const std::size_t> rows,
                                Network& grad) {
                              NetworkCache cache;
                              const Matrix xb = gather_rows(data.x, rows);
                              const Labels yb = gather(std::span<const int>(data.y), rows);
                              const Outputs out = forward(model, xb, &cache);
                              const LossGrad lg = cross_entropy_loss(out.logits, yb);
                              grad = backward(model, cache, lg.grad);
                              return lg.loss;
                            });
  return {std::move(net), std::move(history)};
}

/// Same episode for a concatenated-legs network (joint training, naive
/// fine-tuning).
inline std::pair<CatNetwork, LossHistory> train(CatNetwork net, const Dataset& data,
                                                const TrainConfig& config) {
  check_labels(data.y, data.x.rows(), net.head.out_dim());
  auto history = run_epochs(net, data.size(), config,
                            [&](const CatNetwork& model, std::span<const std::size_t> rows,
                                CatNetwork& grad) {
                              CatCache cache;
                              const Matrix xb = gather_rows(data.x, rows);
                              const Labels yb = gather(std::span<const int>(data.y), rows);
                              const Outputs out = forward(model, xb, &cache);
                              const LossGrad lg = cross_entropy_loss(out.logits, yb);
                              grad = backward(model, cache, lg.grad);
                              return lg.loss;
                            });
  return {std::move(net), std::move(history)};
}

inline double evaluate_accuracy(const Network& net, const Dataset& data) {
  return accuracy(forward(net, data.x).logits, data.y);
}

inline double evaluate_accuracy(const CatNetwork& net, const Dataset& data) {
  return accuracy(forward(net, data.x).logits, data.y);
}

}  // namespace richrep
