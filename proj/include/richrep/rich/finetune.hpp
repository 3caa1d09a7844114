#pragma once

#include <cstdint>
#include <vector>

#include "richrep/dataset.hpp"
#include "richrep/nn/network.hpp"
#include "richrep/nn/train.hpp"
#include "richrep/rich/bank.hpp"

namespace richrep {

/// Seed spacing between per-leg fine-tuning episodes; larger than every
/// SeedOffsets entry so derived streams never collide.
inline constexpr std::uint64_t kLegSeedStride = 16;

/// Concatenated bank trunk with a fresh joint head (drawn from
/// Rng(config.seed + SeedOffsets::init)); every parameter trains together.
inline CatNetwork naive_finetune(const RepresentationBank& bank, const Dataset& target,
                                 const TrainConfig& config) {
  bank.validate();
  Rng rng(config.seed + SeedOffsets::init);
  CatNetwork net{bank.extractors,
                 glorot_layer(bank.total_dim(), target.n_classes, Activation::linear, rng)};
  return train(std::move(net), target, config).first;
}

/// Head over concatenated features initialized as [w_1, ..., w_n] / n with
/// bias sum(b_i) / n, so its logits are the mean of the per-leg logits.
inline DenseLayer concat_head_init(std::span<const DenseLayer> heads) {
  if (heads.empty()) throw ParameterError("concat_head_init: no heads");
  std::vector<Matrix> blocks;
  Vector bias = Vector::Zero(heads[0].out_dim());
  for (const auto& h : heads) {
    if (h.out_dim() != heads[0].out_dim()) throw ShapeError("concat_head_init: class counts differ");
    blocks.push_back(h.weights);
    bias += h.bias;
  }
  const double n = static_cast<double>(heads.size());
  DenseLayer out{hcat(blocks) / n, bias / n, Activation::linear};
  return out;
}

struct Stage2Config {
  int epochs = 1;
  double lr = 1e-3;
  double momentum = 0.9;
  int batch_size = 64;
};

struct TwoStageResult {
  RepresentationBank legs;  // fine-tuned extractors with their own target heads
  DenseLayer head;          // final classifier over the concatenated legs

  Matrix logits(const Matrix& x) const { return dense_forward(head, cat_features(legs, x)); }
};

/// Stage 1: each leg is fine-tuned on its own with a fresh head (seed
/// ft.seed + i * kLegSeedStride). Stage 2: legs frozen, final head over the
/// concatenated features starts from concat_head_init and trains briefly.
inline TwoStageResult two_stage_finetune(const RepresentationBank& bank, const Dataset& target,
                                         const TrainConfig& ft, const Stage2Config& stage2 = {},
                                         std::size_t jobs = 1) {
  bank.validate();
  std::vector<Network> legs(bank.size());
  parallel_for(bank.size(), jobs, [&](std::size_t i) {
    TrainConfig cfg = ft;
    cfg.seed = ft.seed + i * kLegSeedStride;
    Rng rng(cfg.seed + SeedOffsets::init);
    const Index width = trunk_out_dim(bank.extractors[i], bank.input_dim);
    Network net{bank.extractors[i], glorot_layer(width, target.n_classes, Activation::linear, rng)};
    legs[i] = train(std::move(net), target, LossKind::cross_entropy, cfg).net;
  });

  TwoStageResult out;
  out.legs = RepresentationBank{bank.input_dim, {}, {}, {}, bank.provenance};
  for (std::size_t i = 0; i < legs.size(); ++i) {
    out.legs.push_back(std::move(legs[i]), ft.seed + i * kLegSeedStride);
  }
  out.head = concat_head_init(out.legs.heads);
  if (stage2.epochs > 0) {
    const Dataset frozen = with_features(target, cat_features(out.legs, target.x));
    TrainConfig cfg;
    cfg.lr = stage2.lr;
    cfg.momentum = stage2.momentum;
    cfg.weight_decay = 0.0;
    cfg.epochs = stage2.epochs;
    cfg.batch_size = stage2.batch_size;
    cfg.seed = ft.seed + bank.size() * kLegSeedStride;
    out.head = std::get<DenseLayer>(
        train(Network{{}, out.head}, frozen, LossKind::cross_entropy, cfg).net.head);
  }
  return out;
}

}  // namespace richrep
