#pragma once

#include <optional>
#include <span>
#include <vector>

#include "richrep/dataset.hpp"
#include "richrep/errors.hpp"
#include "richrep/nn/losses.hpp"
#include "richrep/nn/network.hpp"
#include "richrep/nn/train.hpp"
#include "richrep/rich/bank.hpp"

namespace richrep {

enum class DistillMode { kl, ce_kl, cosine };

struct DistillSpec {
  DistillMode mode = DistillMode::kl;
  double tau = 10.0;
  double alpha = 0.9;  // ce_kl only
  Architecture student_arch;

  void validate() const {
    check_temperature(tau);
    if (mode == DistillMode::ce_kl && !(alpha >= 0.0 && alpha <= 1.0)) {
      throw ParameterError("distill: alpha must lie in [0, 1]");
    }
  }
};

/// One trunk with a head per teacher.
struct DistillStudent {
  Trunk trunk;
  std::vector<DenseLayer> heads;
};

template <class S>
  requires std::same_as<std::remove_const_t<S>, DistillStudent>
void append_blocks(S& s, std::size_t first, std::vector<ParamBlock<ScalarOf<S>>>& out) {
  append_blocks(s.trunk, first, out);
  for (std::size_t i = 0; i < s.heads.size(); ++i) append_blocks(s.heads[i], first + s.trunk.size() + i, out);
}

/// What each head is trained to match: the frozen teacher's logits
/// (kl, ce_kl) or the teacher's features (cosine, i.e. identity teacher head).
inline std::vector<Matrix> teacher_targets(const RepresentationBank& bank, DistillMode mode,
                                           const Matrix& x) {
  std::vector<Matrix> out;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    Matrix feat = member_features(bank, i, x);
    out.push_back(mode == DistillMode::cosine ? feat : dense_forward(bank.heads[i], feat));
  }
  return out;
}

/// Fresh student drawn from Rng(seed + SeedOffsets::init): trunk first, then
/// one linear head per teacher (width = teacher classes, or teacher feature
/// width for cosine mode).
inline DistillStudent make_student(const RepresentationBank& bank, const DistillSpec& spec,
                                   std::uint64_t seed) {
  Rng rng(seed + SeedOffsets::init);
  DistillStudent s{make_trunk(bank.input_dim, spec.student_arch, rng), {}};
  const Index feat = trunk_out_dim(s.trunk, bank.input_dim);
  const auto dims = bank.dims();
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const Index out = spec.mode == DistillMode::cosine ? dims[i] : bank.heads[i].out_dim();
    s.heads.push_back(glorot_layer(feat, out, Activation::linear, rng));
  }
  return s;
}

/// Summed per-teacher distillation loss on the given rows, with gradient.
inline double distill_batch_loss(const DistillStudent& student, const DistillSpec& spec,
                                 std::span<const Matrix> targets, const Dataset& data,
                                 std::span<const std::size_t> rows, DistillStudent& grad) {
  TrunkCache trunk_cache;
  const Matrix xb = gather_rows(data.x, rows);
  const Labels yb = gather(std::span<const int>(data.y), rows);
  const Matrix feat = trunk_forward(student.trunk, xb, &trunk_cache);
  Matrix grad_feat = Matrix::Zero(feat.rows(), feat.cols());
  grad.heads.resize(student.heads.size());
  double total = 0.0;
  for (std::size_t i = 0; i < student.heads.size(); ++i) {
    DenseCache head_cache;
    const Matrix out = dense_forward(student.heads[i], feat, &head_cache);
    const Matrix target = gather_rows(targets[i], rows);
    LossGrad lg;
    switch (spec.mode) {
      case DistillMode::kl: lg = kl_distill_loss(target, out, spec.tau); break;
      case DistillMode::ce_kl: lg = ce_kl_distill_loss(target, out, yb, spec.alpha, spec.tau); break;
      case DistillMode::cosine: lg = cosine_distill_loss(target, out); break;
    }
    Matrix g_feat;
    grad.heads[i] = dense_backward(student.heads[i], head_cache, lg.grad, &g_feat);
    grad_feat += g_feat;
    total += lg.loss;
  }
  grad.trunk = trunk_backward(student.trunk, trunk_cache, grad_feat);
  return total;
}

struct DistillResult {
  DistillStudent student;
  LossHistory history;
};

/// Multi-head distillation of a bank into a single trunk. Teachers stay
/// frozen (their targets are computed once up front); student trunk and
/// heads train jointly on the summed per-teacher loss.
inline DistillResult distill(const RepresentationBank& bank, const DistillSpec& spec,
                             const Dataset& data, const TrainConfig& config,
                             std::optional<DistillStudent> init = std::nullopt) {
  spec.validate();
  bank.validate();
  if (data.size() == 0) throw DataError("distill: empty dataset");
  if (data.x.cols() != bank.input_dim) throw ShapeError("distill: input width mismatch");
  const std::vector<Matrix> targets = teacher_targets(bank, spec.mode, data.x);
  DistillStudent student = init ? std::move(*init) : make_student(bank, spec, config.seed);
  if (student.heads.size() != bank.size()) throw ShapeError("distill: one student head per teacher");
  LossHistory history = run_epochs(
      student, data.size(), config,
      [&](const DistillStudent& s, std::span<const std::size_t> rows, DistillStudent& grad) {
        return distill_batch_loss(s, spec, targets, data, rows, grad);
      });
  return {std::move(student), std::move(history)};
}

/// The distilled representation as a single-member bank (heads replaced by
/// the first student head so the bank stays well-formed).
inline RepresentationBank student_bank(const DistillStudent& s, Index input_dim, std::uint64_t seed) {
  RepresentationBank bank{input_dim, {s.trunk}, {s.heads.front()}, {seed}, Provenance::independent_episodes};
  return bank;
}

}  // namespace richrep
