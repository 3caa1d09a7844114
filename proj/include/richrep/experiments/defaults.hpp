#pragma once

#include "richrep/nn/network.hpp"
#include "richrep/nn/optim.hpp"
#include "richrep/probing/probe.hpp"
#include "richrep/rich/distill.hpp"
#include "richrep/tasks/shift.hpp"

namespace richrep::desk {

// Desk-scale settings shared by the pipelines, the example configs and the
// acceptance checks. The shift task is sized so a strong spurious block
// dominates training while the weaker core block still carries the label;
// a 0.2 OOD correlation leaves the shortcut almost useless at test time.

inline ShiftSpec shift_spec() {
  ShiftSpec s;
  s.n_classes = 5;
  s.d_core = 5;
  s.d_spur = 5;
  s.d_noise = 10;
  s.core_scale = 1.5;
  s.spur_scale = 3.0;
  s.noise_std = 1.0;
  s.env_correlations = {0.97, 0.92, 0.87};
  s.ood_correlation = 0.2;
  s.n_per_env = 800;
  s.n_test = 1000;
  return s;
}

/// Ten-class variant used for base/novel few-shot splits.
inline ShiftSpec fewshot_spec() {
  ShiftSpec s = shift_spec();
  s.n_classes = 10;
  s.d_core = 10;
  s.d_spur = 10;
  s.n_per_env = 1000;
  return s;
}

inline Architecture architecture() { return Architecture{{64, 32}}; }

inline TrainConfig train_config() {
  TrainConfig c;
  c.lr = 0.05;
  c.momentum = 0.9;
  c.weight_decay = 2e-2;
  c.epochs = 20;
  c.batch_size = 64;
  c.schedule = Schedule::cosine();
  return c;
}

inline ProbeConfig probe_config() {
  ProbeConfig p;
  p.l2 = 1e-3;
  p.standardize = true;
  p.max_iters = 2000;
  return p;
}

inline TrainConfig distill_config() {
  TrainConfig c = train_config();
  c.weight_decay = 0.0;
  return c;
}

inline DistillSpec distill_spec() {
  DistillSpec d;
  d.mode = DistillMode::kl;
  d.tau = 10.0;
  d.student_arch = architecture();
  return d;
}

inline TrainConfig finetune_config() {
  TrainConfig c = train_config();
  c.lr = 0.01;
  c.weight_decay = 0.0;
  c.batch_size = 32;
  return c;
}

/// Per-episode classifier for few-shot evaluation.
inline ProbeConfig episode_probe() {
  ProbeConfig p;
  p.l2 = 1e-2;
  p.standardize = false;
  p.max_iters = 500;
  return p;
}

}  // namespace richrep::desk
