#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "richrep/dataset.hpp"
#include "richrep/errors.hpp"
#include "richrep/rng.hpp"

namespace richrep {

/// Synthetic classification task with a spurious shortcut.
///
/// Each row has three blocks: a core block (class prototype plus noise), a
/// spurious block (prototype of class s plus noise, where s == y with the
/// environment's correlation rho, otherwise a uniformly drawn other class)
/// and a pure-noise block.
struct ShiftSpec {
  int n_classes = 5;
  int d_core = 5;
  int d_spur = 5;
  int d_noise = 10;
  double core_scale = 1.0;
  double spur_scale = 2.0;
  double noise_std = 1.0;
  std::vector<double> env_correlations{0.9, 0.8};
  double ood_correlation = 0.2;
  int n_per_env = 1000;
  int n_test = 1000;

  int width() const { return d_core + d_spur + d_noise; }

  void validate() const {
    if (n_classes < 2) throw ParameterError("shift spec: need at least two classes");
    if (d_core < n_classes || d_spur < n_classes) {
      throw ParameterError("shift spec: core and spurious blocks need one dimension per class");
    }
    if (d_noise < 0) throw ParameterError("shift spec: d_noise must be >= 0");
    if (!(core_scale > 0.0) || !(spur_scale > 0.0) || !(noise_std >= 0.0)) {
      throw ParameterError("shift spec: scales must be positive and noise_std >= 0");
    }
    if (env_correlations.empty()) throw ParameterError("shift spec: no training environments");
    auto bad = [](double r) { return !(r >= 0.0 && r <= 1.0); };
    for (double r : env_correlations) {
      if (bad(r)) throw ParameterError("shift spec: correlation outside [0, 1]");
    }
    if (bad(ood_correlation)) throw ParameterError("shift spec: ood correlation outside [0, 1]");
    if (n_per_env < 1 || n_test < 1) throw ParameterError("shift spec: sizes must be positive");
  }
};

struct ShiftData {
  std::vector<Dataset> train_envs;  // env ids 0..E-1
  Dataset id_test;                  // rows cycle through the training environments
  Dataset ood_test;                 // env id E
};

namespace detail {

struct ShiftRowWriter {
  const ShiftSpec& spec;
  Rng& rng;

  /// Draws one row into `ds` at `row` under correlation `rho`; returns the
  /// spurious class.
  int draw(Dataset& ds, Index row, double rho, int env) {
    const int k = spec.n_classes;
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
    Index col = 0;
    for (int j = 0; j < spec.d_core; ++j, ++col) {
      ds.x(row, col) = (j == y ? spec.core_scale : 0.0) + spec.noise_std * rng.normal();
    }
    int s = y;
    if (!(rng.uniform() < rho)) {
      s = static_cast<int>(rng.below(static_cast<std::uint64_t>(k - 1)));
      if (s >= y) ++s;
    }
    for (int j = 0; j < spec.d_spur; ++j, ++col) {
      ds.x(row, col) = (j == s ? spec.spur_scale : 0.0) + spec.noise_std * rng.normal();
    }
    for (int j = 0; j < spec.d_noise; ++j, ++col) ds.x(row, col) = spec.noise_std * rng.normal();
    ds.y[static_cast<std::size_t>(row)] = y;
    ds.env[static_cast<std::size_t>(row)] = env;
    return s;
  }
};

inline Dataset empty_dataset(int rows, const ShiftSpec& spec) {
  return Dataset{Matrix(rows, spec.width()), Labels(static_cast<std::size_t>(rows)),
                 std::vector<int>(static_cast<std::size_t>(rows)), spec.n_classes};
}

}  // namespace detail

/// Generated data plus the spurious class drawn for every training row.
struct ShiftDraw {
  ShiftData data;
  std::vector<std::vector<int>> train_spurious;
};

/// Generates training environments, then id_test, then ood_test, all from one
/// Rng(seed) stream.
inline ShiftDraw gen_shift_with_spurious(const ShiftSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  detail::ShiftRowWriter writer{spec, rng};
  ShiftDraw out;
  const int n_env = static_cast<int>(spec.env_correlations.size());
  for (int e = 0; e < n_env; ++e) {
    Dataset ds = detail::empty_dataset(spec.n_per_env, spec);
    std::vector<int> spur(static_cast<std::size_t>(spec.n_per_env));
    for (int r = 0; r < spec.n_per_env; ++r) {
      spur[static_cast<std::size_t>(r)] =
          writer.draw(ds, r, spec.env_correlations[static_cast<std::size_t>(e)], e);
    }
    out.data.train_envs.push_back(std::move(ds));
    out.train_spurious.push_back(std::move(spur));
  }
  out.data.id_test = detail::empty_dataset(spec.n_test, spec);
  for (int r = 0; r < spec.n_test; ++r) {
    const int e = r % n_env;
    writer.draw(out.data.id_test, r, spec.env_correlations[static_cast<std::size_t>(e)], e);
  }
  out.data.ood_test = detail::empty_dataset(spec.n_test, spec);
  for (int r = 0; r < spec.n_test; ++r) {
    writer.draw(out.data.ood_test, r, spec.ood_correlation, n_env);
  }
  return out;
}

inline ShiftData gen_shift(const ShiftSpec& spec, std::uint64_t seed) {
  return gen_shift_with_spurious(spec, seed).data;
}

}  // namespace richrep
