#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "richrep/dataset.hpp"
#include "richrep/errors.hpp"
#include "richrep/nn/network.hpp"
#include "richrep/nn/train.hpp"
#include "richrep/probing/probe.hpp"

namespace richrep {

enum class Provenance { independent_episodes, snapshots, joint_training };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::independent_episodes: return "independent_episodes";
    case Provenance::snapshots: return "snapshots";
    case Provenance::joint_training: return "joint_training";
  }
  return "?";
}

/// Ordered set of feature extractors plus the classifier each was trained
/// with. Members are independent values; nothing is shared between them.
struct RepresentationBank {
  Index input_dim = 0;
  std::vector<Trunk> extractors;
  std::vector<DenseLayer> heads;
  std::vector<std::uint64_t> seeds;
  Provenance provenance = Provenance::independent_episodes;

  std::size_t size() const { return extractors.size(); }

  std::vector<Index> dims() const {
    std::vector<Index> out;
    for (const auto& t : extractors) out.push_back(trunk_out_dim(t, input_dim));
    return out;
  }

  Index total_dim() const {
    Index total = 0;
    for (Index d : dims()) total += d;
    return total;
  }

  Network member(std::size_t i) const { return Network{extractors.at(i), heads.at(i)}; }

  void push_back(Network net, std::uint64_t seed) {
    extractors.push_back(std::move(net.trunk));
    heads.push_back(std::get<DenseLayer>(std::move(net.head)));
    seeds.push_back(seed);
  }

  void validate() const {
    if (extractors.empty()) throw ParameterError("bank: no extractors");
    if (heads.size() != extractors.size() || seeds.size() != extractors.size()) {
      throw ShapeError("bank: extractor, head and seed counts differ");
    }
    const auto d = dims();
    for (std::size_t i = 0; i < heads.size(); ++i) {
      if (heads[i].in_dim() != d[i]) throw ShapeError("bank: head width does not match extractor");
    }
  }
};

/// Bank restricted to the given members, in the given order.
inline RepresentationBank select_members(const RepresentationBank& bank,
                                         std::span<const std::size_t> members) {
  RepresentationBank out{bank.input_dim, {}, {}, {}, bank.provenance};
  for (std::size_t i : members) {
    out.extractors.push_back(bank.extractors.at(i));
    out.heads.push_back(bank.heads.at(i));
    out.seeds.push_back(bank.seeds.at(i));
  }
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index is handled
/// by exactly one call; callers write results into per-index slots.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += jobs) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// One network per seed: identical data, architecture and hyper-parameters;
/// only the seed (initialization and batch order) differs.
inline RepresentationBank train_episodes(const Dataset& task, const Architecture& arch,
                                         const TrainConfig& base, std::span<const std::uint64_t> seeds,
                                         std::size_t jobs = 1) {
  if (seeds.empty()) throw ParameterError("train_episodes: no seeds");
  std::vector<Network> nets(seeds.size());
  parallel_for(seeds.size(), jobs, [&](std::size_t i) {
    TrainConfig cfg = base;
    cfg.seed = seeds[i];
    try {
      Network init = make_network(task.x.cols(), arch, task.n_classes, HeadKind::linear, seeds[i]);
      nets[i] = train(std::move(init), task, LossKind::cross_entropy, cfg).net;
    } catch (const TrainingError& e) {
      throw EpisodeError(e.what(), seeds[i]);
    }
  });
  RepresentationBank bank{task.x.cols(), {}, {}, {}, Provenance::independent_episodes};
  for (std::size_t i = 0; i < nets.size(); ++i) bank.push_back(std::move(nets[i]), seeds[i]);
  return bank;
}

/// `count` epochs evenly spaced over an episode, ending at its last epoch.
inline std::vector<int> even_snapshot_epochs(int epochs, int count) {
  if (count < 1 || epochs < count) throw ParameterError("snapshot count must lie in [1, epochs]");
  std::vector<int> out;
  for (int i = 1; i <= count; ++i) out.push_back(epochs * i / count);
  return out;
}

/// One training episode; parameter copies taken after each listed epoch
/// (1-based, strictly increasing, at most config.epochs).
inline RepresentationBank snapshot_episode(const Dataset& task, const Architecture& arch,
                                           const TrainConfig& config,
                                           std::span<const int> snapshot_epochs) {
  if (snapshot_epochs.empty()) throw ParameterError("snapshot_episode: no snapshot epochs");
  for (std::size_t i = 0; i < snapshot_epochs.size(); ++i) {
    const int e = snapshot_epochs[i];
    if (e < 1 || e > config.epochs || (i > 0 && e <= snapshot_epochs[i - 1])) {
      throw ParameterError("snapshot epochs must be increasing and within [1, epochs]");
    }
  }
  RepresentationBank bank{task.x.cols(), {}, {}, {}, Provenance::snapshots};
  Network net = make_network(task.x.cols(), arch, task.n_classes, HeadKind::linear, config.seed);
  std::size_t next = 0;
  run_epochs(net, task.size(), config,
             [&](const Network& model, std::span<const std::size_t> rows, Network& grad) {
               NetworkCache cache;
               const Matrix xb = gather_rows(task.x, rows);
               const Labels yb = gather(std::span<const int>(task.y), rows);
               const LossGrad lg = cross_entropy_loss(forward(model, xb, &cache).logits, yb);
               grad = backward(model, cache, lg.grad);
               return lg.loss;
             },
             [&](int epoch, const Network& model) {
               if (next < snapshot_epochs.size() && epoch == snapshot_epochs[next]) {
                 bank.push_back(model, config.seed);
                 ++next;
               }
             });
  return bank;
}

/// Extractor outputs side by side, in bank order.
inline FeatureMatrix cat_features(const RepresentationBank& bank, const Matrix& x) {
  if (bank.extractors.empty()) throw ParameterError("cat_features: empty bank");
  if (x.cols() != bank.input_dim) throw ShapeError("cat_features: input width mismatch");
  std::vector<Matrix> blocks;
  blocks.reserve(bank.size());
  for (const auto& t : bank.extractors) blocks.push_back(trunk_forward(t, x));
  return hcat(blocks);
}

inline FeatureMatrix member_features(const RepresentationBank& bank, std::size_t i, const Matrix& x) {
  return trunk_forward(bank.extractors.at(i), x);
}

/// Average of per-member probe probabilities.
inline Matrix subset_ensemble_predict(const RepresentationBank& bank,
                                      std::span<const ProbeResult> probes, const Matrix& x) {
  if (probes.size() != bank.size()) {
    throw ShapeError("subset_ensemble_predict: " + std::to_string(probes.size()) + " probes for " +
                     std::to_string(bank.size()) + " extractors");
  }
  Matrix mean;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const Matrix p = softmax_rows(probe_logits(probes[i], member_features(bank, i, x)));
    if (i == 0) {
      mean = p;
    } else {
      mean += p;
    }
  }
  return mean / static_cast<double>(bank.size());
}

/// n legs trained as one network with a single head from one seed. The bank
/// holds the legs; head i is the joint head's column block for leg i with
/// the bias split evenly, so summing the per-leg logits gives the joint
/// logits.
inline RepresentationBank train_joint(const Dataset& task, const Architecture& arch,
                                      std::size_t n_legs, const TrainConfig& config) {
  CatNetwork net = make_cat_network(task.x.cols(), arch, n_legs, task.n_classes, config.seed);
  net = train(std::move(net), task, config).first;
  RepresentationBank bank{task.x.cols(), {}, {}, {}, Provenance::joint_training};
  Index at = 0;
  for (auto& leg : net.legs) {
    const Index w = trunk_out_dim(leg, task.x.cols());
    DenseLayer head{net.head.weights.middleCols(at, w),
                    net.head.bias / static_cast<double>(n_legs), Activation::linear};
    at += w;
    bank.extractors.push_back(std::move(leg));
    bank.heads.push_back(std::move(head));
    bank.seeds.push_back(config.seed);
  }
  return bank;
}

struct LegGap {
  std::vector<double> accuracies;
  double gap = 0.0;
};

/// Training accuracy of a probe fit on each leg's features alone, and the
/// spread between the best and worst leg.
inline LegGap leg_probe_gap(const RepresentationBank& bank, const Dataset& data,
                            const ProbeConfig& config) {
  if (bank.extractors.empty()) throw ParameterError("leg_probe_gap: empty bank");
  LegGap out;
  for (std::size_t i = 0; i < bank.size(); ++i) {
    Rng rng(0);
    out.accuracies.push_back(
        fit_probe(member_features(bank, i, data.x), data.y, data.n_classes, config, rng).train_accuracy);
  }
  const auto [lo, hi] = std::minmax_element(out.accuracies.begin(), out.accuracies.end());
  out.gap = *hi - *lo;
  return out;
}

}  // namespace richrep
