#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "richrep/dataset.hpp"
#include "richrep/tasks/idx.hpp"
#include "richrep/tasks/shift.hpp"
#include "richrep/tasks/split.hpp"

namespace richrep {

/// Class-split transfer over an IDX image set: the network pre-trains on the
/// base classes and is evaluated on the novel ones.
struct IdxSource {
  std::filesystem::path images;
  std::filesystem::path labels;
  std::vector<int> base_classes;
  std::vector<int> novel_classes;
  double id_holdout = 0.2;  // base-class rows held out as the ID test set
};

using TaskSource = std::variant<ShiftSpec, IdxSource>;

/// Pre-training data, its in-distribution test set, and the shifted target.
struct TransferData {
  std::string name;
  Dataset pretrain;
  Dataset id_test;
  Dataset target;
};

inline std::string task_name(const TaskSource& source) {
  return std::holds_alternative<ShiftSpec>(source) ? "shift" : "idx";
}

/// Data for one seed group. Synthetic data is regenerated from `data_seed`;
/// IDX data is fixed and only the ID hold-out depends on the seed.
inline TransferData make_transfer_data(const TaskSource& source, std::uint64_t data_seed) {
  if (const auto* spec = std::get_if<ShiftSpec>(&source)) {
    ShiftData d = gen_shift(*spec, data_seed);
    return {"shift", concat(std::span<const Dataset>(d.train_envs)), std::move(d.id_test),
            std::move(d.ood_test)};
  }
  const auto& idx = std::get<IdxSource>(source);
  const Dataset all = load_idx(idx.images, idx.labels);
  auto [base, novel] = split_classes(all, idx.base_classes, idx.novel_classes);
  auto [kept, held] = holdout_split(base, idx.id_holdout, data_seed);
  return {"idx", std::move(kept), std::move(held), std::move(novel)};
}

/// Base-class and novel-class data for few-shot evaluation.
inline std::pair<Dataset, Dataset> make_fewshot_data(const TaskSource& source,
                                                     std::span<const int> base_classes,
                                                     std::span<const int> novel_classes,
                                                     std::uint64_t data_seed) {
  if (const auto* spec = std::get_if<ShiftSpec>(&source)) {
    ShiftData d = gen_shift(*spec, data_seed);
    return split_classes(concat(std::span<const Dataset>(d.train_envs)), base_classes, novel_classes);
  }
  const auto& idx = std::get<IdxSource>(source);
  return split_classes(load_idx(idx.images, idx.labels), base_classes, novel_classes);
}

}  // namespace richrep
