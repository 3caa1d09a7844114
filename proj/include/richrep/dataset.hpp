#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "richrep/errors.hpp"
#include "richrep/types.hpp"

namespace richrep {

/// Labelled examples with an environment id per row.
struct Dataset {
  Matrix x;
  Labels y;
  std::vector<int> env;
  int n_classes = 0;

  std::size_t size() const { return y.size(); }

  void validate() const {
    if (static_cast<Index>(y.size()) != x.rows() || env.size() != y.size()) {
      throw ShapeError("dataset: row counts disagree");
    }
    check_labels(y, x.rows(), n_classes);
    for (int e : env) {
      if (e < 0) throw DataError("dataset: negative environment id");
    }
    if (!x.allFinite()) throw DataError("dataset: non-finite feature");
  }
};

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> rows) {
  return Dataset{gather_rows(ds.x, rows), gather(std::span<const int>(ds.y), rows),
                 gather(std::span<const int>(ds.env), rows), ds.n_classes};
}

/// Rows of every dataset in order. All parts must agree on width and classes.
inline Dataset concat(std::span<const Dataset> parts) {
  if (parts.empty()) throw ShapeError("concat: no datasets");
  Dataset out;
  out.n_classes = parts[0].n_classes;
  Index rows = 0;
  for (const auto& p : parts) {
    if (p.x.cols() != parts[0].x.cols()) throw ShapeError("concat: widths differ");
    if (p.n_classes != out.n_classes) throw DataError("concat: class counts differ");
    rows += p.x.rows();
  }
  out.x.resize(rows, parts[0].x.cols());
  Index at = 0;
  for (const auto& p : parts) {
    out.x.middleRows(at, p.x.rows()) = p.x;
    at += p.x.rows();
    out.y.insert(out.y.end(), p.y.begin(), p.y.end());
    out.env.insert(out.env.end(), p.env.begin(), p.env.end());
  }
  return out;
}

/// Same rows with the features replaced (e.g. by a representation of them).
inline Dataset with_features(const Dataset& ds, Matrix features) {
  if (features.rows() != ds.x.rows()) throw ShapeError("with_features: row mismatch");
  return Dataset{std::move(features), ds.y, ds.env, ds.n_classes};
}

inline std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

}  // namespace richrep
