#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "richrep/errors.hpp"

namespace richrep {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Row-per-example feature matrix. Same storage as Matrix; the alias marks
/// values that hold a materialized representation.
using FeatureMatrix = Matrix;

using Labels = std::vector<int>;

inline void check_features(const Matrix& x, const char* what = "features") {
  if (x.rows() < 1 || x.cols() < 1) {
    throw ShapeError(std::string(what) + ": empty matrix");
  }
  if (!x.allFinite()) {
    throw DataError(std::string(what) + ": non-finite entry");
  }
}

inline void check_labels(std::span<const int> labels, Index rows, Index n_classes) {
  if (static_cast<Index>(labels.size()) != rows) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " != rows " +
                     std::to_string(rows));
  }
  for (int y : labels) {
    if (y < 0 || y >= n_classes) {
      throw DataError("label " + std::to_string(y) + " outside [0, " +
                      std::to_string(n_classes) + ")");
    }
  }
}

inline Matrix gather_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.row(static_cast<Index>(i)) = x.row(static_cast<Index>(rows[i]));
  }
  return out;
}

template <class T>
std::vector<T> gather(std::span<const T> v, std::span<const std::size_t> rows) {
  std::vector<T> out;
  out.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(v[r]);
  return out;
}

inline Matrix hcat(std::span<const Matrix> blocks) {
  if (blocks.empty()) throw ShapeError("hcat: no blocks");
  Index cols = 0;
  for (const auto& b : blocks) {
    if (b.rows() != blocks[0].rows()) throw ShapeError("hcat: row counts differ");
    cols += b.cols();
  }
  Matrix out(blocks[0].rows(), cols);
  Index at = 0;
  for (const auto& b : blocks) {
    out.middleCols(at, b.cols()) = b;
    at += b.cols();
  }
  return out;
}

/// Row-wise argmax; ties go to the lowest column index.
inline std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Index r = 0; r < scores.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < scores.cols(); ++c) {
      if (scores(r, c) > scores(r, best)) best = c;
    }
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

inline double accuracy(const Matrix& scores, std::span<const int> labels) {
  if (static_cast<Index>(labels.size()) != scores.rows()) throw ShapeError("accuracy: row mismatch");
  if (labels.empty()) return 0.0;
  const auto pred = argmax_rows(scores);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace richrep
