#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "richrep/binary_io.hpp"
#include "richrep/dataset.hpp"
#include "richrep/types.hpp"

namespace richrep {

// "RRFM" labelled feature files (little-endian):
//   magic "RRFM", u32 rows, u32 cols, f64 row-major values,
//   u32 label count, i32 labels.
// Environment ids travel in a sidecar vector file: u32 count, i32 entries.

struct LabeledMatrix {
  Matrix features;
  Labels labels;
};

inline std::string encode_features(const Matrix& features, std::span<const int> labels) {
  binary::Writer w;
  w.magic("RRFM");
  w.u32(static_cast<std::uint32_t>(features.rows()));
  w.u32(static_cast<std::uint32_t>(features.cols()));
  for (Index r = 0; r < features.rows(); ++r) {
    for (Index c = 0; c < features.cols(); ++c) w.f64(features(r, c));
  }
  w.u32(static_cast<std::uint32_t>(labels.size()));
  for (int y : labels) w.i32(y);
  return w.bytes();
}

inline LabeledMatrix decode_features(std::string_view bytes) {
  binary::Reader r(bytes);
  r.expect_magic("RRFM");
  const std::uint32_t rows = r.u32();
  const std::uint32_t cols = r.u32();
  r.need(static_cast<std::size_t>(rows) * cols * 8);
  LabeledMatrix out{Matrix(rows, cols), {}};
  for (Index i = 0; i < out.features.rows(); ++i) {
    for (Index j = 0; j < out.features.cols(); ++j) out.features(i, j) = r.f64();
  }
  const std::uint32_t n = r.u32();
  r.need(static_cast<std::size_t>(n) * 4);
  out.labels.resize(n);
  for (auto& y : out.labels) y = r.i32();
  r.expect_end();
  return out;
}

inline std::string encode_int_vector(std::span<const int> values) {
  binary::Writer w;
  w.u32(static_cast<std::uint32_t>(values.size()));
  for (int v : values) w.i32(v);
  return w.bytes();
}

inline std::vector<int> decode_int_vector(std::string_view bytes) {
  binary::Reader r(bytes);
  const std::uint32_t n = r.u32();
  r.need(static_cast<std::size_t>(n) * 4);
  std::vector<int> out(n);
  for (auto& v : out) v = r.i32();
  r.expect_end();
  return out;
}

inline void save_features(const std::filesystem::path& path, const Matrix& features,
                          std::span<const int> labels) {
  binary::write_file(path, encode_features(features, labels));
}

inline LabeledMatrix load_features(const std::filesystem::path& path) {
  return decode_features(binary::read_file(path));
}

/// Writes `path` (RRFM) and `path` + ".env" (environment ids).
inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  save_features(path, ds.x, ds.y);
  binary::write_file(path.string() + ".env", encode_int_vector(ds.env));
}

inline Dataset load_dataset(const std::filesystem::path& path, int n_classes = 0) {
  LabeledMatrix m = load_features(path);
  Dataset ds{std::move(m.features), std::move(m.labels), {}, n_classes};
  const std::filesystem::path env_path = path.string() + ".env";
  if (std::filesystem::exists(env_path)) {
    ds.env = decode_int_vector(binary::read_file(env_path));
  } else {
    ds.env.assign(ds.y.size(), 0);
  }
  if (ds.n_classes == 0) {
    for (int y : ds.y) ds.n_classes = std::max(ds.n_classes, y + 1);
  }
  ds.validate();
  return ds;
}

}  // namespace richrep
