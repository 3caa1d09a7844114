#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "richrep/binary_io.hpp"
#include "richrep/dataset.hpp"
#include "richrep/errors.hpp"

namespace richrep {

// IDX files are big-endian: u32 magic, u32 dimension sizes, then unsigned
// bytes. Images use magic 0x00000803 (count, rows, cols); labels 0x00000801
// (count).

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::uint32_t read_be32(std::string_view bytes, std::size_t at) {
  if (bytes.size() < at + 4) throw FormatError("IDX header truncated");
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(bytes[at + i]);
  return v;
}

inline void write_be32(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

}  // namespace detail

struct IdxImages {
  std::uint32_t count = 0, rows = 0, cols = 0;
  std::string_view pixels;
};

inline IdxImages parse_idx_images(std::string_view bytes) {
  if (bytes.size() < 4) throw FormatError("IDX images: file too short for magic");
  if (detail::read_be32(bytes, 0) != kIdxImagesMagic) throw FormatError("IDX images: bad magic");
  IdxImages img;
  img.count = detail::read_be32(bytes, 4);
  img.rows = detail::read_be32(bytes, 8);
  img.cols = detail::read_be32(bytes, 12);
  const std::size_t need = static_cast<std::size_t>(img.count) * img.rows * img.cols;
  if (bytes.size() - 16 != need) {
    throw TruncationError("IDX images: header promises " + std::to_string(need) + " bytes, found " +
                          std::to_string(bytes.size() - 16));
  }
  img.pixels = bytes.substr(16);
  return img;
}

inline std::string_view parse_idx_labels(std::string_view bytes) {
  if (bytes.size() < 4) throw FormatError("IDX labels: file too short for magic");
  if (detail::read_be32(bytes, 0) != kIdxLabelsMagic) throw FormatError("IDX labels: bad magic");
  const std::uint32_t count = detail::read_be32(bytes, 4);
  if (bytes.size() - 8 != count) {
    throw TruncationError("IDX labels: header promises " + std::to_string(count) + " bytes, found " +
                          std::to_string(bytes.size() - 8));
  }
  return bytes.substr(8);
}

/// Images flattened row-major and scaled to [0, 1] by /255; environment 0;
/// n_classes = 1 + the largest label.
inline Dataset idx_dataset(std::string_view image_bytes, std::string_view label_bytes) {
  const IdxImages img = parse_idx_images(image_bytes);
  const std::string_view labels = parse_idx_labels(label_bytes);
  if (labels.size() != img.count) {
    throw DataError("IDX: " + std::to_string(img.count) + " images but " +
                    std::to_string(labels.size()) + " labels");
  }
  const Index width = static_cast<Index>(img.rows) * img.cols;
  Dataset ds{Matrix(img.count, width), Labels(img.count), std::vector<int>(img.count, 0), 0};
  for (Index r = 0; r < ds.x.rows(); ++r) {
    for (Index c = 0; c < width; ++c) {
      ds.x(r, c) = static_cast<std::uint8_t>(img.pixels[static_cast<std::size_t>(r * width + c)]) / 255.0;
    }
    ds.y[static_cast<std::size_t>(r)] = static_cast<std::uint8_t>(labels[static_cast<std::size_t>(r)]);
    ds.n_classes = std::max(ds.n_classes, ds.y[static_cast<std::size_t>(r)] + 1);
  }
  return ds;
}

inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  return idx_dataset(binary::read_file(images_path), binary::read_file(labels_path));
}

inline std::string encode_idx_images(std::span<const std::uint8_t> pixels, std::uint32_t count,
                                     std::uint32_t rows, std::uint32_t cols) {
  if (pixels.size() != static_cast<std::size_t>(count) * rows * cols) {
    throw ShapeError("IDX images: pixel count does not match dimensions");
  }
  std::string out;
  detail::write_be32(out, kIdxImagesMagic);
  detail::write_be32(out, count);
  detail::write_be32(out, rows);
  detail::write_be32(out, cols);
  out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
  return out;
}

inline std::string encode_idx_labels(std::span<const std::uint8_t> labels) {
  std::string out;
  detail::write_be32(out, kIdxLabelsMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.append(reinterpret_cast<const char*>(labels.data()), labels.size());
  return out;
}

}  // namespace richrep
