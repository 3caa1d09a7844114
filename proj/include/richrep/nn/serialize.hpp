#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "richrep/binary_io.hpp"
#include "richrep/nn/network.hpp"

namespace richrep {

// "RRNN" network files, all integers and floats little-endian:
//
//   magic   "RRNN"
//   u32     version (1)
//   u32     layer count (trunk layers + head)
//   per layer:
//     u32   n_out
//     u32   n_in
//     u8    activation: 0 linear, 1 relu, 2 cosine head
//     f64   weights, row-major (n_out * n_in)
//     f64   bias (n_out)
//
// The head is always the last record. A cosine head stores its directions as
// the weights and its gains as the bias.

inline constexpr std::uint32_t kNetworkFormatVersion = 1;
inline constexpr std::uint8_t kCosineHeadCode = 2;

namespace detail {

inline void write_layer(binary::Writer& w, const Matrix& weights, const Vector& bias,
                        std::uint8_t code) {
  w.u32(static_cast<std::uint32_t>(weights.rows()));
  w.u32(static_cast<std::uint32_t>(weights.cols()));
  w.u8(code);
  for (Index r = 0; r < weights.rows(); ++r) {
    for (Index c = 0; c < weights.cols(); ++c) w.f64(weights(r, c));
  }
  for (Index i = 0; i < bias.size(); ++i) w.f64(bias(i));
}

}  // namespace detail

inline std::string encode_network(const Network& net) {
  binary::Writer w;
  w.magic("RRNN");
  w.u32(kNetworkFormatVersion);
  w.u32(static_cast<std::uint32_t>(net.trunk.size() + 1));
  for (const auto& layer : net.trunk) {
    detail::write_layer(w, layer.weights, layer.bias, static_cast<std::uint8_t>(layer.activation));
  }
  if (const auto* lin = std::get_if<DenseLayer>(&net.head)) {
    detail::write_layer(w, lin->weights, lin->bias, static_cast<std::uint8_t>(lin->activation));
  } else {
    const auto& cos = std::get<CosineHead>(net.head);
    detail::write_layer(w, cos.directions, cos.gains, kCosineHeadCode);
  }
  return w.bytes();
}

inline Network decode_network(std::string_view bytes) {
  binary::Reader r(bytes);
  r.expect_magic("RRNN");
  const std::uint32_t version = r.u32();
  if (version != kNetworkFormatVersion) {
    throw FormatError("unsupported RRNN version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  if (count == 0) throw FormatError("RRNN file has no layers");
  Network net;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t n_out = r.u32();
    const std::uint32_t n_in = r.u32();
    const std::uint8_t code = r.u8();
    if (code > kCosineHeadCode) throw FormatError("unknown activation code");
    if (code == kCosineHeadCode && i + 1 != count) {
      throw FormatError("cosine head must be the last layer");
    }
    r.need((static_cast<std::size_t>(n_out) * n_in + n_out) * 8);
    Matrix weights(n_out, n_in);
    for (Index a = 0; a < weights.rows(); ++a) {
      for (Index b = 0; b < weights.cols(); ++b) weights(a, b) = r.f64();
    }
    Vector bias(n_out);
    for (Index a = 0; a < bias.size(); ++a) bias(a) = r.f64();
    const Index prev = net.trunk.empty() ? -1 : net.trunk.back().out_dim();
    if (prev >= 0 && prev != static_cast<Index>(n_in)) {
      throw FormatError("layer " + std::to_string(i) + " input width does not match previous layer");
    }
    if (i + 1 == count) {
      if (code == kCosineHeadCode) {
        net.head = CosineHead{std::move(weights), std::move(bias)};
      } else {
        net.head = DenseLayer{std::move(weights), std::move(bias), static_cast<Activation>(code)};
      }
    } else {
      net.trunk.push_back(DenseLayer{std::move(weights), std::move(bias), static_cast<Activation>(code)});
    }
  }
  r.expect_end();
  return net;
}

inline void save_network(const std::filesystem::path& path, const Network& net) {
  binary::write_file(path, encode_network(net));
}

inline Network load_network(const std::filesystem::path& path) {
  return decode_network(binary::read_file(path));
}

}  // namespace richrep
