#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <type_traits>
#include <variant>
#include <vector>

#include "richrep/errors.hpp"
#include "richrep/rng.hpp"
#include "richrep/types.hpp"

namespace richrep {

enum class Activation : std::uint8_t { linear = 0, relu = 1 };
enum class HeadKind { linear, cosine };

struct DenseLayer {
  Matrix weights;  // n_out x n_in
  Vector bias;     // n_out
  Activation activation = Activation::linear;

  Index in_dim() const { return weights.cols(); }
  Index out_dim() const { return weights.rows(); }
};

/// Cosine-similarity classifier: logit_i = g_i * cos(u_i, z).
struct CosineHead {
  Matrix directions;  // n_classes x n_features
  Vector gains;       // n_classes

  Index in_dim() const { return directions.cols(); }
  Index out_dim() const { return directions.rows(); }
};

/// Feature extractor: a stack of dense layers. An empty trunk is the identity.
using Trunk = std::vector<DenseLayer>;
using Head = std::variant<DenseLayer, CosineHead>;

/// Trunk followed by a classifier head. The activation entering the head is
/// the network's representation.
struct Network {
  Trunk trunk;
  Head head;

  HeadKind head_kind() const {
    return std::holds_alternative<CosineHead>(head) ? HeadKind::cosine : HeadKind::linear;
  }
  Index input_dim() const;
  Index feature_dim() const;
  Index output_dim() const {
    return std::visit([](const auto& h) { return h.out_dim(); }, head);
  }
};

/// Parallel trunks ("legs") whose outputs are concatenated in order before a
/// single linear head.
struct CatNetwork {
  std::vector<Trunk> legs;
  DenseLayer head;

  Index feature_dim() const { return head.in_dim(); }
};

inline Index trunk_out_dim(const Trunk& trunk, Index input_dim) {
  return trunk.empty() ? input_dim : trunk.back().out_dim();
}

inline Index Network::input_dim() const {
  if (!trunk.empty()) return trunk.front().in_dim();
  return std::visit([](const auto& h) { return h.in_dim(); }, head);
}

inline Index Network::feature_dim() const {
  return std::visit([](const auto& h) { return h.in_dim(); }, head);
}

// ---------------------------------------------------------------------------
// Construction

/// Hidden layer widths of a ReLU trunk; the last width is the feature width.
struct Architecture {
  std::vector<Index> hidden;
};

/// Glorot-uniform weights in (-a, a), a = sqrt(6 / (fan_in + fan_out)),
/// drawn in row-major order; zero bias.
inline DenseLayer glorot_layer(Index in, Index out, Activation act, Rng& rng) {
  DenseLayer layer{Matrix(out, in), Vector::Zero(out), act};
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  for (Index r = 0; r < out; ++r) {
    for (Index c = 0; c < in; ++c) layer.weights(r, c) = rng.uniform(-a, a);
  }
  return layer;
}

inline Trunk make_trunk(Index input_dim, const Architecture& arch, Rng& rng) {
  Trunk trunk;
  Index in = input_dim;
  for (Index width : arch.hidden) {
    trunk.push_back(glorot_layer(in, width, Activation::relu, rng));
    in = width;
  }
  return trunk;
}

inline constexpr double kCosineGainInit = 10.0;

inline CosineHead make_cosine_head(Index in, Index n_classes, Rng& rng) {
  DenseLayer proto = glorot_layer(in, n_classes, Activation::linear, rng);
  return CosineHead{std::move(proto.weights), Vector::Constant(n_classes, kCosineGainInit)};
}

/// Trunk, then head, drawn from Rng(seed + SeedOffsets::init).
inline Network make_network(Index input_dim, const Architecture& arch, Index n_classes,
                            HeadKind head_kind, std::uint64_t seed) {
  Rng rng(seed + SeedOffsets::init);
  Trunk trunk = make_trunk(input_dim, arch, rng);
  const Index feat = trunk_out_dim(trunk, input_dim);
  if (head_kind == HeadKind::cosine) {
    return Network{std::move(trunk), make_cosine_head(feat, n_classes, rng)};
  }
  return Network{std::move(trunk), glorot_layer(feat, n_classes, Activation::linear, rng)};
}

inline CatNetwork make_cat_network(Index input_dim, const Architecture& arch, std::size_t n_legs,
                                   Index n_classes, std::uint64_t seed) {
  Rng rng(seed + SeedOffsets::init);
  CatNetwork net;
  Index total = 0;
  for (std::size_t i = 0; i < n_legs; ++i) {
    net.legs.push_back(make_trunk(input_dim, arch, rng));
    total += trunk_out_dim(net.legs.back(), input_dim);
  }
  net.head = glorot_layer(total, n_classes, Activation::linear, rng);
  return net;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct DenseCache {
  Matrix input;
  Matrix pre;
};
using TrunkCache = std::vector<DenseCache>;

inline Matrix dense_forward(const DenseLayer& layer, const Matrix& x, DenseCache* cache = nullptr) {
  if (x.cols() != layer.in_dim()) {
    throw ShapeError("dense layer expects width " + std::to_string(layer.in_dim()) + ", got " +
                     std::to_string(x.cols()));
  }
  Matrix pre = x * layer.weights.transpose();
  pre.rowwise() += layer.bias.transpose();
  Matrix out = layer.activation == Activation::relu ? Matrix(pre.cwiseMax(0.0)) : pre;
  if (cache) {
    cache->input = x;
    cache->pre = std::move(pre);
  }
  return out;
}

/// Gradient of a dense layer, returned in the layer's own shape.
inline DenseLayer dense_backward(const DenseLayer& layer, const DenseCache& cache,
                                 const Matrix& grad_out, Matrix* grad_in) {
  Matrix grad_pre = grad_out;
  if (layer.activation == Activation::relu) {
    grad_pre = (cache.pre.array() > 0.0).select(grad_out, 0.0);
  }
  DenseLayer grad{grad_pre.transpose() * cache.input, grad_pre.colwise().sum().transpose(),
                  layer.activation};
  if (grad_in) *grad_in = grad_pre * layer.weights;
  return grad;
}

inline Matrix trunk_forward(const Trunk& trunk, const Matrix& x, TrunkCache* cache = nullptr) {
  if (cache) cache->assign(trunk.size(), DenseCache{});
  Matrix h = x;
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    h = dense_forward(trunk[i], h, cache ? &(*cache)[i] : nullptr);
  }
  return h;
}

inline Trunk trunk_backward(const Trunk& trunk, const TrunkCache& cache, const Matrix& grad_out,
                            Matrix* grad_in = nullptr) {
  Trunk grads(trunk.size());
  Matrix g = grad_out;
  for (std::size_t i = trunk.size(); i-- > 0;) {
    Matrix next;
    grads[i] = dense_backward(trunk[i], cache[i], g, (i > 0 || grad_in) ? &next : nullptr);
    g = std::move(next);
  }
  if (grad_in) *grad_in = trunk.empty() ? grad_out : g;
  return grads;
}

inline Vector row_norms_checked(const Matrix& m, const char* what) {
  Vector norms = m.rowwise().norm();
  for (Index i = 0; i < norms.size(); ++i) {
    if (!(norms(i) > 0.0)) throw DomainError(std::string(what) + ": zero-norm row");
  }
  return norms;
}

/// Batched cosine head: one row of logits per row of z.
inline Matrix cosine_head_forward(const Matrix& z, const CosineHead& head) {
  if (z.cols() != head.in_dim()) throw ShapeError("cosine head: feature width mismatch");
  const Vector zn = row_norms_checked(z, "cosine head input");
  const Vector un = row_norms_checked(head.directions, "cosine head direction");
  const Matrix z_hat = zn.cwiseInverse().asDiagonal() * z;
  const Matrix u_hat = un.cwiseInverse().asDiagonal() * head.directions;
  Matrix cos = z_hat * u_hat.transpose();
  return cos * head.gains.asDiagonal();
}

inline Vector cosine_head_forward(const Vector& z, const CosineHead& head) {
  return cosine_head_forward(Matrix(z.transpose()), head).row(0).transpose();
}

inline CosineHead cosine_head_backward(const CosineHead& head, const Matrix& z,
                                       const Matrix& grad_logits, Matrix* grad_z) {
  const Vector zn = row_norms_checked(z, "cosine head input");
  const Vector un = row_norms_checked(head.directions, "cosine head direction");
  const Matrix z_hat = zn.cwiseInverse().asDiagonal() * z;
  const Matrix u_hat = un.cwiseInverse().asDiagonal() * head.directions;
  const Matrix cos = z_hat * u_hat.transpose();
  const Matrix grad_cos = grad_logits * head.gains.asDiagonal();
  const Matrix gc_c = grad_cos.cwiseProduct(cos);

  CosineHead grad;
  grad.gains = grad_logits.cwiseProduct(cos).colwise().sum().transpose();
  const Vector per_class = gc_c.colwise().sum().transpose();
  grad.directions = un.cwiseInverse().asDiagonal() *
                    (grad_cos.transpose() * z_hat - per_class.asDiagonal() * u_hat);
  if (grad_z) {
    const Vector per_row = gc_c.rowwise().sum();
    *grad_z = zn.cwiseInverse().asDiagonal() * (grad_cos * u_hat - per_row.asDiagonal() * z_hat);
  }
  return grad;
}

struct Outputs {
  Matrix logits;
  Matrix penultimate;
};

struct NetworkCache {
  TrunkCache trunk;
  DenseCache head;
};

inline Outputs forward(const Network& net, const Matrix& x, NetworkCache* cache = nullptr) {
  if (x.cols() != net.input_dim()) {
    throw ShapeError("network expects width " + std::to_string(net.input_dim()) + ", got " +
                     std::to_string(x.cols()));
  }
  Outputs out;
  out.penultimate = trunk_forward(net.trunk, x, cache ? &cache->trunk : nullptr);
  if (const auto* lin = std::get_if<DenseLayer>(&net.head)) {
    out.logits = dense_forward(*lin, out.penultimate, cache ? &cache->head : nullptr);
  } else {
    out.logits = cosine_head_forward(out.penultimate, std::get<CosineHead>(net.head));
    if (cache) cache->head.input = out.penultimate;
  }
  return out;
}

/// Parameter gradient of a scalar loss, given its gradient w.r.t. the logits.
inline Network backward(const Network& net, const NetworkCache& cache, const Matrix& grad_logits) {
  Network grad;
  Matrix grad_feat;
  if (const auto* lin = std::get_if<DenseLayer>(&net.head)) {
    grad.head = dense_backward(*lin, cache.head, grad_logits, &grad_feat);
  } else {
    grad.head = cosine_head_backward(std::get<CosineHead>(net.head), cache.head.input, grad_logits,
                                     &grad_feat);
  }
  grad.trunk = trunk_backward(net.trunk, cache.trunk, grad_feat);
  return grad;
}

struct CatCache {
  Index input_cols = 0;
  std::vector<TrunkCache> legs;
  DenseCache head;
};

inline Matrix cat_features(const CatNetwork& net, const Matrix& x,
                           CatCache* cache = nullptr) {
  std::vector<Matrix> blocks;
  if (cache) {
    cache->input_cols = x.cols();
    cache->legs.assign(net.legs.size(), TrunkCache{});
  }
  for (std::size_t i = 0; i < net.legs.size(); ++i) {
    blocks.push_back(trunk_forward(net.legs[i], x, cache ? &cache->legs[i] : nullptr));
  }
  return hcat(blocks);
}

inline Outputs forward(const CatNetwork& net, const Matrix& x, CatCache* cache = nullptr) {
  Outputs out;
  out.penultimate = cat_features(net, x, cache);
  out.logits = dense_forward(net.head, out.penultimate, cache ? &cache->head : nullptr);
  return out;
}

inline CatNetwork backward(const CatNetwork& net, const CatCache& cache, const Matrix& grad_logits) {
  CatNetwork grad;
  Matrix grad_feat;
  grad.head = dense_backward(net.head, cache.head, grad_logits, &grad_feat);
  Index at = 0;
  for (std::size_t i = 0; i < net.legs.size(); ++i) {
    const Index width = trunk_out_dim(net.legs[i], cache.input_cols);
    grad.legs.push_back(trunk_backward(net.legs[i], cache.legs[i], grad_feat.middleCols(at, width)));
    at += width;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Parameter blocks

/// A contiguous run of parameters. `decays` marks weight matrices (subject to
/// weight decay); biases and cosine gains are excluded.
template <class Scalar>
struct ParamBlock {
  std::span<Scalar> values;
  bool decays;
  std::size_t layer;
};

template <class M>
using ScalarOf = std::conditional_t<std::is_const_v<M>, const double, double>;

template <class M>
auto as_span(M& m) {
  return std::span<ScalarOf<M>>(m.data(), static_cast<std::size_t>(m.size()));
}

template <class L>
  requires std::same_as<std::remove_const_t<L>, DenseLayer>
void append_blocks(L& layer, std::size_t idx, std::vector<ParamBlock<ScalarOf<L>>>& out) {
  out.push_back({as_span(layer.weights), true, idx});
  out.push_back({as_span(layer.bias), false, idx});
}

template <class H>
  requires std::same_as<std::remove_const_t<H>, CosineHead>
void append_blocks(H& head, std::size_t idx, std::vector<ParamBlock<ScalarOf<H>>>& out) {
  out.push_back({as_span(head.directions), true, idx});
  out.push_back({as_span(head.gains), false, idx});
}

template <class T>
  requires std::same_as<std::remove_const_t<T>, Trunk>
void append_blocks(T& trunk, std::size_t first, std::vector<ParamBlock<ScalarOf<T>>>& out) {
  for (std::size_t i = 0; i < trunk.size(); ++i) append_blocks(trunk[i], first + i, out);
}

template <class N>
  requires std::same_as<std::remove_const_t<N>, Network>
void append_blocks(N& net, std::size_t first, std::vector<ParamBlock<ScalarOf<N>>>& out) {
  append_blocks(net.trunk, first, out);
  std::visit([&](auto& h) { append_blocks(h, first + net.trunk.size(), out); }, net.head);
}

template <class N>
  requires std::same_as<std::remove_const_t<N>, CatNetwork>
void append_blocks(N& net, std::size_t first, std::vector<ParamBlock<ScalarOf<N>>>& out) {
  std::size_t at = first;
  for (auto& leg : net.legs) {
    append_blocks(leg, at, out);
    at += leg.size();
  }
  append_blocks(net.head, at, out);
}

template <class Model>
auto param_blocks(Model& model) {
  std::vector<ParamBlock<ScalarOf<Model>>> out;
  append_blocks(model, 0, out);
  return out;
}

/// Same shapes as `model`, every parameter zero.
template <class Model>
Model zeros_like(const Model& model) {
  Model z = model;
  for (auto& b : param_blocks(z)) std::fill(b.values.begin(), b.values.end(), 0.0);
  return z;
}

template <class Model>
void add_into(Model& acc, const Model& g) {
  auto a = param_blocks(acc);
  auto b = param_blocks(g);
  if (a.size() != b.size()) throw ShapeError("add_into: block count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].values.size() != b[i].values.size()) throw ShapeError("add_into: block size mismatch");
    for (std::size_t j = 0; j < a[i].values.size(); ++j) a[i].values[j] += b[i].values[j];
  }
}

template <class Model>
std::size_t parameter_count(const Model& model) {
  std::size_t n = 0;
  for (const auto& b : param_blocks(model)) n += b.values.size();
  return n;
}

/// Bitwise parameter equality.
template <class Model>
bool same_parameters(const Model& a, const Model& b) {
  auto pa = param_blocks(a);
  auto pb = param_blocks(b);
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].values.size() != pb[i].values.size()) return false;
    if (!std::equal(pa[i].values.begin(), pa[i].values.end(), pb[i].values.begin(),
                    [](double x, double y) { return std::bit_cast<std::uint64_t>(x) ==
                                                    std::bit_cast<std::uint64_t>(y); })) {
      return false;
    }
  }
  return true;
}

}  // namespace richrep
