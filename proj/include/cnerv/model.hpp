#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cnerv/embedding.hpp"
#include "cnerv/ops.hpp"
#include "cnerv/tensor.hpp"

namespace cnerv {

enum class ModelKind { kCnerv, kNerv };

inline const char* to_string(ModelKind kind) { return kind == ModelKind::kCnerv ? "cnerv" : "nerv"; }
inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "cnerv") return ModelKind::kCnerv;
  if (s == "nerv") return ModelKind::kNerv;
  throw ConfigError("unknown model kind '" + s + "' (expected cnerv or nerv)");
}

/// Architecture of either network. The decoder feature map is (d, feat_h, feat_w);
/// for CNeRV every latent grid cell decodes to a (d, feat_h/M, feat_w/N) cube.
struct ModelConfig {
  ModelKind kind = ModelKind::kCnerv;
  Index C = 3;
  Index H = 32;
  Index W = 64;
  Index L = 16;
  CAEConfig cae{.area_normalize = true};
  PositionalConfig pos;
  Index d = 32;
  Index feat_h = 8;
  Index feat_w = 16;
  std::vector<Index> upscales{2, 2};
  Index nerv_hidden = 256;
  Index min_channels = 16;
  std::uint64_t seed = 0;

  Index K() const { return static_cast<Index>(upscales.size()); }
  Index M() const { return cae.M; }
  Index N() const { return cae.N; }
  Index block_h() const { return feat_h / cae.M; }
  Index block_w() const { return feat_w / cae.N; }

  /// Output channels of each NeRV block: halve per block, floor of min_channels.
  std::vector<Index> channel_schedule() const {
    std::vector<Index> ch{d};
    for (Index k = 0; k < K(); ++k) ch.push_back(std::max(ch.back() / 2, min_channels));
    return ch;
  }

  void validate() const {
    if (C < 1 || H < 1 || W < 1) throw ConfigError("model: C, H, W must be positive");
    if (d < 1 || feat_h < 1 || feat_w < 1) throw ConfigError("model: d, feat_h, feat_w must be positive");
    Index up = 1;
    for (Index r : upscales) {
      if (r < 1) throw ConfigError("model: upscale factors must be positive");
      up *= r;
    }
    if (feat_h * up != H || feat_w * up != W) {
      throw ConfigError("model: feature map " + std::to_string(feat_h) + "x" + std::to_string(feat_w) +
                        " upscaled by " + std::to_string(up) + " does not reach " + std::to_string(H) + "x" +
                        std::to_string(W));
    }
    if (kind == ModelKind::kCnerv) {
      cae.validate();
      if (L < 1) throw ConfigError("model: L must be positive");
      if (H % cae.M != 0 || W % cae.N != 0) throw ConfigError("model: image dims not divisible by block grid");
      if (feat_h % cae.M != 0 || feat_w % cae.N != 0) {
        throw ConfigError("model: feature map not divisible by block grid");
      }
    } else {
      pos.validate();
      if (nerv_hidden < 1) throw ConfigError("model: nerv_hidden must be positive");
    }
  }
};

/// Named parameter tensors in a fixed order.
template <typename Scalar>
struct ModelParams {
  std::vector<std::pair<std::string, Tensor<Scalar>>> tensors;

  const Tensor<Scalar>& at(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw Error("no parameter named " + name);
  }
  Tensor<Scalar>& at(const std::string& name) {
    for (auto& [n, t] : tensors)
      if (n == name) return t;
    throw Error("no parameter named " + name);
  }
  Index count() const {
    Index n = 0;
    for (const auto& [name, t] : tensors) n += t.size();
    return n;
  }
  void zero_grad() {
    for (auto& [name, t] : tensors) t.zero_grad();
  }
  void set_requires_grad(bool flag) {
    for (auto& [name, t] : tensors) t.set_requires_grad(flag);
  }
  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    for (const auto& [name, t] : tensors) out.tensors.emplace_back(name, t.template cast<Other>());
    return out;
  }
  ModelParams clone() const {
    ModelParams out;
    for (const auto& [name, t] : tensors) out.tensors.emplace_back(name, t.detach());
    return out;
  }
};

/// Conv and linear weights end in ".weight"; these are the prunable tensors.
inline bool is_weight(const std::string& name) {
  return name.size() >= 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
}

/// Parameter names and shapes, derived from the configuration alone.
inline std::vector<std::pair<std::string, Shape>> param_shapes(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, Shape>> shapes;
  const auto ch = cfg.channel_schedule();
  if (cfg.kind == ModelKind::kCnerv) {
    const Index raw = cfg.C * cfg.cae.P * cfg.cae.Q;
    const Index cube = cfg.d * cfg.block_h() * cfg.block_w();
    shapes.push_back({"encoder.reducer.weight", {cfg.L, raw, 1, 1}});
    shapes.push_back({"encoder.reducer.bias", {cfg.L}});
    shapes.push_back({"decoder.stem.weight", {cube, cfg.L, 1, 1}});
    shapes.push_back({"decoder.stem.bias", {cube}});
  } else {
    const Index in = cfg.pos.length(), hid = cfg.nerv_hidden, out = cfg.d * cfg.feat_h * cfg.feat_w;
    shapes.push_back({"mlp.0.weight", {hid, in}});
    shapes.push_back({"mlp.0.bias", {hid}});
    shapes.push_back({"mlp.1.weight", {hid, hid}});
    shapes.push_back({"mlp.1.bias", {hid}});
    shapes.push_back({"mlp.2.weight", {out, hid}});
    shapes.push_back({"mlp.2.bias", {out}});
  }
  for (Index k = 0; k < cfg.K(); ++k) {
    const Index r = cfg.upscales[static_cast<std::size_t>(k)];
    const std::string prefix = "decoder.blocks." + std::to_string(k);
    shapes.push_back({prefix + ".weight", {ch[k + 1] * r * r, ch[k], 3, 3}});
    shapes.push_back({prefix + ".bias", {ch[k + 1] * r * r}});
  }
  shapes.push_back({"decoder.head.weight", {cfg.C, ch.back(), 3, 3}});
  shapes.push_back({"decoder.head.bias", {cfg.C}});
  return shapes;
}

inline Index param_count(const ModelConfig& cfg) {
  Index n = 0;
  for (const auto& [name, shape] : param_shapes(cfg)) n += shape_size(shape);
  return n;
}

/// Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases; deterministic per seed.
template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams<Scalar> params;
  for (const auto& [name, shape] : param_shapes(cfg)) {
    typename Tensor<Scalar>::Vector v = Tensor<Scalar>::Vector::Zero(shape_size(shape));
    if (is_weight(name)) {
      Index fan_in = 1;
      for (std::size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<Scalar>(dist(rng));
    }
    params.tensors.emplace_back(name, Tensor<Scalar>(shape, std::move(v)));
  }
  return params;
}

template <typename Scalar>
ModelParams<Scalar> init_params(const ModelConfig& cfg) {
  return init_params<Scalar>(cfg, cfg.seed);
}

/// Learned single-layer encoder: raw content-adaptive embedding reduced to the (L, M, N) latent.
template <typename Scalar>
Tensor<Scalar> reduce_embedding(const Tensor<Scalar>& raw, const ModelParams<Scalar>& params) {
  return conv2d(raw, params.at("encoder.reducer.weight"), params.at("encoder.reducer.bias"));
}

template <typename Scalar>
EmbeddingGrid<Scalar> cnerv_encode(const Tensor<Scalar>& image, const ModelConfig& cfg,
                                   const ModelParams<Scalar>& params, Index frame_id = -1) {
  return encode_image(image, cfg.cae, params.at("encoder.reducer.weight"), params.at("encoder.reducer.bias"),
                      frame_id);
}

/// Block-wise decoding: each latent cell becomes a (d, h_blk, w_blk) cube via a shared 1x1 conv.
template <typename Scalar>
Tensor<Scalar> blockwise_decode(const Tensor<Scalar>& latent, const ModelConfig& cfg,
                                const ModelParams<Scalar>& params) {
  if (latent.rank() != 3 || latent.dim(0) != cfg.L || latent.dim(1) != cfg.M() || latent.dim(2) != cfg.N()) {
    throw ShapeError("cnerv_forward: latent " + shape_str(latent.shape()) + " does not match config (" +
                     std::to_string(cfg.L) + "," + std::to_string(cfg.M()) + "," + std::to_string(cfg.N()) + ")");
  }
  auto x = conv2d(latent, params.at("decoder.stem.weight"), params.at("decoder.stem.bias"));
  return depth_to_space(x, cfg.block_h(), cfg.block_w());
}

/// Image-wise decoding: NeRV blocks (3x3 conv, pixel shuffle, GELU) then a linear 3x3 head.
template <typename Scalar>
Tensor<Scalar> imagewise_decode(Tensor<Scalar> x, const ModelConfig& cfg, const ModelParams<Scalar>& params) {
  for (Index k = 0; k < cfg.K(); ++k) {
    const std::string prefix = "decoder.blocks." + std::to_string(k);
    x = conv2d(x, params.at(prefix + ".weight"), params.at(prefix + ".bias"));
    x = gelu(pixel_shuffle(x, cfg.upscales[static_cast<std::size_t>(k)]));
  }
  return conv2d(x, params.at("decoder.head.weight"), params.at("decoder.head.bias"));
}

template <typename Scalar>
Tensor<Scalar> cnerv_forward(const Tensor<Scalar>& latent, const ModelConfig& cfg,
                             const ModelParams<Scalar>& params) {
  return imagewise_decode(gelu(blockwise_decode(latent, cfg, params)), cfg, params);
}

template <typename Scalar>
Tensor<Scalar> nerv_forward(double t, const ModelConfig& cfg, const ModelParams<Scalar>& params) {
  auto x = positional_encoding<Scalar>(t, cfg.pos);
  x = gelu(linear(x, params.at("mlp.0.weight"), params.at("mlp.0.bias")));
  x = gelu(linear(x, params.at("mlp.1.weight"), params.at("mlp.1.bias")));
  x = gelu(linear(x, params.at("mlp.2.weight"), params.at("mlp.2.bias")));
  return imagewise_decode(reshape(x, {cfg.d, cfg.feat_h, cfg.feat_w}), cfg, params);
}

/// Channel width d that brings param_count(cfg) closest to `target`.
inline ModelConfig match_param_budget(ModelConfig cfg, Index target) {
  Index best_d = 1, best_gap = -1;
  for (Index d = 1; d <= 4096; ++d) {
    cfg.d = d;
    const Index gap = std::abs(param_count(cfg) - target);
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      best_d = d;
    }
  }
  cfg.d = best_d;
  return cfg;
}

inline double relative_budget_gap(const ModelConfig& a, const ModelConfig& b) {
  const double pa = static_cast<double>(param_count(a)), pb = static_cast<double>(param_count(b));
  return std::abs(pa - pb) / std::max(pa, pb);
}

}  // namespace cnerv
