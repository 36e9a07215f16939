#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "cnerv/bitstream.hpp"
#include "cnerv/bytes.hpp"
#include "cnerv/config.hpp"
#include "cnerv/model.hpp"

namespace cnerv {

using MaskMap = std::map<std::string, std::vector<bool>>;

/// Magnitude pruning of conv/linear weights; biases are exempt. The smallest
/// floor(q * n) magnitudes are zeroed, over all weights at once or per tensor.
/// Ties are broken by position so the result is deterministic.
template <typename Scalar>
MaskMap prune(ModelParams<Scalar>& params, double ratio, bool per_layer = false) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw Error("prune: ratio must lie in [0, 1), got " + std::to_string(ratio));
  struct Entry {
    double mag;
    std::size_t tensor;
    Index index;
  };
  MaskMap masks;
  std::vector<std::vector<Entry>> groups(per_layer ? 0 : 1);
  for (std::size_t ti = 0; ti < params.tensors.size(); ++ti) {
    const auto& [name, t] = params.tensors[ti];
    if (!is_weight(name)) continue;
    masks[name] = std::vector<bool>(static_cast<std::size_t>(t.size()), true);
    if (per_layer) groups.emplace_back();
    for (Index i = 0; i < t.size(); ++i) groups.back().push_back({std::abs(static_cast<double>(t.data()[i])), ti, i});
  }
  for (auto& group : groups) {
    const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(group.size())));
    if (k == 0) continue;
    std::nth_element(group.begin(), group.begin() + static_cast<std::ptrdiff_t>(k - 1), group.end(),
                     [](const Entry& a, const Entry& b) {
                       if (a.mag != b.mag) return a.mag < b.mag;
                       if (a.tensor != b.tensor) return a.tensor < b.tensor;
                       return a.index < b.index;
                     });
    for (std::size_t j = 0; j < k; ++j) {
      auto& [name, t] = params.tensors[group[j].tensor];
      t.mutable_data()[group[j].index] = Scalar(0);
      masks[name][static_cast<std::size_t>(group[j].index)] = false;
    }
  }
  return masks;
}

/// Digest of a model configuration and its exact parameter values.
template <typename Scalar>
std::uint64_t model_digest(const ModelConfig& cfg, const ModelParams<Scalar>& params) {
  std::uint64_t h = fnv1a64(to_json(cfg).dump());
  for (const auto& [name, t] : params.tensors) {
    h = fnv1a64(name, h);
    for (Index i = 0; i < t.size(); ++i) {
      const auto bits = std::bit_cast<std::uint64_t>(static_cast<double>(t.data()[i]));
      std::uint8_t b[8];
      for (int k = 0; k < 8; ++k) b[k] = static_cast<std::uint8_t>(bits >> (8 * k));
      h = fnv1a64(std::span<const std::uint8_t>(b, 8), h);
    }
  }
  return h;
}

/// Parameters after a quantize/dequantize round trip at `bit`, honouring pruning masks.
template <typename Scalar>
ModelParams<Scalar> quantize_params(const ModelParams<Scalar>& params, int bit, const MaskMap& masks = {}) {
  ModelParams<Scalar> out;
  for (const auto& [name, t] : params.tensors) {
    auto it = masks.find(name);
    const auto r = quantized_record(name, t, bit, it == masks.end() ? std::vector<bool>{} : it->second);
    out.tensors.emplace_back(name, record_tensor<Scalar>(r));
  }
  return out;
}

/// Latent after a quantize/dequantize round trip at `bit`.
template <typename Scalar>
Tensor<Scalar> quantize_latent(const Tensor<Scalar>& latent, int bit) {
  return record_tensor<Scalar>(quantized_record("latent", latent, bit));
}

struct ArtifactSizes {
  std::size_t total_bytes = 0;
  std::size_t model_bytes = 0;
  std::size_t embedding_bytes = 0;
  Index frames = 0;
  double bpp_total = 0;      // model + embeddings
  double bpp_embedding = 0;  // embeddings only
};

struct ArtifactInput {
  ModelConfig model;
  const ModelParams<double>* params = nullptr;  // may be null for an embeddings-only artifact
  MaskMap masks;
  std::vector<std::pair<std::uint32_t, Tensor<double>>> embeddings;
  int bits_model = 8;
  int bits_embed = 6;
  std::uint64_t manifest_digest = 0;
  std::uint64_t split_digest = 0;
  std::uint64_t model_digest = 0;
  nlohmann::json extra = nlohmann::json::object();
};

/// Quantized, entropy-coded container for a model and/or per-frame latents.
inline Container build_artifact(const ArtifactInput& in) {
  Container c;
  c.meta = {{"type", "artifact"},
            {"model", to_json(in.model)},
            {"bits_model", in.bits_model},
            {"bits_embed", in.bits_embed},
            {"has_model", in.params != nullptr},
            {"extra", in.extra}};
  c.manifest_digest = in.manifest_digest;
  c.split_digest = in.split_digest;
  c.model_digest = in.model_digest;
  if (in.params) {
    for (const auto& [name, t] : in.params->tensors) {
      auto it = in.masks.find(name);
      c.tensors.push_back(
          quantized_record(name, t, in.bits_model, it == in.masks.end() ? std::vector<bool>{} : it->second));
    }
  }
  for (const auto& [id, latent] : in.embeddings) {
    c.embeddings.push_back({id, quantized_record("z", latent, in.bits_embed)});
  }
  return c;
}

inline ArtifactSizes artifact_sizes(const Container& c, Index height, Index width) {
  ContainerStats stats;
  serialize(c, &stats);
  ArtifactSizes s;
  s.total_bytes = stats.total_bytes;
  s.model_bytes = stats.model_bytes;
  s.embedding_bytes = stats.embedding_bytes;
  s.frames = static_cast<Index>(c.embeddings.size());
  if (s.frames > 0) {
    s.bpp_total = bits_per_pixel(s.total_bytes, s.frames, height, width);
    s.bpp_embedding = bits_per_pixel(s.embedding_bytes, s.frames, height, width);
  }
  return s;
}

struct DecodedArtifact {
  ModelConfig model;
  bool has_model = false;
  ModelParams<double> params;
  std::vector<std::pair<std::uint32_t, Tensor<double>>> embeddings;
  std::uint64_t manifest_digest = 0;
  std::uint64_t split_digest = 0;
  std::uint64_t model_digest = 0;
  nlohmann::json meta;
};

inline DecodedArtifact decode_artifact(const Container& c) {
  if (c.meta.value("type", "") != "artifact") throw FormatError("container is not a compressed artifact");
  DecodedArtifact d;
  d.meta = c.meta;
  d.model = model_config_from_json(c.meta.at("model"));
  d.has_model = c.meta.at("has_model").get<bool>();
  d.manifest_digest = c.manifest_digest;
  d.split_digest = c.split_digest;
  d.model_digest = c.model_digest;
  if (d.has_model) {
    std::map<std::string, const TensorRecord*> by_name;
    for (const auto& r : c.tensors) by_name[r.name] = &r;
    for (const auto& [name, shape] : param_shapes(d.model)) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError("artifact is missing parameter " + name);
      if (it->second->shape != shape) throw FormatError("artifact parameter " + name + " has the wrong shape");
      d.params.tensors.emplace_back(name, record_tensor<double>(*it->second));
    }
  }
  for (const auto& e : c.embeddings) d.embeddings.emplace_back(e.frame_id, record_tensor<double>(e.tensor));
  return d;
}

}  // namespace cnerv
