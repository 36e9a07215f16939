#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <string>

#include "cnerv/ops.hpp"
#include "cnerv/tensor.hpp"

namespace cnerv {

/// Content-adaptive embedding parameters: frequency base, frequency lengths and block counts.
struct CAEConfig {
  double b = 1.15;
  Index P = 15;
  Index Q = 15;
  Index M = 2;
  Index N = 4;
  bool area_normalize = false;  // divide each coefficient by the block area h*w

  void validate() const {
    if (!(b > 1.0)) throw ConfigError("cae.b must be > 1");
    if (P < 1 || Q < 1) throw ConfigError("cae.P and cae.Q must be >= 1");
    if (M < 1 || N < 1) throw ConfigError("cae.M and cae.N must be >= 1");
  }
};

/// Index positional encoding parameters.
struct PositionalConfig {
  double b = 1.25;
  Index l = 240;

  Index length() const { return 2 * l; }
  void validate() const {
    if (!(b > 1.0)) throw ConfigError("pos.b must be > 1");
    if (l < 1) throw ConfigError("pos.l must be >= 1");
  }
};

template <typename Scalar>
struct BlockGrid {
  Tensor<Scalar> blocks;  // (M*N, C, H/M, W/N), block (m,n) at index m*N+n
  Index M = 0;
  Index N = 0;
  Shape source;  // (C, H, W)
};

template <typename Scalar>
struct EmbeddingGrid {
  Tensor<Scalar> values;  // (L, M, N) reduced or (C*P*Q, M, N) raw
  Index frame_id = -1;
};

/// Split a (C,H,W) image into an M x N grid of equal blocks.
template <typename Scalar>
BlockGrid<Scalar> partition(const Tensor<Scalar>& image, Index M, Index N) {
  detail::require_rank(image.shape(), 3, "partition", "image");
  const Index c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (M < 1 || h % M != 0) {
    throw ShapeError("partition: height " + std::to_string(h) + " not divisible by M=" + std::to_string(M));
  }
  if (N < 1 || w % N != 0) {
    throw ShapeError("partition: width " + std::to_string(w) + " not divisible by N=" + std::to_string(N));
  }
  const Index bh = h / M, bw = w / N;
  typename Tensor<Scalar>::Vector out(image.size());
  const auto& x = image.data();
  Index p = 0;
  for (Index m = 0; m < M; ++m)
    for (Index n = 0; n < N; ++n)
      for (Index ch = 0; ch < c; ++ch)
        for (Index i = 0; i < bh; ++i) {
          out.segment(p, bw) = x.segment((ch * h + m * bh + i) * w + n * bw, bw);
          p += bw;
        }
  return {Tensor<Scalar>({M * N, c, bh, bw}, std::move(out)), M, N, image.shape()};
}

/// Inverse of partition.
template <typename Scalar>
Tensor<Scalar> assemble(const BlockGrid<Scalar>& grid) {
  const Index c = grid.source[0], h = grid.source[1], w = grid.source[2];
  const Index bh = h / grid.M, bw = w / grid.N;
  typename Tensor<Scalar>::Vector out(c * h * w);
  const auto& x = grid.blocks.data();
  Index p = 0;
  for (Index m = 0; m < grid.M; ++m)
    for (Index n = 0; n < grid.N; ++n)
      for (Index ch = 0; ch < c; ++ch)
        for (Index i = 0; i < bh; ++i) {
          out.segment((ch * h + m * bh + i) * w + n * bw, bw) = x.segment(p, bw);
          p += bw;
        }
  return Tensor<Scalar>(grid.source, std::move(out));
}

/// [sin(b^0 pi t), cos(b^0 pi t), ..., sin(b^(l-1) pi t), cos(b^(l-1) pi t)] for t in [0,1].
template <typename Scalar>
Tensor<Scalar> positional_encoding(double t, const PositionalConfig& cfg) {
  cfg.validate();
  if (!(t >= 0.0 && t <= 1.0)) throw Error("positional_encoding: t=" + std::to_string(t) + " outside [0,1]");
  typename Tensor<Scalar>::Vector out(cfg.length());
  for (Index k = 0; k < cfg.l; ++k) {
    const double arg = std::pow(cfg.b, static_cast<double>(k)) * std::numbers::pi * t;
    out[2 * k] = static_cast<Scalar>(std::sin(arg));
    out[2 * k + 1] = static_cast<Scalar>(std::cos(arg));
  }
  return Tensor<Scalar>({cfg.length()}, std::move(out));
}

/// Frame i of n maps to the normalized index (i+1)/n.
inline double frame_time(Index i, Index n) { return static_cast<double>(i + 1) / static_cast<double>(n); }

/// Cosine basis rows cos(b^p pi x_i) at pixel centers x_i = (i + 0.5)/extent; shape (freqs, extent).
template <typename Scalar>
detail::RowMatrix<Scalar> cosine_basis(double b, Index freqs, Index extent) {
  detail::RowMatrix<Scalar> basis(freqs, extent);
  for (Index p = 0; p < freqs; ++p) {
    const double f = std::pow(b, static_cast<double>(p)) * std::numbers::pi;
    for (Index i = 0; i < extent; ++i) {
      basis(p, i) = static_cast<Scalar>(std::cos(f * (static_cast<double>(i) + 0.5) / static_cast<double>(extent)));
    }
  }
  return basis;
}

/// Gamma(c,p,q) = sum_{x,y} cos(b^p pi x) cos(b^q pi y) Img(c,x,y) for a (C,h,w) block.
///
/// Evaluated separably as A * Img_c * B^T with A (P,h) and B (Q,w) cosine bases.
template <typename Scalar>
Tensor<Scalar> content_adaptive_embedding(const Tensor<Scalar>& block, const CAEConfig& cfg) {
  detail::require_rank(block.shape(), 3, "content_adaptive_embedding", "block");
  cfg.validate();
  const Index c = block.dim(0), h = block.dim(1), w = block.dim(2);
  const auto rows = cosine_basis<Scalar>(cfg.b, cfg.P, h);
  const auto cols = cosine_basis<Scalar>(cfg.b, cfg.Q, w);
  typename Tensor<Scalar>::Vector out(c * cfg.P * cfg.Q);
  for (Index ch = 0; ch < c; ++ch) {
    detail::ConstRowMap<Scalar> img(block.data().data() + ch * h * w, h, w);
    detail::RowMap<Scalar>(out.data() + ch * cfg.P * cfg.Q, cfg.P, cfg.Q).noalias() =
        rows * img * cols.transpose();
  }
  if (cfg.area_normalize) out /= static_cast<Scalar>(h * w);
  return detail::make_output<Scalar>({c, cfg.P, cfg.Q}, std::move(out), false, "content_adaptive_embedding");
}

/// Per-block embeddings of a (C,H,W) image laid out as (C*P*Q, M, N); channel index c*P*Q + p*Q + q.
template <typename Scalar>
Tensor<Scalar> raw_embedding(const Tensor<Scalar>& image, const CAEConfig& cfg) {
  cfg.validate();
  const auto grid = partition(image, cfg.M, cfg.N);
  const Index c = image.dim(0), bh = image.dim(1) / cfg.M, bw = image.dim(2) / cfg.N;
  const Index len = c * cfg.P * cfg.Q, cells = cfg.M * cfg.N;
  const auto rows = cosine_basis<Scalar>(cfg.b, cfg.P, bh);
  const auto cols = cosine_basis<Scalar>(cfg.b, cfg.Q, bw);
  typename Tensor<Scalar>::Vector out(len * cells);
  detail::RowMap<Scalar> dst(out.data(), len, cells);
  const Scalar* src = grid.blocks.data().data();
  detail::RowMatrix<Scalar> gamma(cfg.P, cfg.Q);
  for (Index cell = 0; cell < cells; ++cell) {
    for (Index ch = 0; ch < c; ++ch) {
      detail::ConstRowMap<Scalar> img(src + (cell * c + ch) * bh * bw, bh, bw);
      gamma.noalias() = rows * img * cols.transpose();
      dst.col(cell).segment(ch * cfg.P * cfg.Q, cfg.P * cfg.Q) =
          Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(gamma.data(), cfg.P * cfg.Q);
    }
  }
  if (cfg.area_normalize) out /= static_cast<Scalar>(bh * bw);
  return detail::make_output<Scalar>({len, cfg.M, cfg.N}, std::move(out), false, "raw_embedding");
}

/// Raw embedding reduced by the learned 1x1 convolution to an (L, M, N) latent grid.
template <typename Scalar>
EmbeddingGrid<Scalar> encode_image(const Tensor<Scalar>& image, const CAEConfig& cfg,
                                   const Tensor<Scalar>& reducer_weight, const Tensor<Scalar>& reducer_bias,
                                   Index frame_id = -1) {
  const Index len = image.dim(0) * cfg.P * cfg.Q;
  if (reducer_weight.rank() != 4 || reducer_weight.dim(1) != len) {
    throw ShapeError("encode_image: reducer expects " +
                     (reducer_weight.rank() == 4 ? std::to_string(reducer_weight.dim(1)) : std::string("?")) +
                     " input channels, raw embedding has " + std::to_string(len));
  }
  return {conv2d(raw_embedding(image, cfg), reducer_weight, reducer_bias), frame_id};
}

}  // namespace cnerv
