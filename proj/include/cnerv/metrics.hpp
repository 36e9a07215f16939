#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "cnerv/log.hpp"
#include "cnerv/ops.hpp"
#include "cnerv/tensor.hpp"

namespace cnerv {

struct LossConfig {
  double alpha = 0.7;
  Index window = 11;
  double sigma = 1.5;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;

  void validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("loss.alpha must lie in [0,1]");
    if (window < 1 || window % 2 == 0) throw ConfigError("loss.window must be odd and positive");
    if (!(sigma > 0.0)) throw ConfigError("loss.sigma must be positive");
  }
};

template <typename Scalar>
std::vector<Scalar> gaussian_taps(Index window, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(window));
  const double mid = static_cast<double>(window / 2);
  double total = 0;
  for (Index i = 0; i < window; ++i) {
    const double x = static_cast<double>(i) - mid;
    g[static_cast<std::size_t>(i)] = std::exp(-x * x / (2 * sigma * sigma));
    total += g[static_cast<std::size_t>(i)];
  }
  std::vector<Scalar> out;
  for (double v : g) out.push_back(static_cast<Scalar>(v / total));
  return out;
}

namespace detail {

template <typename Scalar>
struct SsimMaps {
  Tensor<Scalar> ssim;  // full SSIM map
  Tensor<Scalar> cs;    // contrast-structure map
};

template <typename Scalar>
SsimMaps<Scalar> ssim_maps(const Tensor<Scalar>& y, const Tensor<Scalar>& v, const LossConfig& cfg) {
  require_same(y.shape(), v.shape(), "ssim");
  require_rank(y.shape(), 3, "ssim", "image");
  const auto taps = gaussian_taps<Scalar>(cfg.window, cfg.sigma);
  const Scalar c1 = static_cast<Scalar>(cfg.c1), c2 = static_cast<Scalar>(cfg.c2);
  auto mu_y = separable_filter_valid(y, taps);
  auto mu_v = separable_filter_valid(v, taps);
  auto mu_yy = mul(mu_y, mu_y);
  auto mu_vv = mul(mu_v, mu_v);
  auto mu_yv = mul(mu_y, mu_v);
  auto s_yy = sub(separable_filter_valid(mul(y, y), taps), mu_yy);
  auto s_vv = sub(separable_filter_valid(mul(v, v), taps), mu_vv);
  auto s_yv = sub(separable_filter_valid(mul(y, v), taps), mu_yv);
  auto lum = div(affine(mu_yv, Scalar(2), c1), affine(add(mu_yy, mu_vv), Scalar(1), c1));
  auto cs = div(affine(s_yv, Scalar(2), c2), affine(add(s_yy, s_vv), Scalar(1), c2));
  return {mul(lum, cs), cs};
}

}  // namespace detail

/// Mean local SSIM with a Gaussian window ('valid' filtering); differentiable.
template <typename Scalar>
Tensor<Scalar> ssim(const Tensor<Scalar>& y, const Tensor<Scalar>& v, const LossConfig& cfg = {}) {
  return mean(detail::ssim_maps(y, v, cfg).ssim);
}

/// alpha * mean|y - v| + (1 - alpha) * (1 - SSIM(y, v)).
template <typename Scalar>
Tensor<Scalar> loss(const Tensor<Scalar>& y, const Tensor<Scalar>& v, const LossConfig& cfg = {}) {
  cfg.validate();
  detail::require_same(y.shape(), v.shape(), "loss");
  const Scalar alpha = static_cast<Scalar>(cfg.alpha);
  auto l1 = mean(abs(sub(y, v)));
  if (cfg.alpha == 1.0) return l1;
  auto structural = affine(ssim(y, v, cfg), Scalar(-1), Scalar(1));
  return add(affine(l1, alpha, Scalar(0)), affine(structural, Scalar(1) - alpha, Scalar(0)));
}

template <typename Scalar>
double mse(const Tensor<Scalar>& y, const Tensor<Scalar>& v) {
  detail::require_same(y.shape(), v.shape(), "mse");
  return (y.data().template cast<double>() - v.data().template cast<double>()).squaredNorm() /
         static_cast<double>(y.size());
}

/// 10 log10(max^2 / MSE); +infinity marks identical inputs.
inline double psnr_from_mse(double mse_value, double max_val = 1.0) {
  if (mse_value == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / mse_value);
}

template <typename Scalar>
double psnr(const Tensor<Scalar>& y, const Tensor<Scalar>& v, double max_val = 1.0) {
  return psnr_from_mse(mse(y, v), max_val);
}

template <typename Scalar>
Tensor<Scalar> clamp01(const Tensor<Scalar>& x) {
  return Tensor<Scalar>(x.shape(), x.data().cwiseMax(Scalar(0)).cwiseMin(Scalar(1)));
}

inline constexpr std::array<double, 5> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct MsSsimResult {
  double value = 0;
  Index scales = 0;  // scales actually used after auto-reduction
};

/// Largest scale count s <= requested with min(H,W) >= window * 2^(s-1).
inline Index ms_ssim_scales(Index height, Index width, Index window, Index requested = 5) {
  const Index min_dim = std::min(height, width);
  Index s = std::min<Index>(requested, 5);
  while (s > 1 && min_dim < window * (Index{1} << (s - 1))) --s;
  return s;
}

/// Multi-scale SSIM: contrast-structure terms at the finer scales, full SSIM at the coarsest,
/// combined with the standard weights (renormalized when fewer scales are used). Negative
/// per-scale terms are clipped at zero before exponentiation.
inline MsSsimResult ms_ssim(const Tensor<double>& y, const Tensor<double>& v, const LossConfig& cfg = {},
                            Index requested_scales = 5) {
  detail::require_same(y.shape(), v.shape(), "ms_ssim");
  const Index scales = ms_ssim_scales(y.dim(1), y.dim(2), cfg.window, requested_scales);
  if (scales < requested_scales) {
    log_once("ms_ssim: " + std::to_string(y.dim(1)) + "x" + std::to_string(y.dim(2)) + " input uses " +
             std::to_string(scales) + " of " + std::to_string(requested_scales) + " scales");
  }
  double wsum = 0;
  for (Index s = 0; s < scales; ++s) wsum += kMsSsimWeights[static_cast<std::size_t>(s)];
  Tensor<double> a = y, b = v;
  double result = 1.0;
  for (Index s = 0; s < scales; ++s) {
    const double weight = kMsSsimWeights[static_cast<std::size_t>(s)] / wsum;
    // Very small inputs fall back to a window no larger than the image.
    LossConfig local = cfg;
    const Index min_dim = std::min(a.dim(1), a.dim(2));
    if (local.window > min_dim) local.window = (min_dim % 2 == 1) ? min_dim : min_dim - 1;
    const auto maps = detail::ssim_maps(a, b, local);
    const double term = (s + 1 == scales) ? maps.ssim.data().mean() : maps.cs.data().mean();
    result *= std::pow(std::max(term, 0.0), weight);
    if (s + 1 < scales) {
      a = avg_pool2(a);
      b = avg_pool2(b);
    }
  }
  return {result, scales};
}

template <typename Scalar>
MsSsimResult ms_ssim(const Tensor<Scalar>& y, const Tensor<Scalar>& v, const LossConfig& cfg = {},
                     Index requested_scales = 5) {
  return ms_ssim(y.template cast<double>(), v.template cast<double>(), cfg, requested_scales);
}

}  // namespace cnerv
