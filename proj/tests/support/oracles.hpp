#pragma once

// Reference implementations written from the defining formulas, independent
// of the optimized library code they are compared against.

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "cnerv/ops.hpp"

namespace cnerv::testing {

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Eigen::VectorXd v(shape_size(shape));
  for (Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return Tensor<double>(shape, std::move(v));
}

/// Direct convolution loops; zero padding, square kernel.
inline Tensor<double> conv2d_loops(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                                   Index stride, Index pad) {
  const Index cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const Index cout = w.dim(0), k = w.dim(2);
  const Index ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
  Eigen::VectorXd out(cout * ho * wo);
  for (Index o = 0; o < cout; ++o)
    for (Index i = 0; i < ho; ++i)
      for (Index j = 0; j < wo; ++j) {
        double acc = b.data()[o];
        for (Index c = 0; c < cin; ++c)
          for (Index u = 0; u < k; ++u)
            for (Index v = 0; v < k; ++v) {
              const Index y = i * stride + u - pad, xx = j * stride + v - pad;
              if (y < 0 || y >= h || xx < 0 || xx >= wd) continue;
              acc += w.data()[((o * cin + c) * k + u) * k + v] * x.data()[(c * h + y) * wd + xx];
            }
        out[(o * ho + i) * wo + j] = acc;
      }
  return Tensor<double>({cout, ho, wo}, std::move(out));
}

/// Gamma(c,p,q) = sum_{x,y} cos(b^p pi x) cos(b^q pi y) Img(c,x,y), with pixel-centre
/// coordinates x = (i + 0.5) / h and y = (j + 0.5) / w.
inline Tensor<double> cae_quadruple_loop(const Tensor<double>& block, double b, Index P, Index Q) {
  const Index c = block.dim(0), h = block.dim(1), w = block.dim(2);
  Eigen::VectorXd out(c * P * Q);
  for (Index ch = 0; ch < c; ++ch)
    for (Index p = 0; p < P; ++p)
      for (Index q = 0; q < Q; ++q) {
        double acc = 0;
        for (Index i = 0; i < h; ++i)
          for (Index j = 0; j < w; ++j) {
            const double x = (static_cast<double>(i) + 0.5) / static_cast<double>(h);
            const double y = (static_cast<double>(j) + 0.5) / static_cast<double>(w);
            acc += std::cos(std::pow(b, static_cast<double>(p)) * std::numbers::pi * x) *
                   std::cos(std::pow(b, static_cast<double>(q)) * std::numbers::pi * y) *
                   block.data()[(ch * h + i) * w + j];
          }
        out[(ch * P + p) * Q + q] = acc;
      }
  return Tensor<double>({c, P, Q}, std::move(out));
}

/// log of the mean over i<j of exp(-t ||x_i - x_j||^2) on L2-normalized rows.
inline double uniformity_loops(const Eigen::MatrixXd& x, double t) {
  double acc = 0;
  int pairs = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
      const Eigen::VectorXd a = x.row(i).normalized(), b = x.row(j).normalized();
      acc += std::exp(-t * (a - b).squaredNorm());
      ++pairs;
    }
  return std::log(acc / pairs);
}

struct GradCheckResult {
  double max_rel_error = 0;
  Index coords = 0;
};

/// Central-difference check of d/dx sum(f(x) * R) for a fixed random R.
/// Compares each input's full gradient vector (or `max_coords` sampled entries)
/// by ||num - ana|| / max(||num||, ||ana||).
inline GradCheckResult gradcheck(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                                 std::vector<Tensor<double>> inputs, std::mt19937_64& rng, Index max_coords = -1,
                                 double eps = 1e-6) {
  for (auto& in : inputs) in.set_requires_grad(true);
  Tensor<double> weights;
  {
    GradTape<double> tape;
    const auto out = f(inputs);
    weights = random_tensor(out.shape(), rng);
    const auto loss = sum(mul(out, weights));
    tape.backward(loss);
  }
  auto objective = [&]() { return f(inputs).data().dot(weights.data()); };
  GradCheckResult result;
  for (auto& in : inputs) {
    std::vector<Index> coords;
    if (max_coords < 0 || max_coords >= in.size()) {
      for (Index i = 0; i < in.size(); ++i) coords.push_back(i);
    } else {
      std::uniform_int_distribution<Index> pick(0, in.size() - 1);
      for (Index i = 0; i < max_coords; ++i) coords.push_back(pick(rng));
    }
    Eigen::VectorXd num(static_cast<Index>(coords.size())), ana(static_cast<Index>(coords.size()));
    for (std::size_t k = 0; k < coords.size(); ++k) {
      const Index i = coords[k];
      const double saved = in.data()[i];
      in.mutable_data()[i] = saved + eps;
      const double up = objective();
      in.mutable_data()[i] = saved - eps;
      const double down = objective();
      in.mutable_data()[i] = saved;
      num[static_cast<Index>(k)] = (up - down) / (2 * eps);
      ana[static_cast<Index>(k)] = in.grad()[i];
    }
    const double scale = std::max(num.norm(), ana.norm());
    if (scale > 1e-10) result.max_rel_error = std::max(result.max_rel_error, (num - ana).norm() / scale);
    result.coords += static_cast<Index>(coords.size());
  }
  return result;
}

}  // namespace cnerv::testing
