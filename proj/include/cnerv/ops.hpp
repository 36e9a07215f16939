#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "cnerv/tensor.hpp"

namespace cnerv {

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstRowMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar, typename... Ts>
bool tracking(const Ts&... inputs) {
  return GradTape<Scalar>::active() != nullptr && (inputs.requires_grad() || ...);
}

template <typename Scalar>
Tensor<Scalar> make_output(Shape shape, typename Tensor<Scalar>::Vector data, bool track, const char* op) {
  if (!data.allFinite()) throw NumericalError(std::string(op) + " produced non-finite values");
  return Tensor<Scalar>(std::move(shape), std::move(data), track);
}

inline void require_rank(const Shape& shape, std::size_t rank, const char* op, const char* what) {
  if (shape.size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(shape));
  }
}

inline void require_same(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution

/// Cross-correlation of a (Cin,H,W) input with a (Cout,Cin,k,k) kernel, k in {1,3}.
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      Index stride = 1, Index padding = -1) {
  using detail::RowMatrix;
  detail::require_rank(input.shape(), 3, "conv2d", "input");
  detail::require_rank(weight.shape(), 4, "conv2d", "weight");
  detail::require_rank(bias.shape(), 1, "conv2d", "bias");
  const Index cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const Index cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(2) != weight.dim(3)) throw UnsupportedKernelError("conv2d: kernel must be square");
  if (k != 1 && k != 3) throw UnsupportedKernelError("conv2d: unsupported kernel size " + std::to_string(k));
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, input has " +
                     std::to_string(cin));
  }
  if (bias.dim(0) != cout) throw ShapeError("conv2d: bias length does not match output channels");
  if (padding < 0) padding = k / 2;
  if (stride < 1) throw ShapeError("conv2d: stride must be positive");
  const Index ho = (h + 2 * padding - k) / stride + 1;
  const Index wo = (w + 2 * padding - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: input too small for kernel");
  const Index npix = ho * wo;
  const Index patch = cin * k * k;
  const bool direct = (k == 1 && stride == 1 && padding == 0);

  // im2col: row (c,ky,kx), column (oy,ox)
  RowMatrix<Scalar> cols;
  if (!direct) {
    cols.setZero(patch, npix);
    const auto& x = input.data();
    for (Index c = 0; c < cin; ++c) {
      for (Index ky = 0; ky < k; ++ky) {
        for (Index kx = 0; kx < k; ++kx) {
          Scalar* row = cols.row((c * k + ky) * k + kx).data();
          for (Index oy = 0; oy < ho; ++oy) {
            const Index iy = oy * stride + ky - padding;
            if (iy < 0 || iy >= h) continue;
            const Scalar* src = x.data() + (c * h + iy) * w;
            for (Index ox = 0; ox < wo; ++ox) {
              const Index ix = ox * stride + kx - padding;
              if (ix >= 0 && ix < w) row[oy * wo + ox] = src[ix];
            }
          }
        }
      }
    }
  }
  detail::ConstRowMap<Scalar> wmat(weight.data().data(), cout, patch);
  typename Tensor<Scalar>::Vector out(cout * npix);
  detail::RowMap<Scalar> omat(out.data(), cout, npix);
  if (direct) {
    omat.noalias() = wmat * detail::ConstRowMap<Scalar>(input.data().data(), cin, npix);
  } else {
    omat.noalias() = wmat * cols;
  }
  omat.colwise() += bias.data();

  const bool track = detail::tracking<Scalar>(input, weight, bias);
  auto result = detail::make_output<Scalar>({cout, ho, wo}, std::move(out), track, "conv2d");
  if (track) {
    GradTape<Scalar>::active()->record([in = input.impl(), wt = weight.impl(), b = bias.impl(),
                                        o = result.impl(), cols = std::move(cols), direct, cin, h, w, k, stride,
                                        padding, ho, wo, cout, npix, patch]() {
      detail::ConstRowMap<Scalar> gout(o->grad.data(), cout, npix);
      if (b->requires_grad) b->grad += gout.rowwise().sum();
      if (wt->requires_grad) {
        detail::RowMap<Scalar> gw(wt->grad.data(), cout, patch);
        if (direct) {
          gw.noalias() += gout * detail::ConstRowMap<Scalar>(in->data.data(), cin, npix).transpose();
        } else {
          gw.noalias() += gout * cols.transpose();
        }
      }
      if (in->requires_grad) {
        detail::ConstRowMap<Scalar> wm(wt->data.data(), cout, patch);
        if (direct) {
          detail::RowMap<Scalar>(in->grad.data(), cin, npix).noalias() += wm.transpose() * gout;
        } else {
          detail::RowMatrix<Scalar> gcols = wm.transpose() * gout;
          Scalar* gx = in->grad.data();
          for (Index c = 0; c < cin; ++c) {
            for (Index ky = 0; ky < k; ++ky) {
              for (Index kx = 0; kx < k; ++kx) {
                const Scalar* row = gcols.row((c * k + ky) * k + kx).data();
                for (Index oy = 0; oy < ho; ++oy) {
                  const Index iy = oy * stride + ky - padding;
                  if (iy < 0 || iy >= h) continue;
                  Scalar* dst = gx + (c * h + iy) * w;
                  for (Index ox = 0; ox < wo; ++ox) {
                    const Index ix = ox * stride + kx - padding;
                    if (ix >= 0 && ix < w) dst[ix] += row[oy * wo + ox];
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Spatial rearrangement

/// (C*rh*rw, H, W) -> (C, H*rh, W*rw) with out[c, h*rh+i, w*rw+j] = in[c*rh*rw + i*rw + j, h, w].
template <typename Scalar>
Tensor<Scalar> depth_to_space(const Tensor<Scalar>& input, Index rh, Index rw) {
  detail::require_rank(input.shape(), 3, "depth_to_space", "input");
  if (rh < 1 || rw < 1) throw ShapeError("depth_to_space: factors must be positive");
  const Index cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (cin % (rh * rw) != 0) {
    throw ShapeError("depth_to_space: " + std::to_string(cin) + " channels not divisible by " +
                     std::to_string(rh * rw));
  }
  const Index c = cin / (rh * rw), oh = h * rh, ow = w * rw;
  // index[out_pos] = in_pos
  std::vector<Index> index(static_cast<std::size_t>(input.size()));
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < rh; ++i)
      for (Index j = 0; j < rw; ++j)
        for (Index y = 0; y < h; ++y)
          for (Index x = 0; x < w; ++x) {
            const Index src = ((ch * rh * rw + i * rw + j) * h + y) * w + x;
            const Index dst = (ch * oh + y * rh + i) * ow + x * rw + j;
            index[static_cast<std::size_t>(dst)] = src;
          }
  typename Tensor<Scalar>::Vector out(input.size());
  const auto& x = input.data();
  for (Index p = 0; p < out.size(); ++p) out[p] = x[index[static_cast<std::size_t>(p)]];
  const bool track = detail::tracking<Scalar>(input);
  auto result = detail::make_output<Scalar>({c, oh, ow}, std::move(out), track, "depth_to_space");
  if (track) {
    GradTape<Scalar>::active()->record([in = input.impl(), o = result.impl(), index = std::move(index)]() {
      for (std::size_t p = 0; p < index.size(); ++p) in->grad[index[p]] += o->grad[static_cast<Index>(p)];
    });
  }
  return result;
}

/// Inverse of depth_to_space.
template <typename Scalar>
Tensor<Scalar> space_to_depth(const Tensor<Scalar>& input, Index rh, Index rw) {
  detail::require_rank(input.shape(), 3, "space_to_depth", "input");
  if (rh < 1 || rw < 1) throw ShapeError("space_to_depth: factors must be positive");
  const Index c = input.dim(0), oh = input.dim(1), ow = input.dim(2);
  if (oh % rh != 0 || ow % rw != 0) throw ShapeError("space_to_depth: spatial dims not divisible by factors");
  const Index h = oh / rh, w = ow / rw;
  std::vector<Index> index(static_cast<std::size_t>(input.size()));
  for (Index ch = 0; ch < c; ++ch)
    for (Index i = 0; i < rh; ++i)
      for (Index j = 0; j < rw; ++j)
        for (Index y = 0; y < h; ++y)
          for (Index x = 0; x < w; ++x) {
            const Index dst = ((ch * rh * rw + i * rw + j) * h + y) * w + x;
            const Index src = (ch * oh + y * rh + i) * ow + x * rw + j;
            index[static_cast<std::size_t>(dst)] = src;
          }
  typename Tensor<Scalar>::Vector out(input.size());
  const auto& x = input.data();
  for (Index p = 0; p < out.size(); ++p) out[p] = x[index[static_cast<std::size_t>(p)]];
  const bool track = detail::tracking<Scalar>(input);
  auto result = detail::make_output<Scalar>({c * rh * rw, h, w}, std::move(out), track, "space_to_depth");
  if (track) {
    GradTape<Scalar>::active()->record([in = input.impl(), o = result.impl(), index = std::move(index)]() {
      for (std::size_t p = 0; p < index.size(); ++p) in->grad[index[p]] += o->grad[static_cast<Index>(p)];
    });
  }
  return result;
}

template <typename Scalar>
Tensor<Scalar> pixel_shuffle(const Tensor<Scalar>& input, Index r) {
  return depth_to_space(input, r, r);
}

template <typename Scalar>
Tensor<Scalar> pixel_unshuffle(const Tensor<Scalar>& input, Index r) {
  return space_to_depth(input, r, r);
}

// ---------------------------------------------------------------------------
// Activation and dense layers

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;

template <typename Scalar>
Tensor<Scalar> gelu(const Tensor<Scalar>& input) {
  const Scalar a = Scalar(kGeluSqrt2OverPi), b = Scalar(kGeluCubic);
  const auto& x = input.data();
  typename Tensor<Scalar>::Vector th(x.size()), out(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar v = x[i];
    th[i] = std::tanh(a * (v + b * v * v * v));
    out[i] = Scalar(0.5) * v * (Scalar(1) + th[i]);
  }
  const bool track = detail::tracking<Scalar>(input);
  auto result = detail::make_output<Scalar>(input.shape(), std::move(out), track, "gelu");
  if (track) {
    GradTape<Scalar>::active()->record([in = input.impl(), o = result.impl(), th = std::move(th), a, b]() {
      for (Index i = 0; i < th.size(); ++i) {
        const Scalar v = in->data[i];
        const Scalar d = Scalar(0.5) * (Scalar(1) + th[i]) +
                         Scalar(0.5) * v * (Scalar(1) - th[i] * th[i]) * a * (Scalar(1) + Scalar(3) * b * v * v);
        in->grad[i] += o->grad[i] * d;
      }
    });
  }
  return result;
}

/// y = W x + b for x of shape (n), W (m,n), b (m).
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias) {
  detail::require_rank(input.shape(), 1, "linear", "input");
  detail::require_rank(weight.shape(), 2, "linear", "weight");
  detail::require_rank(bias.shape(), 1, "linear", "bias");
  const Index m = weight.dim(0), n = weight.dim(1);
  if (input.dim(0) != n) throw ShapeError("linear: input length does not match weight columns");
  if (bias.dim(0) != m) throw ShapeError("linear: bias length does not match weight rows");
  detail::ConstRowMap<Scalar> wm(weight.data().data(), m, n);
  typename Tensor<Scalar>::Vector out = wm * input.data() + bias.data();
  const bool track = detail::tracking<Scalar>(input, weight, bias);
  auto result = detail::make_output<Scalar>({m}, std::move(out), track, "linear");
  if (track) {
    GradTape<Scalar>::active()->record([in = input.impl(), wt = weight.impl(), b = bias.impl(), o = result.impl(),
                                        m, n]() {
      if (b->requires_grad) b->grad += o->grad;
      if (wt->requires_grad) detail::RowMap<Scalar>(wt->grad.data(), m, n).noalias() += o->grad * in->data.transpose();
      if (in->requires_grad) in->grad.noalias() += detail::ConstRowMap<Scalar>(wt->data.data(), m, n).transpose() * o->grad;
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic. Operands must share a shape, except that a single-element
// tensor broadcasts against any shape.

namespace detail {

enum class BinaryKind { kAdd, kSub, kMul, kDiv };

template <typename Scalar>
Tensor<Scalar> binary(const Tensor<Scalar>& a, const Tensor<Scalar>& b, BinaryKind kind, const char* op) {
  using Vector = typename Tensor<Scalar>::Vector;
  const bool a_scalar = a.size() == 1 && b.size() != 1;
  const bool b_scalar = b.size() == 1 && a.size() != 1;
  if (!a_scalar && !b_scalar) require_same(a.shape(), b.shape(), op);
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const Index n = shape_size(shape);
  Vector av = a_scalar ? Vector::Constant(n, a.data()[0]) : a.data();
  Vector bv = b_scalar ? Vector::Constant(n, b.data()[0]) : b.data();
  Vector out(n);
  switch (kind) {
    case BinaryKind::kAdd: out = av + bv; break;
    case BinaryKind::kSub: out = av - bv; break;
    case BinaryKind::kMul: out = av.cwiseProduct(bv); break;
    case BinaryKind::kDiv: out = av.cwiseQuotient(bv); break;
  }
  const bool track = tracking<Scalar>(a, b);
  auto result = make_output<Scalar>(shape, std::move(out), track, op);
  if (track) {
    GradTape<Scalar>::active()->record([ai = a.impl(), bi = b.impl(), o = result.impl(), av = std::move(av),
                                        bv = std::move(bv), kind, a_scalar, b_scalar]() {
      const Vector& g = o->grad;
      Vector ga, gb;
      switch (kind) {
        case BinaryKind::kAdd: ga = g; gb = g; break;
        case BinaryKind::kSub: ga = g; gb = -g; break;
        case BinaryKind::kMul: ga = g.cwiseProduct(bv); gb = g.cwiseProduct(av); break;
        case BinaryKind::kDiv:
          ga = g.cwiseQuotient(bv);
          gb = -g.cwiseProduct(av).cwiseQuotient(bv.cwiseProduct(bv));
          break;
      }
      if (ai->requires_grad) {
        if (a_scalar) ai->grad[0] += ga.sum(); else ai->grad += ga;
      }
      if (bi->requires_grad) {
        if (b_scalar) bi->grad[0] += gb.sum(); else bi->grad += gb;
      }
    });
  }
  return result;
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::kAdd, "add");
}
template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::kSub, "sub");
}
template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::kMul, "mul");
}
template <typename Scalar>
Tensor<Scalar> div(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return detail::binary(a, b, detail::BinaryKind::kDiv, "div");
}

/// a * x + c with plain scalar constants.
template <typename Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& x, Scalar a, Scalar c) {
  typename Tensor<Scalar>::Vector out = (a * x.data()).array() + c;
  const bool track = detail::tracking<Scalar>(x);
  auto result = detail::make_output<Scalar>(x.shape(), std::move(out), track, "affine");
  if (track) {
    GradTape<Scalar>::active()->record([in = x.impl(), o = result.impl(), a]() {
      if (in->requires_grad) in->grad += a * o->grad;
    });
  }
  return result;
}

template <typename Scalar>
Tensor<Scalar> abs(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Vector out = x.data().cwiseAbs();
  const bool track = detail::tracking<Scalar>(x);
  auto result = detail::make_output<Scalar>(x.shape(), std::move(out), track, "abs");
  if (track) {
    GradTape<Scalar>::active()->record([in = x.impl(), o = result.impl()]() {
      for (Index i = 0; i < o->grad.size(); ++i) {
        const Scalar v = in->data[i];
        const Scalar s = v > 0 ? Scalar(1) : (v < 0 ? Scalar(-1) : Scalar(0));
        in->grad[i] += s * o->grad[i];
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reductions and shape ops

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  typename Tensor<Scalar>::Vector out = Tensor<Scalar>::Vector::Constant(1, x.data().sum());
  const bool track = detail::tracking<Scalar>(x);
  auto result = detail::make_output<Scalar>({1}, std::move(out), track, "sum");
  if (track) {
    GradTape<Scalar>::active()->record([in = x.impl(), o = result.impl()]() { in->grad.array() += o->grad[0]; });
  }
  return result;
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  const Scalar inv = Scalar(1) / static_cast<Scalar>(x.size());
  typename Tensor<Scalar>::Vector out = Tensor<Scalar>::Vector::Constant(1, x.data().sum() / static_cast<Scalar>(x.size()));
  const bool track = detail::tracking<Scalar>(x);
  auto result = detail::make_output<Scalar>({1}, std::move(out), track, "mean");
  if (track) {
    GradTape<Scalar>::active()->record(
        [in = x.impl(), o = result.impl(), inv]() { in->grad.array() += o->grad[0] * inv; });
  }
  return result;
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape) {
  if (shape_size(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const bool track = detail::tracking<Scalar>(x);
  auto result = Tensor<Scalar>(std::move(shape), x.data(), track);
  if (track) {
    GradTape<Scalar>::active()->record([in = x.impl(), o = result.impl()]() { in->grad += o->grad; });
  }
  return result;
}

/// Concatenate along `axis`; all other extents must agree.
template <typename Scalar>
Tensor<Scalar> concat(const std::vector<Tensor<Scalar>>& parts, Index axis = 0) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis < 0 || axis >= static_cast<Index>(first.size())) throw ShapeError("concat: axis out of range");
  const auto ax = static_cast<std::size_t>(axis);
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  Index total_axis = 0;
  bool track = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != first[i]) {
        throw ShapeError("concat: shape mismatch " + shape_str(s) + " vs " + shape_str(first));
      }
    }
    total_axis += s[ax];
    track = track || detail::tracking<Scalar>(p);
  }
  Shape shape = first;
  shape[ax] = total_axis;
  typename Tensor<Scalar>::Vector out(shape_size(shape));
  std::vector<Index> offsets;
  Index offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const Index len = p.dim(axis) * inner;
    for (Index o = 0; o < outer; ++o) {
      out.segment(o * total_axis * inner + offset, len) = p.data().segment(o * len, len);
    }
    offset += len;
  }
  auto result = detail::make_output<Scalar>(shape, std::move(out), track, "concat");
  if (track) {
    std::vector<std::shared_ptr<detail::TensorImpl<Scalar>>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    GradTape<Scalar>::active()->record(
        [impls = std::move(impls), offsets = std::move(offsets), o = result.impl(), outer, inner, total_axis]() {
          for (std::size_t k = 0; k < impls.size(); ++k) {
            auto& in = *impls[k];
            if (!in.requires_grad) continue;
            const Index len = in.data.size() / outer;
            for (Index r = 0; r < outer; ++r) {
              in.grad.segment(r * len, len) += o->grad.segment(r * total_axis * inner + offsets[k], len);
            }
          }
        });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Image filters used by the SSIM family

/// Separable 'valid' filtering of each channel of a (C,H,W) tensor with kernel taps `taps` along both axes.
template <typename Scalar>
Tensor<Scalar> separable_filter_valid(const Tensor<Scalar>& x, const std::vector<Scalar>& taps) {
  detail::require_rank(x.shape(), 3, "separable_filter_valid", "input");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index k = static_cast<Index>(taps.size());
  if (h < k || w < k) {
    throw ShapeError("separable_filter_valid: image " + shape_str(x.shape()) + " smaller than window " +
                     std::to_string(k));
  }
  const Index oh = h - k + 1, ow = w - k + 1;
  using Vector = typename Tensor<Scalar>::Vector;
  Vector out = Vector::Zero(c * oh * ow);
  Vector tmp(h * ow);  // after horizontal pass
  const auto& in = x.data();
  for (Index ch = 0; ch < c; ++ch) {
    tmp.setZero();
    for (Index y = 0; y < h; ++y)
      for (Index ox = 0; ox < ow; ++ox) {
        Scalar acc = 0;
        for (Index t = 0; t < k; ++t) acc += taps[static_cast<std::size_t>(t)] * in[(ch * h + y) * w + ox + t];
        tmp[y * ow + ox] = acc;
      }
    for (Index oy = 0; oy < oh; ++oy)
      for (Index ox = 0; ox < ow; ++ox) {
        Scalar acc = 0;
        for (Index t = 0; t < k; ++t) acc += taps[static_cast<std::size_t>(t)] * tmp[(oy + t) * ow + ox];
        out[(ch * oh + oy) * ow + ox] = acc;
      }
  }
  const bool track = detail::tracking<Scalar>(x);
  auto result = detail::make_output<Scalar>({c, oh, ow}, std::move(out), track, "separable_filter_valid");
  if (track) {
    GradTape<Scalar>::active()->record([in = x.impl(), o = result.impl(), taps, c, h, w, k, oh, ow]() {
      Vector tmp(h * ow);
      for (Index ch = 0; ch < c; ++ch) {
        tmp.setZero();
        for (Index oy = 0; oy < oh; ++oy)
          for (Index ox = 0; ox < ow; ++ox) {
            const Scalar g = o->grad[(ch * oh + oy) * ow + ox];
            for (Index t = 0; t < k; ++t) tmp[(oy + t) * ow + ox] += taps[static_cast<std::size_t>(t)] * g;
          }
        for (Index y = 0; y < h; ++y)
          for (Index ox = 0; ox < ow; ++ox) {
            const Scalar g = tmp[y * ow + ox];
            for (Index t = 0; t < k; ++t) in->grad[(ch * h + y) * w + ox + t] += taps[static_cast<std::size_t>(t)] * g;
          }
      }
    });
  }
  return result;
}

/// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
template <typename Scalar>
Tensor<Scalar> avg_pool2(const Tensor<Scalar>& x) {
  detail::require_rank(x.shape(), 3, "avg_pool2", "input");
  const Index c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const Index oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("avg_pool2: input too small");
  typename Tensor<Scalar>::Vector out(c * oh * ow);
  const auto& in = x.data();
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < oh; ++y)
      for (Index xx = 0; xx < ow; ++xx) {
        const Index base = (ch * h + 2 * y) * w + 2 * xx;
        out[(ch * oh + y) * ow + xx] = Scalar(0.25) * (in[base] + in[base + 1] + in[base + w] + in[base + w + 1]);
      }
  const bool track = detail::tracking<Scalar>(x);
  auto result = detail::make_output<Scalar>({c, oh, ow}, std::move(out), track, "avg_pool2");
  if (track) {
    GradTape<Scalar>::active()->record([in = x.impl(), o = result.impl(), c, h, w, oh, ow]() {
      for (Index ch = 0; ch < c; ++ch)
        for (Index y = 0; y < oh; ++y)
          for (Index xx = 0; xx < ow; ++xx) {
            const Scalar g = Scalar(0.25) * o->grad[(ch * oh + y) * ow + xx];
            const Index base = (ch * h + 2 * y) * w + 2 * xx;
            in->grad[base] += g;
            in->grad[base + 1] += g;
            in->grad[base + w] += g;
            in->grad[base + w + 1] += g;
          }
    });
  }
  return result;
}

}  // namespace cnerv
