#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cnerv/tensor.hpp"

namespace cnerv {

/// Affine quantization: code = round((x - mu_min) / s), s = (mu_max - mu_min) / 2^bit.
///
/// Codes span [0, 2^bit], i.e. 2^bit + 1 levels. Constant inputs set `constant`
/// with s = 0 and decode to mu_min exactly.
struct QuantizedTensor {
  double mu_min = 0;
  double scale = 0;
  int bit = 8;
  bool constant = false;
  std::vector<std::uint64_t> codes;
  Shape shape;

  std::uint64_t max_code() const { return std::uint64_t{1} << bit; }
};

/// Bits needed to store one code without entropy coding: ceil(log2(2^bit + 1)) = bit + 1.
inline int code_width(int bit) { return bit + 1; }

QuantizedTensor quantize_values(std::span<const double> values, int bit, Shape shape);
std::vector<double> dequantize_values(const QuantizedTensor& q);

template <typename Scalar>
QuantizedTensor quantize(const Tensor<Scalar>& mu, int bit) {
  const Eigen::VectorXd v = mu.data().template cast<double>();
  return quantize_values(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), bit, mu.shape());
}

template <typename Scalar>
Tensor<Scalar> dequantize(const QuantizedTensor& q) {
  const auto values = dequantize_values(q);
  typename Tensor<Scalar>::Vector v(static_cast<Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) v[static_cast<Index>(i)] = static_cast<Scalar>(values[i]);
  return Tensor<Scalar>(q.shape, std::move(v));
}

}  // namespace cnerv
