#include "cnerv/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cnerv {

QuantizedTensor quantize_values(std::span<const double> values, int bit, Shape shape) {
  if (bit < 1 || bit > 32) throw Error("quantize: bit width " + std::to_string(bit) + " outside 1..32");
  if (values.empty()) throw Error("quantize: empty tensor");
  QuantizedTensor q;
  q.bit = bit;
  q.shape = std::move(shape);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (!std::isfinite(*lo) || !std::isfinite(*hi)) throw NumericalError("quantize: non-finite input");
  q.mu_min = *lo;
  q.codes.assign(values.size(), 0);
  if (*hi == *lo) {
    q.constant = true;
    q.scale = 0;
    return q;
  }
  q.scale = (*hi - *lo) / std::ldexp(1.0, bit);
  const double top = static_cast<double>(q.max_code());
  for (std::size_t i = 0; i < values.size(); ++i) {
    // std::round rounds halfway cases away from zero
    const double r = std::round((values[i] - q.mu_min) / q.scale);
    q.codes[i] = static_cast<std::uint64_t>(std::clamp(r, 0.0, top));
  }
  return q;
}

std::vector<double> dequantize_values(const QuantizedTensor& q) {
  std::vector<double> out(q.codes.size());
  for (std::size_t i = 0; i < q.codes.size(); ++i) {
    if (q.codes[i] > q.max_code()) throw FormatError("dequantize: code exceeds 2^bit");
    out[i] = q.constant ? q.mu_min : static_cast<double>(q.codes[i]) * q.scale + q.mu_min;
  }
  return out;
}

}  // namespace cnerv
