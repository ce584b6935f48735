#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ictal::quant {

// Symmetric signed fixed point: value = code * 2^exponent with
// code in [-2^(bits-1), 2^(bits-1) - 1].
struct QuantSpec {
  int bits = 4;
  int exponent = 0;

  double scale() const { return std::ldexp(1.0, exponent); }
  std::int32_t qmin() const { return -(std::int32_t{1} << (bits - 1)); }
  std::int32_t qmax() const { return (std::int32_t{1} << (bits - 1)) - 1; }
  bool operator==(const QuantSpec&) const = default;
};

// Throws InvalidConfig outside 2..16 bits.
void check_bits(int bits);

// Smallest power-of-two scale with max|v| / scale <= qmax. All-zero input
// gets scale 1.
QuantSpec fit_spec(std::span<const double> values, int bits);
QuantSpec fit_spec_max_abs(double max_abs, int bits);

// Round-half-to-even then clamp. `clamped` reports saturation.
std::int32_t quantize_value(double v, const QuantSpec& spec, bool* clamped = nullptr);
inline double dequantize_value(std::int32_t code, const QuantSpec& spec) {
  return std::ldexp(static_cast<double>(code), spec.exponent);
}

struct QTensor {
  std::vector<std::int32_t> codes;
  QuantSpec spec;
  std::vector<std::size_t> shape;
  std::size_t saturated = 0;
};

QTensor quantize(std::span<const double> values, const QuantSpec& spec, std::vector<std::size_t> shape = {});
std::vector<double> dequantize(const QTensor& q);

// Forward: dequantize(quantize(v)). Backward uses the straight-through
// estimator: gradient passes where the value was not clamped.
struct FakeQuant {
  std::vector<double> values;
  std::vector<std::uint8_t> pass;
};
FakeQuant fake_quant(std::span<const double> values, const QuantSpec& spec);
std::vector<double> fake_quant_backward(std::span<const double> grad_out, std::span<const std::uint8_t> pass);

// Multiplies an integer by 2^shift; negative shifts round half to even.
std::int64_t shift_round_half_even(std::int64_t v, int shift);

}  // namespace ictal::quant
