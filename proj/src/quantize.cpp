#include "ictal/quantize.hpp"

#include <algorithm>
#include <string>

#include "ictal/error.hpp"

namespace ictal::quant {

void check_bits(int bits) {
  if (bits < 2 || bits > 16) fail(ErrorCode::InvalidConfig, "bit width " + std::to_string(bits) + " not in 2..16");
}

QuantSpec fit_spec_max_abs(double max_abs, int bits) {
  check_bits(bits);
  QuantSpec spec{bits, 0};
  if (!(max_abs > 0.0) || !std::isfinite(max_abs)) return spec;
  const double qmax = spec.qmax();
  int e = static_cast<int>(std::ceil(std::log2(max_abs / qmax)));
  // log2 can land one off near exact powers of two.
  while (max_abs / std::ldexp(1.0, e) > qmax) ++e;
  while (max_abs / std::ldexp(1.0, e - 1) <= qmax) --e;
  spec.exponent = e;
  return spec;
}

QuantSpec fit_spec(std::span<const double> values, int bits) {
  double m = 0.0;
  for (double v : values) m = std::max(m, std::abs(v));
  return fit_spec_max_abs(m, bits);
}

std::int32_t quantize_value(double v, const QuantSpec& spec, bool* clamped) {
  const double r = std::nearbyint(std::ldexp(v, -spec.exponent));
  const double lo = spec.qmin();
  const double hi = spec.qmax();
  const bool sat = r < lo || r > hi;
  if (clamped) *clamped = sat;
  return static_cast<std::int32_t>(std::clamp(r, lo, hi));
}

QTensor quantize(std::span<const double> values, const QuantSpec& spec, std::vector<std::size_t> shape) {
  QTensor q;
  q.spec = spec;
  q.shape = shape.empty() ? std::vector<std::size_t>{values.size()} : std::move(shape);
  q.codes.reserve(values.size());
  for (double v : values) {
    bool sat = false;
    q.codes.push_back(quantize_value(v, spec, &sat));
    q.saturated += sat ? 1 : 0;
  }
  return q;
}

std::vector<double> dequantize(const QTensor& q) {
  std::vector<double> out;
  out.reserve(q.codes.size());
  for (auto c : q.codes) out.push_back(dequantize_value(c, q.spec));
  return out;
}

FakeQuant fake_quant(std::span<const double> values, const QuantSpec& spec) {
  FakeQuant fq;
  fq.values.reserve(values.size());
  fq.pass.reserve(values.size());
  for (double v : values) {
    bool sat = false;
    fq.values.push_back(dequantize_value(quantize_value(v, spec, &sat), spec));
    fq.pass.push_back(sat ? 0 : 1);
  }
  return fq;
}

std::vector<double> fake_quant_backward(std::span<const double> grad_out, std::span<const std::uint8_t> pass) {
  if (grad_out.size() != pass.size()) fail(ErrorCode::ShapeMismatch, "gradient/mask size mismatch");
  std::vector<double> g(grad_out.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = pass[i] ? grad_out[i] : 0.0;
  return g;
}

std::int64_t shift_round_half_even(std::int64_t v, int shift) {
  if (shift >= 0) return v * (std::int64_t{1} << shift);
  const int n = -shift;
  if (n >= 63) return 0;
  const std::int64_t div = std::int64_t{1} << n;
  // floor division, then round the remainder half-to-even
  std::int64_t q = v >> n;
  const std::int64_t rem = v - q * div;
  const std::int64_t half = div >> 1;
  if (rem > half || (rem == half && (q & 1))) ++q;
  return q;
}

}  // namespace ictal::quant
