#include "ictal/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "ictal/error.hpp"

namespace ictal::dsp {

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> kaiser_sinc(std::size_t taps, double cutoff_norm, double beta) {
  // cutoff_norm: cutoff frequency divided by sampling rate.
  std::vector<double> h(taps);
  const double center = 0.5 * static_cast<double>(taps - 1);
  const double i0_beta = std::cyl_bessel_i(0.0, beta);
  for (std::size_t j = 0; j < taps; ++j) {
    const double t = static_cast<double>(j) - center;
    const double arg = 2.0 * cutoff_norm * t;
    const double sinc = t == 0.0 ? 1.0 : std::sin(kPi * arg) / (kPi * arg);
    const double r = t / center;
    const double w = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
    h[j] = 2.0 * cutoff_norm * sinc * w;
  }
  return h;
}

std::pair<long long, long long> rational_ratio(double to_hz, double from_hz) {
  long long a = std::llround(to_hz * 1000.0);
  long long b = std::llround(from_hz * 1000.0);
  const long long g = std::gcd(a, b);
  return {a / g, b / g};
}

}  // namespace

std::vector<double> resample(std::span<const double> x, double from_hz, double to_hz) {
  if (x.empty()) fail(ErrorCode::EmptySignal, "cannot resample an empty signal");
  if (!(from_hz > 0.0) || !(to_hz > 0.0)) fail(ErrorCode::InvalidConfig, "sample rates must be positive");
  if (from_hz == to_hz) return {x.begin(), x.end()};

  const auto [up, down] = rational_ratio(to_hz, from_hz);
  const double fs_up = static_cast<double>(up) * from_hz;
  const double nyquist = 0.5 * std::min(from_hz, to_hz);
  const double f_pass = 0.8 * nyquist;
  const double f_stop = nyquist;
  constexpr double kAttenuationDb = 60.0;
  const double beta = 0.1102 * (kAttenuationDb - 8.7);
  const double d_omega = 2.0 * kPi * (f_stop - f_pass) / fs_up;
  auto taps = static_cast<std::size_t>(std::ceil((kAttenuationDb - 7.95) / (2.285 * d_omega))) + 1;
  if (taps % 2 == 0) ++taps;
  const auto h = kaiser_sinc(taps, 0.5 * (f_pass + f_stop) / fs_up, beta);
  const auto center = static_cast<long long>(taps / 2);

  // Per-phase tap sums so each output sees exactly unit DC gain.
  std::vector<double> phase_sum(static_cast<std::size_t>(up), 0.0);
  for (std::size_t j = 0; j < taps; ++j) phase_sum[j % static_cast<std::size_t>(up)] += h[j];

  const auto n_in = static_cast<long long>(x.size());
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * up / down));
  std::vector<double> y(n_out);
  const auto tap_count = static_cast<long long>(taps);
  for (std::size_t m = 0; m < n_out; ++m) {
    // Output m sits at upsampled index m*down; input n sits at n*up.
    const long long pos = static_cast<long long>(m) * down + center;
    long long j = pos % up;  // first tap index aligned to an input sample
    double acc = 0.0;
    for (; j < tap_count; j += up) {
      const long long n = (pos - j) / up;
      const double v = x[static_cast<std::size_t>(std::clamp(n, 0LL, n_in - 1))];
      acc += h[static_cast<std::size_t>(j)] * v;
    }
    y[m] = acc / phase_sum[static_cast<std::size_t>(pos % up)];
  }
  return y;
}

std::complex<double> Biquad::response(double omega) const {
  const std::complex<double> z1c = std::polar(1.0, -omega);
  const std::complex<double> z2c = z1c * z1c;
  return (b0 + b1 * z1c + b2 * z2c) / (1.0 + a1 * z1c + a2 * z2c);
}

std::vector<double> SosFilter::apply(std::span<const double> x) {
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = step(x[i]);
  return y;
}

void SosFilter::reset() {
  for (auto& s : sections_) s.z1 = s.z2 = 0.0;
}

std::complex<double> SosFilter::response(double f_hz, double fs_hz) const {
  const double omega = 2.0 * kPi * f_hz / fs_hz;
  std::complex<double> r = 1.0;
  for (const auto& s : sections_) r *= s.response(omega);
  return r;
}

std::size_t SosFilter::order() const {
  std::size_t n = 0;
  for (const auto& s : sections_) n += (s.a2 != 0.0 || s.b2 != 0.0) ? 2 : 1;
  return n;
}

namespace {

SosFilter butterworth(int order, double fc_hz, double fs_hz, bool highpass) {
  if (order < 1) fail(ErrorCode::InvalidConfig, "filter order must be >= 1");
  if (!(fc_hz > 0.0 && fc_hz < 0.5 * fs_hz)) fail(ErrorCode::InvalidBand, "corner must lie in (0, fs/2)");
  const double k = std::tan(kPi * fc_hz / fs_hz);
  std::vector<Biquad> sections;
  for (int i = 1; i <= order / 2; ++i) {
    const double q = 1.0 / (2.0 * std::sin(kPi * (2 * i - 1) / (2.0 * order)));
    const double norm = 1.0 / (1.0 + k / q + k * k);
    Biquad s;
    if (highpass) {
      s.b0 = norm;
      s.b1 = -2.0 * norm;
    } else {
      s.b0 = k * k * norm;
      s.b1 = 2.0 * s.b0;
    }
    s.b2 = s.b0;
    s.a1 = 2.0 * (k * k - 1.0) * norm;
    s.a2 = (1.0 - k / q + k * k) * norm;
    sections.push_back(s);
  }
  if (order % 2 == 1) {
    const double norm = 1.0 / (1.0 + k);
    Biquad s;
    s.b0 = highpass ? norm : k * norm;
    s.b1 = highpass ? -norm : k * norm;
    s.a1 = (k - 1.0) * norm;
    sections.push_back(s);
  }
  return SosFilter(std::move(sections));
}

}  // namespace

SosFilter butterworth_lowpass(int order, double fc_hz, double fs_hz) {
  return butterworth(order, fc_hz, fs_hz, false);
}

SosFilter butterworth_highpass(int order, double fc_hz, double fs_hz) {
  return butterworth(order, fc_hz, fs_hz, true);
}

SosFilter design_bandpass(double lo_hz, double hi_hz, double fs_hz, BandpassDesign design) {
  if (!(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < 0.5 * fs_hz))
    fail(ErrorCode::InvalidBand, "need 0 < lo < hi < fs/2");
  auto hp = butterworth_highpass(design.highpass_order, lo_hz, fs_hz);
  auto lp = butterworth_lowpass(design.lowpass_order, hi_hz, fs_hz);
  std::vector<Biquad> all = hp.sections();
  all.insert(all.end(), lp.sections().begin(), lp.sections().end());
  return SosFilter(std::move(all));
}

std::vector<double> bandpass(std::span<const double> signal, double lo_hz, double hi_hz, double fs_hz,
                             BandpassDesign design) {
  auto f = design_bandpass(lo_hz, hi_hz, fs_hz, design);
  return f.apply(signal);
}

}  // namespace ictal::dsp
