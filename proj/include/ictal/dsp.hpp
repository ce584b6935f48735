#pragma once

#include <complex>
#include <span>
#include <vector>

namespace ictal::dsp {

// Rational polyphase resampler with a Kaiser-windowed sinc anti-alias
// filter (60 dB stopband starting at the lower Nyquist frequency).
// Output length is round(len * to_hz / from_hz). Edges are extended with
// the first/last sample so constant signals stay constant.
std::vector<double> resample(std::span<const double> signal, double from_hz, double to_hz = 256.0);

// Direct form II transposed second-order section, a0 normalized to 1.
struct Biquad {
  double b0 = 1, b1 = 0, b2 = 0, a1 = 0, a2 = 0;
  double z1 = 0, z2 = 0;

  double step(double x) {
    const double y = b0 * x + z1;
    z1 = b1 * x - a1 * y + z2;
    z2 = b2 * x - a2 * y;
    return y;
  }
  std::complex<double> response(double omega) const;
};

class SosFilter {
 public:
  SosFilter() = default;
  explicit SosFilter(std::vector<Biquad> sections) : sections_(std::move(sections)) {}

  double step(double x) {
    for (auto& s : sections_) x = s.step(x);
    return x;
  }
  std::vector<double> apply(std::span<const double> x);
  void reset();
  std::complex<double> response(double f_hz, double fs_hz) const;
  std::size_t order() const;
  const std::vector<Biquad>& sections() const { return sections_; }

 private:
  std::vector<Biquad> sections_;
};

// Bilinear-transform Butterworth designs with prewarped corner frequency.
SosFilter butterworth_lowpass(int order, double fc_hz, double fs_hz);
SosFilter butterworth_highpass(int order, double fc_hz, double fs_hz);

struct BandpassDesign {
  int highpass_order = 4;
  int lowpass_order = 10;
};

// Causal Butterworth band-pass: high-pass section at lo_hz cascaded with a
// low-pass section at hi_hz. Requires 0 < lo_hz < hi_hz < fs_hz / 2.
SosFilter design_bandpass(double lo_hz, double hi_hz, double fs_hz, BandpassDesign design = {});
std::vector<double> bandpass(std::span<const double> signal, double lo_hz = 0.1, double hi_hz = 50.0,
                             double fs_hz = 256.0, BandpassDesign design = {});

}  // namespace ictal::dsp
