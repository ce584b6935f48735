#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "ictal/dsp.hpp"
#include "ictal/error.hpp"

using namespace ictal;

namespace {

constexpr double kPi = std::numbers::pi;

std::vector<double> sine(double f, double fs, std::size_t n, double amp = 1.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2 * kPi * f * static_cast<double>(i) / fs);
  return x;
}

// Amplitude by least-squares fit of sin/cos at a known frequency.
double amplitude(const std::vector<double>& x, double f, double fs, std::size_t from) {
  double ss = 0, sc = 0, cc = 0, xs = 0, xc = 0;
  for (std::size_t i = from; i < x.size(); ++i) {
    const double s = std::sin(2 * kPi * f * static_cast<double>(i) / fs);
    const double c = std::cos(2 * kPi * f * static_cast<double>(i) / fs);
    ss += s * s, sc += s * c, cc += c * c, xs += x[i] * s, xc += x[i] * c;
  }
  const double det = ss * cc - sc * sc;
  const double a = (xs * cc - xc * sc) / det;
  const double b = (xc * ss - xs * sc) / det;
  return std::hypot(a, b);
}

// Bilinear Butterworth magnitude with prewarping.
double butter_mag(double f, double fc, double fs, int order, bool high) {
  const double r = std::tan(kPi * f / fs) / std::tan(kPi * fc / fs);
  const double q = high ? 1.0 / r : r;
  return 1.0 / std::sqrt(1.0 + std::pow(q, 2 * order));
}

double db(double g) { return 20.0 * std::log10(g); }

}  // namespace

TEST_CASE("resample: identity, constant and sine") {
  const auto x = sine(7.0, 256, 1000);
  CHECK(dsp::resample(x, 256, 256) == x);

  const std::vector<double> c(1024, 3.5);
  const auto y = dsp::resample(c, 512, 256);
  REQUIRE(y.size() == 512);
  for (double v : y) CHECK(v == doctest::Approx(3.5).epsilon(1e-9));

  const auto s = dsp::resample(sine(10.0, 512, 5120), 512, 256);
  REQUIRE(s.size() == 2560);
  CHECK(std::abs(amplitude(s, 10.0, 256, 256) - 1.0) < 0.01);

  CHECK(dsp::resample(sine(1.0, 200, 333), 200, 256).size() == static_cast<std::size_t>(std::lround(333 * 256.0 / 200)));
}

TEST_CASE("resample: content above the new Nyquist is attenuated") {
  const auto s = dsp::resample(sine(200.0, 512, 8192), 512, 256);
  double rms = 0;
  for (std::size_t i = 256; i < s.size() - 256; ++i) rms += s[i] * s[i];
  rms = std::sqrt(rms / static_cast<double>(s.size() - 512));
  CHECK(db(rms * std::sqrt(2.0)) < -40.0);
}

TEST_CASE("resample: empty input") {
  try {
    dsp::resample(std::vector<double>{}, 256, 128);
    FAIL("expected EmptySignal");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::EmptySignal);
  }
}

TEST_CASE("butterworth sections match the analytic magnitude") {
  for (int order : {1, 2, 4, 5, 10}) {
    auto lp = dsp::butterworth_lowpass(order, 50.0, 256.0);
    auto hp = dsp::butterworth_highpass(order, 0.1, 256.0);
    CHECK(lp.order() == static_cast<std::size_t>(order));
    for (double f : {0.05, 0.1, 1.0, 10.0, 30.0, 50.0, 60.0, 100.0}) {
      CHECK(std::abs(lp.response(f, 256.0)) == doctest::Approx(butter_mag(f, 50.0, 256.0, order, false)).epsilon(1e-9));
      CHECK(std::abs(hp.response(f, 256.0)) == doctest::Approx(butter_mag(f, 0.1, 256.0, order, true)).epsilon(1e-9));
    }
  }
}

TEST_CASE("bandpass: gain mask") {
  const auto bp = dsp::design_bandpass(0.1, 50.0, 256.0);
  for (double f = 1.0; f <= 40.0; f += 0.5) CHECK(std::abs(db(std::abs(bp.response(f, 256.0)))) <= 1.0);
  CHECK(db(std::abs(bp.response(0.0, 256.0))) <= -20.0);
  CHECK(db(std::abs(bp.response(60.0, 256.0))) <= -20.0);
}

TEST_CASE("bandpass: time-domain behaviour") {
  const std::size_t n = 256 * 120;
  std::vector<double> dc(n, 5.0);
  const auto y = dsp::bandpass(dc);
  double mean = 0;
  for (std::size_t i = n - 2560; i < n; ++i) mean += y[i];
  mean /= 2560;
  CHECK(std::abs(mean) < 0.5);

  const auto s10 = dsp::bandpass(sine(10.0, 256, 256 * 60));
  const double a10 = amplitude(s10, 10.0, 256, 256 * 30);
  CHECK(a10 >= 0.89);
  CHECK(a10 <= 1.12);

  const auto s60 = dsp::bandpass(sine(60.0, 256, 256 * 60));
  CHECK(amplitude(s60, 60.0, 256, 256 * 30) <= 0.1);
  CHECK(s60.size() == static_cast<std::size_t>(256 * 60));
}

TEST_CASE("bandpass: invalid band") {
  for (auto [lo, hi] : {std::pair{0.0, 50.0}, std::pair{50.0, 10.0}, std::pair{0.1, 128.0}}) {
    try {
      dsp::design_bandpass(lo, hi, 256.0);
      FAIL("expected InvalidBand");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidBand);
    }
  }
}
