#include <doctest.h>

#include <cmath>

#include "ictal/costmodel.hpp"
#include "ictal/error.hpp"

using namespace ictal;
using namespace ictal::cost;

TEST_CASE("static counts") {
  const auto r = count_static(nn::build_tcresnet4(0));
  CHECK(r.params == 9840);
  CHECK(r.macs == 337968);
  bool shortcut = false;
  for (const auto& l : r.layers)
    if (l.name == "block.shortcut") {
      shortcut = true;
      CHECK(l.macs == 12288);
    }
  CHECK(shortcut);
}

TEST_CASE("latency at the reference operating point") {
  const auto r = count_static(nn::build_tcresnet4(0));
  const auto lat = estimate_latency(r, OperatingPoint{});
  CHECK(lat.cycles == 21123);
  CHECK(lat.latency_ms == doctest::Approx(84.492));
  CHECK(lat.duty_cycle == doctest::Approx(0.84492));
  OperatingPoint one;
  one.array_n = 1;
  CHECK(estimate_latency(r, one).latency_ms == doctest::Approx(lat.latency_ms * 16).epsilon(1e-3));
}

TEST_CASE("energy model and calibration") {
  const auto r = count_static(nn::build_tcresnet4(0));
  OperatingPoint op;
  CHECK(estimate_energy(r, op) == doctest::Approx(495e-9).epsilon(1e-9));
  const double e = calibrate_energy_per_mac(r, op, 495e-9);
  CHECK(e == doctest::Approx((495e-9 - 100e-9) / (10 * 337968.0)));
  CHECK(e == doctest::Approx(1.17e-13).epsilon(1e-2));
  op.rate_hz = 0.0;
  CHECK(estimate_energy(r, op) == doctest::Approx(op.idle_power_w));
}

TEST_CASE("invalid operating point") {
  OperatingPoint op;
  op.array_n = 0;
  CHECK_THROWS_AS(op.validate(), Error);
}
