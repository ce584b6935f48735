#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ictal/io.hpp"
#include "ictal/tcresnet.hpp"

namespace ictal::cost {

// Measured figures of the reference accelerator, reported next to the
// model estimates.
inline constexpr double kReferenceLatencyMs = 80.626;
inline constexpr double kReferencePowerW = 495e-9;
inline constexpr std::int64_t kReferenceMacs = 337968;
inline constexpr double kDefaultIdlePowerW = 100e-9;
inline constexpr double kDefaultRateHz = 10.0;
// Per-MAC energy that reproduces the reference power at the default point.
inline constexpr double kDefaultEnergyPerMacJ =
    (kReferencePowerW - kDefaultIdlePowerW) / (kDefaultRateHz * static_cast<double>(kReferenceMacs));

struct OperatingPoint {
  int array_n = 4;  // N x N MAC array
  double clock_hz = 250'000.0;
  double rate_hz = kDefaultRateHz;
  double energy_per_mac_j = kDefaultEnergyPerMacJ;
  double idle_power_w = kDefaultIdlePowerW;

  // Throws InvalidConfig unless the array, clock and energies are positive.
  void validate() const;
};

struct LayerCost {
  std::string name;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct CostReport {
  std::vector<LayerCost> layers;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct Latency {
  std::int64_t cycles = 0;
  double latency_ms = 0.0;
  double duty_cycle = 0.0;
};

CostReport count_static(const nn::TcResNet4& model);

// cycles = sum over layers of ceil(MACs / N^2).
Latency estimate_latency(const CostReport& report, const OperatingPoint& op);

// Average power: rate * MACs * energy_per_mac + idle power.
double estimate_energy(const CostReport& report, const OperatingPoint& op);

// Per-MAC energy for which estimate_energy returns target_power_w.
double calibrate_energy_per_mac(const CostReport& report, const OperatingPoint& op, double target_power_w);

io::Json to_json(const CostReport& report, const OperatingPoint& op);

}  // namespace ictal::cost
