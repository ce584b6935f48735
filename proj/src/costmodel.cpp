#include "ictal/costmodel.hpp"

#include "ictal/error.hpp"

namespace ictal::cost {

void OperatingPoint::validate() const {
  if (array_n < 1) fail(ErrorCode::InvalidConfig, "MAC array size must be >= 1");
  if (!(clock_hz > 0.0)) fail(ErrorCode::InvalidConfig, "clock must be positive");
  if (!(rate_hz >= 0.0)) fail(ErrorCode::InvalidConfig, "inference rate must be >= 0");
  if (!(energy_per_mac_j >= 0.0) || !(idle_power_w >= 0.0))
    fail(ErrorCode::InvalidConfig, "energies must be non-negative");
}

CostReport count_static(const nn::TcResNet4& model) {
  CostReport r;
  for (const auto& l : model.layer_table()) {
    if (l.kind != nn::LayerKind::Conv1d && l.kind != nn::LayerKind::Linear) continue;
    r.layers.push_back({l.name, l.params, l.macs});
    r.params += l.params;
    r.macs += l.macs;
  }
  return r;
}

Latency estimate_latency(const CostReport& report, const OperatingPoint& op) {
  op.validate();
  const std::int64_t lanes = static_cast<std::int64_t>(op.array_n) * op.array_n;
  Latency l;
  for (const auto& layer : report.layers) l.cycles += (layer.macs + lanes - 1) / lanes;
  const double seconds = static_cast<double>(l.cycles) / op.clock_hz;
  l.latency_ms = 1e3 * seconds;
  l.duty_cycle = seconds * op.rate_hz;
  return l;
}

double estimate_energy(const CostReport& report, const OperatingPoint& op) {
  op.validate();
  return op.rate_hz * static_cast<double>(report.macs) * op.energy_per_mac_j + op.idle_power_w;
}

double calibrate_energy_per_mac(const CostReport& report, const OperatingPoint& op, double target_power_w) {
  if (!(op.rate_hz > 0.0) || report.macs <= 0) fail(ErrorCode::InvalidConfig, "calibration needs a positive rate");
  if (!(target_power_w >= op.idle_power_w)) fail(ErrorCode::InvalidConfig, "target power is below the idle power");
  return (target_power_w - op.idle_power_w) / (op.rate_hz * static_cast<double>(report.macs));
}

io::Json to_json(const CostReport& report, const OperatingPoint& op) {
  const auto lat = estimate_latency(report, op);
  io::Json layers = io::Json::array();
  for (const auto& l : report.layers) layers.push_back({{"name", l.name}, {"params", l.params}, {"macs", l.macs}});
  return {{"layers", layers},
          {"params", report.params},
          {"macs", report.macs},
          {"operating_point",
           {{"array_n", op.array_n},
            {"clock_hz", op.clock_hz},
            {"rate_hz", op.rate_hz},
            {"energy_per_mac_j", op.energy_per_mac_j},
            {"idle_power_w", op.idle_power_w}}},
          {"cycles", lat.cycles},
          {"latency_ms", lat.latency_ms},
          {"duty_cycle", lat.duty_cycle},
          {"power_w", estimate_energy(report, op)},
          {"reference", {{"latency_ms", kReferenceLatencyMs}, {"power_w", kReferencePowerW}}}};
}

}  // namespace ictal::cost
