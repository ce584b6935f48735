#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ictal/io.hpp"

namespace ictal::metrics {

struct ConfusionMatrix {
  std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::int64_t total() const { return tp + fp + tn + fn; }
  void add(int truth, int predicted);
  ConfusionMatrix& operator+=(const ConfusionMatrix& o);
  bool operator==(const ConfusionMatrix&) const = default;
};

ConfusionMatrix confusion(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> predicted);

// A rate is absent when its denominator is zero.
struct Rates {
  std::optional<double> accuracy, sensitivity, specificity, fpr;
};

Rates rates(const ConfusionMatrix& cm);

// Trapezoidal ROC area over all thresholds; ties count one half.
// Throws SingleClass unless both labels occur.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct MethodResult {
  std::string method;
  ConfusionMatrix cm;
  Rates rates;
  std::optional<double> auc;
  int seizures = 0;
  int detected = 0;
  std::optional<double> mean_delay_s;
};

struct PatientResult {
  std::string patient;
  std::vector<MethodResult> methods;
};

struct EvalReport {
  std::vector<PatientResult> patients;
  // Unweighted mean of the per-patient rates and AUC for each method.
  std::vector<MethodResult> mean;
  // Metrics over all test fragments concatenated.
  std::vector<MethodResult> pooled;
};

// Mean over patients of each available value, per method name.
std::vector<MethodResult> average(const std::vector<PatientResult>& patients);

io::Json to_json(const MethodResult& r);
io::Json to_json(const EvalReport& r);
// One row per (patient, method) with a header line.
std::string to_csv(const EvalReport& r);

}  // namespace ictal::metrics
