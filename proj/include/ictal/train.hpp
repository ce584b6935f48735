#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ictal/dataset.hpp"
#include "ictal/io.hpp"
#include "ictal/metrics.hpp"
#include "ictal/tcresnet.hpp"

namespace ictal::train {

struct TrainConfig {
  int epochs_base = 40;
  int batch_base = 128;
  int epochs_retrain = 10;
  int batch_retrain = 8;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double seizure_weight = 2.0;  // threshold-moving weight w
  std::optional<int> qat_bits;
  std::uint64_t seed = 0;
  // Fragments used to re-estimate BN statistics and feature ranges.
  std::size_t calib_fragments = 1024;
  // Trained models carry BN scale and shift; they fold into conv biases.
  nn::ModelOptions model{.affine_batchnorm = true};
};

// Throws InvalidConfig on out-of-range values.
void validate(const TrainConfig& cfg);

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  std::optional<metrics::Rates> val_rates;
  std::optional<double> val_auc;
};

struct TrainReport {
  std::vector<EpochLog> epochs;
  // Threshold-moved predictions on the training set after the last epoch.
  metrics::ConfusionMatrix train_confusion;
  // Same predictions at w = 1.
  metrics::ConfusionMatrix argmax_confusion;
  std::array<double, 2> class_weights{1.0, 1.0};
  double seizure_weight = 2.0;
};

io::Json to_json(const TrainReport& r);
TrainReport report_from_json(const io::Json& j);

// Inverse-frequency weights n / (2 n_c), rescaled to mean 1. Throws SingleClass.
std::array<double, 2> class_weights(std::span<const std::uint8_t> labels);

// Class-weighted softmax cross-entropy averaged by the summed sample
// weights. Writes dL/dlogits when `grad` is non-null.
double weighted_cross_entropy(std::span<const std::array<double, 2>> logits, std::span<const std::uint8_t> labels,
                              std::array<double, 2> weights, std::vector<std::array<double, 2>>* grad = nullptr);

// Ictal iff w * p_ictal >= p_non_ictal.
int apply_threshold_moving(std::array<double, 2> probabilities, double w = 2.0);

struct WeightChoice {
  double w = 5.0;
  bool fallback = false;  // no candidate reached the sensitivity target
};

// Smallest candidate weight whose training sensitivity exceeds 0.9.
WeightChoice select_weight(std::span<const std::pair<double, double>> weight_sensitivity);

// Softmax ictal probability per fragment (eval mode).
std::vector<double> predict_proba(const nn::TcResNet4& model, const FragmentSet& set);
metrics::ConfusionMatrix evaluate(const nn::TcResNet4& model, const FragmentSet& set, double w);

// Decoupled-weight-decay Adam over the model parameter list.
class AdamW {
 public:
  AdamW(const TrainConfig& cfg, const nn::TcResNet4& model);
  void step(nn::TcResNet4& model, const nn::Gradients& g);

 private:
  double lr_, b1_, b2_, eps_, wd_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Patient-unspecific training from a fresh initialization.
nn::TcResNet4 train_base(const FragmentSet& train, const FragmentSet* val, const TrainConfig& cfg,
                         TrainReport* report = nullptr);

// Continues training every layer of `base` on one patient's data.
// Throws EmptyRetrainSet.
nn::TcResNet4 retrain_patient(const nn::TcResNet4& base, const FragmentSet& train, const FragmentSet* val,
                              const TrainConfig& cfg, TrainReport* report = nullptr);

}  // namespace ictal::train
