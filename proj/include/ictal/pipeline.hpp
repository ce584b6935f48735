#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ictal/costmodel.hpp"
#include "ictal/dataset.hpp"
#include "ictal/io.hpp"
#include "ictal/metrics.hpp"
#include "ictal/postproc.hpp"
#include "ictal/preprocess.hpp"
#include "ictal/synth.hpp"
#include "ictal/tcresnet.hpp"
#include "ictal/train.hpp"

namespace ictal::pipeline {

struct PostprocOptions {
  int window = 5;
  int hmm_window = 5;
  // HMM observations: threshold-moved labels (true) or plain argmax.
  bool hmm_thresholded = true;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  synth::SynthConfig synth;
  prep::SplitPlan split;
  double lo_hz = 0.1;
  double hi_hz = 50.0;
  dsp::BandpassDesign band;
  std::vector<std::string> calib_patients;
  train::TrainConfig train;
  bool auto_weight = false;  // pick w from {1..5} by training sensitivity
  PostprocOptions post;
  cost::OperatingPoint op;
};

// Keys mirror to_json(); any unknown key throws InvalidConfig.
PipelineConfig config_from_json(const io::Json& j);
io::Json to_json(const PipelineConfig& c);
PipelineConfig load_config(const std::filesystem::path& path);

prep::PreprocessConfig preprocess_config(const PipelineConfig& c, const std::filesystem::path& data_dir,
                                         const std::filesystem::path& annotations);

struct PatientModel {
  std::string patient;
  nn::TcResNet4 model;
  train::TrainReport report;
};

struct TrainedSystem {
  nn::TcResNet4 base;
  train::TrainReport base_report;
  double seizure_weight = 2.0;
  bool weight_fallback = false;
  std::vector<PatientModel> patients;

  const PatientModel& patient(const std::string& id) const;
};

// Base training on the pooled dev split (with optional weight selection).
nn::TcResNet4 train_base_stage(const Dataset& ds, PipelineConfig& cfg, train::TrainReport* report,
                               bool* weight_fallback = nullptr);
PatientModel retrain_stage(const Dataset& ds, const nn::TcResNet4& base, const std::string& patient,
                           const PipelineConfig& cfg);
TrainedSystem train_all(const Dataset& ds, PipelineConfig cfg);

// Label sequences of every non-test file, pooled over patients.
post::Matrix2 pooled_transitions(const Dataset& ds);
// Emissions come from the training confusion with one extra count per cell.
post::HmmParams patient_hmm(const Dataset& ds, const train::TrainReport& report, bool thresholded = true);

// Ictal probability per test fragment, through the float (fake-quant) path
// or the integer engine.
std::vector<double> probabilities(const nn::TcResNet4& model, const FragmentSet& set, bool integer = false);

// CNN labels fed to the HMM.
std::vector<std::uint8_t> observations(std::span<const double> probs, double seizure_weight, bool thresholded);

post::SmoothingConfig calibrate(const Dataset& ds, const TrainedSystem& sys, const PipelineConfig& cfg);

struct EvalOptions {
  bool integer = false;
  bool use_lut = true;
};

// SMA, EWMA and HMM results on the test file of every non-calibration patient.
metrics::EvalReport evaluate(const Dataset& ds, const TrainedSystem& sys, const post::SmoothingConfig& smoothing,
                             const PipelineConfig& cfg, EvalOptions opt = {});

// Fixed-width text block with one column per method.
std::string format_metrics(const std::vector<metrics::MethodResult>& methods);

struct SweepPoint {
  int bits = 0;
  double base_auc = 0.0;  // base model, raw probability
  double sma_auc = 0.0;
  double ewma_auc = 0.0;
  double patient_auc = 0.0;  // patient models, raw probability
};

SweepPoint summarize(const Dataset& ds, const TrainedSystem& sys, const metrics::EvalReport& report, int bits);

// Full train/calibrate/evaluate run with QAT at each bit width. AUCs are
// means over the non-calibration patients.
std::vector<SweepPoint> bit_sweep(const Dataset& ds, const PipelineConfig& cfg, std::span<const int> bits);

}  // namespace ictal::pipeline
