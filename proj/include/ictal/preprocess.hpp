#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ictal/dataset.hpp"
#include "ictal/dsp.hpp"
#include "ictal/edf.hpp"
#include "ictal/random.hpp"

namespace ictal::prep {

inline constexpr double kTargetRateHz = 256.0;
inline constexpr double kFragmentSeconds = 0.5;

// Non-overlapping C x 128 windows (channel-major); the trailing remainder is
// dropped. Requires fs_hz * frag_s to be integral.
std::vector<std::vector<double>> fragment(const std::vector<std::vector<double>>& channels, double fs_hz = 256.0,
                                          double frag_s = 0.5);

// Label 1 iff the fragment midpoint lies in [start_s, end_s) of an interval.
std::vector<std::uint8_t> label_fragments(std::size_t n_fragments, std::span<const edf::SeizureAnnotation> seizures,
                                          double frag_s = 0.5);

struct ChannelSelection {
  std::vector<std::string> kept;  // highest variance first
  std::vector<double> scores;     // parallel to kept
};

// Top-`keep` channels by sample variance; ties go to the lexicographically
// smaller label. Throws TooFewChannels.
ChannelSelection select_channels(std::span<const std::vector<double>> ictal_data,
                                 std::span<const std::string> labels, std::size_t keep = 16);
ChannelSelection select_by_score(std::span<const double> scores, std::span<const std::string> labels,
                                 std::size_t keep = 16);

// Divides every set by the largest |value| over all of them and returns it.
// Throws AllZeroData.
double normalize(std::span<FragmentSet* const> sets);

struct SplitPlan {
  double dev_fraction = 0.4;    // rest goes to patient retraining
  double train_fraction = 0.8;  // train:val inside dev and retrain
  int neg_pos_ratio = 3;
};

// Seeded uniform choice among files that contain a positive label.
// Throws NoSeizureFile.
int choose_test_file(std::span<const std::vector<std::uint8_t>> file_labels, std::uint64_t seed, int patient);

struct PatientSplit {
  int test_file = -1;
  std::vector<FragmentRef> retrain_train, retrain_val;
};

struct SplitIndex {
  std::vector<FragmentRef> dev_train, dev_val;
  std::vector<PatientSplit> patients;
};

// Index-level split over per-patient, per-file fragment labels. Each patient
// reserves one seizure file for testing; the rest is downsampled to the
// negative:positive ratio, split 40:60 into dev and retrain, and each part
// 80:20 into train and validation (dev pooled over patients).
SplitIndex plan_splits(const std::vector<std::vector<std::vector<std::uint8_t>>>& labels, const SplitPlan& plan,
                       std::uint64_t seed);

// In-memory variant: one FragmentSet per file, fragments in time order.
struct PatientPool {
  std::string patient_id;
  std::vector<FragmentSet> files;
};
struct Splits {
  FragmentSet dev_train, dev_val;
  std::vector<PatientData> patients;  // retrain_train, retrain_val, test filled in
};
Splits make_splits(const std::vector<PatientPool>& pools, const SplitPlan& plan, std::uint64_t seed);

// Resamples to 256 Hz and band-passes the named channels (in that order).
// Throws TooFewChannels when a label is missing.
std::vector<std::vector<double>> prepare_channels(const edf::EdfRecording& rec, std::span<const std::string> labels,
                                                  double lo_hz = 0.1, double hi_hz = 50.0,
                                                  dsp::BandpassDesign design = {});

// Fragments of one prepared recording scaled by 1/normalization, as float32.
std::vector<float> fragments_f32(const std::vector<std::vector<double>>& prepared, double normalization);

struct PreprocessConfig {
  std::filesystem::path data_dir;
  std::filesystem::path annotations;
  std::uint64_t seed = 0;
  SplitPlan plan;
  double lo_hz = 0.1;
  double hi_hz = 50.0;
  dsp::BandpassDesign design;
  std::vector<std::string> calib_patients;  // empty: seeded choice of two
};

// EDF files under data_dir (one sub-directory per patient, or flat files
// named <patient>_<n>.edf) plus the annotation CSV into a full Dataset.
Dataset build_dataset(const PreprocessConfig& cfg);

}  // namespace ictal::prep
