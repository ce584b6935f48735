#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ictal/edf.hpp"

namespace ictal::synth {

struct SynthConfig {
  int n_patients = 4;
  int channels = 18;
  double fs_hz = 256.0;
  double minutes = 30.0;     // per patient, split evenly over the files
  int files_per_patient = 3;
  int seizures_per_patient = 6;
  double seizure_min_s = 20.0;
  double seizure_max_s = 60.0;
  double gain_min = 2.0;     // ictal amplitude gain range
  double gain_max = 5.0;
  double rhythm_min_hz = 3.0;
  double rhythm_max_hz = 8.0;
  double rhythm_amplitude = 1.5;  // relative to the background std
  double ictal_channel_fraction = 0.5;
  // Gain and rhythm are drawn once per patient; each seizure deviates by a
  // relative amount up to this.
  double seizure_jitter = 0.1;
  double noise_uv = 20.0;          // background std in microvolts
  std::uint64_t seed = 0;

  // Throws InvalidConfig.
  void validate() const;
};

struct SynthFile {
  std::string patient;
  std::string file_id;  // <patient>_NN.edf
  edf::EdfRecording recording;
};

struct SynthCorpus {
  std::vector<SynthFile> files;
  std::vector<edf::SeizureAnnotation> annotations;
};

// Bipolar montage labels; the first 18 follow the usual 10-20 double banana.
std::vector<std::string> channel_labels(int n);

SynthCorpus generate(const SynthConfig& cfg);

// Writes DIR/<patient>/<file_id> and DIR/annotations.csv.
void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir);

}  // namespace ictal::synth
