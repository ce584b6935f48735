#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ictal/edf.hpp"

namespace ictal {

inline constexpr int kFragmentChannels = 16;
inline constexpr int kFragmentSamples = 128;
inline constexpr std::size_t kFragmentSize = std::size_t{kFragmentChannels} * kFragmentSamples;

// Origin of one fragment: patient index, file index within the patient,
// fragment index within the file.
struct FragmentRef {
  std::int32_t patient = 0;
  std::int32_t file = 0;
  std::int32_t index = 0;
  auto operator<=>(const FragmentRef&) const = default;
};

// N fragments of 16 x 128 float32 values stored back to back.
struct FragmentSet {
  std::string patient_id;  // "*" when pooled over patients
  std::string split_tag;   // dev-train, dev-val, retrain-train, retrain-val, test
  std::vector<float> data;
  std::vector<std::uint8_t> labels;
  std::vector<FragmentRef> refs;

  std::size_t size() const { return labels.size(); }
  std::size_t positives() const;
  std::span<const float> fragment(std::size_t i) const { return {data.data() + i * kFragmentSize, kFragmentSize}; }
  void push(std::span<const float> values, std::uint8_t label, FragmentRef ref);
  FragmentSet subset(std::span<const std::size_t> indices) const;
};

struct FileInfo {
  std::string file_id;
  std::vector<std::uint8_t> labels;  // one per fragment of the whole file
};

struct PatientData {
  std::string id;
  std::vector<FileInfo> files;
  int test_file = -1;
  // Seizures of the test file, in seconds from the file start.
  std::vector<edf::SeizureAnnotation> test_seizures;
  FragmentSet retrain_train, retrain_val, test;
};

struct Dataset {
  std::uint64_t seed = 0;
  double normalization = 1.0;
  std::vector<std::string> channels;
  std::vector<double> variance_scores;  // parallel to channels
  std::vector<std::string> calib_patients;
  FragmentSet dev_train, dev_val;
  std::vector<PatientData> patients;

  const PatientData& patient(const std::string& id) const;
  bool is_calibration(const std::string& id) const;
};

// Directory of float32 tensors plus manifest.json.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace ictal
