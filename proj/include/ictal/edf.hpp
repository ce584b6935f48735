#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ictal::edf {

struct EdfHeader {
  std::string version = "0";
  std::string patient_id;
  std::string recording_id;
  std::string start_date = "01.01.00";  // dd.mm.yy
  std::string start_time = "00.00.00";  // hh.mm.ss
  int header_bytes = 256;
  int n_records = 0;
  double record_duration_s = 1.0;
  int n_signals = 0;
  std::string reserved;
};

struct EdfSignalSpec {
  std::string label;
  std::string transducer;
  std::string physical_dim;
  double physical_min = -1.0;
  double physical_max = 1.0;
  int digital_min = -32768;
  int digital_max = 32767;
  std::string prefiltering;
  int samples_per_record = 1;
  std::string reserved;

  // Physical units per digital step; negative when the physical range is inverted.
  double gain() const;
  double to_physical(int digital) const;
  // Inverse of to_physical, rounded half-to-even and clamped to the digital range.
  int to_digital(double physical) const;
};

struct EdfRecording {
  EdfHeader header;
  std::vector<EdfSignalSpec> specs;
  std::vector<std::vector<double>> samples;  // physical values, one vector per signal
  std::vector<std::string> warnings;

  double sample_rate_hz(std::size_t signal) const;
  double duration_s() const;
};

// Decodes an EDF 1.0 file held entirely in memory.
EdfRecording parse_edf(std::span<const std::uint8_t> bytes);
EdfRecording read_edf_file(const std::string& path);

// Encodes `rec`. Header counts (header_bytes, n_signals, n_records) are
// recomputed from the specs and sample vectors.
std::vector<std::uint8_t> write_edf(const EdfRecording& rec);
void write_edf_file(const EdfRecording& rec, const std::string& path);

struct SeizureAnnotation {
  std::string file_id;
  double start_s = 0.0;
  double end_s = 0.0;

  double duration_s() const { return end_s - start_s; }
  bool operator==(const SeizureAnnotation&) const = default;
};

// Line-oriented `file_id,start_s,end_s`; `#` starts a comment line and a
// leading `file_id,...` header row is skipped. Result is sorted by
// (file_id, start_s) with overlapping intervals of one file merged.
std::vector<SeizureAnnotation> parse_annotations(std::string_view text);
std::string format_annotations(const std::vector<SeizureAnnotation>& anns);

}  // namespace ictal::edf
