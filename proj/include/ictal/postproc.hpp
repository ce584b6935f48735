#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ictal/edf.hpp"
#include "ictal/io.hpp"
#include "ictal/metrics.hpp"

namespace ictal::post {

using Matrix2 = std::array<std::array<double, 2>, 2>;

// Two hidden states (0 non-ictal, 1 ictal) observed through the CNN label.
struct HmmParams {
  Matrix2 transition{};  // row: previous state
  Matrix2 emission{};    // row: true state, column: observed label
  std::array<double, 2> initial{0.5, 0.5};

  // Throws InvalidConfig unless every row is a probability vector.
  void validate() const;
};

// Mean of the w most recent values (the available prefix for t < w-1).
std::vector<double> sma_scores(std::span<const double> p, int w = 5);
std::vector<std::uint8_t> sma(std::span<const double> p, int w, double theta);

// S_0 = p_0, S_t = alpha p_t + (1 - alpha) S_{t-1}.
std::vector<double> ewma_scores(std::span<const double> p, double alpha);
std::vector<std::uint8_t> ewma(std::span<const double> p, double alpha, double theta);

// Transition counts inside each sequence with +1 per cell.
Matrix2 estimate_transitions(const std::vector<std::vector<std::uint8_t>>& sequences);

// Row-normalized confusion counts (rows: true class). An empty row becomes
// uniform.
Matrix2 emissions_from_confusion(const std::array<std::array<std::int64_t, 2>, 2>& counts);
Matrix2 emissions_from_confusion(const metrics::ConfusionMatrix& cm);

std::array<double, 2> stationary(const Matrix2& transition);

// HMM with the stationary distribution of `transition` as initial state.
HmmParams make_hmm(const Matrix2& transition, const Matrix2& emission);

// Most likely first state of the window (log domain). Ties go to 0.
int viterbi_window(std::span<const std::uint8_t> obs, const HmmParams& hmm);

struct ViterbiLut {
  int window = 5;
  std::vector<std::uint8_t> entries;  // 2^window decoded labels

  // Oldest observation in the most significant bit.
  static unsigned index_of(std::span<const std::uint8_t> obs);
  int lookup(std::span<const std::uint8_t> obs) const { return entries.at(index_of(obs)); }
  std::string bit_string() const;
};

ViterbiLut compile_lut(const HmmParams& hmm, int window = 5);

// Label for every fragment of a sequence. The window starting at t decides
// t; windows running past the end repeat the last observation.
std::vector<std::uint8_t> hmm_decode(std::span<const std::uint8_t> obs, const HmmParams& hmm, int window = 5);
std::vector<std::uint8_t> hmm_decode(std::span<const std::uint8_t> obs, const ViterbiLut& lut);

// Online decoder: the label of fragment t is released once fragment
// t + window - 1 has arrived.
class StreamDecoder {
 public:
  StreamDecoder(const HmmParams& hmm, int window = 5);
  explicit StreamDecoder(const ViterbiLut& lut);

  // Returns the decision for the oldest buffered fragment once the window is full.
  std::optional<int> push(std::uint8_t obs);
  // Decisions for the fragments still buffered at end of stream.
  std::vector<int> flush();
  int window() const { return window_; }

 private:
  int decode(std::span<const std::uint8_t> obs) const;

  std::optional<HmmParams> hmm_;
  std::optional<ViterbiLut> lut_;
  int window_;
  std::deque<std::uint8_t> buf_;
};

struct SmoothingConfig {
  int window = 5;
  double sma_threshold = 0.5;
  double ewma_alpha = 0.5;
  double ewma_threshold = 0.5;
  int hmm_window = 5;
  // Set when no grid point separated the classes (best J <= 0).
  bool degenerate = false;
};

struct LabeledSequence {
  std::vector<double> probs;
  std::vector<std::uint8_t> truth;
};

// Grid search of theta in {0.05, ..., 0.95} (and alpha in {0.1, ..., 0.9})
// maximizing Youden's J over the pooled sequences. Ties keep the smaller
// theta, then the smaller alpha. Throws NoCalibrationData.
SmoothingConfig calibrate_thresholds(std::span<const LabeledSequence> sequences, int window = 5,
                                     std::size_t min_sequences = 2);

struct DelayResult {
  std::vector<std::optional<double>> per_seizure;  // absent: missed
  std::optional<double> mean;
  int detected = 0;
};

// Decision k is stamped at k * frag_s + lag_s. The delay of a seizure is the
// first positive stamp among fragments overlapping it, minus the onset,
// floored at 0.
DelayResult detection_delay(std::span<const std::uint8_t> decisions, std::span<const edf::SeizureAnnotation> seizures,
                            double frag_s = 0.5, double lag_s = 0.0);

io::Json to_json(const HmmParams& h);
HmmParams hmm_from_json(const io::Json& j);
io::Json to_json(const ViterbiLut& l);
ViterbiLut lut_from_json(const io::Json& j);
io::Json to_json(const SmoothingConfig& s);
SmoothingConfig smoothing_from_json(const io::Json& j);

}  // namespace ictal::post
