#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ictal/quantize.hpp"
#include "ictal/random.hpp"

namespace ictal::nn {

inline constexpr int kInputChannels = 16;
inline constexpr int kInputLength = 128;
inline constexpr int kBlockChannels = 24;
inline constexpr int kClasses = 2;

enum class LayerKind { Input, Conv1d, BatchNorm1d, Hardtanh, ReLU, ResidualAdd, GlobalAvgPool, Dropout, Linear };

std::string_view to_string(LayerKind k);

// One row of the architecture table.
struct LayerSpec {
  LayerKind kind;
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  int out_length = 0;  // 1 for flattened outputs
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct ModelOptions {
  // Unpadded first conv (16x63 output) instead of the padded 16x64 default.
  bool strict_63 = false;
  // Trainable BN scale/shift. Off by default so the trainable count is the
  // 9,840 conv/linear weights.
  bool affine_batchnorm = false;
  double dropout = 0.5;
};

struct Conv1d {
  int in_channels = 0, out_channels = 0, kernel = 1, stride = 1, padding = 0;
  std::vector<double> weight;  // out x in x kernel
  std::vector<double> bias;    // empty, or out (only after folding)

  int out_length(int in_length) const { return (in_length + 2 * padding - kernel) / stride + 1; }
};

struct BatchNorm1d {
  int channels = 0;
  std::vector<double> running_mean, running_var;
  std::vector<double> gamma, beta;  // identity when BN is not affine
  double eps = 1e-5;
  bool fitted = false;
};

struct Linear {
  int in_features = 0, out_features = 0;
  std::vector<double> weight;  // out x in
};

// Points where features are (fake-)quantized, in execution order.
enum QuantPoint : int { kQInput, kQStem, kQBranchA, kQBranchB, kQShortcut, kQBlock, kQPooled, kQLogits, kQuantPoints };

// The input samples, the residual branches before the add and the logits
// stay at accumulator width; every other point uses the model bit width.
inline constexpr int kWideBits = 16;
constexpr int feature_bits(QuantPoint p, int bits) {
  return p == kQInput || p == kQBranchB || p == kQShortcut || p == kQLogits ? kWideBits : bits;
}

struct TcResNet4 {
  ModelOptions options;
  Conv1d stem;
  Conv1d conv_a;
  BatchNorm1d bn_a;
  Conv1d conv_b;
  BatchNorm1d bn_b;
  Conv1d shortcut;
  BatchNorm1d bn_s;
  Linear fc;
  bool folded = false;

  // Set when training/evaluating with fixed-point features and weights.
  std::optional<int> quant_bits;
  std::array<std::optional<quant::QuantSpec>, kQuantPoints> feature_specs{};

  int stem_length() const { return stem.out_length(kInputLength); }
  std::vector<LayerSpec> layer_table() const;
  std::int64_t trainable_parameters() const;
  bool features_calibrated() const;

  // Trainable tensors in a fixed order (weights first, then BN affine).
  std::vector<std::vector<double>*> parameters();
  std::vector<const std::vector<double>*> parameters() const;
  std::vector<std::string> parameter_names() const;
};

// Kaiming-uniform fan-in weights, identity BN.
TcResNet4 build_tcresnet4(std::uint64_t seed = 0, ModelOptions options = {});

// Plain 1D convolution of a C x L input (row-major), the primitive every
// conv layer uses. Returns out x L'.
std::vector<double> conv1d(const Conv1d& layer, std::span<const double> input, int in_length);

struct Shape {
  int channels;
  int length;
  bool operator==(const Shape&) const = default;
};

// Inference forward pass. Uses fake quantization when `quant_bits` is set
// and features are calibrated; dropout is inactive. Optional shape trace
// lists input, stem, branch, shortcut, block, pooled, logits.
std::array<double, kClasses> forward(const TcResNet4& model, std::span<const double> input,
                                     std::vector<Shape>* trace = nullptr);
std::array<double, kClasses> forward(const TcResNet4& model, std::span<const float> input);

std::array<double, kClasses> softmax(std::array<double, kClasses> logits);

// Replaces every conv+BN pair by one conv with bias. Throws UnfittedBatchNorm
// or AlreadyFolded.
TcResNet4 fold_batchnorm(const TcResNet4& model);

// Per-parameter gradients, same layout as TcResNet4::parameters().
struct Gradients {
  std::vector<std::vector<double>> tensors;
};

// Logits for `count` fragments stored back to back (N x 16 x 128).
std::vector<std::array<double, kClasses>> predict_logits(const TcResNet4& model, std::span<const float> batch,
                                                         std::size_t count);

// Re-estimates BN statistics and, when quant_bits is set, fits the feature
// specs layer by layer over `count` fragments.
void calibrate(TcResNet4& model, std::span<const float> batch, std::size_t count);

// Training-time execution over one mini-batch: forward with caches, then
// backward of caller-supplied logit gradients into parameter gradients.
class BatchRunner {
 public:
  explicit BatchRunner(const TcResNet4& model);
  ~BatchRunner();
  BatchRunner(const BatchRunner&) = delete;
  BatchRunner& operator=(const BatchRunner&) = delete;

  // dropout_rng enables dropout when non-null.
  std::vector<std::array<double, kClasses>> forward(std::span<const float> batch, std::size_t count,
                                                    rnd::Engine* dropout_rng = nullptr);
  Gradients backward(std::span<const std::array<double, kClasses>> grad_logits) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Integer inference.

struct QuantizedConv {
  int in_channels = 0, out_channels = 0, kernel = 1, stride = 1, padding = 0;
  std::vector<std::int32_t> weight;
  quant::QuantSpec weight_spec;
  std::vector<std::int32_t> bias;  // empty when the layer has none
  quant::QuantSpec bias_spec;
};

struct QuantizedModel {
  int bits = 4;
  bool strict_63 = false;
  QuantizedConv stem, conv_a, conv_b, shortcut, fc;
  std::array<quant::QuantSpec, kQuantPoints> features{};
};

// Folds (if needed) and quantizes a model whose features are calibrated.
QuantizedModel quantize_model(const TcResNet4& model);

struct QuantizedResult {
  std::array<std::int32_t, kClasses> logits{};
  int exponent = 0;
  std::uint64_t macs = 0;
  std::array<double, kClasses> dequantized() const;
};

std::vector<std::int32_t> quantize_input(const QuantizedModel& model, std::span<const double> input);
std::vector<std::int32_t> quantize_input(const QuantizedModel& model, std::span<const float> input);
QuantizedResult forward_quantized(const QuantizedModel& model, std::span<const std::int32_t> input_codes);

}  // namespace ictal::nn
