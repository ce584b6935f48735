#pragma once

#include <filesystem>

#include "ictal/tcresnet.hpp"

namespace ictal::ckpt {

// Float checkpoint: manifest.json plus one little-endian float32 file per
// tensor, named by layer index.
void save_model(const nn::TcResNet4& model, const std::filesystem::path& dir);
nn::TcResNet4 load_model(const std::filesystem::path& dir);

// Integer checkpoint: manifest.json with per-layer bits and exponents plus
// code arrays (int8 for bits <= 8, int16 above).
void save_quantized(const nn::QuantizedModel& model, const std::filesystem::path& dir);
nn::QuantizedModel load_quantized(const std::filesystem::path& dir);

// Rounds every stored tensor to float32 so a saved and reloaded model is
// identical to the in-memory one.
void round_to_float(nn::TcResNet4& model);

}  // namespace ictal::ckpt
