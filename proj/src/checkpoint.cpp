#include "ictal/checkpoint.hpp"

#include <cstdio>
#include <functional>

#include "ictal/error.hpp"
#include "ictal/io.hpp"

namespace ictal::ckpt {

namespace fs = std::filesystem;
using io::Json;
using nn::TcResNet4;

namespace {

constexpr const char* kFloatFormat = "ictal-float-checkpoint";
constexpr const char* kQuantFormat = "ictal-quantized-checkpoint";
constexpr int kVersion = 1;

struct TensorRef {
  std::string name;
  std::vector<double>* values;
  std::vector<std::size_t> shape;
};

std::vector<TensorRef> tensors(TcResNet4& m) {
  std::vector<TensorRef> t;
  auto conv = [&](int index, const std::string& name, nn::Conv1d& c, nn::BatchNorm1d& bn, bool has_bn) {
    const std::string prefix = std::to_string(index) + "." + name;
    const auto oc = static_cast<std::size_t>(c.out_channels);
    t.push_back({prefix + ".weight", &c.weight, {oc, std::size_t(c.in_channels), std::size_t(c.kernel)}});
    if (!c.bias.empty()) t.push_back({prefix + ".bias", &c.bias, {oc}});
    if (has_bn && !m.folded) {
      t.push_back({prefix + ".bn.running_mean", &bn.running_mean, {oc}});
      t.push_back({prefix + ".bn.running_var", &bn.running_var, {oc}});
      t.push_back({prefix + ".bn.gamma", &bn.gamma, {oc}});
      t.push_back({prefix + ".bn.beta", &bn.beta, {oc}});
    }
  };
  nn::BatchNorm1d none;
  conv(0, "stem", m.stem, none, false);
  conv(1, "conv_a", m.conv_a, m.bn_a, true);
  conv(2, "conv_b", m.conv_b, m.bn_b, true);
  conv(3, "shortcut", m.shortcut, m.bn_s, true);
  t.push_back({"4.fc.weight", &m.fc.weight, {std::size_t(m.fc.out_features), std::size_t(m.fc.in_features)}});
  return t;
}

std::size_t numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

void check_format(const Json& j, const char* format) {
  if (!j.contains("format") || j["format"] != format)
    fail(ErrorCode::MalformedField, std::string("manifest is not an ") + format);
  if (j.value("version", 0) != kVersion) fail(ErrorCode::MalformedField, "unsupported checkpoint version");
}

std::string file_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "t%02zu.%s", i, ext);
  return buf;
}

}  // namespace

void round_to_float(TcResNet4& m) {
  for (auto& t : tensors(m))
    for (auto& v : *t.values) v = static_cast<float>(v);
}

void save_model(const TcResNet4& model, const fs::path& dir) {
  TcResNet4 m = model;
  fs::create_directories(dir);
  Json j;
  j["format"] = kFloatFormat;
  j["version"] = kVersion;
  j["options"] = {{"strict_63", m.options.strict_63},
                  {"affine_batchnorm", m.options.affine_batchnorm},
                  {"dropout", m.options.dropout}};
  j["folded"] = m.folded;
  j["bn_fitted"] = m.bn_a.fitted && m.bn_b.fitted && m.bn_s.fitted;
  j["quant_bits"] = m.quant_bits ? Json(*m.quant_bits) : Json(nullptr);
  Json feats = Json::array();
  for (const auto& s : m.feature_specs) feats.push_back(s ? Json(s->exponent) : Json(nullptr));
  j["feature_exponents"] = feats;
  Json list = Json::array();
  const auto ts = tensors(m);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto file = file_name(i, "f32");
    io::write_f32(dir / file, *ts[i].values);
    list.push_back({{"name", ts[i].name}, {"file", file}, {"shape", ts[i].shape}});
  }
  j["tensors"] = list;
  io::write_json(dir / "manifest.json", j);
}

TcResNet4 load_model(const fs::path& dir) {
  const Json j = io::read_json(dir / "manifest.json");
  check_format(j, kFloatFormat);
  try {
    nn::ModelOptions opt;
    opt.strict_63 = j.at("options").at("strict_63").get<bool>();
    opt.affine_batchnorm = j.at("options").at("affine_batchnorm").get<bool>();
    opt.dropout = j.at("options").at("dropout").get<double>();
    TcResNet4 m = nn::build_tcresnet4(0, opt);
    m.folded = j.at("folded").get<bool>();
    if (m.folded) {
      m.conv_a.bias.assign(m.conv_a.out_channels, 0.0);
      m.conv_b.bias.assign(m.conv_b.out_channels, 0.0);
      m.shortcut.bias.assign(m.shortcut.out_channels, 0.0);
      m.bn_a = m.bn_b = m.bn_s = nn::BatchNorm1d{};
    } else {
      const bool fitted = j.value("bn_fitted", false);
      m.bn_a.fitted = m.bn_b.fitted = m.bn_s.fitted = fitted;
    }
    if (!j.at("quant_bits").is_null()) {
      m.quant_bits = j.at("quant_bits").get<int>();
      quant::check_bits(*m.quant_bits);
    }
    const auto& feats = j.at("feature_exponents");
    if (feats.size() != nn::kQuantPoints) fail(ErrorCode::MalformedField, "feature_exponents has the wrong length");
    for (int p = 0; p < nn::kQuantPoints; ++p) {
      if (feats[p].is_null() || !m.quant_bits) continue;
      const int b = nn::feature_bits(static_cast<nn::QuantPoint>(p), *m.quant_bits);
      m.feature_specs[p] = quant::QuantSpec{b, feats[p].get<int>()};
    }

    const auto ts = tensors(m);
    const auto& list = j.at("tensors");
    if (list.size() != ts.size()) fail(ErrorCode::ShapeMismatch, "checkpoint tensor count does not match the model");
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (list[i].at("name").get<std::string>() != ts[i].name)
        fail(ErrorCode::ShapeMismatch, "unexpected tensor " + list[i].at("name").get<std::string>());
      if (list[i].at("shape").get<std::vector<std::size_t>>() != ts[i].shape)
        fail(ErrorCode::ShapeMismatch, "shape mismatch for " + ts[i].name);
      const auto f = io::read_f32(dir / list[i].at("file").get<std::string>(), numel(ts[i].shape));
      ts[i].values->assign(f.begin(), f.end());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedField, std::string("checkpoint manifest: ") + e.what());
  }
}

namespace {

Json spec_json(const quant::QuantSpec& s) { return {{"bits", s.bits}, {"exponent", s.exponent}}; }
quant::QuantSpec spec_from(const Json& j) {
  quant::QuantSpec s{j.at("bits").get<int>(), j.at("exponent").get<int>()};
  quant::check_bits(s.bits);
  return s;
}
int code_bytes(int bits) { return bits <= 8 ? 1 : 2; }

std::vector<std::pair<std::string, std::reference_wrapper<nn::QuantizedConv>>> qlayers(nn::QuantizedModel& q) {
  return {{"0.stem", q.stem}, {"1.conv_a", q.conv_a}, {"2.conv_b", q.conv_b}, {"3.shortcut", q.shortcut},
          {"4.fc", q.fc}};
}

}  // namespace

void save_quantized(const nn::QuantizedModel& model, const fs::path& dir) {
  nn::QuantizedModel q = model;
  fs::create_directories(dir);
  Json j;
  j["format"] = kQuantFormat;
  j["version"] = kVersion;
  j["bits"] = q.bits;
  j["strict_63"] = q.strict_63;
  Json feats = Json::array();
  for (const auto& s : q.features) feats.push_back(spec_json(s));
  j["features"] = feats;
  Json layers = Json::array();
  std::size_t idx = 0;
  for (auto& [name, ref] : qlayers(q)) {
    auto& c = ref.get();
    Json l = {{"name", name},
              {"in_channels", c.in_channels},
              {"out_channels", c.out_channels},
              {"kernel", c.kernel},
              {"stride", c.stride},
              {"padding", c.padding},
              {"weight", spec_json(c.weight_spec)}};
    const auto ext = code_bytes(c.weight_spec.bits) == 1 ? "i8" : "i16";
    const auto wfile = file_name(idx++, ext);
    io::write_codes(dir / wfile, c.weight, code_bytes(c.weight_spec.bits));
    l["weight"]["file"] = wfile;
    if (!c.bias.empty()) {
      const auto bfile = file_name(idx++, code_bytes(c.bias_spec.bits) == 1 ? "i8" : "i16");
      io::write_codes(dir / bfile, c.bias, code_bytes(c.bias_spec.bits));
      l["bias"] = spec_json(c.bias_spec);
      l["bias"]["file"] = bfile;
    } else {
      l["bias"] = nullptr;
    }
    layers.push_back(l);
  }
  j["layers"] = layers;
  io::write_json(dir / "manifest.json", j);
}

nn::QuantizedModel load_quantized(const fs::path& dir) {
  const Json j = io::read_json(dir / "manifest.json");
  check_format(j, kQuantFormat);
  try {
    nn::QuantizedModel q;
    q.bits = j.at("bits").get<int>();
    quant::check_bits(q.bits);
    q.strict_63 = j.at("strict_63").get<bool>();
    const auto& feats = j.at("features");
    if (feats.size() != nn::kQuantPoints) fail(ErrorCode::MalformedField, "features has the wrong length");
    for (int p = 0; p < nn::kQuantPoints; ++p) q.features[p] = spec_from(feats[p]);
    const auto& layers = j.at("layers");
    auto refs = qlayers(q);
    if (layers.size() != refs.size()) fail(ErrorCode::ShapeMismatch, "quantized checkpoint layer count");
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const auto& l = layers[i];
      auto& c = refs[i].second.get();
      if (l.at("name").get<std::string>() != refs[i].first) fail(ErrorCode::ShapeMismatch, "unexpected layer order");
      c.in_channels = l.at("in_channels").get<int>();
      c.out_channels = l.at("out_channels").get<int>();
      c.kernel = l.at("kernel").get<int>();
      c.stride = l.at("stride").get<int>();
      c.padding = l.at("padding").get<int>();
      c.weight_spec = spec_from(l.at("weight"));
      const std::size_t nw = static_cast<std::size_t>(c.in_channels) * c.out_channels * c.kernel;
      c.weight = io::read_codes(dir / l["weight"].at("file").get<std::string>(), code_bytes(c.weight_spec.bits), nw);
      if (!l.at("bias").is_null()) {
        c.bias_spec = spec_from(l.at("bias"));
        c.bias = io::read_codes(dir / l["bias"].at("file").get<std::string>(), code_bytes(c.bias_spec.bits),
                                c.out_channels);
      }
    }
    return q;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedField, std::string("quantized manifest: ") + e.what());
  }
}

}  // namespace ictal::ckpt
