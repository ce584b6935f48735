#include "ictal/tcresnet.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "ictal/error.hpp"

namespace ictal::nn {

using quant::QuantSpec;

std::string_view to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Input: return "input";
    case LayerKind::Conv1d: return "conv1d";
    case LayerKind::BatchNorm1d: return "batchnorm1d";
    case LayerKind::Hardtanh: return "hardtanh";
    case LayerKind::ReLU: return "relu";
    case LayerKind::ResidualAdd: return "residual_add";
    case LayerKind::GlobalAvgPool: return "global_avg_pool";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Linear: return "linear";
  }
  return "?";
}

namespace {

Conv1d make_conv(int in, int out, int kernel, int stride, int padding) {
  Conv1d c;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = kernel;
  c.stride = stride;
  c.padding = padding;
  c.weight.assign(static_cast<std::size_t>(in * out * kernel), 0.0);
  return c;
}

BatchNorm1d make_bn(int channels) {
  BatchNorm1d bn;
  bn.channels = channels;
  bn.running_mean.assign(channels, 0.0);
  bn.running_var.assign(channels, 1.0);
  bn.gamma.assign(channels, 1.0);
  bn.beta.assign(channels, 0.0);
  return bn;
}

void kaiming_uniform(std::vector<double>& w, int fan_in, rnd::Engine& g) {
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : w) v = rnd::uniform(g, -bound, bound);
}

std::int64_t conv_macs(const Conv1d& c, int out_length) {
  return static_cast<std::int64_t>(out_length) * c.out_channels * c.in_channels * c.kernel;
}

}  // namespace

std::vector<LayerSpec> TcResNet4::layer_table() const {
  const int l1 = stem_length();
  const int l2 = conv_a.out_length(l1);
  const int l3 = conv_b.out_length(l2);
  const int ls = shortcut.out_length(l1);
  auto conv_row = [](const Conv1d& c, std::string name, int out_len) {
    return LayerSpec{LayerKind::Conv1d, std::move(name), c.in_channels, c.out_channels, c.kernel, c.stride,
                     c.padding, out_len, static_cast<std::int64_t>(c.weight.size()), conv_macs(c, out_len)};
  };
  auto plain = [](LayerKind k, std::string name, int ch, int len) {
    return LayerSpec{k, std::move(name), ch, ch, 0, 1, 0, len, 0, 0};
  };
  const std::int64_t bn_params = options.affine_batchnorm && !folded ? 2 * kBlockChannels : 0;
  std::vector<LayerSpec> t;
  t.push_back(plain(LayerKind::Input, "input", kInputChannels, kInputLength));
  t.push_back(conv_row(stem, "stem", l1));
  t.push_back(conv_row(conv_a, "block.conv_a", l2));
  if (!folded) {
    t.push_back(plain(LayerKind::BatchNorm1d, "block.bn_a", kBlockChannels, l2));
    t.back().params = bn_params;
  }
  t.push_back(plain(LayerKind::Hardtanh, "block.act_a", kBlockChannels, l2));
  t.push_back(conv_row(conv_b, "block.conv_b", l3));
  if (!folded) {
    t.push_back(plain(LayerKind::BatchNorm1d, "block.bn_b", kBlockChannels, l3));
    t.back().params = bn_params;
  }
  t.push_back(conv_row(shortcut, "block.shortcut", ls));
  if (!folded) {
    t.push_back(plain(LayerKind::BatchNorm1d, "block.bn_s", kBlockChannels, ls));
    t.back().params = bn_params;
  }
  t.push_back(plain(LayerKind::ReLU, "block.act_s", kBlockChannels, ls));
  t.push_back(plain(LayerKind::ResidualAdd, "block.add", kBlockChannels, l3));
  t.push_back(plain(LayerKind::Hardtanh, "block.act_out", kBlockChannels, l3));
  t.push_back(plain(LayerKind::GlobalAvgPool, "pool", kBlockChannels, 1));
  t.push_back(plain(LayerKind::Dropout, "dropout", kBlockChannels, 1));
  t.push_back(LayerSpec{LayerKind::Linear, "fc", fc.in_features, fc.out_features, 1, 1, 0, 1,
                        static_cast<std::int64_t>(fc.weight.size()),
                        static_cast<std::int64_t>(fc.in_features) * fc.out_features});
  return t;
}

std::int64_t TcResNet4::trainable_parameters() const {
  std::int64_t n = 0;
  for (const auto* p : parameters()) n += static_cast<std::int64_t>(p->size());
  return n;
}

bool TcResNet4::features_calibrated() const {
  return std::all_of(feature_specs.begin(), feature_specs.end(), [](const auto& s) { return s.has_value(); });
}

std::vector<std::vector<double>*> TcResNet4::parameters() {
  std::vector<std::vector<double>*> p{&stem.weight, &conv_a.weight, &conv_b.weight, &shortcut.weight, &fc.weight};
  if (options.affine_batchnorm && !folded)
    for (auto* bn : {&bn_a, &bn_b, &bn_s}) {
      p.push_back(&bn->gamma);
      p.push_back(&bn->beta);
    }
  return p;
}

std::vector<const std::vector<double>*> TcResNet4::parameters() const {
  auto mut = const_cast<TcResNet4*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> TcResNet4::parameter_names() const {
  std::vector<std::string> n{"stem.weight", "block.conv_a.weight", "block.conv_b.weight", "block.shortcut.weight",
                             "fc.weight"};
  if (options.affine_batchnorm && !folded)
    for (const char* bn : {"block.bn_a", "block.bn_b", "block.bn_s"}) {
      n.push_back(std::string(bn) + ".gamma");
      n.push_back(std::string(bn) + ".beta");
    }
  return n;
}

TcResNet4 build_tcresnet4(std::uint64_t seed, ModelOptions options) {
  TcResNet4 m;
  m.options = options;
  m.stem = make_conv(kInputChannels, kInputChannels, 3, 2, options.strict_63 ? 0 : 1);
  m.conv_a = make_conv(kInputChannels, kBlockChannels, 9, 2, 4);
  m.bn_a = make_bn(kBlockChannels);
  m.conv_b = make_conv(kBlockChannels, kBlockChannels, 9, 1, 4);
  m.bn_b = make_bn(kBlockChannels);
  m.shortcut = make_conv(kInputChannels, kBlockChannels, 1, 2, 0);
  m.bn_s = make_bn(kBlockChannels);
  m.fc.in_features = kBlockChannels;
  m.fc.out_features = kClasses;
  m.fc.weight.assign(kBlockChannels * kClasses, 0.0);

  auto g = rnd::substream(seed, 0x7c5e);
  kaiming_uniform(m.stem.weight, m.stem.in_channels * m.stem.kernel, g);
  kaiming_uniform(m.conv_a.weight, m.conv_a.in_channels * m.conv_a.kernel, g);
  kaiming_uniform(m.conv_b.weight, m.conv_b.in_channels * m.conv_b.kernel, g);
  kaiming_uniform(m.shortcut.weight, m.shortcut.in_channels * m.shortcut.kernel, g);
  kaiming_uniform(m.fc.weight, m.fc.in_features, g);
  return m;
}

// ---------------------------------------------------------------------------
// Convolution kernels on one sample.

namespace {

struct Geom {
  int in, out, kernel, stride, padding;
};

Geom geom(const Conv1d& c) { return {c.in_channels, c.out_channels, c.kernel, c.stride, c.padding}; }

// Output positions t with 0 <= t*stride + k - padding < in_len.
inline void valid_range(const Geom& g, int k, int in_len, int out_len, int& t0, int& t1) {
  const int off = k - g.padding;
  t0 = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  const int last = in_len - 1 - off;  // t*stride <= last
  t1 = last < 0 ? 0 : std::min(out_len, last / g.stride + 1);
  if (t1 < t0) t1 = t0;
}

void conv_forward(const Geom& g, const double* w, const double* b, const double* x, int in_len, double* y,
                  int out_len) {
  for (int o = 0; o < g.out; ++o) {
    double* yo = y + static_cast<std::size_t>(o) * out_len;
    std::fill(yo, yo + out_len, b ? b[o] : 0.0);
    for (int i = 0; i < g.in; ++i) {
      const double* xi = x + static_cast<std::size_t>(i) * in_len;
      const double* wk = w + (static_cast<std::size_t>(o) * g.in + i) * g.kernel;
      for (int k = 0; k < g.kernel; ++k) {
        int t0, t1;
        valid_range(g, k, in_len, out_len, t0, t1);
        const double wv = wk[k];
        const int off = k - g.padding;
        for (int t = t0; t < t1; ++t) yo[t] += wv * xi[t * g.stride + off];
      }
    }
  }
}

void conv_backward(const Geom& g, const double* w, const double* x, int in_len, const double* dy, int out_len,
                   double* dw, double* db, double* dx) {
  for (int o = 0; o < g.out; ++o) {
    const double* dyo = dy + static_cast<std::size_t>(o) * out_len;
    if (db) {
      double s = 0.0;
      for (int t = 0; t < out_len; ++t) s += dyo[t];
      db[o] += s;
    }
    for (int i = 0; i < g.in; ++i) {
      const double* xi = x + static_cast<std::size_t>(i) * in_len;
      double* dxi = dx ? dx + static_cast<std::size_t>(i) * in_len : nullptr;
      const std::size_t wbase = (static_cast<std::size_t>(o) * g.in + i) * g.kernel;
      for (int k = 0; k < g.kernel; ++k) {
        int t0, t1;
        valid_range(g, k, in_len, out_len, t0, t1);
        const int off = k - g.padding;
        double s = 0.0;
        for (int t = t0; t < t1; ++t) s += dyo[t] * xi[t * g.stride + off];
        dw[wbase + k] += s;
        if (dxi) {
          const double wv = w[wbase + k];
          for (int t = t0; t < t1; ++t) dxi[t * g.stride + off] += wv * dyo[t];
        }
      }
    }
  }
}

}  // namespace

std::vector<double> conv1d(const Conv1d& layer, std::span<const double> input, int in_length) {
  if (input.size() != static_cast<std::size_t>(layer.in_channels) * in_length)
    fail(ErrorCode::ShapeMismatch, "conv1d input size mismatch");
  const int out_len = layer.out_length(in_length);
  std::vector<double> y(static_cast<std::size_t>(layer.out_channels) * out_len);
  conv_forward(geom(layer), layer.weight.data(), layer.bias.empty() ? nullptr : layer.bias.data(), input.data(),
               in_length, y.data(), out_len);
  return y;
}

// ---------------------------------------------------------------------------
// Effective (folded, optionally fake-quantized) layer weights.

namespace {

// The bias grid is never finer than 2^-24 of the product grid so that the
// fake-quantized float forward stays exact in double precision.
constexpr int kBiasExponentFloor = 24;

struct Effective {
  Geom g{};
  std::vector<double> w, b;  // b empty when the layer has no bias
  std::vector<double> fold;  // gamma / sigma per output channel when BN is folded in
  std::vector<double> inv_std;
  std::vector<std::uint8_t> w_pass, b_pass;
  std::optional<QuantSpec> w_spec, b_spec;
};

Effective make_effective(const Conv1d& c, const BatchNorm1d* bn, std::optional<int> bits,
                         std::optional<QuantSpec> in_spec) {
  Effective e;
  e.g = geom(c);
  e.w = c.weight;
  e.b = c.bias;
  if (bn) {
    if (!bn->fitted) fail(ErrorCode::UnfittedBatchNorm, "batch norm statistics are not populated");
    const int per_out = c.in_channels * c.kernel;
    e.fold.resize(c.out_channels);
    e.inv_std.resize(c.out_channels);
    e.b.assign(c.out_channels, 0.0);
    for (int o = 0; o < c.out_channels; ++o) {
      e.inv_std[o] = 1.0 / std::sqrt(bn->running_var[o] + bn->eps);
      e.fold[o] = bn->gamma[o] * e.inv_std[o];
      for (int j = 0; j < per_out; ++j) e.w[o * per_out + j] *= e.fold[o];
      e.b[o] = bn->beta[o] - bn->running_mean[o] * e.fold[o];
    }
  }
  if (bits) {
    e.w_spec = quant::fit_spec(e.w, *bits);
    auto fw = quant::fake_quant(e.w, *e.w_spec);
    e.w = std::move(fw.values);
    e.w_pass = std::move(fw.pass);
    if (!e.b.empty()) {
      QuantSpec bs = quant::fit_spec(e.b, *bits);
      if (in_spec) bs.exponent = std::max(bs.exponent, e.w_spec->exponent + in_spec->exponent - kBiasExponentFloor);
      e.b_spec = bs;
      auto fb = quant::fake_quant(e.b, bs);
      e.b = std::move(fb.values);
      e.b_pass = std::move(fb.pass);
    }
  }
  return e;
}

Effective make_effective_linear(const Linear& fc, std::optional<int> bits) {
  Conv1d c;
  c.in_channels = fc.in_features;
  c.out_channels = fc.out_features;
  c.kernel = 1;
  c.weight = fc.weight;
  return make_effective(c, nullptr, bits, std::nullopt);
}

}  // namespace

// ---------------------------------------------------------------------------
// Batch engine shared by inference, calibration and training.

namespace {

class Engine {
 public:
  TcResNet4 m;
  bool calibrating = false;
  bool quant = false;
  std::size_t n = 0;
  int l0 = kInputLength, l1 = 0, l2 = 0, l3 = 0;

  Effective stem, conv_a, conv_b, shortcut, fc;

  // Caches (N x C x L each).
  std::vector<double> x0, h1, za, a, zb, b, zs, s, zr, r, g, d, zl, logits;
  std::array<std::vector<std::uint8_t>, kQuantPoints> pass;
  std::vector<double> drop_scale;

  Engine(const TcResNet4& model, bool calibrate) : m(model), calibrating(calibrate) {
    if (m.quant_bits) quant::check_bits(*m.quant_bits);
    quant = m.quant_bits.has_value() && (calibrating || m.features_calibrated());
    if (m.quant_bits && !quant)
      fail(ErrorCode::InvalidConfig, "quantized model has no calibrated feature specs");
    l1 = m.stem_length();
    l2 = m.conv_a.out_length(l1);
    l3 = m.conv_b.out_length(l2);
    if (m.shortcut.out_length(l1) != l3) fail(ErrorCode::ShapeMismatch, "residual branch lengths differ");
    if (!calibrating) prepare_all();
  }

  std::optional<int> bits() const { return quant ? m.quant_bits : std::nullopt; }
  std::optional<QuantSpec> spec(QuantPoint p) const { return quant ? m.feature_specs[p] : std::nullopt; }
  const BatchNorm1d* bn_or_null(const BatchNorm1d& bn) const { return m.folded ? nullptr : &bn; }

  void prepare_all() {
    stem = make_effective(m.stem, nullptr, bits(), spec(kQInput));
    conv_a = make_effective(m.conv_a, bn_or_null(m.bn_a), bits(), spec(kQStem));
    conv_b = make_effective(m.conv_b, bn_or_null(m.bn_b), bits(), spec(kQBranchA));
    shortcut = make_effective(m.shortcut, bn_or_null(m.bn_s), bits(), spec(kQStem));
    fc = make_effective_linear(m.fc, bits());
  }

  // Fake-quantizes `v` in place at point p (fitting the spec first while
  // calibrating).
  void quant_point(QuantPoint p, std::vector<double>& v) {
    auto& mask = pass[p];
    if (!quant) {
      mask.clear();
      return;
    }
    if (calibrating) m.feature_specs[p] = quant::fit_spec(v, feature_bits(p, *m.quant_bits));
    const QuantSpec sp = *m.feature_specs[p];
    mask.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      bool sat = false;
      v[i] = quant::dequantize_value(quant::quantize_value(v[i], sp, &sat), sp);
      mask[i] = sat ? 0 : 1;
    }
  }

  bool passes(QuantPoint p, std::size_t i) const { return pass[p].empty() || pass[p][i]; }

  void fit_bn(const Conv1d& c, BatchNorm1d& bn, const std::vector<double>& in, int in_len, int out_len) {
    const Geom gm = geom(c);
    std::vector<double> y(static_cast<std::size_t>(c.out_channels) * out_len);
    std::vector<double> sum(c.out_channels, 0.0), sumsq(c.out_channels, 0.0);
    const std::size_t in_stride = static_cast<std::size_t>(c.in_channels) * in_len;
    for (std::size_t k = 0; k < n; ++k) {
      conv_forward(gm, c.weight.data(), nullptr, in.data() + k * in_stride, in_len, y.data(), out_len);
      for (int o = 0; o < c.out_channels; ++o)
        for (int t = 0; t < out_len; ++t) {
          const double v = y[static_cast<std::size_t>(o) * out_len + t];
          sum[o] += v;
          sumsq[o] += v * v;
        }
    }
    const double cnt = static_cast<double>(n) * out_len;
    for (int o = 0; o < c.out_channels; ++o) {
      const double mean = sum[o] / cnt;
      bn.running_mean[o] = mean;
      bn.running_var[o] = std::max(0.0, sumsq[o] / cnt - mean * mean);
    }
    bn.fitted = true;
  }

  void conv_all(const Effective& e, const std::vector<double>& in, int in_len, std::vector<double>& out,
                int out_len) {
    const std::size_t is = static_cast<std::size_t>(e.g.in) * in_len;
    const std::size_t os = static_cast<std::size_t>(e.g.out) * out_len;
    out.resize(n * os);
    for (std::size_t k = 0; k < n; ++k)
      conv_forward(e.g, e.w.data(), e.b.empty() ? nullptr : e.b.data(), in.data() + k * is, in_len,
                   out.data() + k * os, out_len);
  }

  template <class T>
  void run(std::span<const T> batch, std::size_t count, rnd::Engine* drop_rng) {
    n = count;
    if (batch.size() != count * kInputChannels * kInputLength)
      fail(ErrorCode::ShapeMismatch, "batch does not hold count x 16 x 128 values");

    x0.assign(batch.begin(), batch.end());
    quant_point(kQInput, x0);

    if (calibrating) stem = make_effective(m.stem, nullptr, bits(), spec(kQInput));
    conv_all(stem, x0, l0, h1, l1);
    quant_point(kQStem, h1);

    // Main branch, first conv.
    if (calibrating) {
      if (!m.folded) fit_bn(m.conv_a, m.bn_a, h1, l1, l2);
      conv_a = make_effective(m.conv_a, bn_or_null(m.bn_a), bits(), spec(kQStem));
    }
    conv_all(conv_a, h1, l1, za, l2);
    a.resize(za.size());
    for (std::size_t i = 0; i < za.size(); ++i) a[i] = std::clamp(za[i], -1.0, 1.0);
    quant_point(kQBranchA, a);

    if (calibrating) {
      if (!m.folded) fit_bn(m.conv_b, m.bn_b, a, l2, l3);
      conv_b = make_effective(m.conv_b, bn_or_null(m.bn_b), bits(), spec(kQBranchA));
    }
    conv_all(conv_b, a, l2, zb, l3);
    b = zb;
    quant_point(kQBranchB, b);

    if (calibrating) {
      if (!m.folded) fit_bn(m.shortcut, m.bn_s, h1, l1, l3);
      shortcut = make_effective(m.shortcut, bn_or_null(m.bn_s), bits(), spec(kQStem));
    }
    conv_all(shortcut, h1, l1, zs, l3);
    s.resize(zs.size());
    for (std::size_t i = 0; i < zs.size(); ++i) s[i] = std::max(zs[i], 0.0);
    quant_point(kQShortcut, s);

    zr.resize(b.size());
    r.resize(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) {
      zr[i] = b[i] + s[i];
      r[i] = std::clamp(zr[i], -1.0, 1.0);
    }
    quant_point(kQBlock, r);

    g.assign(n * kBlockChannels, 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (int c = 0; c < kBlockChannels; ++c) {
        const double* rc = r.data() + (k * kBlockChannels + c) * l3;
        double sum = 0.0;
        for (int t = 0; t < l3; ++t) sum += rc[t];
        g[k * kBlockChannels + c] = sum / l3;
      }
    quant_point(kQPooled, g);

    d = g;
    drop_scale.clear();
    if (drop_rng && m.options.dropout > 0.0) {
      const double keep = 1.0 - m.options.dropout;
      drop_scale.resize(d.size());
      for (std::size_t i = 0; i < d.size(); ++i) {
        drop_scale[i] = rnd::uniform01(*drop_rng) < keep ? 1.0 / keep : 0.0;
        d[i] *= drop_scale[i];
      }
    }

    if (calibrating) fc = make_effective_linear(m.fc, bits());
    zl.assign(n * kClasses, 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (int o = 0; o < kClasses; ++o) {
        double sum = 0.0;
        for (int i = 0; i < kBlockChannels; ++i) sum += fc.w[o * kBlockChannels + i] * d[k * kBlockChannels + i];
        zl[k * kClasses + o] = sum;
      }
    logits = zl;
    quant_point(kQLogits, logits);
  }

  std::vector<std::array<double, kClasses>> outputs() const {
    std::vector<std::array<double, kClasses>> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = {logits[k * kClasses], logits[k * kClasses + 1]};
    return out;
  }

  // Maps effective-weight gradients of one conv back to raw parameters.
  static void unfold_grads(const Effective& e, const Conv1d& c, const BatchNorm1d* bn, std::vector<double>& dw_eff,
                           std::vector<double>& db_eff, std::vector<double>& dw, std::vector<double>* dgamma,
                           std::vector<double>* dbeta) {
    for (std::size_t i = 0; i < dw_eff.size(); ++i)
      if (!e.w_pass.empty() && !e.w_pass[i]) dw_eff[i] = 0.0;
    for (std::size_t i = 0; i < db_eff.size(); ++i)
      if (!e.b_pass.empty() && !e.b_pass[i]) db_eff[i] = 0.0;
    dw.assign(c.weight.size(), 0.0);
    if (!bn) {
      dw = dw_eff;
      return;
    }
    const int per_out = c.in_channels * c.kernel;
    for (int o = 0; o < c.out_channels; ++o) {
      double dot = 0.0;
      for (int j = 0; j < per_out; ++j) {
        const std::size_t idx = static_cast<std::size_t>(o) * per_out + j;
        dw[idx] = dw_eff[idx] * e.fold[o];
        dot += dw_eff[idx] * c.weight[idx];
      }
      if (dgamma) (*dgamma)[o] = (dot - db_eff[o] * bn->running_mean[o]) * e.inv_std[o];
      if (dbeta) (*dbeta)[o] = db_eff[o];
    }
  }

  Gradients backward(std::span<const std::array<double, kClasses>> grad_logits) const {
    if (grad_logits.size() != n) fail(ErrorCode::ShapeMismatch, "one logit gradient per sample required");
    if (m.folded) fail(ErrorCode::InvalidConfig, "folded models are inference-only");

    std::vector<double> dw_stem(stem.w.size(), 0.0), dw_a(conv_a.w.size(), 0.0), db_a(conv_a.g.out, 0.0),
        dw_b(conv_b.w.size(), 0.0), db_b(conv_b.g.out, 0.0), dw_s(shortcut.w.size(), 0.0),
        db_s(shortcut.g.out, 0.0), dw_fc(fc.w.size(), 0.0);

    const std::size_t s1 = static_cast<std::size_t>(kInputChannels) * l1;
    const std::size_t s2 = static_cast<std::size_t>(kBlockChannels) * l2;
    const std::size_t s3 = static_cast<std::size_t>(kBlockChannels) * l3;
    std::vector<double> dz(kClasses), dd(kBlockChannels), dr(s3), dzs(s3), dzb(s3), da(s2), dh1(s1);

    for (std::size_t k = 0; k < n; ++k) {
      for (int o = 0; o < kClasses; ++o)
        dz[o] = passes(kQLogits, k * kClasses + o) ? grad_logits[k][o] : 0.0;
      for (int i = 0; i < kBlockChannels; ++i) {
        double sum = 0.0;
        for (int o = 0; o < kClasses; ++o) {
          dw_fc[o * kBlockChannels + i] += dz[o] * d[k * kBlockChannels + i];
          sum += fc.w[o * kBlockChannels + i] * dz[o];
        }
        const std::size_t gi = k * kBlockChannels + i;
        if (!drop_scale.empty()) sum *= drop_scale[gi];
        dd[i] = passes(kQPooled, gi) ? sum : 0.0;
      }
      for (int c = 0; c < kBlockChannels; ++c)
        for (int t = 0; t < l3; ++t) {
          const std::size_t li = static_cast<std::size_t>(c) * l3 + t;
          const std::size_t gi = k * s3 + li;
          const double v = dd[c] / l3;
          const bool live = passes(kQBlock, gi) && zr[gi] > -1.0 && zr[gi] < 1.0;
          dr[li] = live ? v : 0.0;
          dzs[li] = (passes(kQShortcut, gi) && zs[gi] > 0.0) ? dr[li] : 0.0;
          dzb[li] = passes(kQBranchB, gi) ? dr[li] : 0.0;
        }

      std::fill(da.begin(), da.end(), 0.0);
      conv_backward(conv_b.g, conv_b.w.data(), a.data() + k * s2, l2, dzb.data(), l3, dw_b.data(), db_b.data(),
                    da.data());
      for (std::size_t li = 0; li < s2; ++li) {
        const std::size_t gi = k * s2 + li;
        if (!(passes(kQBranchA, gi) && za[gi] > -1.0 && za[gi] < 1.0)) da[li] = 0.0;
      }

      std::fill(dh1.begin(), dh1.end(), 0.0);
      conv_backward(conv_a.g, conv_a.w.data(), h1.data() + k * s1, l1, da.data(), l2, dw_a.data(), db_a.data(),
                    dh1.data());
      conv_backward(shortcut.g, shortcut.w.data(), h1.data() + k * s1, l1, dzs.data(), l3, dw_s.data(),
                    db_s.data(), dh1.data());
      for (std::size_t li = 0; li < s1; ++li)
        if (!passes(kQStem, k * s1 + li)) dh1[li] = 0.0;

      const std::size_t s0 = static_cast<std::size_t>(kInputChannels) * l0;
      conv_backward(stem.g, stem.w.data(), x0.data() + k * s0, l0, dh1.data(), l1, dw_stem.data(), nullptr,
                    nullptr);
    }

    Gradients out;
    const bool affine = m.options.affine_batchnorm;
    std::vector<double> dummy_b;
    std::vector<double> g_stem, g_a, g_b, g_s, g_fc;
    std::vector<double> ga(kBlockChannels), ba(kBlockChannels), gb(kBlockChannels), bb(kBlockChannels),
        gs(kBlockChannels), bs(kBlockChannels);
    unfold_grads(stem, m.stem, nullptr, dw_stem, dummy_b, g_stem, nullptr, nullptr);
    unfold_grads(conv_a, m.conv_a, &m.bn_a, dw_a, db_a, g_a, &ga, &ba);
    unfold_grads(conv_b, m.conv_b, &m.bn_b, dw_b, db_b, g_b, &gb, &bb);
    unfold_grads(shortcut, m.shortcut, &m.bn_s, dw_s, db_s, g_s, &gs, &bs);
    unfold_grads(fc, Conv1d{kBlockChannels, kClasses, 1, 1, 0, m.fc.weight, {}}, nullptr, dw_fc, dummy_b, g_fc,
                 nullptr, nullptr);
    out.tensors = {std::move(g_stem), std::move(g_a), std::move(g_b), std::move(g_s), std::move(g_fc)};
    if (affine) {
      for (auto* v : {&ga, &ba, &gb, &bb, &gs, &bs}) out.tensors.push_back(std::move(*v));
    }
    return out;
  }
};

}  // namespace

struct BatchRunner::Impl {
  Engine e;
};

BatchRunner::BatchRunner(const TcResNet4& model) : impl_(std::make_unique<Impl>(Impl{Engine(model, false)})) {}
BatchRunner::~BatchRunner() = default;

std::vector<std::array<double, kClasses>> BatchRunner::forward(std::span<const float> batch, std::size_t count,
                                                               rnd::Engine* dropout_rng) {
  impl_->e.run(batch, count, dropout_rng);
  return impl_->e.outputs();
}

Gradients BatchRunner::backward(std::span<const std::array<double, kClasses>> grad_logits) const {
  return impl_->e.backward(grad_logits);
}

std::vector<std::array<double, kClasses>> predict_logits(const TcResNet4& model, std::span<const float> batch,
                                                         std::size_t count) {
  constexpr std::size_t kChunk = 256;
  constexpr std::size_t kFrag = static_cast<std::size_t>(kInputChannels) * kInputLength;
  if (batch.size() != count * kFrag) fail(ErrorCode::ShapeMismatch, "batch does not hold count x 16 x 128 values");
  Engine eng(model, false);
  std::vector<std::array<double, kClasses>> out;
  out.reserve(count);
  for (std::size_t start = 0; start < count; start += kChunk) {
    const std::size_t c = std::min(kChunk, count - start);
    eng.run(batch.subspan(start * kFrag, c * kFrag), c, nullptr);
    auto part = eng.outputs();
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

void calibrate(TcResNet4& model, std::span<const float> batch, std::size_t count) {
  if (count == 0) fail(ErrorCode::InvalidConfig, "calibration needs at least one fragment");
  Engine eng(model, true);
  eng.run(batch, count, nullptr);
  model = std::move(eng.m);
}

std::array<double, kClasses> forward(const TcResNet4& model, std::span<const double> input,
                                     std::vector<Shape>* trace) {
  if (input.size() != static_cast<std::size_t>(kInputChannels) * kInputLength)
    fail(ErrorCode::ShapeMismatch, "fragment must be 16 x 128");
  Engine eng(model, false);
  eng.run(input, 1, nullptr);
  if (trace) {
    *trace = {{kInputChannels, kInputLength},
              {kInputChannels, eng.l1},
              {kBlockChannels, eng.l2},
              {kBlockChannels, eng.l3},
              {kBlockChannels, eng.l3},
              {kBlockChannels, 1},
              {kClasses, 1}};
  }
  return eng.outputs()[0];
}

std::array<double, kClasses> forward(const TcResNet4& model, std::span<const float> input) {
  return predict_logits(model, input, 1)[0];
}

std::array<double, kClasses> softmax(std::array<double, kClasses> z) {
  const double mx = std::max(z[0], z[1]);
  const double e0 = std::exp(z[0] - mx), e1 = std::exp(z[1] - mx);
  return {e0 / (e0 + e1), e1 / (e0 + e1)};
}

TcResNet4 fold_batchnorm(const TcResNet4& model) {
  if (model.folded) fail(ErrorCode::AlreadyFolded, "model is already folded");
  TcResNet4 f = model;
  auto fold_one = [](Conv1d& c, BatchNorm1d& bn) {
    const Effective e = make_effective(c, &bn, std::nullopt, std::nullopt);
    c.weight = e.w;
    c.bias = e.b;
    bn = BatchNorm1d{};
  };
  fold_one(f.conv_a, f.bn_a);
  fold_one(f.conv_b, f.bn_b);
  fold_one(f.shortcut, f.bn_s);
  f.folded = true;
  return f;
}

// ---------------------------------------------------------------------------
// Integer inference.

namespace {

// Accumulators above this magnitude would no longer be exact in the
// fake-quantized double path.
constexpr std::int64_t kAccLimit = std::int64_t{1} << 53;

QuantizedConv quantize_conv(const Effective& e) {
  QuantizedConv q;
  q.in_channels = e.g.in;
  q.out_channels = e.g.out;
  q.kernel = e.g.kernel;
  q.stride = e.g.stride;
  q.padding = e.g.padding;
  q.weight_spec = *e.w_spec;
  for (double v : e.w) q.weight.push_back(quant::quantize_value(v, q.weight_spec));
  if (!e.b.empty()) {
    q.bias_spec = *e.b_spec;
    for (double v : e.b) q.bias.push_back(quant::quantize_value(v, q.bias_spec));
  }
  return q;
}

std::int32_t requantize(std::int64_t acc, int acc_exp, const QuantSpec& out) {
  const std::int64_t v = quant::shift_round_half_even(acc, acc_exp - out.exponent);
  return static_cast<std::int32_t>(std::clamp<std::int64_t>(v, out.qmin(), out.qmax()));
}

enum class Act { None, Hardtanh, Relu };

void check_acc(std::int64_t acc) {
  if (acc > kAccLimit || acc < -kAccLimit) fail(ErrorCode::SaturationOverflow, "accumulator exceeds 2^53");
}

// Integer conv over an explicitly zero-padded input; every tap is a MAC.
std::vector<std::int32_t> qconv(const QuantizedConv& c, std::span<const std::int32_t> x, int in_len, int in_exp,
                                Act act, const QuantSpec& out_spec, int& out_len, std::uint64_t& macs) {
  const int padded = in_len + 2 * c.padding;
  std::vector<std::int32_t> xp(static_cast<std::size_t>(c.in_channels) * padded, 0);
  for (int i = 0; i < c.in_channels; ++i)
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(i) * in_len, in_len,
                xp.begin() + static_cast<std::ptrdiff_t>(i) * padded + c.padding);
  out_len = (padded - c.kernel) / c.stride + 1;

  const int prod_exp = c.weight_spec.exponent + in_exp;
  int acc_exp = std::min(prod_exp, 0);
  if (!c.bias.empty()) acc_exp = std::min(acc_exp, c.bias_spec.exponent);
  const int prod_shift = prod_exp - acc_exp;
  const int bias_shift = c.bias.empty() ? 0 : c.bias_spec.exponent - acc_exp;
  const std::int64_t one = std::int64_t{1} << (-acc_exp);

  std::vector<std::int32_t> y(static_cast<std::size_t>(c.out_channels) * out_len);
  for (int o = 0; o < c.out_channels; ++o)
    for (int t = 0; t < out_len; ++t) {
      std::int64_t sum = 0;
      for (int i = 0; i < c.in_channels; ++i) {
        const std::int32_t* xi = xp.data() + static_cast<std::size_t>(i) * padded + t * c.stride;
        const std::int32_t* wk = c.weight.data() + (static_cast<std::size_t>(o) * c.in_channels + i) * c.kernel;
        for (int k = 0; k < c.kernel; ++k) {
          sum += static_cast<std::int64_t>(wk[k]) * xi[k];
          ++macs;
        }
      }
      std::int64_t acc = sum * (std::int64_t{1} << prod_shift);
      if (!c.bias.empty()) acc += static_cast<std::int64_t>(c.bias[o]) * (std::int64_t{1} << bias_shift);
      check_acc(acc);
      if (act == Act::Hardtanh) acc = std::clamp(acc, -one, one);
      if (act == Act::Relu) acc = std::max<std::int64_t>(acc, 0);
      y[static_cast<std::size_t>(o) * out_len + t] = requantize(acc, acc_exp, out_spec);
    }
  return y;
}

}  // namespace

QuantizedModel quantize_model(const TcResNet4& model) {
  if (!model.quant_bits || !model.features_calibrated())
    fail(ErrorCode::InvalidConfig, "model needs quant_bits and calibrated feature specs");
  Engine impl(model, false);
  QuantizedModel q;
  q.bits = *model.quant_bits;
  q.strict_63 = model.options.strict_63;
  q.stem = quantize_conv(impl.stem);
  q.conv_a = quantize_conv(impl.conv_a);
  q.conv_b = quantize_conv(impl.conv_b);
  q.shortcut = quantize_conv(impl.shortcut);
  q.fc = quantize_conv(impl.fc);
  for (int p = 0; p < kQuantPoints; ++p) q.features[p] = *model.feature_specs[p];
  return q;
}

std::array<double, kClasses> QuantizedResult::dequantized() const {
  return {std::ldexp(double(logits[0]), exponent), std::ldexp(double(logits[1]), exponent)};
}

std::vector<std::int32_t> quantize_input(const QuantizedModel& model, std::span<const double> input) {
  std::vector<std::int32_t> codes;
  codes.reserve(input.size());
  for (double v : input) codes.push_back(quant::quantize_value(v, model.features[kQInput]));
  return codes;
}

std::vector<std::int32_t> quantize_input(const QuantizedModel& model, std::span<const float> input) {
  std::vector<double> d(input.begin(), input.end());
  return quantize_input(model, d);
}

QuantizedResult forward_quantized(const QuantizedModel& q, std::span<const std::int32_t> x) {
  if (x.size() != static_cast<std::size_t>(kInputChannels) * kInputLength)
    fail(ErrorCode::ShapeMismatch, "fragment must be 16 x 128 codes");
  const auto& f = q.features;
  QuantizedResult res;
  int l1 = 0, l2 = 0, l3 = 0, ls = 0;
  const auto h1 = qconv(q.stem, x, kInputLength, f[kQInput].exponent, Act::None, f[kQStem], l1, res.macs);
  const auto a = qconv(q.conv_a, h1, l1, f[kQStem].exponent, Act::Hardtanh, f[kQBranchA], l2, res.macs);
  const auto b = qconv(q.conv_b, a, l2, f[kQBranchA].exponent, Act::None, f[kQBranchB], l3, res.macs);
  const auto s = qconv(q.shortcut, h1, l1, f[kQStem].exponent, Act::Relu, f[kQShortcut], ls, res.macs);
  if (ls != l3) fail(ErrorCode::ShapeMismatch, "residual branch lengths differ");

  const int eb = f[kQBranchB].exponent, es = f[kQShortcut].exponent;
  const int add_exp = std::min({eb, es, 0});
  const std::int64_t one = std::int64_t{1} << (-add_exp);
  std::vector<std::int32_t> r(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    std::int64_t acc = static_cast<std::int64_t>(b[i]) * (std::int64_t{1} << (eb - add_exp)) +
                       static_cast<std::int64_t>(s[i]) * (std::int64_t{1} << (es - add_exp));
    acc = std::clamp(acc, -one, one);
    r[i] = requantize(acc, add_exp, f[kQBlock]);
  }

  if (!std::has_single_bit(static_cast<unsigned>(l3)))
    fail(ErrorCode::ShapeMismatch, "pooling length must be a power of two for exact integer averaging");
  const int pool_shift = std::countr_zero(static_cast<unsigned>(l3));
  std::vector<std::int32_t> g(kBlockChannels);
  for (int c = 0; c < kBlockChannels; ++c) {
    std::int64_t sum = 0;
    for (int t = 0; t < l3; ++t) sum += r[static_cast<std::size_t>(c) * l3 + t];
    g[c] = requantize(sum, f[kQBlock].exponent - pool_shift, f[kQPooled]);
  }

  int lo = 0;
  const auto out = qconv(q.fc, g, 1, f[kQPooled].exponent, Act::None, f[kQLogits], lo, res.macs);
  res.logits = {out[0], out[1]};
  res.exponent = f[kQLogits].exponent;
  return res;
}

}  // namespace ictal::nn
