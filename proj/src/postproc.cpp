#include "ictal/postproc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ictal/error.hpp"

namespace ictal::post {

void HmmParams::validate() const {
  auto check_row = [](const std::array<double, 2>& r, const char* what) {
    if (!(r[0] >= 0.0 && r[1] >= 0.0) || std::abs(r[0] + r[1] - 1.0) > 1e-9)
      fail(ErrorCode::InvalidConfig, std::string(what) + " row is not a probability vector");
  };
  for (const auto& r : transition) check_row(r, "transition");
  for (const auto& r : emission) check_row(r, "emission");
  check_row(initial, "initial");
}

std::vector<double> sma_scores(std::span<const double> p, int w) {
  if (w < 1) fail(ErrorCode::InvalidConfig, "window must be >= 1");
  std::vector<double> s(p.size());
  for (std::size_t t = 0; t < p.size(); ++t) {
    const std::size_t lo = t + 1 >= static_cast<std::size_t>(w) ? t + 1 - static_cast<std::size_t>(w) : 0;
    double sum = 0.0;
    for (std::size_t i = lo; i <= t; ++i) sum += p[i];
    s[t] = sum / static_cast<double>(t - lo + 1);
  }
  return s;
}

namespace {

std::vector<std::uint8_t> threshold(const std::vector<double>& s, double theta) {
  std::vector<std::uint8_t> y(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) y[i] = s[i] >= theta ? 1 : 0;
  return y;
}

}  // namespace

std::vector<std::uint8_t> sma(std::span<const double> p, int w, double theta) { return threshold(sma_scores(p, w), theta); }

std::vector<double> ewma_scores(std::span<const double> p, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) fail(ErrorCode::InvalidConfig, "alpha must lie in (0, 1]");
  std::vector<double> s(p.size());
  for (std::size_t t = 0; t < p.size(); ++t) s[t] = t == 0 ? p[0] : alpha * p[t] + (1.0 - alpha) * s[t - 1];
  return s;
}

std::vector<std::uint8_t> ewma(std::span<const double> p, double alpha, double theta) {
  return threshold(ewma_scores(p, alpha), theta);
}

Matrix2 estimate_transitions(const std::vector<std::vector<std::uint8_t>>& sequences) {
  std::array<std::array<double, 2>, 2> c{{{1, 1}, {1, 1}}};
  for (const auto& s : sequences)
    for (std::size_t t = 1; t < s.size(); ++t) c[s[t - 1] ? 1 : 0][s[t] ? 1 : 0] += 1;
  Matrix2 m{};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) m[i][j] = c[i][j] / (c[i][0] + c[i][1]);
  return m;
}

Matrix2 emissions_from_confusion(const std::array<std::array<std::int64_t, 2>, 2>& counts) {
  Matrix2 e{};
  for (int i = 0; i < 2; ++i) {
    const double row = static_cast<double>(counts[i][0] + counts[i][1]);
    for (int j = 0; j < 2; ++j) e[i][j] = row > 0 ? static_cast<double>(counts[i][j]) / row : 0.5;
  }
  return e;
}

Matrix2 emissions_from_confusion(const metrics::ConfusionMatrix& cm) {
  return emissions_from_confusion(std::array<std::array<std::int64_t, 2>, 2>{{{cm.tn, cm.fp}, {cm.fn, cm.tp}}});
}

std::array<double, 2> stationary(const Matrix2& t) {
  const double a = t[0][1], b = t[1][0];
  if (a + b <= 0.0) return {0.5, 0.5};
  return {b / (a + b), a / (a + b)};
}

HmmParams make_hmm(const Matrix2& transition, const Matrix2& emission) {
  HmmParams h{transition, emission, stationary(transition)};
  h.validate();
  return h;
}

int viterbi_window(std::span<const std::uint8_t> obs, const HmmParams& hmm) {
  if (obs.empty()) fail(ErrorCode::InvalidConfig, "empty observation window");
  Matrix2 lt{}, le{};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) {
      lt[i][j] = std::log(hmm.transition[i][j]);
      le[i][j] = std::log(hmm.emission[i][j]);
    }
  // Best complete path score for each forced first state.
  std::array<double, 2> best{};
  for (int s0 = 0; s0 < 2; ++s0) {
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    std::array<double, 2> delta{kNegInf, kNegInf};
    delta[s0] = std::log(hmm.initial[s0]) + le[s0][obs[0] ? 1 : 0];
    for (std::size_t t = 1; t < obs.size(); ++t) {
      std::array<double, 2> next{};
      for (int s = 0; s < 2; ++s)
        next[s] = std::max(delta[0] + lt[0][s], delta[1] + lt[1][s]) + le[s][obs[t] ? 1 : 0];
      delta = next;
    }
    best[s0] = std::max(delta[0], delta[1]);
  }
  return best[0] >= best[1] ? 0 : 1;
}

unsigned ViterbiLut::index_of(std::span<const std::uint8_t> obs) {
  unsigned idx = 0;
  for (auto o : obs) idx = (idx << 1) | (o ? 1u : 0u);
  return idx;
}

std::string ViterbiLut::bit_string() const {
  std::string s;
  for (auto e : entries) s.push_back(e ? '1' : '0');
  return s;
}

ViterbiLut compile_lut(const HmmParams& hmm, int window) {
  if (window < 1 || window > 16) fail(ErrorCode::InvalidConfig, "LUT window must lie in 1..16");
  hmm.validate();
  ViterbiLut lut;
  lut.window = window;
  const unsigned n = 1u << window;
  lut.entries.resize(n);
  std::vector<std::uint8_t> obs(window);
  for (unsigned i = 0; i < n; ++i) {
    for (int k = 0; k < window; ++k) obs[k] = (i >> (window - 1 - k)) & 1u;
    lut.entries[i] = static_cast<std::uint8_t>(viterbi_window(obs, hmm));
  }
  return lut;
}

namespace {

template <class Decode>
std::vector<std::uint8_t> decode_all(std::span<const std::uint8_t> obs, int window, Decode&& decode) {
  std::vector<std::uint8_t> out(obs.size());
  std::vector<std::uint8_t> win(window);
  for (std::size_t t = 0; t < obs.size(); ++t) {
    for (int k = 0; k < window; ++k) win[k] = obs[std::min(t + k, obs.size() - 1)];
    out[t] = static_cast<std::uint8_t>(decode(win));
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> hmm_decode(std::span<const std::uint8_t> obs, const HmmParams& hmm, int window) {
  return decode_all(obs, window, [&](const auto& w) { return viterbi_window(w, hmm); });
}

std::vector<std::uint8_t> hmm_decode(std::span<const std::uint8_t> obs, const ViterbiLut& lut) {
  return decode_all(obs, lut.window, [&](const auto& w) { return lut.lookup(w); });
}

StreamDecoder::StreamDecoder(const HmmParams& hmm, int window) : hmm_(hmm), window_(window) {
  if (window < 1) fail(ErrorCode::InvalidConfig, "window must be >= 1");
}

StreamDecoder::StreamDecoder(const ViterbiLut& lut) : lut_(lut), window_(lut.window) {}

int StreamDecoder::decode(std::span<const std::uint8_t> obs) const {
  return lut_ ? lut_->lookup(obs) : viterbi_window(obs, *hmm_);
}

std::optional<int> StreamDecoder::push(std::uint8_t obs) {
  buf_.push_back(obs ? 1 : 0);
  if (buf_.size() < static_cast<std::size_t>(window_)) return std::nullopt;
  const std::vector<std::uint8_t> w(buf_.begin(), buf_.end());
  buf_.pop_front();
  return decode(w);
}

std::vector<int> StreamDecoder::flush() {
  std::vector<int> out;
  while (!buf_.empty()) {
    std::vector<std::uint8_t> w(buf_.begin(), buf_.end());
    w.resize(window_, buf_.back());
    out.push_back(decode(w));
    buf_.pop_front();
  }
  return out;
}

namespace {

// Youden's J from pooled scores at one threshold; absent when a class is missing.
double youden(const std::vector<std::vector<double>>& scores, std::span<const LabeledSequence> seqs, double theta) {
  metrics::ConfusionMatrix cm;
  for (std::size_t s = 0; s < seqs.size(); ++s)
    for (std::size_t i = 0; i < scores[s].size(); ++i) cm.add(seqs[s].truth[i], scores[s][i] >= theta);
  const auto r = metrics::rates(cm);
  return *r.sensitivity + *r.specificity - 1.0;
}

}  // namespace

SmoothingConfig calibrate_thresholds(std::span<const LabeledSequence> seqs, int window, std::size_t min_sequences) {
  if (seqs.size() < min_sequences)
    fail(ErrorCode::NoCalibrationData, "need at least " + std::to_string(min_sequences) + " calibration sequences");
  std::size_t pos = 0, neg = 0;
  for (const auto& s : seqs) {
    if (s.probs.size() != s.truth.size()) fail(ErrorCode::ShapeMismatch, "probabilities and truth lengths differ");
    for (auto t : s.truth) (t ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) fail(ErrorCode::NoCalibrationData, "calibration data must contain both classes");

  SmoothingConfig cfg;
  cfg.window = window;
  std::vector<std::vector<double>> sma_s;
  for (const auto& s : seqs) sma_s.push_back(sma_scores(s.probs, window));
  double best_sma = -std::numeric_limits<double>::infinity();
  double best_ewma = best_sma;
  for (int k = 1; k <= 19; ++k) {
    const double theta = k / 20.0;
    const double j = youden(sma_s, seqs, theta);
    if (j > best_sma) {
      best_sma = j;
      cfg.sma_threshold = theta;
    }
  }
  std::vector<std::vector<std::vector<double>>> ewma_s(9);
  for (int a = 1; a <= 9; ++a)
    for (const auto& s : seqs) ewma_s[a - 1].push_back(ewma_scores(s.probs, a / 10.0));
  for (int k = 1; k <= 19; ++k)
    for (int a = 1; a <= 9; ++a) {
      const double j = youden(ewma_s[a - 1], seqs, k / 20.0);
      if (j > best_ewma) {
        best_ewma = j;
        cfg.ewma_threshold = k / 20.0;
        cfg.ewma_alpha = a / 10.0;
      }
    }
  cfg.degenerate = best_sma <= 0.0 || best_ewma <= 0.0;
  return cfg;
}

DelayResult detection_delay(std::span<const std::uint8_t> decisions, std::span<const edf::SeizureAnnotation> seizures,
                            double frag_s, double lag_s) {
  DelayResult r;
  double sum = 0.0;
  for (const auto& s : seizures) {
    const auto first = static_cast<std::size_t>(std::max(0.0, std::floor(s.start_s / frag_s)));
    const auto last = static_cast<std::size_t>(std::max(0.0, std::ceil(s.end_s / frag_s)));
    std::optional<double> d;
    for (std::size_t k = first; k < std::min(last, decisions.size()); ++k)
      if (decisions[k]) {
        d = std::max(0.0, static_cast<double>(k) * frag_s + lag_s - s.start_s);
        break;
      }
    if (d) {
      ++r.detected;
      sum += *d;
    }
    r.per_seizure.push_back(d);
  }
  if (r.detected) r.mean = sum / r.detected;
  return r;
}

io::Json to_json(const HmmParams& h) {
  return {{"transition", h.transition}, {"emission", h.emission}, {"initial", h.initial}};
}

HmmParams hmm_from_json(const io::Json& j) {
  try {
    HmmParams h;
    h.transition = j.at("transition").get<Matrix2>();
    h.emission = j.at("emission").get<Matrix2>();
    h.initial = j.contains("initial") ? j["initial"].get<std::array<double, 2>>() : stationary(h.transition);
    h.validate();
    return h;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedField, std::string("hmm: ") + e.what());
  }
}

io::Json to_json(const ViterbiLut& l) { return {{"window", l.window}, {"entries", l.bit_string()}}; }

ViterbiLut lut_from_json(const io::Json& j) {
  try {
    ViterbiLut l;
    l.window = j.at("window").get<int>();
    const auto s = j.at("entries").get<std::string>();
    if (l.window < 1 || l.window > 16 || s.size() != (std::size_t{1} << l.window))
      fail(ErrorCode::MalformedField, "LUT must hold 2^window entries");
    for (char c : s) {
      if (c != '0' && c != '1') fail(ErrorCode::MalformedField, "LUT entries must be 0/1");
      l.entries.push_back(c == '1');
    }
    return l;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedField, std::string("lut: ") + e.what());
  }
}

io::Json to_json(const SmoothingConfig& s) {
  return {{"window", s.window},         {"sma_threshold", s.sma_threshold},   {"ewma_alpha", s.ewma_alpha},
          {"ewma_threshold", s.ewma_threshold}, {"hmm_window", s.hmm_window}, {"degenerate", s.degenerate}};
}

SmoothingConfig smoothing_from_json(const io::Json& j) {
  try {
    SmoothingConfig s;
    s.window = j.at("window").get<int>();
    s.sma_threshold = j.at("sma_threshold").get<double>();
    s.ewma_alpha = j.at("ewma_alpha").get<double>();
    s.ewma_threshold = j.at("ewma_threshold").get<double>();
    s.hmm_window = j.at("hmm_window").get<int>();
    s.degenerate = j.value("degenerate", false);
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedField, std::string("smoothing config: ") + e.what());
  }
}

}  // namespace ictal::post
