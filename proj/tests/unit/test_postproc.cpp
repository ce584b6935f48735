#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "ictal/error.hpp"
#include "ictal/postproc.hpp"
#include "ictal/random.hpp"

using namespace ictal;
using namespace ictal::post;

namespace {

using Labels = std::vector<std::uint8_t>;

// First state of the most likely path by enumerating every path.
int brute_force(const Labels& obs, const HmmParams& h) {
  const int n = static_cast<int>(obs.size());
  double best[2] = {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (unsigned path = 0; path < (1u << n); ++path) {
    auto state = [&](int t) { return static_cast<int>((path >> (n - 1 - t)) & 1u); };
    double lp = std::log(h.initial[state(0)]) + std::log(h.emission[state(0)][obs[0]]);
    for (int t = 1; t < n; ++t)
      lp += std::log(h.transition[state(t - 1)][state(t)]) + std::log(h.emission[state(t)][obs[t]]);
    best[state(0)] = std::max(best[state(0)], lp);
  }
  return best[1] > best[0] ? 1 : 0;
}

HmmParams random_hmm(rnd::Engine& g) {
  Matrix2 t, e;
  for (int i = 0; i < 2; ++i) {
    const double a = rnd::uniform(g, 0.01, 0.99), b = rnd::uniform(g, 0.01, 0.99);
    t[i] = {a, 1 - a};
    e[i] = {b, 1 - b};
  }
  return make_hmm(t, e);
}

Labels bits_of(unsigned i, int n) {
  Labels v(n);
  for (int k = 0; k < n; ++k) v[k] = static_cast<std::uint8_t>((i >> (n - 1 - k)) & 1u);
  return v;
}

const HmmParams kSticky = make_hmm({{{0.99, 0.01}, {0.05, 0.95}}}, {{{0.96, 0.04}, {0.08, 0.92}}});

}  // namespace

TEST_CASE("sma examples") {
  CHECK(sma(std::vector<double>(7, 0.6), 5, 0.5) == Labels(7, 1));
  CHECK(sma(std::vector<double>(7, 0.4), 5, 0.5) == Labels(7, 0));
  CHECK(sma(std::vector<double>{0, 0, 1, 1, 1}, 5, 0.5).back() == 1);
  CHECK(sma(std::vector<double>{0, 0, 1, 0, 0}, 5, 0.5) == Labels(5, 0));
  const auto s = sma_scores(std::vector<double>{1, 0, 0.5, 0.5, 0, 1}, 5);
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] == doctest::Approx(0.5));
  CHECK(s[4] == doctest::Approx(0.4));
  CHECK(s[5] == doctest::Approx(0.4));
}

TEST_CASE("ewma examples") {
  const auto s = ewma_scores(std::vector<double>{1, 0}, 0.5);
  CHECK(s == std::vector<double>{1.0, 0.5});
  auto g = rnd::substream(1, 1);
  std::vector<double> p(200);
  for (auto& v : p) v = rnd::uniform01(g);
  Labels raw(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) raw[i] = p[i] >= 0.37;
  CHECK(ewma(p, 1.0, 0.37) == raw);
  const auto c = ewma_scores(std::vector<double>(60, 0.8), 0.3);
  CHECK(c.back() == doctest::Approx(0.8));
}

TEST_CASE("transition estimation") {
  const auto t = estimate_transitions({{0, 0, 0, 1, 1}});
  CHECK(t[0][0] == doctest::Approx(3.0 / 5));
  CHECK(t[0][1] == doctest::Approx(2.0 / 5));
  CHECK(t[1][0] == doctest::Approx(1.0 / 3));
  CHECK(t[1][1] == doctest::Approx(2.0 / 3));
  const auto z = estimate_transitions({Labels(1000, 0)});
  CHECK(z[0][1] < 0.01);
  CHECK(z[1][0] == doctest::Approx(0.5));
  // The pair across the boundary (0 -> 1) is not counted.
  const auto split = estimate_transitions({{0, 0}, {1, 1}});
  CHECK(split[0][0] == doctest::Approx(2.0 / 3));
  CHECK(split[1][1] == doctest::Approx(2.0 / 3));
}

TEST_CASE("emission estimation") {
  const auto e = emissions_from_confusion(std::array<std::array<std::int64_t, 2>, 2>{{{96, 4}, {8, 92}}});
  CHECK(e[0][0] == doctest::Approx(0.96));
  CHECK(e[0][1] == doctest::Approx(0.04));
  CHECK(e[1][0] == doctest::Approx(0.08));
  CHECK(e[1][1] == doctest::Approx(0.92));
  const auto perfect = emissions_from_confusion(std::array<std::array<std::int64_t, 2>, 2>{{{50, 0}, {0, 10}}});
  CHECK(perfect[0][0] == 1.0);
  CHECK(perfect[1][1] == 1.0);
  const auto empty = emissions_from_confusion(std::array<std::array<std::int64_t, 2>, 2>{{{50, 3}, {0, 0}}});
  CHECK(empty[1][0] == 0.5);
  CHECK(empty[1][1] == 0.5);
}

TEST_CASE("stationary distribution") {
  const auto pi = stationary({{{0.9, 0.1}, {0.3, 0.7}}});
  CHECK(pi[0] == doctest::Approx(0.75));
  CHECK(pi[1] == doctest::Approx(0.25));
}

TEST_CASE("viterbi examples") {
  const auto strong = make_hmm({{{0.95, 0.05}, {0.05, 0.95}}}, {{{0.9, 0.1}, {0.1, 0.9}}});
  CHECK(viterbi_window(Labels{1, 1, 1, 1, 1}, strong) == 1);
  CHECK(viterbi_window(Labels{0, 0, 0, 0, 0}, strong) == 0);
  CHECK(viterbi_window(Labels{1, 0, 0, 0, 0}, kSticky) == 0);
  CHECK(brute_force({1, 0, 0, 0, 0}, kSticky) == 0);
}

TEST_CASE("viterbi matches path enumeration on random models") {
  auto g = rnd::substream(2, 2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto h = random_hmm(g);
    for (unsigned i = 0; i < 32; ++i) {
      const auto obs = bits_of(i, 5);
      REQUIRE(viterbi_window(obs, h) == brute_force(obs, h));
    }
  }
}

TEST_CASE("lut equals windowed viterbi") {
  auto g = rnd::substream(3, 3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto h = random_hmm(g);
    const auto lut = compile_lut(h);
    REQUIRE(lut.entries.size() == 32);
    for (unsigned i = 0; i < 32; ++i) REQUIRE(lut.entries[i] == viterbi_window(bits_of(i, 5), h));
  }
  CHECK(ViterbiLut::index_of(Labels{1, 0, 0, 0, 0}) == 16);
  CHECK(ViterbiLut::index_of(Labels{0, 0, 0, 0, 1}) == 1);
}

TEST_CASE("lut degenerate and uniform models") {
  const auto degenerate = make_hmm({{{0.999, 0.001}, {0.001, 0.999}}}, {{{1.0, 0.0}, {0.0, 1.0}}});
  const auto lut = compile_lut(degenerate);
  for (unsigned i = 0; i < 32; ++i) CHECK(lut.entries[i] == ((i >> 4) & 1u));
  const auto uniform = make_hmm({{{0.5, 0.5}, {0.5, 0.5}}}, {{{0.5, 0.5}, {0.5, 0.5}}});
  const auto u = compile_lut(uniform);
  for (unsigned i = 0; i < 32; ++i) CHECK(u.entries[i] == 0);
  CHECK(u.bit_string() == std::string(32, '0'));
}

TEST_CASE("hmm json round trip") {
  const auto back = hmm_from_json(to_json(kSticky));
  CHECK(back.transition == kSticky.transition);
  CHECK(back.emission == kSticky.emission);
  const auto lut = compile_lut(kSticky);
  CHECK(lut_from_json(to_json(lut)).entries == lut.entries);
}

TEST_CASE("invalid hmm is rejected") {
  HmmParams h{{{{0.5, 0.6}, {0.5, 0.5}}}, {{{1, 0}, {0, 1}}}, {0.5, 0.5}};
  CHECK_THROWS_AS(h.validate(), Error);
}

TEST_CASE("sequence decoding with lut and stream decoder agree") {
  auto g = rnd::substream(4, 4);
  Labels obs(300);
  for (auto& v : obs) v = rnd::uniform01(g) < 0.3;
  const auto direct = hmm_decode(obs, kSticky);
  CHECK(hmm_decode(obs, compile_lut(kSticky)) == direct);
  StreamDecoder dec(kSticky);
  Labels streamed;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const auto d = dec.push(obs[i]);
    CHECK(d.has_value() == (i >= 4));
    if (d) streamed.push_back(static_cast<std::uint8_t>(*d));
  }
  for (int d : dec.flush()) streamed.push_back(static_cast<std::uint8_t>(d));
  CHECK(streamed == direct);
}

TEST_CASE("sustained high probabilities are never suppressed") {
  std::vector<double> p(40, 0.05);
  for (int i = 20; i < 25; ++i) p[i] = 0.95;
  const auto ones = [](const Labels& v) { return std::count(v.begin(), v.end(), 1); };
  CHECK(ones(sma(p, 5, 0.5)) > 0);
  CHECK(ones(ewma(p, 0.5, 0.5)) > 0);
  Labels obs(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) obs[i] = p[i] >= 0.5;
  CHECK(ones(hmm_decode(obs, kSticky)) > 0);
}

TEST_CASE("threshold calibration") {
  LabeledSequence a{{0.05, 0.1, 0.95, 0.9}, {0, 0, 1, 1}};
  LabeledSequence b{{0.1, 0.92, 0.08, 0.97}, {0, 1, 0, 1}};
  const std::vector<LabeledSequence> both{a, b};
  const auto cfg = calibrate_thresholds(both, 1);
  CHECK(cfg.sma_threshold == doctest::Approx(0.15));
  CHECK_FALSE(cfg.degenerate);
  const std::vector<LabeledSequence> swapped{b, a};
  const auto cfg2 = calibrate_thresholds(swapped, 1);
  CHECK(cfg2.sma_threshold == cfg.sma_threshold);
  CHECK(cfg2.ewma_alpha == cfg.ewma_alpha);
  CHECK(cfg2.ewma_threshold == cfg.ewma_threshold);

  const std::vector<LabeledSequence> flat{{{0.4, 0.4, 0.4}, {0, 1, 0}}, {{0.4, 0.4}, {1, 0}}};
  const auto d = calibrate_thresholds(flat, 5);
  CHECK(d.degenerate);
  CHECK(d.sma_threshold == doctest::Approx(0.05));

  try {
    calibrate_thresholds(std::vector<LabeledSequence>{a}, 5);
    FAIL("expected NoCalibrationData");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoCalibrationData);
  }
}

TEST_CASE("detection delay") {
  const std::vector<edf::SeizureAnnotation> sz{{"f", 10.0, 20.0}};
  Labels late(60, 0);
  for (int i = 29; i < 40; ++i) late[i] = 1;
  const auto r = detection_delay(late, sz);
  REQUIRE(r.per_seizure[0].has_value());
  CHECK(*r.per_seizure[0] == doctest::Approx(4.5));
  CHECK(r.detected == 1);

  Labels onset(60, 0);
  onset[20] = 1;
  CHECK(*detection_delay(onset, sz).per_seizure[0] <= 0.5);
  CHECK(*detection_delay(onset, sz, 0.5, 2.0).per_seizure[0] <= 2.5);

  const auto missed = detection_delay(Labels(60, 0), sz);
  CHECK_FALSE(missed.per_seizure[0].has_value());
  CHECK_FALSE(missed.mean.has_value());
  CHECK(missed.detected == 0);
}
