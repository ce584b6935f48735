#include <doctest.h>

#include <cmath>
#include <set>

#include "ictal/edf.hpp"
#include "ictal/error.hpp"
#include "ictal/synth.hpp"

using namespace ictal;
using namespace ictal::synth;

namespace {

SynthConfig small() {
  SynthConfig c;
  c.n_patients = 2;
  c.minutes = 6.0;
  c.files_per_patient = 2;
  c.seizures_per_patient = 2;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("corpus layout and annotations") {
  const auto corpus = generate(small());
  CHECK(corpus.files.size() == 4);
  CHECK(corpus.annotations.size() == 4);
  std::set<std::string> ids;
  for (const auto& f : corpus.files) {
    ids.insert(f.file_id);
    CHECK(f.recording.samples.size() == 18);
    CHECK(f.recording.sample_rate_hz(0) == 256.0);
    CHECK(f.recording.duration_s() == doctest::Approx(180.0));
  }
  for (const auto& a : corpus.annotations) {
    CHECK(ids.count(a.file_id) == 1);
    CHECK(a.duration_s() >= 20.0);
    CHECK(a.duration_s() <= 60.0);
    CHECK(a.start_s >= 0.0);
    CHECK(a.end_s <= 180.0);
  }
  for (const std::string p : {"P01", "P02"}) {
    int n = 0;
    for (const auto& a : corpus.annotations) n += a.file_id.rfind(p, 0) == 0;
    CHECK(n >= 1);
  }
}

TEST_CASE("files survive the edf codec") {
  const auto corpus = generate(small());
  const auto bytes = edf::write_edf(corpus.files[0].recording);
  const auto back = edf::parse_edf(bytes);
  CHECK(edf::write_edf(back) == bytes);
}

TEST_CASE("generation is deterministic per seed") {
  const auto a = generate(small());
  const auto b = generate(small());
  CHECK(edf::write_edf(a.files[1].recording) == edf::write_edf(b.files[1].recording));
  auto other = small();
  other.seed = 10;
  CHECK(edf::write_edf(generate(other).files[1].recording) != edf::write_edf(a.files[1].recording));
}

TEST_CASE("ictal segments carry more variance") {
  const auto corpus = generate(small());
  for (const auto& a : corpus.annotations) {
    const auto& file = *std::find_if(corpus.files.begin(), corpus.files.end(),
                                     [&](const SynthFile& f) { return f.file_id == a.file_id; });
    const auto lo = static_cast<std::size_t>(a.start_s * 256), hi = static_cast<std::size_t>(a.end_s * 256);
    double ictal = 0.0, quiet = 0.0;
    for (const auto& ch : file.recording.samples) {
      auto var = [&](std::size_t b, std::size_t e) {
        double m = 0.0, s = 0.0;
        for (std::size_t i = b; i < e; ++i) m += ch[i];
        m /= static_cast<double>(e - b);
        for (std::size_t i = b; i < e; ++i) s += (ch[i] - m) * (ch[i] - m);
        return s / static_cast<double>(e - b);
      };
      ictal += var(lo, hi);
      quiet += lo > 256 * 10 ? var(0, lo) : var(hi, ch.size());
    }
    CHECK(ictal > 1.5 * quiet);
  }
}

TEST_CASE("zero seizures leave the annotation list empty") {
  auto c = small();
  c.seizures_per_patient = 0;
  CHECK(generate(c).annotations.empty());
}

TEST_CASE("invalid configuration") {
  auto c = small();
  c.gain_min = 6.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = small();
  c.seizure_jitter = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
}
