#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ictal/edf.hpp"
#include "ictal/error.hpp"
#include "ictal/random.hpp"

using namespace ictal;

namespace {

// Independent EDF encoder: fixed-width ASCII fields, then int16 records.
struct RawSignal {
  std::string label;
  double pmin, pmax;
  int dmin, dmax, spr;
  std::vector<std::int16_t> codes;  // n_records * spr
};

std::string field(const std::string& s, std::size_t w) {
  std::string out = s.substr(0, w);
  out.resize(w, ' ');
  return out;
}

std::vector<std::uint8_t> raw_edf(const std::vector<RawSignal>& sig, int n_records, double dur) {
  std::string h;
  h += field("0", 8) + field("X", 80) + field("rec", 80) + field("01.02.03", 8) + field("04.05.06", 8);
  h += field(std::to_string(256 + 256 * sig.size()), 8) + field("", 44);
  h += field(std::to_string(n_records), 8);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", dur);
  h += field(buf, 8) + field(std::to_string(sig.size()), 4);
  auto each = [&](auto f, std::size_t w) {
    for (const auto& s : sig) h += field(f(s), w);
  };
  auto num = [](double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%g", v);
    return std::string(b);
  };
  each([](const RawSignal& s) { return s.label; }, 16);
  each([](const RawSignal&) { return std::string(""); }, 80);
  each([](const RawSignal&) { return std::string("uV"); }, 8);
  each([&](const RawSignal& s) { return num(s.pmin); }, 8);
  each([&](const RawSignal& s) { return num(s.pmax); }, 8);
  each([](const RawSignal& s) { return std::to_string(s.dmin); }, 8);
  each([](const RawSignal& s) { return std::to_string(s.dmax); }, 8);
  each([](const RawSignal&) { return std::string(""); }, 80);
  each([](const RawSignal& s) { return std::to_string(s.spr); }, 8);
  each([](const RawSignal&) { return std::string(""); }, 32);
  std::vector<std::uint8_t> out(h.begin(), h.end());
  for (int r = 0; r < n_records; ++r)
    for (const auto& s : sig)
      for (int i = 0; i < s.spr; ++i) {
        const auto v = static_cast<std::uint16_t>(s.codes[static_cast<std::size_t>(r * s.spr + i)]);
        out.push_back(static_cast<std::uint8_t>(v & 0xff));
        out.push_back(static_cast<std::uint8_t>(v >> 8));
      }
  return out;
}

edf::EdfRecording random_recording(rnd::Engine& g) {
  edf::EdfRecording rec;
  rec.header.patient_id = "P" + std::to_string(rnd::index(g, 100));
  rec.header.recording_id = "random";
  rec.header.record_duration_s = 1.0;
  const int n_sig = 1 + static_cast<int>(rnd::index(g, 4));
  const int n_rec = static_cast<int>(rnd::index(g, 4));
  for (int s = 0; s < n_sig; ++s) {
    edf::EdfSignalSpec sp;
    sp.label = "CH" + std::to_string(s);
    sp.physical_dim = "uV";
    sp.physical_max = std::round(rnd::uniform(g, 10, 5000));
    sp.physical_min = -std::round(rnd::uniform(g, 10, 5000));
    sp.digital_min = -32768;
    sp.digital_max = 32767;
    sp.samples_per_record = 1 + static_cast<int>(rnd::index(g, 64));
    rec.specs.push_back(sp);
    std::vector<double> x;
    for (int i = 0; i < n_rec * sp.samples_per_record; ++i) x.push_back(rnd::uniform(g, sp.physical_min, sp.physical_max));
    rec.samples.push_back(x);
  }
  return rec;
}

}  // namespace

TEST_CASE("edf: midpoint and endpoint scaling") {
  edf::EdfSignalSpec s;
  s.physical_min = -1.0;
  s.physical_max = 1.0;
  CHECK(s.to_physical(0) == doctest::Approx((0.0 + 32768.0) * 2.0 / 65535.0 - 1.0).epsilon(1e-15));
  CHECK(std::abs(s.to_physical(0) - 0.0000152590) < 1e-10);
  CHECK(s.to_physical(32767) == 1.0);
  CHECK(s.to_physical(-32768) == -1.0);
}

TEST_CASE("edf: independently encoded file decodes") {
  RawSignal a{"FP1-F7", -100, 100, -2048, 2047, 4, {-2048, 0, 2047, 100, 5, 6, 7, 8}};
  RawSignal b{"F7-T7", 0, 10, 0, 10, 2, {0, 10, 3, 4}};
  const auto bytes = raw_edf({a, b}, 2, 0.5);
  const auto rec = edf::parse_edf(bytes);
  CHECK(rec.header.n_signals == 2);
  CHECK(rec.header.n_records == 2);
  CHECK(rec.header.header_bytes == 768);
  CHECK(rec.header.start_date == "01.02.03");
  CHECK(rec.header.start_time == "04.05.06");
  CHECK(rec.specs[0].label == "FP1-F7");
  CHECK(rec.sample_rate_hz(0) == 8.0);
  CHECK(rec.sample_rate_hz(1) == 4.0);
  REQUIRE(rec.samples[0].size() == 8);
  REQUIRE(rec.samples[1].size() == 4);
  for (std::size_t i = 0; i < 8; ++i) {
    const double expect = (a.codes[i] + 2048.0) * 200.0 / 4095.0 - 100.0;
    CHECK(rec.samples[0][i] == doctest::Approx(expect).epsilon(1e-12));
  }
  CHECK(rec.samples[1][1] == 10.0);
  CHECK(rec.samples[1][2] == doctest::Approx(3.0));
}

TEST_CASE("edf: sizes") {
  edf::EdfRecording empty;
  CHECK(edf::write_edf(empty).size() == 256);

  edf::EdfRecording one;
  edf::EdfSignalSpec s;
  s.label = "A";
  s.samples_per_record = 128;
  one.specs.push_back(s);
  one.samples.push_back(std::vector<double>(256, 0.0));
  CHECK(edf::write_edf(one).size() == 1024);
}

TEST_CASE("edf: two-signal three-record round trip") {
  rnd::Engine g(5);
  edf::EdfRecording rec;
  rec.header.patient_id = "pat";
  for (int s = 0; s < 2; ++s) {
    edf::EdfSignalSpec sp;
    sp.label = "S" + std::to_string(s);
    sp.physical_min = -50;
    sp.physical_max = 50;
    sp.samples_per_record = 3 + s;
    rec.specs.push_back(sp);
    std::vector<double> x;
    for (int i = 0; i < 3 * sp.samples_per_record; ++i) x.push_back(rnd::uniform(g, -50, 50));
    rec.samples.push_back(x);
  }
  const auto back = edf::parse_edf(edf::write_edf(rec));
  CHECK(back.header.patient_id == "pat");
  CHECK(back.header.n_records == 3);
  for (int s = 0; s < 2; ++s) {
    const double step = rec.specs[s].gain();
    REQUIRE(back.samples[s].size() == rec.samples[s].size());
    for (std::size_t i = 0; i < rec.samples[s].size(); ++i)
      CHECK(std::abs(back.samples[s][i] - rec.samples[s][i]) <= step / 2 + 1e-12);
  }
}

TEST_CASE("edf: write is a fixpoint after one round trip") {
  rnd::Engine g(11);
  for (int k = 0; k < 20; ++k) {
    const auto rec = random_recording(g);
    const auto b1 = edf::write_edf(rec);
    const auto b2 = edf::write_edf(edf::parse_edf(b1));
    CHECK(b1 == b2);
  }
}

TEST_CASE("edf: errors") {
  RawSignal a{"A", -1, 1, -10, 10, 2, {1, 2}};
  auto bytes = raw_edf({a}, 1, 1.0);
  auto cut = bytes;
  cut.pop_back();
  CHECK_THROWS_AS(edf::parse_edf(cut), Error);
  try {
    edf::parse_edf(cut);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TruncatedFile);
  }

  auto bad = bytes;
  bad[236] = 'x';  // n_records field
  try {
    edf::parse_edf(bad);
    FAIL("expected MalformedField");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::MalformedField);
  }

  RawSignal flat{"A", -1, 1, 5, 5, 2, {5, 5}};
  try {
    edf::parse_edf(raw_edf({flat}, 1, 1.0));
    FAIL("expected DegenerateScale");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateScale);
  }

  edf::EdfRecording rec;
  rec.header.patient_id = std::string(81, 'x');
  try {
    edf::write_edf(rec);
    FAIL("expected FieldOverflow");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FieldOverflow);
  }

  edf::EdfRecording out_of_range;
  edf::EdfSignalSpec sp;
  sp.samples_per_record = 1;
  out_of_range.specs.push_back(sp);
  out_of_range.samples.push_back({5.0});
  try {
    edf::write_edf(out_of_range);
    FAIL("expected ValueOutOfPhysicalRange");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ValueOutOfPhysicalRange);
  }
}

TEST_CASE("edf: annotations") {
  const auto one = edf::parse_annotations("chb01_03.edf,2996,3036\n");
  REQUIRE(one.size() == 1);
  CHECK(one[0].duration_s() == 40.0);
  CHECK(edf::parse_annotations("").empty());

  const auto merged = edf::parse_annotations("# comment\nfile_id,start_s,end_s\nb.edf,5,6\na.edf,15,30\na.edf,10,20\n");
  REQUIRE(merged.size() == 2);
  CHECK(merged[0] == edf::SeizureAnnotation{"a.edf", 10, 30});
  CHECK(merged[1] == edf::SeizureAnnotation{"b.edf", 5, 6});

  try {
    edf::parse_annotations("a.edf,5,5\n");
    FAIL("expected NegativeDuration");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NegativeDuration);
  }
  try {
    edf::parse_annotations("a.edf,five,6\n");
    FAIL("expected UnparsableLine");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnparsableLine);
  }

  const auto again = edf::parse_annotations(edf::format_annotations(merged));
  CHECK(again == merged);
}
