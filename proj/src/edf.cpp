#include "ictal/edf.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "ictal/error.hpp"

namespace ictal::edf {

namespace {

constexpr int kFixedHeader = 256;
constexpr int kPerSignalHeader = 256;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\0'))
    s.remove_suffix(1);
  return s;
}

class HeaderReader {
 public:
  HeaderReader(std::span<const std::uint8_t> bytes, std::vector<std::string>& warnings)
      : bytes_(bytes), warnings_(warnings) {}

  std::string text(std::size_t width, const char* field) {
    if (pos_ + width > bytes_.size())
      fail(ErrorCode::TruncatedFile, std::string("header ends inside field ") + field);
    std::string out;
    out.reserve(width);
    bool dirty = false;
    for (std::size_t i = 0; i < width; ++i) {
      const auto b = bytes_[pos_ + i];
      if (b < 32 || b > 126) {
        out.push_back('?');
        dirty = true;
      } else {
        out.push_back(static_cast<char>(b));
      }
    }
    pos_ += width;
    if (dirty) warnings_.push_back(std::string("non-ASCII bytes replaced in field ") + field);
    return std::string(trim(out));
  }

  double real(std::size_t width, const char* field) {
    const std::string raw = text(width, field);
    std::string_view s = raw;
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v))
      fail(ErrorCode::MalformedField, std::string(field) + " is not numeric: '" + raw + "'");
    return v;
  }

  int integer(std::size_t width, const char* field) {
    const double v = real(width, field);
    if (v != std::floor(v) || std::abs(v) > 2147483647.0)
      fail(ErrorCode::MalformedField, std::string(field) + " is not an integer");
    return static_cast<int>(v);
  }

  std::size_t pos() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::vector<std::string>& warnings_;
  std::size_t pos_ = 0;
};

void put_text(std::vector<std::uint8_t>& out, std::string_view s, std::size_t width,
              const char* field) {
  if (s.size() > width)
    fail(ErrorCode::FieldOverflow,
         std::string(field) + " '" + std::string(s) + "' exceeds " + std::to_string(width) + " chars");
  for (char c : s) {
    const auto b = static_cast<unsigned char>(c);
    out.push_back((b < 32 || b > 126) ? static_cast<std::uint8_t>('?') : b);
  }
  out.insert(out.end(), width - s.size(), static_cast<std::uint8_t>(' '));
}

// Shortest fixed-notation text that round-trips, falling back to fewer
// decimals when the field is too narrow.
std::string format_real(double v, std::size_t width, const char* field) {
  if (v == 0.0) v = 0.0;  // drop negative zero
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed);
  std::string s(buf, r.ptr);
  if (s.size() <= width) return s;
  for (int prec = static_cast<int>(width); prec >= 0; --prec) {
    r = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::fixed, prec);
    std::string t(buf, r.ptr);
    if (t.find('.') != std::string::npos) {
      while (t.back() == '0') t.pop_back();
      if (t.back() == '.') t.pop_back();
    }
    if (t == "-0") t = "0";
    if (t.size() <= width) return t;
  }
  fail(ErrorCode::FieldOverflow, std::string(field) + " value does not fit " +
                                     std::to_string(width) + " chars");
}

}  // namespace

double EdfSignalSpec::gain() const {
  return (physical_max - physical_min) / static_cast<double>(digital_max - digital_min);
}

double EdfSignalSpec::to_physical(int digital) const {
  return (digital - digital_min) * gain() + physical_min;
}

int EdfSignalSpec::to_digital(double physical) const {
  const double d = std::nearbyint((physical - physical_min) / gain() + digital_min);
  return static_cast<int>(std::clamp(d, static_cast<double>(digital_min), static_cast<double>(digital_max)));
}

double EdfRecording::sample_rate_hz(std::size_t signal) const {
  return specs.at(signal).samples_per_record / header.record_duration_s;
}

double EdfRecording::duration_s() const { return header.n_records * header.record_duration_s; }

EdfRecording parse_edf(std::span<const std::uint8_t> bytes) {
  EdfRecording rec;
  HeaderReader rd(bytes, rec.warnings);
  auto& h = rec.header;
  h.version = rd.text(8, "version");
  h.patient_id = rd.text(80, "patient_id");
  h.recording_id = rd.text(80, "recording_id");
  h.start_date = rd.text(8, "start_date");
  h.start_time = rd.text(8, "start_time");
  h.header_bytes = rd.integer(8, "header_bytes");
  h.reserved = rd.text(44, "reserved");
  h.n_records = rd.integer(8, "n_records");
  h.record_duration_s = rd.real(8, "record_duration");
  h.n_signals = rd.integer(4, "n_signals");

  if (h.n_signals < 0) fail(ErrorCode::MalformedField, "negative signal count");
  if (h.header_bytes != kFixedHeader + kPerSignalHeader * h.n_signals)
    fail(ErrorCode::MalformedField, "header_bytes " + std::to_string(h.header_bytes) +
                                        " inconsistent with " + std::to_string(h.n_signals) + " signals");
  if (!(h.record_duration_s > 0.0))
    fail(ErrorCode::MalformedField, "record duration must be positive");

  const auto ns = static_cast<std::size_t>(h.n_signals);
  rec.specs.resize(ns);
  for (auto& s : rec.specs) s.label = rd.text(16, "label");
  for (auto& s : rec.specs) s.transducer = rd.text(80, "transducer");
  for (auto& s : rec.specs) s.physical_dim = rd.text(8, "physical_dim");
  for (auto& s : rec.specs) s.physical_min = rd.real(8, "physical_min");
  for (auto& s : rec.specs) s.physical_max = rd.real(8, "physical_max");
  for (auto& s : rec.specs) s.digital_min = rd.integer(8, "digital_min");
  for (auto& s : rec.specs) s.digital_max = rd.integer(8, "digital_max");
  for (auto& s : rec.specs) s.prefiltering = rd.text(80, "prefiltering");
  for (auto& s : rec.specs) s.samples_per_record = rd.integer(8, "samples_per_record");
  for (auto& s : rec.specs) s.reserved = rd.text(32, "signal_reserved");

  std::size_t record_samples = 0;
  for (const auto& s : rec.specs) {
    if (s.digital_min >= s.digital_max)
      fail(ErrorCode::DegenerateScale, "signal '" + s.label + "' digital_min >= digital_max");
    if (s.physical_min == s.physical_max)
      fail(ErrorCode::DegenerateScale, "signal '" + s.label + "' physical_min == physical_max");
    if (s.samples_per_record <= 0)
      fail(ErrorCode::MalformedField, "signal '" + s.label + "' has no samples per record");
    record_samples += static_cast<std::size_t>(s.samples_per_record);
  }

  const std::size_t payload = bytes.size() - rd.pos();
  const std::size_t record_bytes = 2 * record_samples;
  if (h.n_records < 0) {
    // -1 marks a recording whose length was never finalized.
    h.n_records = record_bytes == 0 ? 0 : static_cast<int>(payload / record_bytes);
    rec.warnings.push_back("n_records was -1; inferred from payload size");
  }
  const std::size_t promised = record_bytes * static_cast<std::size_t>(h.n_records);
  if (payload < promised)
    fail(ErrorCode::TruncatedFile, "payload has " + std::to_string(payload) + " bytes, header promises " +
                                       std::to_string(promised));
  if (payload > promised) rec.warnings.push_back("trailing bytes after last data record ignored");

  rec.samples.resize(ns);
  for (std::size_t i = 0; i < ns; ++i)
    rec.samples[i].reserve(static_cast<std::size_t>(rec.specs[i].samples_per_record) * h.n_records);

  const std::uint8_t* p = bytes.data() + rd.pos();
  for (int r = 0; r < h.n_records; ++r) {
    for (std::size_t i = 0; i < ns; ++i) {
      const auto& spec = rec.specs[i];
      auto& dst = rec.samples[i];
      for (int k = 0; k < spec.samples_per_record; ++k, p += 2) {
        const auto code = static_cast<std::int16_t>(static_cast<std::uint16_t>(p[0] | (p[1] << 8)));
        dst.push_back(spec.to_physical(code));
      }
    }
  }
  return rec;
}

EdfRecording read_edf_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_edf(bytes);
}

std::vector<std::uint8_t> write_edf(const EdfRecording& rec) {
  const auto& h = rec.header;
  const std::size_t ns = rec.specs.size();
  if (rec.samples.size() != ns)
    fail(ErrorCode::ShapeMismatch, "samples/specs count mismatch");
  if (!(h.record_duration_s > 0.0)) fail(ErrorCode::MalformedField, "record duration must be positive");

  int n_records = 0;
  for (std::size_t i = 0; i < ns; ++i) {
    const auto& s = rec.specs[i];
    if (s.digital_min >= s.digital_max || s.digital_min < -32768 || s.digital_max > 32767)
      fail(ErrorCode::DegenerateScale, "signal '" + s.label + "' has an invalid digital range");
    if (s.physical_min == s.physical_max)
      fail(ErrorCode::DegenerateScale, "signal '" + s.label + "' physical_min == physical_max");
    if (s.samples_per_record <= 0)
      fail(ErrorCode::MalformedField, "signal '" + s.label + "' has no samples per record");
    const std::size_t n = rec.samples[i].size();
    if (n % static_cast<std::size_t>(s.samples_per_record) != 0)
      fail(ErrorCode::ShapeMismatch, "signal '" + s.label + "' is not a whole number of records");
    const int nr = static_cast<int>(n / static_cast<std::size_t>(s.samples_per_record));
    if (i == 0) n_records = nr;
    else if (nr != n_records)
      fail(ErrorCode::ShapeMismatch, "signals disagree on record count");
  }
  if (ns == 0) n_records = 0;

  std::vector<std::uint8_t> out;
  std::size_t record_samples = 0;
  for (const auto& s : rec.specs) record_samples += static_cast<std::size_t>(s.samples_per_record);
  out.reserve(kFixedHeader + kPerSignalHeader * ns + 2 * record_samples * n_records);

  put_text(out, h.version, 8, "version");
  put_text(out, h.patient_id, 80, "patient_id");
  put_text(out, h.recording_id, 80, "recording_id");
  put_text(out, h.start_date, 8, "start_date");
  put_text(out, h.start_time, 8, "start_time");
  put_text(out, std::to_string(kFixedHeader + kPerSignalHeader * ns), 8, "header_bytes");
  put_text(out, h.reserved, 44, "reserved");
  put_text(out, std::to_string(n_records), 8, "n_records");
  put_text(out, format_real(h.record_duration_s, 8, "record_duration"), 8, "record_duration");
  put_text(out, std::to_string(ns), 4, "n_signals");

  for (const auto& s : rec.specs) put_text(out, s.label, 16, "label");
  for (const auto& s : rec.specs) put_text(out, s.transducer, 80, "transducer");
  for (const auto& s : rec.specs) put_text(out, s.physical_dim, 8, "physical_dim");
  for (const auto& s : rec.specs) put_text(out, format_real(s.physical_min, 8, "physical_min"), 8, "physical_min");
  for (const auto& s : rec.specs) put_text(out, format_real(s.physical_max, 8, "physical_max"), 8, "physical_max");
  for (const auto& s : rec.specs) put_text(out, std::to_string(s.digital_min), 8, "digital_min");
  for (const auto& s : rec.specs) put_text(out, std::to_string(s.digital_max), 8, "digital_max");
  for (const auto& s : rec.specs) put_text(out, s.prefiltering, 80, "prefiltering");
  for (const auto& s : rec.specs) put_text(out, std::to_string(s.samples_per_record), 8, "samples_per_record");
  for (const auto& s : rec.specs) put_text(out, s.reserved, 32, "signal_reserved");

  // Scaling uses the values as they will read back from the 8-char fields.
  std::vector<EdfSignalSpec> stored = rec.specs;
  for (auto& s : stored) {
    s.physical_min = std::stod(format_real(s.physical_min, 8, "physical_min"));
    s.physical_max = std::stod(format_real(s.physical_max, 8, "physical_max"));
    if (s.physical_min == s.physical_max)
      fail(ErrorCode::DegenerateScale, "signal '" + s.label + "' physical range collapses in 8 chars");
  }

  for (int r = 0; r < n_records; ++r) {
    for (std::size_t i = 0; i < ns; ++i) {
      const auto& s = stored[i];
      const double lo = std::min(s.physical_min, s.physical_max);
      const double hi = std::max(s.physical_min, s.physical_max);
      const double half_step = 0.5 * std::abs(s.gain());
      const auto base = static_cast<std::size_t>(r) * static_cast<std::size_t>(s.samples_per_record);
      for (int k = 0; k < s.samples_per_record; ++k) {
        const double v = rec.samples[i][base + static_cast<std::size_t>(k)];
        if (!(v >= lo - half_step && v <= hi + half_step))
          fail(ErrorCode::ValueOutOfPhysicalRange,
               "signal '" + s.label + "' sample " + std::to_string(v) + " outside physical range");
        const auto code = static_cast<std::uint16_t>(static_cast<std::int16_t>(s.to_digital(v)));
        out.push_back(static_cast<std::uint8_t>(code & 0xFF));
        out.push_back(static_cast<std::uint8_t>(code >> 8));
      }
    }
  }
  return out;
}

void write_edf_file(const EdfRecording& rec, const std::string& path) {
  const auto bytes = write_edf(rec);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<SeizureAnnotation> parse_annotations(std::string_view text) {
  std::vector<SeizureAnnotation> raw;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;

    std::string_view cols[3];
    std::size_t n = 0;
    for (std::string_view rest = line;; ++n) {
      const auto comma = rest.find(',');
      if (n < 3) cols[n] = trim(rest.substr(0, comma));
      if (comma == std::string_view::npos) {
        ++n;
        break;
      }
      rest = rest.substr(comma + 1);
    }
    if (n != 3)
      fail(ErrorCode::UnparsableLine, "line " + std::to_string(line_no) + ": expected 3 columns");
    if (raw.empty() && cols[0] == "file_id") continue;

    double t[2];
    for (int k = 0; k < 2; ++k) {
      const auto s = cols[k + 1];
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), t[k]);
      if (s.empty() || ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(t[k]))
        fail(ErrorCode::UnparsableLine, "line " + std::to_string(line_no) + ": bad time '" +
                                            std::string(s) + "'");
    }
    if (cols[0].empty()) fail(ErrorCode::UnparsableLine, "line " + std::to_string(line_no) + ": empty file_id");
    if (t[0] < 0.0 || t[1] <= t[0])
      fail(ErrorCode::NegativeDuration, "line " + std::to_string(line_no) + ": end must exceed start >= 0");
    raw.push_back({std::string(cols[0]), t[0], t[1]});
  }

  std::sort(raw.begin(), raw.end(), [](const auto& a, const auto& b) {
    return a.file_id != b.file_id ? a.file_id < b.file_id : a.start_s < b.start_s;
  });
  std::vector<SeizureAnnotation> merged;
  for (auto& a : raw) {
    if (!merged.empty() && merged.back().file_id == a.file_id && a.start_s <= merged.back().end_s) {
      merged.back().end_s = std::max(merged.back().end_s, a.end_s);
    } else {
      merged.push_back(std::move(a));
    }
  }
  return merged;
}

std::string format_annotations(const std::vector<SeizureAnnotation>& anns) {
  std::ostringstream os;
  os << "file_id,start_s,end_s\n";
  for (const auto& a : anns) {
    char b0[32], b1[32];
    auto r0 = std::to_chars(b0, b0 + sizeof b0, a.start_s);
    auto r1 = std::to_chars(b1, b1 + sizeof b1, a.end_s);
    os << a.file_id << ',' << std::string_view(b0, r0.ptr - b0) << ',' << std::string_view(b1, r1.ptr - b1)
       << '\n';
  }
  return os.str();
}

}  // namespace ictal::edf
