#include "ictal/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "ictal/error.hpp"
#include "ictal/io.hpp"
#include "ictal/random.hpp"

namespace ictal::synth {

void SynthConfig::validate() const {
  if (n_patients < 1 || channels < 1 || files_per_patient < 1 || seizures_per_patient < 0)
    fail(ErrorCode::InvalidConfig, "patients, channels and files must be >= 1");
  if (!(fs_hz > 0.0) || !(minutes > 0.0)) fail(ErrorCode::InvalidConfig, "rate and duration must be positive");
  if (!(seizure_min_s > 0.0 && seizure_min_s <= seizure_max_s))
    fail(ErrorCode::InvalidConfig, "seizure duration range is empty");
  if (!(gain_min > 0.0 && gain_min <= gain_max)) fail(ErrorCode::InvalidConfig, "gain range is empty");
  if (!(rhythm_min_hz > 0.0 && rhythm_min_hz <= rhythm_max_hz && rhythm_max_hz < fs_hz / 2))
    fail(ErrorCode::InvalidConfig, "rhythm range must lie below Nyquist");
  if (!(ictal_channel_fraction > 0.0 && ictal_channel_fraction <= 1.0))
    fail(ErrorCode::InvalidConfig, "ictal channel fraction must lie in (0, 1]");
  if (!(seizure_jitter >= 0.0 && seizure_jitter < 1.0))
    fail(ErrorCode::InvalidConfig, "seizure jitter must lie in [0, 1)");
  if (!(noise_uv > 0.0)) fail(ErrorCode::InvalidConfig, "noise level must be positive");
  const double file_s = 60.0 * minutes / files_per_patient;
  const int per_file = (seizures_per_patient + files_per_patient - 1) / files_per_patient;
  if (per_file * (seizure_max_s + 20.0) + 20.0 > file_s)
    fail(ErrorCode::InvalidConfig, "files are too short for the requested seizures");
}

std::vector<std::string> channel_labels(int n) {
  static const char* kMontage[] = {"FP1-F7", "F7-T7", "T7-P7", "P7-O1", "FP1-F3", "F3-C3", "C3-P3", "P3-O1", "FP2-F4",
                                   "F4-C4",  "C4-P4", "P4-O2", "FP2-F8", "F8-T8", "T8-P8", "P8-O2", "FZ-CZ", "CZ-PZ"};
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    if (i < 18) {
      out.emplace_back(kMontage[i]);
    } else {
      char buf[16];
      std::snprintf(buf, sizeof buf, "AUX%02d", i - 17);
      out.emplace_back(buf);
    }
  }
  return out;
}

namespace {

constexpr double kPi = std::numbers::pi;

// Sum of first-order autoregressive sources with poles spread over decades:
// an approximately 1/f spectrum. Unit variance overall.
class PinkNoise {
 public:
  explicit PinkNoise(rnd::Engine& g) : g_(g) {}
  double next() {
    double sum = 0.0;
    for (std::size_t i = 0; i < kPoles.size(); ++i) {
      state_[i] = kPoles[i] * state_[i] + std::sqrt(1.0 - kPoles[i] * kPoles[i]) * rnd::normal(g_);
      sum += state_[i];
    }
    return sum / std::sqrt(static_cast<double>(kPoles.size()));
  }

 private:
  static constexpr std::array<double, 4> kPoles{0.3, 0.8, 0.95, 0.99};
  rnd::Engine& g_;
  std::array<double, 4> state_{};
};

struct Seizure {
  int file;
  double start_s, end_s, gain, freq_hz;
  std::vector<double> phase;
};

}  // namespace

SynthCorpus generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto labels = channel_labels(cfg.channels);
  const double file_s = std::floor(60.0 * cfg.minutes / cfg.files_per_patient);
  const auto n_samples = static_cast<std::size_t>(std::llround(file_s * cfg.fs_hz));
  const int spr = static_cast<int>(std::llround(cfg.fs_hz));
  if (std::abs(cfg.fs_hz - spr) > 1e-9) fail(ErrorCode::InvalidConfig, "sampling rate must be a whole number");

  SynthCorpus corpus;
  for (int p = 0; p < cfg.n_patients; ++p) {
    char pid[16];
    std::snprintf(pid, sizeof pid, "P%02d", p + 1);
    auto g = rnd::substream(cfg.seed, static_cast<std::uint64_t>(p));

    // Channels carrying the ictal signature for this patient.
    std::vector<int> order(cfg.channels);
    for (int c = 0; c < cfg.channels; ++c) order[c] = c;
    rnd::shuffle(order, g);
    const int n_ictal = std::max(1, static_cast<int>(std::lround(cfg.ictal_channel_fraction * cfg.channels)));
    std::vector<bool> ictal_channel(cfg.channels, false);
    for (int i = 0; i < n_ictal; ++i) ictal_channel[order[i]] = true;

    // Seizures of one patient share a signature up to a small jitter.
    const double patient_gain = rnd::uniform(g, cfg.gain_min, cfg.gain_max);
    const double patient_freq = rnd::uniform(g, cfg.rhythm_min_hz, cfg.rhythm_max_hz);
    auto jitter = [&](double v, double lo, double hi) {
      return std::clamp(v * (1.0 + rnd::uniform(g, -cfg.seizure_jitter, cfg.seizure_jitter)), lo, hi);
    };

    // Seizures go round-robin over files, placed in disjoint slots.
    std::vector<Seizure> seizures;
    const int per_file = (cfg.seizures_per_patient + cfg.files_per_patient - 1) / cfg.files_per_patient;
    std::vector<int> used(cfg.files_per_patient, 0);
    for (int s = 0; s < cfg.seizures_per_patient; ++s) {
      Seizure z;
      z.file = s % cfg.files_per_patient;
      const int slot = used[z.file]++;
      const double slot_len = (file_s - 20.0) / per_file;
      const double dur = rnd::uniform(g, cfg.seizure_min_s, cfg.seizure_max_s);
      const double slack = std::max(0.0, slot_len - dur - 20.0);
      z.start_s = std::round(20.0 + slot * slot_len + rnd::uniform(g, 0.0, slack));
      z.end_s = std::round(z.start_s + dur);
      z.gain = jitter(patient_gain, cfg.gain_min, cfg.gain_max);
      z.freq_hz = jitter(patient_freq, cfg.rhythm_min_hz, cfg.rhythm_max_hz);
      for (int c = 0; c < cfg.channels; ++c) z.phase.push_back(rnd::uniform(g, 0.0, 2.0 * kPi));
      seizures.push_back(std::move(z));
    }

    for (int f = 0; f < cfg.files_per_patient; ++f) {
      char fid[32];
      std::snprintf(fid, sizeof fid, "%s_%02d.edf", pid, f + 1);
      auto fg = rnd::substream(cfg.seed, 0x10000 + static_cast<std::uint64_t>(p) * 1000 + f);

      std::vector<std::vector<double>> x(cfg.channels, std::vector<double>(n_samples));
      PinkNoise common(fg);
      std::vector<PinkNoise> own;
      for (int c = 0; c < cfg.channels; ++c) own.emplace_back(fg);
      for (std::size_t t = 0; t < n_samples; ++t) {
        const double shared = common.next();
        for (int c = 0; c < cfg.channels; ++c) x[c][t] = cfg.noise_uv * (0.4 * shared + 0.9165 * own[c].next());
      }

      for (const auto& z : seizures) {
        if (z.file != f) continue;
        corpus.annotations.push_back({fid, z.start_s, z.end_s});
        const auto t0 = static_cast<std::size_t>(z.start_s * cfg.fs_hz);
        const auto t1 = std::min(n_samples, static_cast<std::size_t>(z.end_s * cfg.fs_hz));
        for (std::size_t t = t0; t < t1; ++t) {
          // One-second raised-cosine ramps at both ends.
          const double into = (static_cast<double>(t) - t0) / cfg.fs_hz;
          const double left = (static_cast<double>(t1) - t) / cfg.fs_hz;
          const double ramp = std::min({1.0, into, left});
          const double env = 0.5 - 0.5 * std::cos(kPi * ramp);
          const double tt = static_cast<double>(t) / cfg.fs_hz;
          for (int c = 0; c < cfg.channels; ++c) {
            if (!ictal_channel[c]) continue;
            const double rhythm = cfg.rhythm_amplitude * cfg.noise_uv * std::sin(2 * kPi * z.freq_hz * tt + z.phase[c]);
            x[c][t] = x[c][t] * (1.0 + (z.gain - 1.0) * env) + env * z.gain * rhythm;
          }
        }
      }

      edf::EdfRecording rec;
      rec.header.patient_id = pid;
      rec.header.recording_id = std::string("synthetic ") + fid;
      rec.header.record_duration_s = 1.0;
      for (int c = 0; c < cfg.channels; ++c) {
        double m = 0.0;
        for (double v : x[c]) m = std::max(m, std::abs(v));
        edf::EdfSignalSpec s;
        s.label = labels[c];
        s.transducer = "synthetic";
        s.physical_dim = "uV";
        s.physical_max = std::ceil(m * 1.01 + 1.0);
        s.physical_min = -s.physical_max;
        s.digital_min = -32768;
        s.digital_max = 32767;
        s.samples_per_record = spr;
        rec.specs.push_back(s);
      }
      rec.samples = std::move(x);
      rec.header.n_signals = cfg.channels;
      rec.header.n_records = static_cast<int>(n_samples / static_cast<std::size_t>(spr));
      corpus.files.push_back({pid, fid, std::move(rec)});
    }
  }
  return corpus;
}

void write_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  for (const auto& f : corpus.files) {
    const auto path = dir / f.patient / f.file_id;
    io::write_bytes(path, edf::write_edf(f.recording));
  }
  io::write_text(dir / "annotations.csv", edf::format_annotations(corpus.annotations));
}

}  // namespace ictal::synth
