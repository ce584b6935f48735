#include "ictal/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "ictal/error.hpp"
#include "ictal/io.hpp"

namespace ictal::prep {

namespace fs = std::filesystem;

std::vector<std::vector<double>> fragment(const std::vector<std::vector<double>>& channels, double fs_hz,
                                          double frag_s) {
  const double len_d = fs_hz * frag_s;
  const auto len = static_cast<std::size_t>(std::llround(len_d));
  if (len == 0 || std::abs(len_d - static_cast<double>(len)) > 1e-9)
    fail(ErrorCode::InvalidConfig, "fragment length must be a whole number of samples");
  if (channels.empty()) return {};
  std::size_t n = channels[0].size();
  for (const auto& c : channels) n = std::min(n, c.size());
  const std::size_t count = n / len;
  std::vector<std::vector<double>> out(count, std::vector<double>(channels.size() * len));
  for (std::size_t k = 0; k < count; ++k)
    for (std::size_t c = 0; c < channels.size(); ++c)
      std::copy_n(channels[c].begin() + static_cast<std::ptrdiff_t>(k * len), len,
                  out[k].begin() + static_cast<std::ptrdiff_t>(c * len));
  return out;
}

std::vector<std::uint8_t> label_fragments(std::size_t n_fragments, std::span<const edf::SeizureAnnotation> seizures,
                                          double frag_s) {
  std::vector<std::uint8_t> labels(n_fragments, 0);
  for (std::size_t k = 0; k < n_fragments; ++k) {
    const double mid = (static_cast<double>(k) + 0.5) * frag_s;
    for (const auto& s : seizures)
      if (mid >= s.start_s && mid < s.end_s) {
        labels[k] = 1;
        break;
      }
  }
  return labels;
}

ChannelSelection select_by_score(std::span<const double> scores, std::span<const std::string> labels,
                                 std::size_t keep) {
  if (scores.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "one score per channel label required");
  if (labels.size() < keep)
    fail(ErrorCode::TooFewChannels,
         std::to_string(labels.size()) + " common channels, " + std::to_string(keep) + " required");
  std::vector<std::size_t> order(labels.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return labels[a] < labels[b];
  });
  ChannelSelection sel;
  for (std::size_t i = 0; i < keep; ++i) {
    sel.kept.push_back(labels[order[i]]);
    sel.scores.push_back(scores[order[i]]);
  }
  return sel;
}

namespace {

// Count, mean and squared-deviation sum, mergeable across files.
struct Moments {
  double n = 0, mean = 0, m2 = 0;

  void add(double x) {
    n += 1;
    const double d = x - mean;
    mean += d / n;
    m2 += d * (x - mean);
  }
  void merge(const Moments& o) {
    if (o.n == 0) return;
    const double total = n + o.n;
    const double d = o.mean - mean;
    mean += d * o.n / total;
    m2 += o.m2 + d * d * n * o.n / total;
    n = total;
  }
  double variance() const { return n > 1 ? m2 / (n - 1) : 0.0; }
};

}  // namespace

ChannelSelection select_channels(std::span<const std::vector<double>> ictal_data,
                                 std::span<const std::string> labels, std::size_t keep) {
  if (ictal_data.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "one data vector per channel label");
  std::vector<double> scores;
  for (const auto& ch : ictal_data) {
    Moments m;
    for (double v : ch) m.add(v);
    scores.push_back(m.variance());
  }
  return select_by_score(scores, labels, keep);
}

double normalize(std::span<FragmentSet* const> sets) {
  float m = 0.0f;
  for (const auto* s : sets)
    for (float v : s->data) m = std::max(m, std::abs(v));
  if (!(m > 0.0f)) fail(ErrorCode::AllZeroData, "all fragments are zero");
  for (auto* s : sets)
    for (auto& v : s->data) v /= m;
  return m;
}

int choose_test_file(std::span<const std::vector<std::uint8_t>> file_labels, std::uint64_t seed, int patient) {
  std::vector<int> candidates;
  for (std::size_t f = 0; f < file_labels.size(); ++f)
    if (std::find(file_labels[f].begin(), file_labels[f].end(), 1) != file_labels[f].end())
      candidates.push_back(static_cast<int>(f));
  if (candidates.empty())
    fail(ErrorCode::NoSeizureFile, "patient " + std::to_string(patient) + " has no file with a seizure");
  auto g = rnd::substream(seed, 0x1000 + static_cast<std::uint64_t>(patient));
  return candidates[rnd::index(g, candidates.size())];
}

namespace {

std::size_t round_count(double x) { return static_cast<std::size_t>(std::llround(x)); }

void split_stratified(std::vector<FragmentRef> pos, std::vector<FragmentRef> neg, double fraction,
                      rnd::Engine& g, std::vector<FragmentRef>& first, std::vector<FragmentRef>& second) {
  rnd::shuffle(pos, g);
  rnd::shuffle(neg, g);
  const std::size_t np = round_count(fraction * static_cast<double>(pos.size()));
  const std::size_t nn = round_count(fraction * static_cast<double>(neg.size()));
  first.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(np));
  first.insert(first.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(nn));
  second.assign(pos.begin() + static_cast<std::ptrdiff_t>(np), pos.end());
  second.insert(second.end(), neg.begin() + static_cast<std::ptrdiff_t>(nn), neg.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
}

}  // namespace

SplitIndex plan_splits(const std::vector<std::vector<std::vector<std::uint8_t>>>& labels, const SplitPlan& plan,
                       std::uint64_t seed) {
  if (!(plan.dev_fraction > 0.0 && plan.dev_fraction < 1.0) ||
      !(plan.train_fraction > 0.0 && plan.train_fraction < 1.0) || plan.neg_pos_ratio < 1)
    fail(ErrorCode::InvalidConfig, "split fractions must lie in (0,1) and the ratio must be >= 1");
  SplitIndex out;
  std::vector<FragmentRef> dev_pos, dev_neg;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    const auto pi = static_cast<std::int32_t>(p);
    PatientSplit ps;
    ps.test_file = choose_test_file(labels[p], seed, pi);
    std::vector<FragmentRef> pos, neg;
    for (std::size_t f = 0; f < labels[p].size(); ++f) {
      if (static_cast<int>(f) == ps.test_file) continue;
      for (std::size_t k = 0; k < labels[p][f].size(); ++k)
        (labels[p][f][k] ? pos : neg).push_back({pi, static_cast<std::int32_t>(f), static_cast<std::int32_t>(k)});
    }
    auto g = rnd::substream(seed, 0x2000 + p);
    rnd::shuffle(neg, g);
    neg.resize(std::min(neg.size(), pos.size() * static_cast<std::size_t>(plan.neg_pos_ratio)));
    rnd::shuffle(pos, g);

    // Dev negatives follow the positives so the ratio stays exact.
    const std::size_t pos_dev = round_count(plan.dev_fraction * static_cast<double>(pos.size()));
    const std::size_t neg_dev =
        pos.empty() ? round_count(plan.dev_fraction * static_cast<double>(neg.size()))
                    : std::min(neg.size(), round_count(static_cast<double>(neg.size()) * static_cast<double>(pos_dev) /
                                                       static_cast<double>(pos.size())));
    dev_pos.insert(dev_pos.end(), pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(pos_dev));
    dev_neg.insert(dev_neg.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(neg_dev));
    std::vector<FragmentRef> ret_pos(pos.begin() + static_cast<std::ptrdiff_t>(pos_dev), pos.end());
    std::vector<FragmentRef> ret_neg(neg.begin() + static_cast<std::ptrdiff_t>(neg_dev), neg.end());
    split_stratified(std::move(ret_pos), std::move(ret_neg), plan.train_fraction, g, ps.retrain_train,
                     ps.retrain_val);
    out.patients.push_back(std::move(ps));
  }
  std::sort(dev_pos.begin(), dev_pos.end());
  std::sort(dev_neg.begin(), dev_neg.end());
  auto g = rnd::substream(seed, 0x3000);
  split_stratified(std::move(dev_pos), std::move(dev_neg), plan.train_fraction, g, out.dev_train, out.dev_val);
  return out;
}

namespace {

FragmentSet gather(const std::vector<PatientPool>& pools, std::span<const FragmentRef> refs, std::string patient,
                   std::string tag) {
  FragmentSet s;
  s.patient_id = std::move(patient);
  s.split_tag = std::move(tag);
  for (const auto& r : refs) {
    const auto& f = pools.at(r.patient).files.at(r.file);
    s.push(f.fragment(r.index), f.labels.at(r.index), r);
  }
  return s;
}

}  // namespace

Splits make_splits(const std::vector<PatientPool>& pools, const SplitPlan& plan, std::uint64_t seed) {
  std::vector<std::vector<std::vector<std::uint8_t>>> labels;
  for (const auto& p : pools) {
    auto& pl = labels.emplace_back();
    for (const auto& f : p.files) pl.push_back(f.labels);
  }
  const SplitIndex idx = plan_splits(labels, plan, seed);
  Splits out;
  out.dev_train = gather(pools, idx.dev_train, "*", "dev-train");
  out.dev_val = gather(pools, idx.dev_val, "*", "dev-val");
  for (std::size_t p = 0; p < pools.size(); ++p) {
    PatientData pd;
    pd.id = pools[p].patient_id;
    pd.test_file = idx.patients[p].test_file;
    pd.retrain_train = gather(pools, idx.patients[p].retrain_train, pd.id, "retrain-train");
    pd.retrain_val = gather(pools, idx.patients[p].retrain_val, pd.id, "retrain-val");
    const auto& tf = pools[p].files.at(pd.test_file);
    pd.test = tf;
    pd.test.patient_id = pd.id;
    pd.test.split_tag = "test";
    for (std::size_t f = 0; f < pools[p].files.size(); ++f)
      pd.files.push_back({std::to_string(f), pools[p].files[f].labels});
    out.patients.push_back(std::move(pd));
  }
  return out;
}

namespace {

// Index of the first signal carrying each label.
std::map<std::string, std::size_t> label_index(const edf::EdfRecording& rec) {
  std::map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < rec.specs.size(); ++i) idx.emplace(rec.specs[i].label, i);
  return idx;
}

std::vector<double> prepare_one(const edf::EdfRecording& rec, std::size_t i, double lo, double hi,
                                dsp::BandpassDesign design) {
  if (rec.samples[i].empty()) return {};
  const auto x = dsp::resample(rec.samples[i], rec.sample_rate_hz(i), kTargetRateHz);
  return dsp::bandpass(x, lo, hi, kTargetRateHz, design);
}

}  // namespace

std::vector<std::vector<double>> prepare_channels(const edf::EdfRecording& rec, std::span<const std::string> labels,
                                                  double lo_hz, double hi_hz, dsp::BandpassDesign design) {
  const auto idx = label_index(rec);
  std::vector<std::vector<double>> out;
  for (const auto& l : labels) {
    const auto it = idx.find(l);
    if (it == idx.end()) fail(ErrorCode::TooFewChannels, "recording lacks channel " + l);
    out.push_back(prepare_one(rec, it->second, lo_hz, hi_hz, design));
  }
  return out;
}

std::vector<float> fragments_f32(const std::vector<std::vector<double>>& prepared, double normalization) {
  const auto frags = fragment(prepared, kTargetRateHz, kFragmentSeconds);
  std::vector<float> out;
  out.reserve(frags.size() * kFragmentSize);
  const auto m = static_cast<float>(normalization);
  for (const auto& f : frags)
    for (double v : f) out.push_back(static_cast<float>(v) / m);
  return out;
}

namespace {

struct SourceFile {
  fs::path path;
  std::string file_id;
};

struct SourcePatient {
  std::string id;
  std::vector<SourceFile> files;
};

std::vector<SourcePatient> discover(const fs::path& root) {
  if (!fs::is_directory(root)) fail(ErrorCode::IoError, "data directory not found: " + root.string());
  std::map<std::string, std::vector<SourceFile>> by_patient;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext != ".edf") continue;
    std::string patient;
    if (fs::equivalent(e.path().parent_path(), root)) {
      const auto stem = e.path().stem().string();
      patient = stem.substr(0, stem.find('_'));
    } else {
      patient = e.path().parent_path().filename().string();
    }
    by_patient[patient].push_back({e.path(), e.path().filename().string()});
  }
  std::vector<SourcePatient> out;
  for (auto& [id, files] : by_patient) {
    std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.file_id < b.file_id; });
    out.push_back({id, std::move(files)});
  }
  return out;
}

std::vector<edf::SeizureAnnotation> seizures_for(const std::vector<edf::SeizureAnnotation>& all,
                                                 const std::string& file_id) {
  const auto stem = fs::path(file_id).stem().string();
  std::vector<edf::SeizureAnnotation> out;
  for (const auto& a : all)
    if (a.file_id == file_id || a.file_id == stem) out.push_back(a);
  return out;
}

std::vector<std::string> pick_calibration(const std::vector<SourcePatient>& patients,
                                          const std::vector<std::string>& requested, std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& p : patients) ids.push_back(p.id);
  if (!requested.empty()) {
    for (const auto& r : requested)
      if (std::find(ids.begin(), ids.end(), r) == ids.end())
        fail(ErrorCode::InvalidConfig, "calibration patient " + r + " not in the corpus");
    auto out = requested;
    std::sort(out.begin(), out.end());
    return out;
  }
  auto g = rnd::substream(seed, 0x4000);
  rnd::shuffle(ids, g);
  ids.resize(std::min<std::size_t>(2, ids.size()));
  std::sort(ids.begin(), ids.end());
  return ids;
}

}  // namespace

Dataset build_dataset(const PreprocessConfig& cfg) {
  const auto patients = discover(cfg.data_dir);
  if (patients.empty()) fail(ErrorCode::IoError, "no EDF files under " + cfg.data_dir.string());
  const auto annotations = edf::parse_annotations(io::read_text(cfg.annotations));

  // Pass 1: file labels and per-file ictal moments of every channel.
  struct FileStats {
    std::vector<std::uint8_t> labels;
    std::map<std::string, Moments> ictal;
    std::set<std::string> channels;
  };
  std::vector<std::vector<FileStats>> stats(patients.size());
  for (std::size_t p = 0; p < patients.size(); ++p)
    for (const auto& src : patients[p].files) {
      const auto rec = edf::read_edf_file(src.path.string());
      FileStats fsx;
      std::vector<std::string> labels;
      std::vector<std::vector<double>> prepared;
      for (const auto& [label, i] : label_index(rec)) {
        labels.push_back(label);
        prepared.push_back(prepare_one(rec, i, cfg.lo_hz, cfg.hi_hz, cfg.design));
        fsx.channels.insert(label);
      }
      std::size_t n = prepared.empty() ? 0 : prepared[0].size();
      for (const auto& c : prepared) n = std::min(n, c.size());
      const std::size_t nfrag = n / kFragmentSamples;
      fsx.labels = label_fragments(nfrag, seizures_for(annotations, src.file_id), kFragmentSeconds);
      for (std::size_t c = 0; c < labels.size(); ++c) {
        Moments m;
        for (std::size_t k = 0; k < nfrag; ++k)
          if (fsx.labels[k])
            for (std::size_t t = 0; t < kFragmentSamples; ++t) m.add(prepared[c][k * kFragmentSamples + t]);
        fsx.ictal[labels[c]] = m;
      }
      stats[p].push_back(std::move(fsx));
    }

  std::vector<std::vector<std::vector<std::uint8_t>>> all_labels(patients.size());
  for (std::size_t p = 0; p < patients.size(); ++p)
    for (const auto& f : stats[p]) all_labels[p].push_back(f.labels);
  const SplitIndex idx = plan_splits(all_labels, cfg.plan, cfg.seed);

  // Channels present in every file; variance over ictal data outside the
  // test files.
  std::set<std::string> common = stats[0][0].channels;
  for (const auto& ps : stats)
    for (const auto& f : ps) {
      std::set<std::string> keep;
      std::set_intersection(common.begin(), common.end(), f.channels.begin(), f.channels.end(),
                            std::inserter(keep, keep.begin()));
      common = std::move(keep);
    }
  std::vector<std::string> common_labels(common.begin(), common.end());
  std::vector<double> scores;
  for (const auto& l : common_labels) {
    Moments m;
    for (std::size_t p = 0; p < patients.size(); ++p)
      for (std::size_t f = 0; f < stats[p].size(); ++f)
        if (static_cast<int>(f) != idx.patients[p].test_file) m.merge(stats[p][f].ictal.at(l));
    scores.push_back(m.variance());
  }
  const auto sel = select_by_score(scores, common_labels, kFragmentChannels);

  Dataset ds;
  ds.seed = cfg.seed;
  ds.channels = sel.kept;
  ds.variance_scores = sel.scores;
  ds.calib_patients = pick_calibration(patients, cfg.calib_patients, cfg.seed);
  ds.dev_train.patient_id = ds.dev_val.patient_id = "*";
  ds.dev_train.split_tag = "dev-train";
  ds.dev_val.split_tag = "dev-val";

  // Destination of every selected fragment: 0 dev-train, 1 dev-val,
  // 2 retrain-train, 3 retrain-val.
  std::map<FragmentRef, int> dest;
  for (const auto& r : idx.dev_train) dest[r] = 0;
  for (const auto& r : idx.dev_val) dest[r] = 1;
  for (const auto& ps : idx.patients) {
    for (const auto& r : ps.retrain_train) dest[r] = 2;
    for (const auto& r : ps.retrain_val) dest[r] = 3;
  }

  // Pass 2: fragments of the kept channels.
  std::vector<FragmentSet> dev_parts(2);
  for (std::size_t p = 0; p < patients.size(); ++p) {
    PatientData pd;
    pd.id = patients[p].id;
    pd.test_file = idx.patients[p].test_file;
    pd.retrain_train.patient_id = pd.retrain_val.patient_id = pd.test.patient_id = pd.id;
    pd.retrain_train.split_tag = "retrain-train";
    pd.retrain_val.split_tag = "retrain-val";
    pd.test.split_tag = "test";
    for (std::size_t f = 0; f < patients[p].files.size(); ++f) {
      const auto& src = patients[p].files[f];
      pd.files.push_back({src.file_id, stats[p][f].labels});
      const auto rec = edf::read_edf_file(src.path.string());
      const auto data = fragments_f32(prepare_channels(rec, ds.channels, cfg.lo_hz, cfg.hi_hz, cfg.design), 1.0);
      const auto& labels = stats[p][f].labels;
      for (std::size_t k = 0; k < labels.size(); ++k) {
        const FragmentRef ref{static_cast<std::int32_t>(p), static_cast<std::int32_t>(f),
                              static_cast<std::int32_t>(k)};
        const std::span<const float> frag(data.data() + k * kFragmentSize, kFragmentSize);
        if (static_cast<int>(f) == pd.test_file) {
          pd.test.push(frag, labels[k], ref);
          continue;
        }
        const auto it = dest.find(ref);
        if (it == dest.end()) continue;
        switch (it->second) {
          case 0: ds.dev_train.push(frag, labels[k], ref); break;
          case 1: ds.dev_val.push(frag, labels[k], ref); break;
          case 2: pd.retrain_train.push(frag, labels[k], ref); break;
          default: pd.retrain_val.push(frag, labels[k], ref); break;
        }
      }
      if (static_cast<int>(f) == pd.test_file) {
        const double dur = static_cast<double>(labels.size()) * kFragmentSeconds;
        for (auto a : seizures_for(annotations, src.file_id)) {
          a.file_id = src.file_id;
          a.end_s = std::min(a.end_s, dur);
          if (a.start_s < a.end_s) pd.test_seizures.push_back(a);
        }
      }
    }
    ds.patients.push_back(std::move(pd));
  }

  std::vector<FragmentSet*> sets{&ds.dev_train, &ds.dev_val};
  for (auto& pd : ds.patients) {
    sets.push_back(&pd.retrain_train);
    sets.push_back(&pd.retrain_val);
    sets.push_back(&pd.test);
  }
  ds.normalization = normalize(sets);
  return ds;
}

}  // namespace ictal::prep
