#include "ictal/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <future>
#include <set>
#include <utility>

#include "ictal/error.hpp"

namespace ictal::pipeline {

namespace {

// One JSON object whose keys are consumed as they are read.
class Section {
 public:
  Section(const io::Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorCode::InvalidConfig, where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorCode::InvalidConfig, "bad value for " + where(key));
    }
  }

  void get(const char* key, std::optional<int>& out) {
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      seen_.insert(key);
      out.reset();
      return;
    }
    int v = 0;
    get(key, v);
    out = v;
  }

  const io::Json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string where(const std::string& key = "") const {
    if (key.empty()) return path_.empty() ? "config" : path_;
    return path_.empty() ? key : path_ + "." + key;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) fail(ErrorCode::InvalidConfig, "unknown key " + where(k));
  }

 private:
  const io::Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

bool both_classes(std::span<const std::uint8_t> y) {
  bool pos = false, neg = false;
  for (auto v : y) (v ? pos : neg) = true;
  return pos && neg;
}

std::optional<double> auc_or_none(std::span<const double> scores, std::span<const std::uint8_t> y) {
  if (!both_classes(y)) return std::nullopt;
  return metrics::roc_auc(scores, y);
}

struct MethodRun {
  std::vector<double> scores;
  std::vector<std::uint8_t> decisions;
  post::DelayResult delay;
};

metrics::MethodResult summarize(const std::string& name, const MethodRun& run, std::span<const std::uint8_t> truth) {
  metrics::MethodResult r;
  r.method = name;
  r.cm = metrics::confusion(truth, run.decisions);
  r.rates = metrics::rates(r.cm);
  r.auc = auc_or_none(run.scores, truth);
  r.seizures = static_cast<int>(run.delay.per_seizure.size());
  r.detected = run.delay.detected;
  r.mean_delay_s = run.delay.mean;
  return r;
}

}  // namespace

PipelineConfig config_from_json(const io::Json& j) {
  PipelineConfig c;
  Section root(j, "");
  root.get("seed", c.seed);

  if (const auto* s = root.child("synth")) {
    Section sec(*s, "synth");
    auto& y = c.synth;
    sec.get("n_patients", y.n_patients);
    sec.get("channels", y.channels);
    sec.get("fs_hz", y.fs_hz);
    sec.get("minutes", y.minutes);
    sec.get("files_per_patient", y.files_per_patient);
    sec.get("seizures_per_patient", y.seizures_per_patient);
    sec.get("seizure_min_s", y.seizure_min_s);
    sec.get("seizure_max_s", y.seizure_max_s);
    sec.get("gain_min", y.gain_min);
    sec.get("gain_max", y.gain_max);
    sec.get("rhythm_min_hz", y.rhythm_min_hz);
    sec.get("rhythm_max_hz", y.rhythm_max_hz);
    sec.get("rhythm_amplitude", y.rhythm_amplitude);
    sec.get("ictal_channel_fraction", y.ictal_channel_fraction);
    sec.get("seizure_jitter", y.seizure_jitter);
    sec.get("noise_uv", y.noise_uv);
    sec.finish();
  }
  if (const auto* s = root.child("preprocess")) {
    Section sec(*s, "preprocess");
    sec.get("dev_fraction", c.split.dev_fraction);
    sec.get("train_fraction", c.split.train_fraction);
    sec.get("neg_pos_ratio", c.split.neg_pos_ratio);
    sec.get("lo_hz", c.lo_hz);
    sec.get("hi_hz", c.hi_hz);
    sec.get("highpass_order", c.band.highpass_order);
    sec.get("lowpass_order", c.band.lowpass_order);
    sec.get("calib_patients", c.calib_patients);
    sec.finish();
  }
  if (const auto* s = root.child("train")) {
    Section sec(*s, "train");
    auto& t = c.train;
    sec.get("epochs_base", t.epochs_base);
    sec.get("batch_base", t.batch_base);
    sec.get("epochs_retrain", t.epochs_retrain);
    sec.get("batch_retrain", t.batch_retrain);
    sec.get("lr", t.lr);
    sec.get("beta1", t.beta1);
    sec.get("beta2", t.beta2);
    sec.get("eps", t.eps);
    sec.get("weight_decay", t.weight_decay);
    sec.get("seizure_weight", t.seizure_weight);
    sec.get("auto_weight", c.auto_weight);
    sec.get("qat_bits", t.qat_bits);
    sec.get("calib_fragments", t.calib_fragments);
    sec.get("strict_63", t.model.strict_63);
    sec.get("affine_batchnorm", t.model.affine_batchnorm);
    sec.get("dropout", t.model.dropout);
    sec.finish();
  }
  if (const auto* s = root.child("postproc")) {
    Section sec(*s, "postproc");
    sec.get("window", c.post.window);
    sec.get("hmm_window", c.post.hmm_window);
    sec.get("hmm_thresholded", c.post.hmm_thresholded);
    sec.finish();
  }
  if (const auto* s = root.child("cost")) {
    Section sec(*s, "cost");
    sec.get("array_n", c.op.array_n);
    sec.get("clock_hz", c.op.clock_hz);
    sec.get("rate_hz", c.op.rate_hz);
    sec.get("energy_per_mac_j", c.op.energy_per_mac_j);
    sec.get("idle_power_w", c.op.idle_power_w);
    sec.finish();
  }
  root.finish();

  c.synth.seed = c.seed;
  c.train.seed = c.seed;
  c.synth.validate();
  train::validate(c.train);
  c.op.validate();
  if (c.post.window < 1 || c.post.hmm_window < 1 || c.post.hmm_window > 16)
    fail(ErrorCode::InvalidConfig, "postproc windows must be in 1..16");
  if (c.band.highpass_order < 1 || c.band.lowpass_order < 1)
    fail(ErrorCode::InvalidConfig, "filter orders must be positive");
  return c;
}

io::Json to_json(const PipelineConfig& c) {
  const auto& y = c.synth;
  const auto& t = c.train;
  return {{"seed", c.seed},
          {"synth",
           {{"n_patients", y.n_patients},
            {"channels", y.channels},
            {"fs_hz", y.fs_hz},
            {"minutes", y.minutes},
            {"files_per_patient", y.files_per_patient},
            {"seizures_per_patient", y.seizures_per_patient},
            {"seizure_min_s", y.seizure_min_s},
            {"seizure_max_s", y.seizure_max_s},
            {"gain_min", y.gain_min},
            {"gain_max", y.gain_max},
            {"rhythm_min_hz", y.rhythm_min_hz},
            {"rhythm_max_hz", y.rhythm_max_hz},
            {"rhythm_amplitude", y.rhythm_amplitude},
            {"ictal_channel_fraction", y.ictal_channel_fraction},
            {"seizure_jitter", y.seizure_jitter},
            {"noise_uv", y.noise_uv}}},
          {"preprocess",
           {{"dev_fraction", c.split.dev_fraction},
            {"train_fraction", c.split.train_fraction},
            {"neg_pos_ratio", c.split.neg_pos_ratio},
            {"lo_hz", c.lo_hz},
            {"hi_hz", c.hi_hz},
            {"highpass_order", c.band.highpass_order},
            {"lowpass_order", c.band.lowpass_order},
            {"calib_patients", c.calib_patients}}},
          {"train",
           {{"epochs_base", t.epochs_base},
            {"batch_base", t.batch_base},
            {"epochs_retrain", t.epochs_retrain},
            {"batch_retrain", t.batch_retrain},
            {"lr", t.lr},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"eps", t.eps},
            {"weight_decay", t.weight_decay},
            {"seizure_weight", t.seizure_weight},
            {"auto_weight", c.auto_weight},
            {"qat_bits", t.qat_bits ? io::Json(*t.qat_bits) : io::Json(nullptr)},
            {"calib_fragments", t.calib_fragments},
            {"strict_63", t.model.strict_63},
            {"affine_batchnorm", t.model.affine_batchnorm},
            {"dropout", t.model.dropout}}},
          {"postproc",
           {{"window", c.post.window}, {"hmm_window", c.post.hmm_window}, {"hmm_thresholded", c.post.hmm_thresholded}}},
          {"cost",
           {{"array_n", c.op.array_n},
            {"clock_hz", c.op.clock_hz},
            {"rate_hz", c.op.rate_hz},
            {"energy_per_mac_j", c.op.energy_per_mac_j},
            {"idle_power_w", c.op.idle_power_w}}}};
}

PipelineConfig load_config(const std::filesystem::path& path) { return config_from_json(io::read_json(path)); }

prep::PreprocessConfig preprocess_config(const PipelineConfig& c, const std::filesystem::path& data_dir,
                                         const std::filesystem::path& annotations) {
  prep::PreprocessConfig p;
  p.data_dir = data_dir;
  p.annotations = annotations;
  p.seed = c.seed;
  p.plan = c.split;
  p.lo_hz = c.lo_hz;
  p.hi_hz = c.hi_hz;
  p.design = c.band;
  p.calib_patients = c.calib_patients;
  return p;
}

const PatientModel& TrainedSystem::patient(const std::string& id) const {
  for (const auto& p : patients)
    if (p.patient == id) return p;
  fail(ErrorCode::InvalidConfig, "no model for patient " + id);
}

nn::TcResNet4 train_base_stage(const Dataset& ds, PipelineConfig& cfg, train::TrainReport* report,
                               bool* weight_fallback) {
  train::TrainReport rep;
  const FragmentSet* val = ds.dev_val.size() ? &ds.dev_val : nullptr;
  auto model = train::train_base(ds.dev_train, val, cfg.train, &rep);
  bool fallback = false;
  if (cfg.auto_weight) {
    const auto p = train::predict_proba(model, ds.dev_train);
    std::vector<std::pair<double, double>> candidates;
    for (int w = 1; w <= 5; ++w) {
      metrics::ConfusionMatrix cm;
      for (std::size_t i = 0; i < p.size(); ++i)
        cm.add(ds.dev_train.labels[i], train::apply_threshold_moving({1.0 - p[i], p[i]}, w));
      candidates.emplace_back(w, metrics::rates(cm).sensitivity.value_or(0.0));
    }
    const auto choice = train::select_weight(candidates);
    fallback = choice.fallback;
    cfg.train.seizure_weight = choice.w;
    rep.seizure_weight = choice.w;
    rep.train_confusion = train::evaluate(model, ds.dev_train, choice.w);
    rep.argmax_confusion = train::evaluate(model, ds.dev_train, 1.0);
  }
  if (report) *report = std::move(rep);
  if (weight_fallback) *weight_fallback = fallback;
  return model;
}

PatientModel retrain_stage(const Dataset& ds, const nn::TcResNet4& base, const std::string& patient,
                           const PipelineConfig& cfg) {
  const auto& pd = ds.patient(patient);
  PatientModel out;
  out.patient = patient;
  const FragmentSet* val = pd.retrain_val.size() ? &pd.retrain_val : nullptr;
  out.model = train::retrain_patient(base, pd.retrain_train, val, cfg.train, &out.report);
  return out;
}

TrainedSystem train_all(const Dataset& ds, PipelineConfig cfg) {
  TrainedSystem sys;
  sys.base = train_base_stage(ds, cfg, &sys.base_report, &sys.weight_fallback);
  sys.seizure_weight = cfg.train.seizure_weight;
  // Patients are independent; results are collected in dataset order.
  std::vector<std::future<PatientModel>> jobs;
  for (const auto& pd : ds.patients)
    jobs.push_back(std::async(std::launch::async, [&ds, &sys, &cfg, id = pd.id] {
      return retrain_stage(ds, sys.base, id, cfg);
    }));
  for (auto& j : jobs) sys.patients.push_back(j.get());
  return sys;
}

post::Matrix2 pooled_transitions(const Dataset& ds) {
  std::vector<std::vector<std::uint8_t>> seqs;
  for (const auto& pd : ds.patients)
    for (std::size_t f = 0; f < pd.files.size(); ++f)
      if (static_cast<int>(f) != pd.test_file) seqs.push_back(pd.files[f].labels);
  return post::estimate_transitions(seqs);
}

post::HmmParams patient_hmm(const Dataset& ds, const train::TrainReport& report, bool thresholded) {
  auto cm = thresholded ? report.train_confusion : report.argmax_confusion;
  cm.tp += 1;
  cm.fp += 1;
  cm.tn += 1;
  cm.fn += 1;
  return post::make_hmm(pooled_transitions(ds), post::emissions_from_confusion(cm));
}

std::vector<double> probabilities(const nn::TcResNet4& model, const FragmentSet& set, bool integer) {
  if (!integer) return train::predict_proba(model, set);
  if (!model.quant_bits || !model.features_calibrated())
    fail(ErrorCode::InvalidConfig, "integer inference needs a quantization-aware model");
  const auto qm = nn::quantize_model(model);
  std::vector<double> p(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto r = nn::forward_quantized(qm, nn::quantize_input(qm, set.fragment(i)));
    p[i] = nn::softmax(r.dequantized())[1];
  }
  return p;
}

std::vector<std::uint8_t> observations(std::span<const double> probs, double seizure_weight, bool thresholded) {
  std::vector<std::uint8_t> obs(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const std::array<double, 2> pr{1.0 - probs[i], probs[i]};
    obs[i] = static_cast<std::uint8_t>(train::apply_threshold_moving(pr, thresholded ? seizure_weight : 1.0));
  }
  return obs;
}

post::SmoothingConfig calibrate(const Dataset& ds, const TrainedSystem& sys, const PipelineConfig& cfg) {
  std::vector<post::LabeledSequence> seqs;
  for (const auto& id : ds.calib_patients) {
    const auto& pd = ds.patient(id);
    seqs.push_back({probabilities(sys.patient(id).model, pd.test), pd.test.labels});
  }
  auto s = post::calibrate_thresholds(seqs, cfg.post.window);
  s.hmm_window = cfg.post.hmm_window;
  return s;
}

metrics::EvalReport evaluate(const Dataset& ds, const TrainedSystem& sys, const post::SmoothingConfig& smoothing,
                             const PipelineConfig& cfg, EvalOptions opt) {
  const std::vector<std::string> names{"sma", "ewma", "hmm"};
  std::vector<const PatientData*> eval_patients;
  for (const auto& pd : ds.patients)
    if (!ds.is_calibration(pd.id)) eval_patients.push_back(&pd);

  std::vector<std::future<std::array<MethodRun, 3>>> jobs;
  for (const auto* pd : eval_patients)
    jobs.push_back(std::async(std::launch::async, [&, pd] {
      const auto& pm = sys.patient(pd->id);
      const auto p = probabilities(pm.model, pd->test, opt.integer);
      std::array<MethodRun, 3> runs;
      runs[0].scores = post::sma_scores(p, smoothing.window);
      runs[0].decisions = post::sma(p, smoothing.window, smoothing.sma_threshold);
      runs[1].scores = post::ewma_scores(p, smoothing.ewma_alpha);
      runs[1].decisions = post::ewma(p, smoothing.ewma_alpha, smoothing.ewma_threshold);
      const auto hmm = patient_hmm(ds, pm.report, cfg.post.hmm_thresholded);
      const auto obs = observations(p, pm.report.seizure_weight, cfg.post.hmm_thresholded);
      runs[2].scores = p;
      runs[2].decisions = opt.use_lut ? post::hmm_decode(obs, post::compile_lut(hmm, smoothing.hmm_window))
                                      : post::hmm_decode(obs, hmm, smoothing.hmm_window);
      const double hmm_lag = (smoothing.hmm_window - 1) * prep::kFragmentSeconds;
      for (int m = 0; m < 3; ++m)
        runs[m].delay = post::detection_delay(runs[m].decisions, pd->test_seizures, prep::kFragmentSeconds,
                                              m == 2 ? hmm_lag : 0.0);
      return runs;
    }));

  metrics::EvalReport report;
  std::array<MethodRun, 3> pooled;
  std::vector<std::uint8_t> truth;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const auto runs = jobs[k].get();
    const auto& labels = eval_patients[k]->test.labels;
    metrics::PatientResult pr;
    pr.patient = eval_patients[k]->id;
    for (int m = 0; m < 3; ++m) {
      pr.methods.push_back(summarize(names[m], runs[m], labels));
      auto& dst = pooled[m];
      dst.scores.insert(dst.scores.end(), runs[m].scores.begin(), runs[m].scores.end());
      dst.decisions.insert(dst.decisions.end(), runs[m].decisions.begin(), runs[m].decisions.end());
      dst.delay.per_seizure.insert(dst.delay.per_seizure.end(), runs[m].delay.per_seizure.begin(),
                                   runs[m].delay.per_seizure.end());
      dst.delay.detected += runs[m].delay.detected;
    }
    truth.insert(truth.end(), labels.begin(), labels.end());
    report.patients.push_back(std::move(pr));
  }
  for (int m = 0; m < 3; ++m) {
    auto& d = pooled[m].delay;
    double sum = 0.0;
    for (const auto& v : d.per_seizure)
      if (v) sum += *v;
    if (d.detected > 0) d.mean = sum / d.detected;
    report.pooled.push_back(summarize(names[m], pooled[m], truth));
  }
  report.mean = metrics::average(report.patients);
  return report;
}

std::string format_metrics(const std::vector<metrics::MethodResult>& methods) {
  auto cell = [](const std::optional<double>& v, double scale) {
    char buf[32];
    if (v)
      std::snprintf(buf, sizeof buf, "%14.4f", *v * scale);
    else
      std::snprintf(buf, sizeof buf, "%14s", "-");
    return std::string(buf);
  };
  char head[160];
  std::snprintf(head, sizeof head, "%-8s%14s%14s%14s%14s%14s%14s%14s\n", "method", "accuracy%", "sensitivity%",
                "specificity%", "fpr", "auc", "detected", "delay_s");
  std::string out = head;
  for (const auto& m : methods) {
    char name[16], det[32];
    std::snprintf(name, sizeof name, "%-8s", m.method.c_str());
    std::snprintf(det, sizeof det, "%14s", (std::to_string(m.detected) + "/" + std::to_string(m.seizures)).c_str());
    out += name + cell(m.rates.accuracy, 100.0) + cell(m.rates.sensitivity, 100.0) +
           cell(m.rates.specificity, 100.0) + cell(m.rates.fpr, 1.0) + cell(m.auc, 1.0) + det +
           cell(m.mean_delay_s, 1.0) + "\n";
  }
  return out;
}

SweepPoint summarize(const Dataset& ds, const TrainedSystem& sys, const metrics::EvalReport& report, int bits) {
  SweepPoint pt;
  pt.bits = bits;
  double base_sum = 0.0;
  int n = 0;
  for (const auto& pd : ds.patients) {
    if (ds.is_calibration(pd.id)) continue;
    if (const auto a = auc_or_none(probabilities(sys.base, pd.test), pd.test.labels)) {
      base_sum += *a;
      ++n;
    }
  }
  pt.base_auc = n ? base_sum / n : 0.0;
  for (const auto& m : report.mean) {
    const double a = m.auc.value_or(0.0);
    if (m.method == "sma") pt.sma_auc = a;
    if (m.method == "ewma") pt.ewma_auc = a;
    if (m.method == "hmm") pt.patient_auc = a;
  }
  return pt;
}

std::vector<SweepPoint> bit_sweep(const Dataset& ds, const PipelineConfig& cfg, std::span<const int> bits) {
  std::vector<SweepPoint> out;
  for (int b : bits) {
    PipelineConfig c = cfg;
    c.train.qat_bits = b;
    const auto sys = train_all(ds, c);
    const auto smoothing = calibrate(ds, sys, c);
    out.push_back(summarize(ds, sys, evaluate(ds, sys, smoothing, c), b));
  }
  return out;
}

}  // namespace ictal::pipeline
