#include "ictal/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>

#include "ictal/error.hpp"

namespace ictal::metrics {

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth) {
    (predicted ? tp : fn) += 1;
  } else {
    (predicted ? fp : tn) += 1;
  }
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

ConfusionMatrix confusion(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> predicted) {
  if (truth.size() != predicted.size()) fail(ErrorCode::ShapeMismatch, "truth and prediction lengths differ");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

Rates rates(const ConfusionMatrix& cm) {
  auto ratio = [](std::int64_t num, std::int64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  Rates r;
  r.accuracy = ratio(cm.tp + cm.tn, cm.total());
  r.sensitivity = ratio(cm.tp, cm.tp + cm.fn);
  r.specificity = ratio(cm.tn, cm.tn + cm.fp);
  r.fpr = ratio(cm.fp, cm.tn + cm.fp);
  return r;
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "scores and labels lengths differ");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::int64_t pos = 0, neg = 0;
  for (auto l : labels) (l ? pos : neg) += 1;
  if (pos == 0 || neg == 0) fail(ErrorCode::SingleClass, "AUC needs both classes");

  // Walk thresholds from high to low; each group of tied scores adds one
  // trapezoid. Area is accumulated in integer units of 1/2.
  std::int64_t tp = 0, fp = 0, twice_area = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::int64_t dtp = 0, dfp = 0;
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? dtp : dfp) += 1;
      ++j;
    }
    twice_area += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    i = j;
  }
  return static_cast<double>(twice_area) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<MethodResult> average(const std::vector<PatientResult>& patients) {
  struct Acc {
    double sum = 0;
    int n = 0;
    void add(const std::optional<double>& v) {
      if (v) {
        sum += *v;
        ++n;
      }
    }
    std::optional<double> mean() const { return n ? std::optional(sum / n) : std::nullopt; }
  };
  struct PerMethod {
    MethodResult total;
    Acc acc, sens, spec, fpr, auc, delay;
  };
  std::vector<std::string> order;
  std::map<std::string, PerMethod> by;
  for (const auto& p : patients)
    for (const auto& m : p.methods) {
      if (!by.contains(m.method)) order.push_back(m.method);
      auto& b = by[m.method];
      b.total.method = m.method;
      b.total.cm += m.cm;
      b.total.seizures += m.seizures;
      b.total.detected += m.detected;
      b.acc.add(m.rates.accuracy);
      b.sens.add(m.rates.sensitivity);
      b.spec.add(m.rates.specificity);
      b.fpr.add(m.rates.fpr);
      b.auc.add(m.auc);
      b.delay.add(m.mean_delay_s);
    }
  std::vector<MethodResult> out;
  for (const auto& name : order) {
    auto& b = by[name];
    MethodResult r = b.total;
    r.rates = {b.acc.mean(), b.sens.mean(), b.spec.mean(), b.fpr.mean()};
    r.auc = b.auc.mean();
    r.mean_delay_s = b.delay.mean();
    out.push_back(r);
  }
  return out;
}

namespace {

io::Json opt(const std::optional<double>& v) { return v ? io::Json(*v) : io::Json(nullptr); }

std::string fmt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

io::Json to_json(const MethodResult& r) {
  return {{"method", r.method},
          {"accuracy", opt(r.rates.accuracy)},
          {"sensitivity", opt(r.rates.sensitivity)},
          {"specificity", opt(r.rates.specificity)},
          {"fpr", opt(r.rates.fpr)},
          {"auc", opt(r.auc)},
          {"confusion", {{"tp", r.cm.tp}, {"fp", r.cm.fp}, {"tn", r.cm.tn}, {"fn", r.cm.fn}}},
          {"seizures", r.seizures},
          {"detected", r.detected},
          {"mean_delay_s", opt(r.mean_delay_s)}};
}

io::Json to_json(const EvalReport& r) {
  auto block = [](const std::vector<MethodResult>& ms) {
    io::Json j = io::Json::object();
    for (const auto& m : ms) j[m.method] = to_json(m);
    return j;
  };
  io::Json patients = io::Json::array();
  for (const auto& p : r.patients) patients.push_back({{"patient", p.patient}, {"methods", block(p.methods)}});
  return {{"mean", block(r.mean)}, {"pooled", block(r.pooled)}, {"patients", patients}};
}

std::string to_csv(const EvalReport& r) {
  std::string out =
      "patient,method,accuracy,sensitivity,specificity,fpr,auc,tp,fp,tn,fn,seizures,detected,mean_delay_s\n";
  for (const auto& p : r.patients)
    for (const auto& m : p.methods) {
      out += p.patient + "," + m.method + "," + fmt(m.rates.accuracy) + "," + fmt(m.rates.sensitivity) + "," +
             fmt(m.rates.specificity) + "," + fmt(m.rates.fpr) + "," + fmt(m.auc) + "," + std::to_string(m.cm.tp) +
             "," + std::to_string(m.cm.fp) + "," + std::to_string(m.cm.tn) + "," + std::to_string(m.cm.fn) + "," +
             std::to_string(m.seizures) + "," + std::to_string(m.detected) + "," + fmt(m.mean_delay_s) + "\n";
    }
  return out;
}

}  // namespace ictal::metrics
