#include "ictal/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ictal/checkpoint.hpp"
#include "ictal/error.hpp"

namespace ictal::train {

void validate(const TrainConfig& c) {
  if (c.epochs_base < 0 || c.epochs_retrain < 0) fail(ErrorCode::InvalidConfig, "epochs must be >= 0");
  if (c.batch_base < 1 || c.batch_retrain < 1) fail(ErrorCode::InvalidConfig, "batch sizes must be >= 1");
  if (!(c.lr > 0.0)) fail(ErrorCode::InvalidConfig, "lr must be positive");
  if (!(c.seizure_weight >= 1.0 && c.seizure_weight <= 5.0))
    fail(ErrorCode::InvalidConfig, "seizure weight must lie in [1, 5]");
  if (!(c.model.dropout >= 0.0 && c.model.dropout < 1.0)) fail(ErrorCode::InvalidConfig, "dropout must be in [0, 1)");
  if (c.qat_bits) quant::check_bits(*c.qat_bits);
  if (c.calib_fragments == 0) fail(ErrorCode::InvalidConfig, "calib_fragments must be >= 1");
}

std::array<double, 2> class_weights(std::span<const std::uint8_t> labels) {
  std::array<double, 2> n{0, 0};
  for (auto l : labels) n[l ? 1 : 0] += 1;
  if (n[0] == 0 || n[1] == 0) fail(ErrorCode::SingleClass, "class weights need both classes");
  const double total = n[0] + n[1];
  std::array<double, 2> w{total / (2 * n[0]), total / (2 * n[1])};
  const double mean = 0.5 * (w[0] + w[1]);
  return {w[0] / mean, w[1] / mean};
}

double weighted_cross_entropy(std::span<const std::array<double, 2>> logits, std::span<const std::uint8_t> labels,
                              std::array<double, 2> weights, std::vector<std::array<double, 2>>* grad) {
  if (logits.size() != labels.size()) fail(ErrorCode::ShapeMismatch, "one label per logit pair");
  double loss = 0.0, wsum = 0.0;
  if (grad) grad->assign(logits.size(), {0.0, 0.0});
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const int y = labels[i] ? 1 : 0;
    const auto z = logits[i];
    const double mx = std::max(z[0], z[1]);
    const double lse = mx + std::log(std::exp(z[0] - mx) + std::exp(z[1] - mx));
    loss += weights[y] * (lse - z[y]);
    wsum += weights[y];
  }
  if (!(wsum > 0.0)) return 0.0;
  if (grad)
    for (std::size_t i = 0; i < logits.size(); ++i) {
      const int y = labels[i] ? 1 : 0;
      const auto p = nn::softmax(logits[i]);
      for (int c = 0; c < 2; ++c) (*grad)[i][c] = weights[y] * (p[c] - (c == y ? 1.0 : 0.0)) / wsum;
    }
  return loss / wsum;
}

int apply_threshold_moving(std::array<double, 2> p, double w) { return w * p[1] >= p[0] ? 1 : 0; }

WeightChoice select_weight(std::span<const std::pair<double, double>> ws) {
  std::vector<std::pair<double, double>> sorted(ws.begin(), ws.end());
  std::sort(sorted.begin(), sorted.end());
  for (const auto& [w, sens] : sorted)
    if (sens > 0.9) return {w, false};
  return {5.0, true};
}

std::vector<double> predict_proba(const nn::TcResNet4& model, const FragmentSet& set) {
  const auto logits = nn::predict_logits(model, set.data, set.size());
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) p[i] = nn::softmax(logits[i])[1];
  return p;
}

metrics::ConfusionMatrix evaluate(const nn::TcResNet4& model, const FragmentSet& set, double w) {
  const auto p = predict_proba(model, set);
  metrics::ConfusionMatrix cm;
  for (std::size_t i = 0; i < p.size(); ++i) cm.add(set.labels[i], apply_threshold_moving({1.0 - p[i], p[i]}, w));
  return cm;
}

AdamW::AdamW(const TrainConfig& cfg, const nn::TcResNet4& model)
    : lr_(cfg.lr), b1_(cfg.beta1), b2_(cfg.beta2), eps_(cfg.eps), wd_(cfg.weight_decay) {
  for (const auto* p : model.parameters()) {
    m_.emplace_back(p->size(), 0.0);
    v_.emplace_back(p->size(), 0.0);
  }
}

void AdamW::step(nn::TcResNet4& model, const nn::Gradients& g) {
  auto params = model.parameters();
  if (g.tensors.size() != params.size()) fail(ErrorCode::ShapeMismatch, "gradient list does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    const auto& gk = g.tensors[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] *= 1.0 - lr_ * wd_;
      m_[k][i] = b1_ * m_[k][i] + (1.0 - b1_) * gk[i];
      v_[k][i] = b2_ * v_[k][i] + (1.0 - b2_) * gk[i] * gk[i];
      p[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
    }
  }
}

namespace {

// Strided subset of the training data for BN and feature-range estimation.
std::vector<float> calibration_batch(const FragmentSet& set, std::size_t limit, std::size_t& count) {
  const std::size_t stride = std::max<std::size_t>(1, (set.size() + limit - 1) / limit);
  std::vector<float> out;
  count = 0;
  for (std::size_t i = 0; i < set.size(); i += stride) {
    const auto f = set.fragment(i);
    out.insert(out.end(), f.begin(), f.end());
    ++count;
  }
  return out;
}

nn::TcResNet4 fit(nn::TcResNet4 model, const FragmentSet& train, const FragmentSet* val, const TrainConfig& cfg,
                  int epochs, int batch, std::uint64_t stream, TrainReport* report) {
  validate(cfg);
  const auto weights = class_weights(train.labels);
  std::size_t calib_count = 0;
  const auto calib = calibration_batch(train, cfg.calib_fragments, calib_count);
  auto order_rng = rnd::substream(cfg.seed, stream);
  auto drop_rng = rnd::substream(cfg.seed, stream + 1);
  AdamW opt(cfg, model);

  TrainReport rep;
  rep.class_weights = weights;
  rep.seizure_weight = cfg.seizure_weight;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> xb;
  std::vector<std::uint8_t> yb;
  std::vector<std::array<double, 2>> grad;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    nn::calibrate(model, calib, calib_count);
    rnd::shuffle(order, order_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch), order.size() - start);
      xb.resize(n * kFragmentSize);
      yb.resize(n);
      for (std::size_t k = 0; k < n; ++k) {
        const auto f = train.fragment(order[start + k]);
        std::copy(f.begin(), f.end(), xb.begin() + static_cast<std::ptrdiff_t>(k * kFragmentSize));
        yb[k] = train.labels[order[start + k]];
      }
      nn::BatchRunner runner(model);
      const auto logits = runner.forward(xb, n, &drop_rng);
      const double loss = weighted_cross_entropy(logits, yb, weights, &grad);
      if (!std::isfinite(loss))
        fail(ErrorCode::DivergedLoss, "non-finite loss in epoch " + std::to_string(epoch + 1));
      opt.step(model, runner.backward(grad));
      loss_sum += loss * static_cast<double>(n);
      seen += n;
    }
    EpochLog log;
    log.epoch = epoch + 1;
    log.loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    if (val && val->size() > 0) {
      nn::TcResNet4 snapshot = model;
      nn::calibrate(snapshot, calib, calib_count);
      const auto p = predict_proba(snapshot, *val);
      metrics::ConfusionMatrix cm;
      for (std::size_t i = 0; i < p.size(); ++i)
        cm.add(val->labels[i], apply_threshold_moving({1.0 - p[i], p[i]}, cfg.seizure_weight));
      log.val_rates = metrics::rates(cm);
      if (cm.tp + cm.fn > 0 && cm.tn + cm.fp > 0) log.val_auc = metrics::roc_auc(p, val->labels);
    }
    rep.epochs.push_back(log);
  }
  nn::calibrate(model, calib, calib_count);
  ckpt::round_to_float(model);
  rep.train_confusion = evaluate(model, train, cfg.seizure_weight);
  rep.argmax_confusion = evaluate(model, train, 1.0);
  if (report) *report = std::move(rep);
  return model;
}

}  // namespace

nn::TcResNet4 train_base(const FragmentSet& train, const FragmentSet* val, const TrainConfig& cfg,
                         TrainReport* report) {
  if (train.size() == 0) fail(ErrorCode::InvalidConfig, "empty training set");
  auto model = nn::build_tcresnet4(cfg.seed, cfg.model);
  model.quant_bits = cfg.qat_bits;
  return fit(std::move(model), train, val, cfg, cfg.epochs_base, cfg.batch_base, 0x10, report);
}

nn::TcResNet4 retrain_patient(const nn::TcResNet4& base, const FragmentSet& train, const FragmentSet* val,
                              const TrainConfig& cfg, TrainReport* report) {
  if (train.size() == 0) fail(ErrorCode::EmptyRetrainSet, "no retraining fragments for " + train.patient_id);
  if (base.folded) fail(ErrorCode::InvalidConfig, "cannot retrain a folded model");
  nn::TcResNet4 model = base;
  if (cfg.epochs_retrain == 0) {
    if (report) {
      *report = TrainReport{};
      report->class_weights = class_weights(train.labels);
      report->seizure_weight = cfg.seizure_weight;
      report->train_confusion = evaluate(model, train, cfg.seizure_weight);
      report->argmax_confusion = evaluate(model, train, 1.0);
    }
    return model;
  }
  if (model.quant_bits != cfg.qat_bits) {
    model.quant_bits = cfg.qat_bits;
    model.feature_specs = {};
  }
  std::uint64_t h = 0x20;
  for (char c : train.patient_id) h = h * 131 + static_cast<unsigned char>(c);
  return fit(std::move(model), train, val, cfg, cfg.epochs_retrain, cfg.batch_retrain, h << 1, report);
}

namespace {

io::Json opt(const std::optional<double>& v) { return v ? io::Json(*v) : io::Json(nullptr); }
std::optional<double> opt_from(const io::Json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

}  // namespace

io::Json to_json(const TrainReport& r) {
  io::Json epochs = io::Json::array();
  for (const auto& e : r.epochs) {
    io::Json j = {{"epoch", e.epoch}, {"loss", e.loss}};
    if (e.val_rates) {
      j["val"] = {{"accuracy", opt(e.val_rates->accuracy)},
                  {"sensitivity", opt(e.val_rates->sensitivity)},
                  {"specificity", opt(e.val_rates->specificity)},
                  {"fpr", opt(e.val_rates->fpr)},
                  {"auc", opt(e.val_auc)}};
    }
    epochs.push_back(j);
  }
  auto cm_json = [](const metrics::ConfusionMatrix& cm) {
    return io::Json{{"tp", cm.tp}, {"fp", cm.fp}, {"tn", cm.tn}, {"fn", cm.fn}};
  };
  return {{"class_weights", r.class_weights},
          {"seizure_weight", r.seizure_weight},
          {"epochs", epochs},
          {"train_confusion", cm_json(r.train_confusion)},
          {"argmax_confusion", cm_json(r.argmax_confusion)}};
}

TrainReport report_from_json(const io::Json& j) {
  try {
    TrainReport r;
    r.class_weights = j.at("class_weights").get<std::array<double, 2>>();
    r.seizure_weight = j.value("seizure_weight", 2.0);
    for (const auto& e : j.at("epochs")) {
      EpochLog log;
      log.epoch = e.at("epoch").get<int>();
      log.loss = e.at("loss").get<double>();
      if (e.contains("val")) {
        const auto& v = e["val"];
        log.val_rates = metrics::Rates{opt_from(v.at("accuracy")), opt_from(v.at("sensitivity")),
                                       opt_from(v.at("specificity")), opt_from(v.at("fpr"))};
        log.val_auc = opt_from(v.at("auc"));
      }
      r.epochs.push_back(log);
    }
    auto cm_from = [](const io::Json& cm) {
      return metrics::ConfusionMatrix{cm.at("tp").get<std::int64_t>(), cm.at("fp").get<std::int64_t>(),
                                      cm.at("tn").get<std::int64_t>(), cm.at("fn").get<std::int64_t>()};
    };
    r.train_confusion = cm_from(j.at("train_confusion"));
    r.argmax_confusion = cm_from(j.at("argmax_confusion"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedField, std::string("train report: ") + e.what());
  }
}

}  // namespace ictal::train
