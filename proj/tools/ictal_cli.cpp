// ictal: command-line front end for the seizure-detection pipeline.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "ictal/checkpoint.hpp"
#include "ictal/costmodel.hpp"
#include "ictal/edf.hpp"
#include "ictal/error.hpp"
#include "ictal/io.hpp"
#include "ictal/pipeline.hpp"
#include "ictal/postproc.hpp"
#include "ictal/preprocess.hpp"
#include "ictal/synth.hpp"
#include "ictal/train.hpp"

namespace fs = std::filesystem;
using namespace ictal;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config, "pipeline configuration JSON");
    sub->add_option("--seed", seed, "random seed (overrides the config)");
  }

  pipeline::PipelineConfig load() const {
    auto c = config.empty() ? pipeline::config_from_json(io::Json::object()) : pipeline::load_config(config);
    if (seed) {
      c.seed = *seed;
      c.synth.seed = *seed;
      c.train.seed = *seed;
    }
    return c;
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

void emit(const io::Json& j, const std::string& out) {
  if (out.empty())
    std::cout << j.dump(2) << "\n";
  else
    io::write_json(out, j);
}

fs::path report_path(const fs::path& ckpt) { return ckpt / "train_report.json"; }

// Patient models live in MODELS/<patient>/, each with its train report.
pipeline::TrainedSystem load_system(const Dataset& ds, const fs::path& models, bool calib_only) {
  pipeline::TrainedSystem sys;
  for (const auto& pd : ds.patients) {
    if (calib_only && !ds.is_calibration(pd.id)) continue;
    const auto dir = models / pd.id;
    if (!fs::exists(dir)) {
      if (calib_only || ds.is_calibration(pd.id)) continue;
      fail(ErrorCode::IoError, "missing patient model " + dir.string());
    }
    pipeline::PatientModel pm;
    pm.patient = pd.id;
    pm.model = ckpt::load_model(dir);
    pm.report = train::report_from_json(io::read_json(report_path(dir)));
    sys.patients.push_back(std::move(pm));
  }
  return sys;
}

int cmd_synth(const Common& common, const std::string& out, std::optional<int> patients,
              std::optional<double> minutes) {
  auto cfg = common.load();
  if (patients) cfg.synth.n_patients = *patients;
  if (minutes) cfg.synth.minutes = *minutes;
  cfg.synth.validate();
  const auto corpus = synth::generate(cfg.synth);
  synth::write_corpus(corpus, out);
  std::printf("wrote %zu files, %zu seizures to %s\n", corpus.files.size(), corpus.annotations.size(), out.c_str());
  return 0;
}

int cmd_ingest(const std::string& edf_path, const std::string& annotations, const std::string& out) {
  const auto rec = edf::read_edf_file(edf_path);
  io::Json signals = io::Json::array();
  for (std::size_t i = 0; i < rec.specs.size(); ++i) {
    const auto& s = rec.specs[i];
    signals.push_back({{"label", s.label},
                       {"physical_dim", s.physical_dim},
                       {"physical_min", s.physical_min},
                       {"physical_max", s.physical_max},
                       {"digital_min", s.digital_min},
                       {"digital_max", s.digital_max},
                       {"sample_rate_hz", rec.sample_rate_hz(i)},
                       {"samples", rec.samples[i].size()}});
  }
  io::Json j = {{"file", fs::path(edf_path).filename().string()},
                {"patient_id", rec.header.patient_id},
                {"recording_id", rec.header.recording_id},
                {"start", rec.header.start_date + " " + rec.header.start_time},
                {"records", rec.header.n_records},
                {"record_duration_s", rec.header.record_duration_s},
                {"duration_s", rec.duration_s()},
                {"signals", signals},
                {"warnings", rec.warnings}};
  if (!annotations.empty()) {
    const auto name = fs::path(edf_path).filename().string();
    const auto stem = fs::path(edf_path).stem().string();
    io::Json seizures = io::Json::array();
    for (const auto& a : edf::parse_annotations(io::read_text(annotations)))
      if (a.file_id == name || a.file_id == stem) seizures.push_back({{"start_s", a.start_s}, {"end_s", a.end_s}});
    j["seizures"] = seizures;
  }
  emit(j, out);
  return 0;
}

int cmd_preprocess(const Common& common, const std::string& data_dir, const std::string& annotations,
                   const std::string& out, const std::string& calib) {
  auto cfg = common.load();
  if (!calib.empty()) cfg.calib_patients = split_list(calib);
  const auto ds = prep::build_dataset(pipeline::preprocess_config(cfg, data_dir, annotations));
  save_dataset(ds, out);
  std::printf("patients %zu, dev train %zu (%zu ictal), dev val %zu, channels %zu, M %.6g\n", ds.patients.size(),
              ds.dev_train.size(), ds.dev_train.positives(), ds.dev_val.size(), ds.channels.size(),
              ds.normalization);
  return 0;
}

void apply_overrides(pipeline::PipelineConfig& cfg, std::optional<int> bits, std::optional<int> epochs, bool base) {
  if (bits) cfg.train.qat_bits = *bits == 0 ? std::nullopt : std::optional<int>(*bits);
  if (epochs) (base ? cfg.train.epochs_base : cfg.train.epochs_retrain) = *epochs;
  train::validate(cfg.train);
}

int cmd_train_base(const Common& common, const std::string& dev, const std::string& out, std::optional<int> bits,
                   std::optional<int> epochs) {
  auto cfg = common.load();
  apply_overrides(cfg, bits, epochs, true);
  const auto ds = load_dataset(dev);
  train::TrainReport rep;
  bool fallback = false;
  const auto model = pipeline::train_base_stage(ds, cfg, &rep, &fallback);
  ckpt::save_model(model, out);
  auto j = train::to_json(rep);
  j["weight_fallback"] = fallback;
  io::write_json(report_path(out), j);
  std::printf("base model: %zu epochs, w=%g, train sensitivity %.4f\n", rep.epochs.size(), rep.seizure_weight,
              metrics::rates(rep.train_confusion).sensitivity.value_or(0.0));
  return 0;
}

int cmd_retrain(const Common& common, const std::string& base, const std::string& patient, const std::string& data,
                const std::string& out, std::optional<int> bits, std::optional<int> epochs) {
  auto cfg = common.load();
  apply_overrides(cfg, bits, epochs, false);
  const auto ds = load_dataset(data);
  const auto base_model = ckpt::load_model(base);
  if (fs::exists(report_path(base)))
    cfg.train.seizure_weight = train::report_from_json(io::read_json(report_path(base))).seizure_weight;
  if (!bits) cfg.train.qat_bits = base_model.quant_bits;
  const auto pm = pipeline::retrain_stage(ds, base_model, patient, cfg);
  ckpt::save_model(pm.model, out);
  io::write_json(report_path(out), train::to_json(pm.report));
  io::write_json(fs::path(out) / "hmm.json", post::to_json(pipeline::patient_hmm(ds, pm.report, cfg.post.hmm_thresholded)));
  std::printf("%s: %zu epochs, train sensitivity %.4f\n", patient.c_str(), pm.report.epochs.size(),
              metrics::rates(pm.report.train_confusion).sensitivity.value_or(0.0));
  return 0;
}

int cmd_calibrate(const Common& common, const std::string& data, const std::string& models,
                  const std::string& patients, const std::string& out) {
  const auto cfg = common.load();
  auto ds = load_dataset(data);
  if (!patients.empty()) ds.calib_patients = split_list(patients);
  const auto sys = load_system(ds, models, true);
  const auto s = pipeline::calibrate(ds, sys, cfg);
  emit(post::to_json(s), out);
  return 0;
}

int cmd_eval(const Common& common, const std::string& data, const std::string& models, const std::string& smoothing,
             const std::string& out, const std::string& csv, bool integer, bool no_lut) {
  const auto cfg = common.load();
  const auto ds = load_dataset(data);
  const auto sys = load_system(ds, models, false);
  const auto s = post::smoothing_from_json(io::read_json(smoothing));
  const auto rep = pipeline::evaluate(ds, sys, s, cfg, {integer, !no_lut});
  std::printf("mean over %zu patients\n%s\npooled\n%s", rep.patients.size(),
              pipeline::format_metrics(rep.mean).c_str(), pipeline::format_metrics(rep.pooled).c_str());
  if (!out.empty()) io::write_json(out, metrics::to_json(rep));
  if (!csv.empty()) io::write_text(csv, metrics::to_csv(rep));
  return 0;
}

int cmd_lut(const std::string& hmm_path, const std::string& out, int window) {
  const auto hmm = post::hmm_from_json(io::read_json(hmm_path));
  emit(post::to_json(post::compile_lut(hmm, window)), out);
  return 0;
}

int cmd_cost(const Common& common, std::optional<double> target_power, const std::string& out) {
  auto cfg = common.load();
  const auto model = nn::build_tcresnet4(0, cfg.train.model);
  const auto report = cost::count_static(model);
  if (target_power) cfg.op.energy_per_mac_j = cost::calibrate_energy_per_mac(report, cfg.op, *target_power);
  const auto lat = cost::estimate_latency(report, cfg.op);
  const double power = cost::estimate_energy(report, cfg.op);
  std::printf("%-10s%10s%10s\n", "layer", "params", "macs");
  for (const auto& l : report.layers)
    std::printf("%-10s%10lld%10lld\n", l.name.c_str(), static_cast<long long>(l.params),
                static_cast<long long>(l.macs));
  std::printf("%-10s%10lld%10lld\n", "total", static_cast<long long>(report.params),
              static_cast<long long>(report.macs));
  std::printf("array %dx%d at %g Hz: %lld cycles, %.3f ms, duty cycle %.4f at %g Hz\n", cfg.op.array_n,
              cfg.op.array_n, cfg.op.clock_hz, static_cast<long long>(lat.cycles), lat.latency_ms, lat.duty_cycle,
              cfg.op.rate_hz);
  std::printf("energy/MAC %.6g J, average power %.6g W\n", cfg.op.energy_per_mac_j, power);
  std::printf("reference: measured latency %.3f ms, power %.0f nW\n", cost::kReferenceLatencyMs,
              cost::kReferencePowerW * 1e9);
  if (!out.empty()) io::write_json(out, cost::to_json(report, cfg.op));
  return 0;
}

struct StreamArgs {
  std::string edf, model, data, hmm, lut, smoothing, method = "hmm";
  bool use_lut = false;
  double speed = 0.0;
};

int cmd_stream(const Common& common, const StreamArgs& a) {
  const auto cfg = common.load();
  const auto manifest = io::read_json(fs::path(a.data) / "manifest.json");
  const auto channels = manifest.at("channels").get<std::vector<std::string>>();
  const double norm = manifest.at("normalization").get<double>();
  const auto model = ckpt::load_model(a.model);
  double w = cfg.train.seizure_weight;
  if (fs::exists(report_path(a.model))) w = train::report_from_json(io::read_json(report_path(a.model))).seizure_weight;

  post::SmoothingConfig s;
  if (!a.smoothing.empty()) s = post::smoothing_from_json(io::read_json(a.smoothing));
  std::optional<post::StreamDecoder> decoder;
  if (a.method == "hmm") {
    if (a.use_lut) {
      if (!a.lut.empty())
        decoder.emplace(post::lut_from_json(io::read_json(a.lut)));
      else
        decoder.emplace(post::compile_lut(post::hmm_from_json(io::read_json(a.hmm)), s.hmm_window));
    } else {
      const auto hmm_path = a.hmm.empty() ? fs::path(a.model) / "hmm.json" : fs::path(a.hmm);
      decoder.emplace(post::hmm_from_json(io::read_json(hmm_path)), s.hmm_window);
    }
  } else if (a.method != "sma" && a.method != "ewma") {
    fail(ErrorCode::InvalidConfig, "unknown method " + a.method);
  }

  const auto rec = edf::read_edf_file(a.edf);
  const auto prepared = prep::prepare_channels(rec, channels, cfg.lo_hz, cfg.hi_hz, cfg.band);
  const auto frags = prep::fragments_f32(prepared, norm);
  const std::size_t n = frags.size() / kFragmentSize;

  std::vector<double> probs;
  std::vector<int> raws;
  std::size_t next = 0;
  auto line = [&](std::size_t k, int smoothed) {
    std::printf("t=%.1f p=%.6f raw=%d smoothed=%d\n", static_cast<double>(k) * prep::kFragmentSeconds, probs[k],
                raws[k], smoothed);
  };
  double ewma_state = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::span<const float> x(frags.data() + k * kFragmentSize, kFragmentSize);
    const double p = nn::softmax(nn::forward(model, x))[1];
    probs.push_back(p);
    raws.push_back(train::apply_threshold_moving({1.0 - p, p}, w));
    if (a.method == "hmm") {
      const auto obs = cfg.post.hmm_thresholded ? raws.back() : train::apply_threshold_moving({1.0 - p, p}, 1.0);
      if (const auto d = decoder->push(static_cast<std::uint8_t>(obs))) line(next++, *d);
    } else if (a.method == "sma") {
      const std::size_t lo = k + 1 >= static_cast<std::size_t>(s.window) ? k + 1 - s.window : 0;
      double sum = 0.0;
      for (std::size_t i = lo; i <= k; ++i) sum += probs[i];
      line(next++, sum / static_cast<double>(k + 1 - lo) >= s.sma_threshold ? 1 : 0);
    } else {
      ewma_state = k == 0 ? p : s.ewma_alpha * p + (1.0 - s.ewma_alpha) * ewma_state;
      line(next++, ewma_state >= s.ewma_threshold ? 1 : 0);
    }
    std::fflush(stdout);
    if (a.speed > 0.0)
      std::this_thread::sleep_for(std::chrono::duration<double>(prep::kFragmentSeconds / a.speed));
  }
  if (decoder)
    for (int d : decoder->flush()) line(next++, d);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG seizure detection pipeline"};
  app.require_subcommand(1);

  Common common;
  std::string out, data, models, annotations, patients, csv;
  std::optional<int> bits, epochs, n_patients;
  std::optional<double> minutes, power;

  auto* synth = app.add_subcommand("synth", "generate a synthetic EDF corpus");
  common.attach(synth);
  synth->add_option("--out", out, "output directory")->required();
  synth->add_option("--patients", n_patients, "number of patients");
  synth->add_option("--minutes", minutes, "minutes per patient");

  std::string edf_path;
  auto* ingest = app.add_subcommand("ingest", "parse one EDF file and print its header");
  common.attach(ingest);
  ingest->add_option("--edf", edf_path, "EDF file")->required();
  ingest->add_option("--annotations", annotations, "seizure annotation CSV");
  ingest->add_option("--out", out, "JSON output (default stdout)");

  std::string data_dir, calib;
  auto* preprocess = app.add_subcommand("preprocess", "build the fragment dataset");
  common.attach(preprocess);
  preprocess->add_option("--data-dir", data_dir, "EDF corpus directory")->required();
  preprocess->add_option("--annotations", annotations, "seizure annotation CSV")->required();
  preprocess->add_option("--out", out, "dataset directory")->required();
  preprocess->add_option("--calib", calib, "calibration patients, comma separated");

  std::string dev;
  auto* train_base = app.add_subcommand("train-base", "train the patient-unspecific model");
  common.attach(train_base);
  train_base->add_option("--dev", dev, "dataset directory")->required();
  train_base->add_option("--out", out, "checkpoint directory")->required();
  train_base->add_option("--bits", bits, "QAT bit width (0 for float)");
  train_base->add_option("--epochs", epochs, "training epochs");

  std::string base, patient;
  auto* retrain = app.add_subcommand("retrain", "retrain the base model on one patient");
  common.attach(retrain);
  retrain->add_option("--base", base, "base checkpoint directory")->required();
  retrain->add_option("--patient", patient, "patient id")->required();
  retrain->add_option("--data", data, "dataset directory")->required();
  retrain->add_option("--out", out, "checkpoint directory")->required();
  retrain->add_option("--bits", bits, "QAT bit width (0 for float)");
  retrain->add_option("--epochs", epochs, "retraining epochs");

  auto* calibrate = app.add_subcommand("calibrate", "grid-search smoothing thresholds");
  common.attach(calibrate);
  calibrate->add_option("--data", data, "dataset directory")->required();
  calibrate->add_option("--models", models, "directory of patient checkpoints")->required();
  calibrate->add_option("--patients", patients, "calibration patients, comma separated");
  calibrate->add_option("--out", out, "smoothing JSON (default stdout)");

  std::string smoothing;
  bool integer = false, no_lut = false;
  auto* eval = app.add_subcommand("eval", "evaluate on the test files");
  common.attach(eval);
  eval->add_option("--data", data, "dataset directory")->required();
  eval->add_option("--models", models, "directory of patient checkpoints")->required();
  eval->add_option("--smoothing", smoothing, "smoothing JSON from calibrate")->required();
  eval->add_option("--out", out, "report JSON");
  eval->add_option("--csv", csv, "per-patient CSV");
  eval->add_flag("--integer", integer, "use the integer inference engine");
  eval->add_flag("--no-lut", no_lut, "decode with Viterbi instead of the lookup table");

  std::string hmm_path;
  int window = 5;
  auto* lut = app.add_subcommand("lut", "compile an HMM into a Viterbi lookup table");
  common.attach(lut);
  lut->add_option("--hmm", hmm_path, "HMM JSON")->required();
  lut->add_option("--out", out, "LUT JSON (default stdout)");
  lut->add_option("--window", window, "decoding window")->check(CLI::Range(1, 16));

  auto* cost = app.add_subcommand("cost", "parameter, MAC, latency and power estimates");
  common.attach(cost);
  cost->add_option("--calibrate-power", power, "fit energy per MAC to this average power (W)");
  cost->add_option("--out", out, "cost JSON");

  StreamArgs sa;
  auto* stream = app.add_subcommand("stream", "replay one EDF file fragment by fragment");
  common.attach(stream);
  stream->add_option("--edf", sa.edf, "EDF file")->required();
  stream->add_option("--model", sa.model, "checkpoint directory")->required();
  stream->add_option("--data", sa.data, "dataset directory (channels and scale)")->required();
  stream->add_option("--hmm", sa.hmm, "HMM JSON (default MODEL/hmm.json)");
  stream->add_option("--lut", sa.lut, "LUT JSON");
  stream->add_flag("--use-lut", sa.use_lut, "decode with the lookup table");
  stream->add_option("--smoothing", sa.smoothing, "smoothing JSON");
  stream->add_option("--method", sa.method, "hmm, sma or ewma");
  stream->add_option("--speed", sa.speed, "replay speed relative to real time (0: no pacing)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*synth) return cmd_synth(common, out, n_patients, minutes);
    if (*ingest) return cmd_ingest(edf_path, annotations, out);
    if (*preprocess) return cmd_preprocess(common, data_dir, annotations, out, calib);
    if (*train_base) return cmd_train_base(common, dev, out, bits, epochs);
    if (*retrain) return cmd_retrain(common, base, patient, data, out, bits, epochs);
    if (*calibrate) return cmd_calibrate(common, data, models, patients, out);
    if (*eval) return cmd_eval(common, data, models, smoothing, out, csv, integer, no_lut);
    if (*lut) return cmd_lut(hmm_path, out, window);
    if (*cost) return cmd_cost(common, power, out);
    if (*stream) return cmd_stream(common, sa);
  } catch (const Error& e) {
    std::cerr << "error " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error Internal: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
