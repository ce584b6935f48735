#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "ictal/checkpoint.hpp"
#include "ictal/costmodel.hpp"
#include "ictal/edf.hpp"
#include "ictal/error.hpp"
#include "ictal/metrics.hpp"
#include "ictal/pipeline.hpp"
#include "ictal/postproc.hpp"
#include "ictal/quantize.hpp"
#include "ictal/synth.hpp"
#include "ictal/tcresnet.hpp"

namespace py = pybind11;
using namespace ictal;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using LabelArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

template <class T>
std::span<const T> view(const py::array_t<T, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), static_cast<std::size_t>(a.size())};
}

template <class T>
py::array_t<T> to_array(const std::vector<T>& v) {
  py::array_t<T> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::object json_to_py(const io::Json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

// Fragments as (N, 16, 128) or a single (16, 128) array.
std::size_t fragment_count(const FloatArray& x) {
  const auto n = static_cast<std::size_t>(x.size());
  if (n == 0 || n % kFragmentSize != 0)
    fail(ErrorCode::InvalidConfig, "input must hold whole 16x128 fragments");
  return n / kFragmentSize;
}

py::dict edf_to_dict(const edf::EdfRecording& rec) {
  py::dict d;
  d["patient_id"] = rec.header.patient_id;
  d["recording_id"] = rec.header.recording_id;
  d["start_date"] = rec.header.start_date;
  d["start_time"] = rec.header.start_time;
  d["n_records"] = rec.header.n_records;
  d["record_duration_s"] = rec.header.record_duration_s;
  py::list labels, rates, samples;
  for (std::size_t i = 0; i < rec.specs.size(); ++i) {
    labels.append(rec.specs[i].label);
    rates.append(rec.sample_rate_hz(i));
    samples.append(to_array(rec.samples[i]));
  }
  d["labels"] = labels;
  d["sample_rates"] = rates;
  d["samples"] = samples;
  d["warnings"] = rec.warnings;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ictal, m) {
  m.doc() = "EEG seizure detection core";

  static py::exception<Error> error(m, "IctalError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(error, e.what());
    }
  });

  m.attr("FRAGMENT_CHANNELS") = kFragmentChannels;
  m.attr("FRAGMENT_SAMPLES") = kFragmentSamples;

  // EDF
  m.def("read_edf", [](const std::string& path) { return edf_to_dict(edf::read_edf_file(path)); }, py::arg("path"));
  m.def(
      "parse_edf",
      [](py::bytes data) {
        const std::string s = data;
        return edf_to_dict(edf::parse_edf(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())));
      },
      py::arg("data"));
  m.def(
      "parse_annotations",
      [](const std::string& text) {
        py::list out;
        for (const auto& a : edf::parse_annotations(text)) out.append(py::make_tuple(a.file_id, a.start_s, a.end_s));
        return out;
      },
      py::arg("text"));

  // Quantization
  m.def(
      "fit_spec",
      [](const DoubleArray& values, int bits) {
        const auto s = quant::fit_spec(view(values), bits);
        return py::make_tuple(s.bits, s.exponent);
      },
      py::arg("values"), py::arg("bits"), "Returns (bits, exponent) of the smallest covering power-of-two scale.");
  m.def(
      "quantize",
      [](const DoubleArray& values, int bits, int exponent) {
        quant::check_bits(bits);
        return to_array(quant::quantize(view(values), {bits, exponent}).codes);
      },
      py::arg("values"), py::arg("bits"), py::arg("exponent"));
  m.def(
      "fake_quant",
      [](const DoubleArray& values, int bits, int exponent) {
        quant::check_bits(bits);
        return to_array(quant::fake_quant(view(values), {bits, exponent}).values);
      },
      py::arg("values"), py::arg("bits"), py::arg("exponent"));

  // Model
  py::class_<nn::TcResNet4>(m, "Model")
      .def(py::init([](std::uint64_t seed, bool strict_63, bool affine_batchnorm) {
             nn::ModelOptions opt;
             opt.strict_63 = strict_63;
             opt.affine_batchnorm = affine_batchnorm;
             return nn::build_tcresnet4(seed, opt);
           }),
           py::arg("seed") = 0, py::arg("strict_63") = false, py::arg("affine_batchnorm") = false)
      .def_static("load", [](const std::filesystem::path& dir) { return ckpt::load_model(dir); }, py::arg("dir"))
      .def("save", [](const nn::TcResNet4& self, const std::filesystem::path& dir) { ckpt::save_model(self, dir); },
           py::arg("dir"))
      .def_property_readonly("parameters", &nn::TcResNet4::trainable_parameters)
      .def_property(
          "quant_bits", [](const nn::TcResNet4& self) { return self.quant_bits; },
          [](nn::TcResNet4& self, std::optional<int> bits) {
            if (bits) quant::check_bits(*bits);
            self.quant_bits = bits;
            self.feature_specs = {};
          })
      .def("layer_table",
           [](const nn::TcResNet4& self) {
             py::list out;
             for (const auto& l : self.layer_table()) {
               py::dict d;
               d["kind"] = std::string(nn::to_string(l.kind));
               d["name"] = l.name;
               d["in_channels"] = l.in_channels;
               d["out_channels"] = l.out_channels;
               d["kernel"] = l.kernel;
               d["stride"] = l.stride;
               d["out_length"] = l.out_length;
               d["params"] = l.params;
               d["macs"] = l.macs;
               out.append(d);
             }
             return out;
           })
      .def(
          "calibrate",
          [](nn::TcResNet4& self, const FloatArray& x) { nn::calibrate(self, view(x), fragment_count(x)); },
          py::arg("fragments"))
      .def(
          "logits",
          [](const nn::TcResNet4& self, const FloatArray& x) {
            const auto n = fragment_count(x);
            const auto logits = nn::predict_logits(self, view(x), n);
            py::array_t<double> out({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(nn::kClasses)});
            auto r = out.mutable_unchecked<2>();
            for (std::size_t i = 0; i < n; ++i)
              for (int k = 0; k < nn::kClasses; ++k) r(i, k) = logits[i][k];
            return out;
          },
          py::arg("fragments"))
      .def(
          "predict_proba",
          [](const nn::TcResNet4& self, const FloatArray& x) {
            const auto n = fragment_count(x);
            const auto logits = nn::predict_logits(self, view(x), n);
            std::vector<double> p(n);
            for (std::size_t i = 0; i < n; ++i) p[i] = nn::softmax(logits[i])[1];
            return to_array(p);
          },
          py::arg("fragments"), "Ictal probability per fragment.")
      .def(
          "predict_integer",
          [](const nn::TcResNet4& self, const FloatArray& x) {
            const auto n = fragment_count(x);
            const auto q = nn::quantize_model(self);
            std::vector<double> p(n);
            for (std::size_t i = 0; i < n; ++i) {
              const auto codes = nn::quantize_input(q, view(x).subspan(i * kFragmentSize, kFragmentSize));
              p[i] = nn::softmax(nn::forward_quantized(q, codes).dequantized())[1];
            }
            return to_array(p);
          },
          py::arg("fragments"), "Ictal probability through the integer engine.");

  // Post-processing
  m.def(
      "sma", [](const DoubleArray& p, int w, double theta) { return to_array(post::sma(view(p), w, theta)); },
      py::arg("probs"), py::arg("window") = 5, py::arg("threshold") = 0.5);
  m.def(
      "ewma", [](const DoubleArray& p, double alpha, double theta) { return to_array(post::ewma(view(p), alpha, theta)); },
      py::arg("probs"), py::arg("alpha"), py::arg("threshold") = 0.5);

  py::class_<post::HmmParams>(m, "Hmm")
      .def(py::init([](const post::Matrix2& transition, const post::Matrix2& emission) {
             auto h = post::make_hmm(transition, emission);
             h.validate();
             return h;
           }),
           py::arg("transition"), py::arg("emission"))
      .def_readonly("transition", &post::HmmParams::transition)
      .def_readonly("emission", &post::HmmParams::emission)
      .def_readonly("initial", &post::HmmParams::initial)
      .def(
          "viterbi_window",
          [](const post::HmmParams& self, const LabelArray& obs) { return post::viterbi_window(view(obs), self); },
          py::arg("obs"))
      .def(
          "decode",
          [](const post::HmmParams& self, const LabelArray& obs, int w) {
            return to_array(post::hmm_decode(view(obs), self, w));
          },
          py::arg("obs"), py::arg("window") = 5)
      .def(
          "compile_lut",
          [](const post::HmmParams& self, int w) { return to_array(post::compile_lut(self, w).entries); },
          py::arg("window") = 5, "Decoded label for every window; oldest observation in the most significant bit.");
  m.def(
      "estimate_transitions",
      [](const std::vector<std::vector<std::uint8_t>>& seqs) { return post::estimate_transitions(seqs); },
      py::arg("sequences"));
  m.def(
      "emissions_from_confusion",
      [](const std::array<std::array<std::int64_t, 2>, 2>& counts) { return post::emissions_from_confusion(counts); },
      py::arg("counts"));

  // Metrics
  m.def(
      "roc_auc", [](const DoubleArray& s, const LabelArray& y) { return metrics::roc_auc(view(s), view(y)); },
      py::arg("scores"), py::arg("labels"));
  m.def(
      "rates",
      [](const LabelArray& truth, const LabelArray& pred) {
        const auto r = metrics::rates(metrics::confusion(view(truth), view(pred)));
        py::dict d;
        d["accuracy"] = r.accuracy;
        d["sensitivity"] = r.sensitivity;
        d["specificity"] = r.specificity;
        d["fpr"] = r.fpr;
        return d;
      },
      py::arg("truth"), py::arg("predicted"));

  // Cost model
  m.def(
      "cost",
      [](int array_n, double clock_hz, double rate_hz) {
        cost::OperatingPoint op;
        op.array_n = array_n;
        op.clock_hz = clock_hz;
        op.rate_hz = rate_hz;
        op.validate();
        return json_to_py(cost::to_json(cost::count_static(nn::build_tcresnet4()), op));
      },
      py::arg("array_n") = 4, py::arg("clock_hz") = 250'000.0, py::arg("rate_hz") = cost::kDefaultRateHz);

  // Synthetic corpus
  m.def(
      "write_synthetic_corpus",
      [](const std::filesystem::path& dir, int patients, double minutes, std::uint64_t seed) {
        synth::SynthConfig c;
        c.n_patients = patients;
        c.minutes = minutes;
        c.seed = seed;
        const auto corpus = synth::generate(c);
        synth::write_corpus(corpus, dir);
        return corpus.files.size();
      },
      py::arg("dir"), py::arg("patients") = 4, py::arg("minutes") = 30.0, py::arg("seed") = 0,
      "Writes EDF files plus annotations.csv and returns the file count.");

  // Full pipeline
  m.def(
      "run_pipeline",
      [](const std::filesystem::path& data_dir, const std::string& config_json) {
        const auto cfg = pipeline::config_from_json(io::Json::parse(config_json.empty() ? "{}" : config_json));
        py::gil_scoped_release release;
        const auto ds = prep::build_dataset(pipeline::preprocess_config(cfg, data_dir, data_dir / "annotations.csv"));
        const auto sys = pipeline::train_all(ds, cfg);
        const auto smoothing = pipeline::calibrate(ds, sys, cfg);
        const auto report = pipeline::evaluate(ds, sys, smoothing, cfg);
        py::gil_scoped_acquire acquire;
        return json_to_py(metrics::to_json(report));
      },
      py::arg("data_dir"), py::arg("config_json") = "",
      "Preprocess, train, calibrate and evaluate; returns the evaluation report.");
}
