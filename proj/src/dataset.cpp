#include "ictal/dataset.hpp"

#include <algorithm>

#include "ictal/error.hpp"
#include "ictal/io.hpp"

namespace ictal {

namespace fs = std::filesystem;
using io::Json;

std::size_t FragmentSet::positives() const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
}

void FragmentSet::push(std::span<const float> values, std::uint8_t label, FragmentRef ref) {
  if (values.size() != kFragmentSize) fail(ErrorCode::ShapeMismatch, "fragment must be 16 x 128");
  data.insert(data.end(), values.begin(), values.end());
  labels.push_back(label);
  refs.push_back(ref);
}

FragmentSet FragmentSet::subset(std::span<const std::size_t> indices) const {
  FragmentSet s;
  s.patient_id = patient_id;
  s.split_tag = split_tag;
  s.data.reserve(indices.size() * kFragmentSize);
  for (auto i : indices) s.push(fragment(i), labels.at(i), refs.at(i));
  return s;
}

const PatientData& Dataset::patient(const std::string& id) const {
  for (const auto& p : patients)
    if (p.id == id) return p;
  fail(ErrorCode::InvalidConfig, "unknown patient " + id);
}

bool Dataset::is_calibration(const std::string& id) const {
  return std::find(calib_patients.begin(), calib_patients.end(), id) != calib_patients.end();
}

namespace {

std::string bits(const std::vector<std::uint8_t>& v) {
  std::string s(v.size(), '0');
  for (std::size_t i = 0; i < v.size(); ++i) s[i] = v[i] ? '1' : '0';
  return s;
}

std::vector<std::uint8_t> unbits(const std::string& s) {
  std::vector<std::uint8_t> v(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '0' && s[i] != '1') fail(ErrorCode::MalformedField, "label string must hold only 0/1");
    v[i] = s[i] == '1';
  }
  return v;
}

Json save_set(const FragmentSet& s, const fs::path& dir, const std::string& file) {
  io::write_f32(dir / file, s.data);
  Json refs = Json::array();
  for (const auto& r : s.refs) refs.push_back({r.patient, r.file, r.index});
  return {{"patient_id", s.patient_id},
          {"split_tag", s.split_tag},
          {"file", file},
          {"shape", {s.size(), kFragmentChannels, kFragmentSamples}},
          {"labels", bits(s.labels)},
          {"refs", refs}};
}

FragmentSet load_set(const Json& j, const fs::path& dir) {
  FragmentSet s;
  s.patient_id = j.at("patient_id").get<std::string>();
  s.split_tag = j.at("split_tag").get<std::string>();
  s.labels = unbits(j.at("labels").get<std::string>());
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3 || shape[0] != s.labels.size() || shape[1] != kFragmentChannels ||
      shape[2] != kFragmentSamples)
    fail(ErrorCode::ShapeMismatch, "fragment set shape must be N x 16 x 128");
  s.data = io::read_f32(dir / j.at("file").get<std::string>(), s.labels.size() * kFragmentSize);
  if (s.labels.empty()) s.data.clear();
  for (const auto& r : j.at("refs")) s.refs.push_back({r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>()});
  if (s.refs.size() != s.labels.size()) fail(ErrorCode::ShapeMismatch, "refs and labels lengths differ");
  return s;
}

}  // namespace

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  Json j;
  j["format"] = "ictal-fragments";
  j["version"] = 1;
  j["seed"] = ds.seed;
  j["normalization"] = ds.normalization;
  j["channels"] = ds.channels;
  j["variance_scores"] = ds.variance_scores;
  j["calib_patients"] = ds.calib_patients;
  j["dev_train"] = save_set(ds.dev_train, dir, "dev-train.f32");
  j["dev_val"] = save_set(ds.dev_val, dir, "dev-val.f32");
  Json patients = Json::array();
  for (const auto& p : ds.patients) {
    Json files = Json::array();
    for (const auto& f : p.files) files.push_back({{"file_id", f.file_id}, {"labels", bits(f.labels)}});
    Json seizures = Json::array();
    for (const auto& a : p.test_seizures) seizures.push_back({{"start_s", a.start_s}, {"end_s", a.end_s}});
    patients.push_back({{"id", p.id},
                        {"test_file", p.test_file},
                        {"files", files},
                        {"test_seizures", seizures},
                        {"retrain_train", save_set(p.retrain_train, dir, p.id + ".retrain-train.f32")},
                        {"retrain_val", save_set(p.retrain_val, dir, p.id + ".retrain-val.f32")},
                        {"test", save_set(p.test, dir, p.id + ".test.f32")}});
  }
  j["patients"] = patients;
  io::write_json(dir / "manifest.json", j);
}

Dataset load_dataset(const fs::path& dir) {
  const Json j = io::read_json(dir / "manifest.json");
  if (j.value("format", "") != "ictal-fragments") fail(ErrorCode::MalformedField, "not a fragment dataset");
  try {
    Dataset ds;
    ds.seed = j.at("seed").get<std::uint64_t>();
    ds.normalization = j.at("normalization").get<double>();
    ds.channels = j.at("channels").get<std::vector<std::string>>();
    ds.variance_scores = j.at("variance_scores").get<std::vector<double>>();
    ds.calib_patients = j.at("calib_patients").get<std::vector<std::string>>();
    ds.dev_train = load_set(j.at("dev_train"), dir);
    ds.dev_val = load_set(j.at("dev_val"), dir);
    for (const auto& pj : j.at("patients")) {
      PatientData p;
      p.id = pj.at("id").get<std::string>();
      p.test_file = pj.at("test_file").get<int>();
      for (const auto& f : pj.at("files"))
        p.files.push_back({f.at("file_id").get<std::string>(), unbits(f.at("labels").get<std::string>())});
      for (const auto& a : pj.at("test_seizures"))
        p.test_seizures.push_back({p.files.at(p.test_file).file_id, a.at("start_s").get<double>(),
                                   a.at("end_s").get<double>()});
      p.retrain_train = load_set(pj.at("retrain_train"), dir);
      p.retrain_val = load_set(pj.at("retrain_val"), dir);
      p.test = load_set(pj.at("test"), dir);
      ds.patients.push_back(std::move(p));
    }
    return ds;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedField, std::string("dataset manifest: ") + e.what());
  }
}

}  // namespace ictal
