// Command-line front end for the fracture-risk pipeline:
//   form synth          generate a synthetic cohort dataset
//   form train-detector train the hip keypoint detector on rendered halves
//   form preprocess     crop a dataset into model-ready femur halves
//   form run            cross-validated evaluation of a model configuration

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "form/evalharness.hpp"
#include "form/errors.hpp"
#include "form/keypoints.hpp"
#include "form/preprocess.hpp"
#include "form/synthgen.hpp"

namespace fs = std::filesystem;
using namespace form;

namespace {

class Args {
 public:
  Args(int argc, char** argv, int first, std::set<std::string> allowed)
      : allowed_(std::move(allowed)) {
    for (int i = first; i < argc; ++i) {
      std::string key = argv[i];
      if (key.rfind("--", 0) != 0)
        throw ValidationError("expected a --flag, got '" + key + "'");
      key = key.substr(2);
      if (!allowed_.count(key))
        throw ValidationError("unknown flag --" + key);
      if (i + 1 >= argc)
        throw ValidationError("flag --" + key + " needs a value");
      values_[key] = argv[++i];
    }
  }

  std::string required(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end())
      throw ValidationError("missing required flag --" + key);
    return it->second;
  }
  std::string get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }
  int get_int(const std::string& key, int fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stoi(it->second);
  }
  double get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stod(it->second);
  }
  std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : std::stoull(it->second);
  }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

 private:
  std::set<std::string> allowed_;
  std::map<std::string, std::string> values_;
};

std::vector<int> parse_channels(const std::string& csv) {
  std::vector<int> out;
  std::istringstream is(csv);
  std::string cell;
  while (std::getline(is, cell, ',')) out.push_back(std::stoi(cell));
  if (out.empty()) throw ValidationError("empty channel list");
  return out;
}

synth::SyntheticCohort load_dataset(const std::string& dir) {
  synth::SyntheticCohort c;
  c.schema = cohort::read_schema((fs::path(dir) / "schema.json").string());
  c.records = cohort::read_manifest((fs::path(dir) / "manifest.csv").string(),
                                    c.schema);
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < c.records.size(); ++i)
    pos[c.records[i].patient_id] = i;
  c.studies.resize(c.records.size());
  for (const auto& e : synth::read_image_index(dir)) {
    auto it = pos.find(e.patient_id);
    if (it == pos.end())
      throw ValidationError("index lists unknown patient " + e.patient_id);
    auto& study = c.studies[it->second];
    study.patient_id = e.patient_id;
    study.modality = e.modality;
    if (e.modality == Modality::Xray)  // e.path is already dir-joined
      study.image = read_fgrid2(e.path);
    else
      study.volume = read_fgrid3(e.path);
  }
  auto truth_path = fs::path(dir) / "truth.json";
  if (fs::exists(truth_path)) c.truth = synth::read_truth(truth_path.string());
  return c;
}

eval::PrepareConfig make_prepare_config(const Args& args,
                                        const synth::SyntheticCohort& cohort,
                                        std::optional<keypoints::Detector>& det,
                                        int default_crop) {
  eval::PrepareConfig pc;
  pc.crop_size = args.get_int("crop-size", default_crop);
  pc.ct_intensity_scale = args.get_double("ct-scale", 2.0);
  if (args.has("detector")) {
    det = keypoints::Detector::load(args.required("detector"));
    pc.detector = &*det;
  } else {
    if (cohort.truth.empty())
      throw ValidationError(
          "no --detector given and the dataset carries no ground-truth "
          "keypoints");
    pc.truth = &cohort.truth;
  }
  return pc;
}

int cmd_synth(int argc, char** argv) {
  Args args(argc, argv, 2,
            {"out", "n", "seed", "prevalence", "ct-fraction", "xray-rows",
             "xray-cols", "ct-depth", "ct-rows", "ct-cols", "horizon",
             "implant-rate", "incomplete-rate"});
  synth::GeneratorConfig cfg;
  cfg.n_patients = args.get_int("n", cfg.n_patients);
  cfg.seed = args.get_seed("seed", cfg.seed);
  cfg.target_prevalence = args.get_double("prevalence", cfg.target_prevalence);
  cfg.ct_fraction = args.get_double("ct-fraction", cfg.ct_fraction);
  cfg.xray_rows = args.get_int("xray-rows", cfg.xray_rows);
  cfg.xray_cols = args.get_int("xray-cols", cfg.xray_cols);
  cfg.ct_depth = args.get_int("ct-depth", cfg.ct_depth);
  cfg.ct_rows = args.get_int("ct-rows", cfg.ct_rows);
  cfg.ct_cols = args.get_int("ct-cols", cfg.ct_cols);
  cfg.horizon_years = args.get_double("horizon", cfg.horizon_years);
  cfg.implant_rate = args.get_double("implant-rate", cfg.implant_rate);
  cfg.incomplete_rate =
      args.get_double("incomplete-rate", cfg.incomplete_rate);
  const std::string out = args.required("out");
  auto cohort = synth::generate_cohort(cfg);
  synth::write_dataset(out, cohort);
  int events = 0;
  for (const auto& t : cohort.truth) events += t.fracture_within_horizon;
  std::printf("wrote %d patients (%d events) to %s\n", cfg.n_patients, events,
              out.c_str());
  return kExitOk;
}

int cmd_train_detector(int argc, char** argv) {
  Args args(argc, argv, 2,
            {"out", "samples", "frame", "input-size", "epochs", "seed",
             "implant-rate", "incomplete-rate", "verbose"});
  const std::string out = args.required("out");
  const int n = args.get_int("samples", 300);
  const int frame = args.get_int("frame", 224);
  const double implant_rate = args.get_double("implant-rate", 0.08);
  const double incomplete_rate = args.get_double("incomplete-rate", 0.08);

  keypoints::DetectorConfig cfg;
  cfg.input_size = args.get_int("input-size", cfg.input_size);
  cfg.epochs = args.get_int("epochs", cfg.epochs);
  cfg.seed = args.get_seed("seed", 0);
  cfg.verbose = args.get("verbose", "0") == "1";

  std::vector<keypoints::TrainSample> samples;
  Rng outer(derive_seed(cfg.seed, 0xDE7));
  for (int i = 0; i < n; ++i) {
    keypoints::TrainSample ts;
    const double u = outer.uniform();
    ts.cls = u < implant_rate ? Completeness::Implant
             : u < implant_rate + incomplete_rate ? Completeness::Incomplete
                                                  : Completeness::Complete;
    const double q = outer.normal();
    Rng rng(derive_seed(cfg.seed, 0x11A0, i));
    synth::SideTruth st;
    // match the preprocessing pipeline's per-patient intensity rescale so the
    // completeness classifier sees the same distribution at inference time
    ts.half = preprocess::rescale(
                  synth::render_half(frame, frame, q, ts.cls, rng, &st),
                  preprocess::RescaleMode::PerPatient)
                  .image;
    ts.keypoints = st.keypoints;
    samples.push_back(std::move(ts));
  }
  auto det = keypoints::train_detector(samples, cfg);
  det.save(out);
  std::printf("trained detector on %d halves (%dpx frame), saved to %s\n", n,
              frame, out.c_str());
  return kExitOk;
}

int cmd_preprocess(int argc, char** argv) {
  Args args(argc, argv, 2,
            {"data", "out", "modality", "crop-size", "ct-scale", "detector"});
  const std::string data_dir = args.required("data");
  const std::string out = args.required("out");
  const std::string modality = args.get("modality", "xray");
  if (modality != "xray" && modality != "ct")
    throw ValidationError("--modality must be xray or ct");

  auto cohort = load_dataset(data_dir);
  std::optional<keypoints::Detector> det;
  auto pc = make_prepare_config(args, cohort, det,
                                modality == "ct" ? 96 : 224);
  auto data = eval::prepare_dataset(cohort, pc);

  fs::create_directories(fs::path(out) / "crops");
  std::ofstream idx(fs::path(out) / "crop_index.csv");
  if (!idx) throw IoError("cannot write crop index in " + out);
  idx << "patient_id,side,path\n";
  std::size_t kept = 0;
  for (const auto& p : data.patients)
    for (const auto& h : p.halves) {
      const std::string name =
          p.record.patient_id + "_" + side_name(h.side) + ".fgrid";
      write_fgrid((fs::path(out) / "crops" / name).string(), h.crop);
      idx << p.record.patient_id << ',' << side_name(h.side) << ",crops/"
          << name << '\n';
      ++kept;
    }
  std::ofstream excl(fs::path(out) / "exclusions.csv");
  if (!excl) throw IoError("cannot write exclusion log in " + out);
  excl << "patient_id,side,reason\n";
  for (const auto& line : data.exclusions) excl << line << '\n';
  std::printf("kept %zu halves, excluded %zu; crops in %s\n", kept,
              data.exclusions.size(), out.c_str());
  return kExitOk;
}

int cmd_run(int argc, char** argv) {
  Args args(argc, argv, 2,
            {"data", "out", "model", "inputs", "rf-group", "horizon", "folds",
             "reps", "seed", "mode", "ablation-fold", "crop-size", "ct-scale",
             "detector", "extractor-channels", "extractor-epochs",
             "extractor-lr", "risk-epochs", "risk-lr", "subgroup-years",
             "threshold", "jobs"});
  const std::string data_dir = args.required("data");
  const std::string out = args.required("out");

  eval::ModelSpec spec;
  const std::string model = args.get("model", "form");
  if (model == "form")
    spec.kind = eval::ModelKind::Form;
  else if (model == "cox")
    spec.kind = eval::ModelKind::Cox;
  else if (model == "external")
    spec.kind = eval::ModelKind::External;
  else
    throw ValidationError("--model must be form, cox, or external");
  spec.inputs = risk::parse_inputs(args.get("inputs", "both"));
  spec.rf_group = cohort::parse_rf_group(args.get("rf-group", "base"));
  spec.horizon_years = args.get_double("horizon", 10.0);
  spec.extractor.backbone_channels =
      parse_channels(args.get("extractor-channels", "6,12,24"));
  spec.extractor.train.epochs = args.get_int("extractor-epochs", 8);
  spec.extractor.train.lr = args.get_double("extractor-lr", 1e-3);
  spec.risk.train.epochs = args.get_int("risk-epochs", 15);
  spec.risk.train.lr = args.get_double("risk-lr", 5e-3);

  // fold workers run sequentially when jobs=1; results are defined to be
  // independent of the worker count, so on a single core this is exact
  int jobs = args.get_int("jobs", 1);
  if (const char* env = std::getenv("FORM_JOBS")) jobs = std::atoi(env);
  if (jobs < 1) throw ValidationError("--jobs must be >= 1");

  eval::ProtocolConfig pcfg;
  pcfg.k = args.get_int("folds", 5);
  pcfg.reps = args.get_int("reps", 1);
  pcfg.seed = args.get_seed("seed", 0);
  pcfg.ablation_fold = args.get_int("ablation-fold", 0);
  const std::string mode = args.get("mode", "cv");
  if (mode == "cv")
    pcfg.mode = eval::ProtocolMode::CrossValidation;
  else if (mode == "ablation")
    pcfg.mode = eval::ProtocolMode::Ablation;
  else
    throw ValidationError("--mode must be cv or ablation");

  auto cohort = load_dataset(data_dir);
  std::optional<keypoints::Detector> det;
  auto pc = make_prepare_config(args, cohort, det, 64);
  auto data = eval::prepare_dataset(cohort, pc);
  eval::PipelineContext ctx(data);

  std::vector<std::string> ids;
  std::vector<int> labels;
  eval::protocol_labels(data, spec.horizon_years, ids, labels);

  auto subgroup = eval::censored_survivors(
      cohort.records, spec.horizon_years, args.get_double("subgroup-years", 5.0));
  std::vector<std::vector<double>> subgroup_scores;
  auto scorer = eval::make_scorer(ctx, spec, subgroup, &subgroup_scores);
  auto report = eval::run_protocol(ids, labels, scorer, pcfg);
  eval::write_report(out, report);

  std::vector<risk::Prediction> preds;
  for (const auto& r : report.runs)
    preds.insert(preds.end(), r.predictions.begin(), r.predictions.end());
  risk::write_predictions((fs::path(out) / "predictions.csv").string(), preds);

  std::printf("mean AUC %.4f (%s %.4f) over %zu runs\n", report.mean_auc,
              report.spread_kind.c_str(), report.spread,
              report.included_aucs().size());
  if (!subgroup.empty() && !subgroup_scores.empty()) {
    auto fp = eval::fp_rate(subgroup_scores, args.get_double("threshold", 0.5));
    std::printf("censored >=%gy subgroup FP rate %.4f +- %.4f SE (n=%zu)\n",
                args.get_double("subgroup-years", 5.0), fp.mean, fp.se,
                subgroup.size());
  }
  for (const auto& w : report.warnings)
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    if (argc < 2) {
      std::fprintf(stderr,
                   "usage: form <synth|train-detector|preprocess|run> "
                   "[--flag value ...]\n");
      return kExitValidation;
    }
    const std::string cmd = argv[1];
    if (cmd == "synth") return cmd_synth(argc, argv);
    if (cmd == "train-detector") return cmd_train_detector(argc, argv);
    if (cmd == "preprocess") return cmd_preprocess(argc, argv);
    if (cmd == "run") return cmd_run(argc, argv);
    throw ValidationError("unknown command '" + cmd + "'");
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const NumericFault& e) {
    std::fprintf(stderr, "numeric fault: %s\n", e.what());
    return kExitNumeric;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kExitValidation;
  }
}
