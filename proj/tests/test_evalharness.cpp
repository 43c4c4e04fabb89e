#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "form/evalharness.hpp"

using namespace form;

namespace {

std::vector<std::string> make_ids(int n) {
  std::vector<std::string> ids;
  char buf[16];
  for (int i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof buf, "P%05d", i);
    ids.emplace_back(buf);
  }
  return ids;
}

}  // namespace

TEST_CASE("kfold_split partitions evenly and deterministically") {
  auto ids = make_ids(10);
  std::vector<int> labels(10, 0);
  labels[0] = labels[1] = 1;
  auto a = eval::kfold_split(ids, labels, 5, 42);
  CHECK(a.k == 5);
  for (int f = 0; f < 5; ++f) CHECK(a.ids_in_fold(f).size() == 2);

  auto b = eval::kfold_split(ids, labels, 5, 42);
  CHECK(a.fold == b.fold);
  auto c = eval::kfold_split(ids, labels, 5, 43);
  CHECK(a.fold != c.fold);

  CHECK_THROWS_AS(eval::kfold_split(make_ids(3), {0, 0, 1}, 5, 0),
                  ValidationError);
  CHECK_THROWS_AS(eval::kfold_split({"a", "a"}, {0, 1}, 2, 0),
                  ValidationError);
}

TEST_CASE("kfold_split stratifies events and stays a partition") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 40 + static_cast<int>(rng.index(160));
    const int k = 2 + static_cast<int>(rng.index(6));
    auto ids = make_ids(n);
    std::vector<int> labels;
    int events = 0;
    for (int i = 0; i < n; ++i) {
      labels.push_back(rng.bernoulli(0.1) ? 1 : 0);
      events += labels.back();
    }
    auto split = eval::kfold_split(ids, labels, k,
                                   derive_seed(99, trial));
    // partition: every patient appears exactly once
    std::set<std::string> seen;
    std::vector<int> sizes(k, 0), fold_events(k, 0);
    for (int i = 0; i < n; ++i) {
      auto it = split.fold.find(ids[i]);
      REQUIRE(it != split.fold.end());
      CHECK(seen.insert(ids[i]).second);
      ++sizes[it->second];
      fold_events[it->second] += labels[i];
    }
    const auto [smin, smax] = std::minmax_element(sizes.begin(), sizes.end());
    CHECK(*smax - *smin <= 1);
    const auto [emin, emax] =
        std::minmax_element(fold_events.begin(), fold_events.end());
    CHECK(*emax - *emin <= 1);  // event stratification
  }
}

TEST_CASE("run_protocol bookkeeping, determinism, and exclusions") {
  const int n = 60;
  auto ids = make_ids(n);
  Rng rng(11);
  std::vector<int> labels;
  std::vector<double> oracle(n);
  for (int i = 0; i < n; ++i) {
    oracle[i] = rng.uniform();
    labels.push_back(rng.bernoulli(oracle[i]) ? 1 : 0);
  }
  eval::FoldScorer scorer = [&](const std::vector<std::string>& /*train*/,
                                const std::vector<std::string>& val,
                                std::uint64_t /*seed*/, int, int) {
    std::map<std::string, double> out;
    for (const auto& id : val) out[id] = oracle[std::stoi(id.substr(1))];
    return out;
  };
  eval::ProtocolConfig cfg;
  cfg.k = 5;
  cfg.reps = 1;
  cfg.seed = 3;
  auto report = eval::run_protocol(ids, labels, scorer, cfg);
  CHECK(report.runs.size() == 5);  // reps=1, k=5 -> exactly 5 AUC values
  CHECK(report.spread_kind == "std_across_folds");
  CHECK(report.mean_auc > 0.6);  // oracle scores carry signal
  CHECK(report.spread >= 0.0);
  for (const auto& r : report.runs) {
    CHECK_FALSE(r.excluded);
    CHECK(r.auc >= 0.0);
    CHECK(r.auc <= 1.0);
  }

  auto again = eval::run_protocol(ids, labels, scorer, cfg);
  CHECK(report.mean_auc == again.mean_auc);
  for (std::size_t i = 0; i < report.runs.size(); ++i)
    CHECK(report.runs[i].auc == again.runs[i].auc);

  // ablation mode: one fold, SE across repetitions
  cfg.mode = eval::ProtocolMode::Ablation;
  cfg.reps = 4;
  cfg.ablation_fold = 2;
  auto abl = eval::run_protocol(ids, labels, scorer, cfg);
  CHECK(abl.runs.size() == 4);
  CHECK(abl.spread_kind == "se_across_reps");
  for (const auto& r : abl.runs) CHECK(r.fold == 2);

  // two events across five folds: at least three folds are single-class
  std::vector<int> sparse(n, 0);
  sparse[0] = sparse[1] = 1;
  cfg = {};
  cfg.k = 5;
  cfg.seed = 3;
  auto rsp = eval::run_protocol(ids, sparse, scorer, cfg);
  int excluded = 0;
  for (const auto& r : rsp.runs) excluded += r.excluded ? 1 : 0;
  CHECK(excluded == 3);
  CHECK(rsp.warnings.size() >= 3);
  CHECK(rsp.included_aucs().size() == 2);
}

TEST_CASE("report files are written and deterministic") {
  namespace fs = std::filesystem;
  auto ids = make_ids(20);
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) labels.push_back(i % 4 == 0 ? 1 : 0);
  eval::FoldScorer scorer = [&](const std::vector<std::string>&,
                                const std::vector<std::string>& val,
                                std::uint64_t, int, int) {
    std::map<std::string, double> out;
    for (const auto& id : val)
      out[id] = std::stoi(id.substr(1)) % 4 == 0 ? 0.9 : 0.2;
    return out;
  };
  eval::ProtocolConfig cfg;
  cfg.k = 4;
  auto report = eval::run_protocol(ids, labels, scorer, cfg);

  auto dir = fs::temp_directory_path() / "form_report_test";
  fs::remove_all(dir);
  eval::write_report(dir.string(), report);
  for (const char* name : {"report.json", "fold_aucs.csv", "roc_points.csv"})
    CHECK(fs::exists(dir / name));

  auto slurp = [](const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
  };
  auto first = slurp(dir / "report.json");
  eval::write_report(dir.string(), eval::run_protocol(ids, labels, scorer,
                                                      cfg));
  CHECK(first == slurp(dir / "report.json"));
  CHECK(first.find("\"mean_auc\"") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("welch comparison between reports uses included runs") {
  eval::EvaluationReport a, b;
  for (double v : {0.80, 0.82, 0.81, 0.79}) a.runs.push_back({0, 0, v, false});
  for (double v : {0.70, 0.72, 0.71, 0.69}) b.runs.push_back({0, 0, v, false});
  b.runs.push_back({0, 4, 0.99, true});  // excluded, must not count
  auto w = eval::compare_reports(a, b);
  CHECK(w.t > 0.0);
  CHECK(w.p < 0.01);
}

TEST_CASE("censored survivors and false-positive rates") {
  std::vector<cohort::PatientRecord> recs(4);
  recs[0].patient_id = "A";  // censored at 7y -> in subgroup
  recs[0].followup_years = 7.0;
  recs[1].patient_id = "B";  // censored at 3y -> too short
  recs[1].followup_years = 3.0;
  recs[2].patient_id = "C";  // event at 6y -> positive, not censored
  recs[2].event_observed = true;
  recs[2].event_time_years = 6.0;
  recs[2].followup_years = 12.0;
  recs[3].patient_id = "D";  // full follow-up, negative
  recs[3].followup_years = 12.0;
  auto sub = eval::censored_survivors(recs, 10.0, 5.0);
  CHECK(sub == std::vector<std::string>{"A"});

  CHECK(eval::fp_rate({{0.1, 0.2, 0.3}}, 1.0).mean == 0.0);
  CHECK(eval::fp_rate({{0.1, 0.2, 0.3}}, 0.0).mean == 1.0);
  auto r = eval::fp_rate({{0.9, 0.1}, {0.9, 0.9}}, 0.5);
  CHECK(r.mean == doctest::Approx(0.75));
  CHECK(r.se == doctest::Approx(0.25));
  CHECK_THROWS_AS(eval::fp_rate({}, 0.5), ValidationError);
}

TEST_CASE("prepare_dataset crops usable halves and logs exclusions") {
  synth::GeneratorConfig gc;
  gc.n_patients = 30;
  gc.seed = 17;
  gc.xray_rows = 96;
  gc.xray_cols = 192;
  gc.implant_rate = 0.15;
  gc.incomplete_rate = 0.15;
  auto cohort = synth::generate_cohort(gc);

  eval::PrepareConfig pc;
  pc.crop_size = 48;
  pc.truth = &cohort.truth;
  auto data = eval::prepare_dataset(cohort, pc);
  CHECK(data.patients.size() == 30);
  CHECK(data.crop_size == 48);

  std::size_t halves = 0;
  for (const auto& p : data.patients) {
    for (const auto& h : p.halves) {
      CHECK(h.crop.rows == 48);
      CHECK(h.crop.cols == 48);
    }
    halves += p.halves.size();
  }
  CHECK(halves + data.exclusions.size() == 60);
  bool saw_implant = false, saw_incomplete = false;
  for (const auto& e : data.exclusions) {
    saw_implant = saw_implant || e.find(",implant") != std::string::npos;
    saw_incomplete =
        saw_incomplete || e.find(",incomplete") != std::string::npos;
  }
  CHECK(saw_implant);
  CHECK(saw_incomplete);

  eval::PrepareConfig bad;
  CHECK_THROWS_AS(eval::prepare_dataset(cohort, bad), ValidationError);
}

TEST_CASE("pipeline scorers run end to end on a small cohort") {
  synth::GeneratorConfig gc;
  gc.n_patients = 120;
  gc.seed = 23;
  gc.xray_rows = 64;
  gc.xray_cols = 128;
  gc.target_prevalence = 0.25;  // keep folds two-class at this size
  auto cohort = synth::generate_cohort(gc);

  eval::PrepareConfig pc;
  pc.crop_size = 32;
  pc.truth = &cohort.truth;
  auto data = eval::prepare_dataset(cohort, pc);
  eval::PipelineContext ctx(data);

  std::vector<std::string> ids, censored;
  std::vector<int> labels;
  eval::protocol_labels(data, gc.horizon_years, ids, labels, &censored);
  CHECK(ids.size() + censored.size() == 120);
  CHECK(!censored.empty());

  eval::ProtocolConfig cfg;
  cfg.k = 4;
  cfg.seed = 5;

  // external baseline: the generator's score column is the true probability
  eval::ModelSpec ext;
  ext.kind = eval::ModelKind::External;
  auto rext = eval::run_protocol(ids, labels,
                                 eval::make_scorer(ctx, ext), cfg);
  CHECK(rext.runs.size() == 4);
  CHECK(rext.mean_auc > 0.7);

  // Cox on risk factors only
  eval::ModelSpec cox;
  cox.kind = eval::ModelKind::Cox;
  cox.inputs = risk::RiskInputs::RfOnly;
  auto rcox = eval::run_protocol(ids, labels,
                                 eval::make_scorer(ctx, cox), cfg);
  CHECK(rcox.mean_auc > 0.5);

  // FORM, image + risk factors, with subgroup score collection
  auto sub = eval::censored_survivors(cohort.records, gc.horizon_years);
  eval::ModelSpec formspec;
  formspec.extractor.backbone_channels = {4, 8};
  formspec.extractor.train.epochs = 4;
  formspec.extractor.train.lr = 1e-3;
  formspec.risk.train.epochs = 10;
  formspec.risk.train.lr = 5e-3;
  std::vector<std::vector<double>> sub_scores;
  auto rform = eval::run_protocol(
      ids, labels, eval::make_scorer(ctx, formspec, sub, &sub_scores), cfg);
  CHECK(rform.runs.size() == 4);
  CHECK(rform.mean_auc > 0.5);
  CHECK(sub_scores.size() == 4);
  auto fp = eval::fp_rate(sub_scores, 0.5);
  CHECK(fp.mean >= 0.0);
  CHECK(fp.mean <= 1.0);

  // identical protocol rerun is bit-identical (feature cache included)
  eval::PipelineContext ctx2(data);
  auto rform2 = eval::run_protocol(ids, labels,
                                   eval::make_scorer(ctx2, formspec), cfg);
  CHECK(rform.mean_auc == rform2.mean_auc);
}
