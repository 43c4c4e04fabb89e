#include "form/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "form/errors.hpp"
#include "form/preprocess.hpp"

namespace form::eval {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Fold assignment

std::vector<std::string> FoldAssignment::ids_in_fold(int f) const {
  std::vector<std::string> out;
  for (const auto& [id, fi] : fold)
    if (fi == f) out.push_back(id);
  return out;
}

std::vector<std::string> FoldAssignment::ids_not_in_fold(int f) const {
  std::vector<std::string> out;
  for (const auto& [id, fi] : fold)
    if (fi != f) out.push_back(id);
  return out;
}

FoldAssignment kfold_split(const std::vector<std::string>& patient_ids,
                           const std::vector<int>& event_labels, int k,
                           std::uint64_t seed) {
  if (k < 2) throw ValidationError("kfold_split: k must be >= 2");
  if (patient_ids.size() != event_labels.size())
    throw ValidationError("kfold_split: label count mismatch");
  if (static_cast<int>(patient_ids.size()) < k)
    throw ValidationError("kfold_split: fewer patients than folds");

  // shuffle within each event stratum, then deal round-robin with a rolling
  // fold counter so total sizes stay within one of each other
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < patient_ids.size(); ++i)
    (event_labels[i] ? pos : neg).push_back(i);
  Rng rng(derive_seed(seed, 0xF01D));
  std::shuffle(pos.begin(), pos.end(), rng.engine());
  std::shuffle(neg.begin(), neg.end(), rng.engine());

  FoldAssignment out;
  out.k = k;
  int next = 0;
  for (const auto* stratum : {&pos, &neg})
    for (std::size_t i : *stratum) {
      if (!out.fold.emplace(patient_ids[i], next).second)
        throw ValidationError("kfold_split: duplicate patient id " +
                              patient_ids[i]);
      next = (next + 1) % k;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Protocol

std::vector<double> EvaluationReport::included_aucs() const {
  std::vector<double> out;
  for (const auto& r : runs)
    if (!r.excluded) out.push_back(r.auc);
  return out;
}

EvaluationReport run_protocol(const std::vector<std::string>& patient_ids,
                              const std::vector<int>& labels,
                              const FoldScorer& scorer,
                              const ProtocolConfig& config) {
  if (config.reps < 1) throw ValidationError("run_protocol: reps must be >= 1");
  if (config.mode == ProtocolMode::Ablation &&
      (config.ablation_fold < 0 || config.ablation_fold >= config.k))
    throw ValidationError("run_protocol: ablation fold out of range");

  auto assignment = kfold_split(patient_ids, labels, config.k, config.seed);
  std::map<std::string, int> label_of;
  for (std::size_t i = 0; i < patient_ids.size(); ++i)
    label_of[patient_ids[i]] = labels[i];

  EvaluationReport report;
  report.config = config;

  std::vector<double> pooled_scores;
  std::vector<int> pooled_labels;

  std::vector<int> folds;
  if (config.mode == ProtocolMode::CrossValidation)
    for (int f = 0; f < config.k; ++f) folds.push_back(f);
  else
    folds.push_back(config.ablation_fold);

  for (int rep = 0; rep < config.reps; ++rep) {
    for (int f : folds) {
      FoldRun run;
      run.rep = rep;
      run.fold = f;
      const auto val_ids = assignment.ids_in_fold(f);
      const auto train_ids = assignment.ids_not_in_fold(f);
      auto scores = scorer(train_ids, val_ids,
                           derive_seed(config.seed, rep, f), rep, f);
      std::vector<double> s;
      std::vector<int> y;
      for (const auto& id : val_ids) {
        auto it = scores.find(id);
        if (it == scores.end()) {
          report.warnings.push_back("rep " + std::to_string(rep) + " fold " +
                                    std::to_string(f) + ": no score for " +
                                    id);
          continue;
        }
        s.push_back(it->second);
        y.push_back(label_of.at(id));
        run.predictions.push_back({id, it->second, f, rep});
      }
      try {
        run.auc = stats::roc_auc(s, y);
      } catch (const ValidationError&) {
        run.excluded = true;
        report.warnings.push_back(
            "rep " + std::to_string(rep) + " fold " + std::to_string(f) +
            ": single-class validation labels, excluded from aggregates");
      }
      if (!run.excluded) {
        pooled_scores.insert(pooled_scores.end(), s.begin(), s.end());
        pooled_labels.insert(pooled_labels.end(), y.begin(), y.end());
      }
      report.runs.push_back(std::move(run));
    }
  }

  const auto aucs = report.included_aucs();
  if (!aucs.empty()) {
    report.mean_auc = stats::mean(aucs);
    if (config.mode == ProtocolMode::CrossValidation) {
      // STD across per-fold means (folds averaged over repetitions first)
      std::map<int, std::vector<double>> by_fold;
      for (const auto& r : report.runs)
        if (!r.excluded) by_fold[r.fold].push_back(r.auc);
      std::vector<double> fold_means;
      for (const auto& [f, v] : by_fold) fold_means.push_back(stats::mean(v));
      report.spread =
          fold_means.size() >= 2 ? stats::sample_std(fold_means) : 0.0;
      report.spread_kind = "std_across_folds";
    } else {
      report.spread = aucs.size() >= 2 ? stats::standard_error(aucs) : 0.0;
      report.spread_kind = "se_across_reps";
    }
  }
  if (!pooled_scores.empty()) {
    try {
      report.roc = stats::roc_curve(pooled_scores, pooled_labels);
    } catch (const ValidationError&) {
      // pooled single-class; leave the curve empty
    }
  }
  return report;
}

stats::WelchResult compare_reports(const EvaluationReport& a,
                                   const EvaluationReport& b) {
  return stats::welch_test(a.included_aucs(), b.included_aucs());
}

void write_report(const std::string& dir, const EvaluationReport& report) {
  fs::create_directories(dir);
  json j;
  j["mode"] = report.config.mode == ProtocolMode::CrossValidation
                  ? "cross_validation"
                  : "ablation";
  j["k"] = report.config.k;
  j["reps"] = report.config.reps;
  j["ablation_fold"] = report.config.ablation_fold;
  j["seed"] = report.config.seed;
  j["mean_auc"] = report.mean_auc;
  j["spread"] = report.spread;
  j["spread_kind"] = report.spread_kind;
  j["warnings"] = report.warnings;
  j["runs"] = json::array();
  for (const auto& r : report.runs)
    j["runs"].push_back({{"rep", r.rep},
                         {"fold", r.fold},
                         {"auc", r.auc},
                         {"excluded", r.excluded}});
  {
    std::ofstream os(fs::path(dir) / "report.json");
    if (!os) throw IoError("write_report: cannot open report.json");
    os << j.dump(2) << "\n";
  }
  {
    std::ofstream os(fs::path(dir) / "fold_aucs.csv");
    if (!os) throw IoError("write_report: cannot open fold_aucs.csv");
    os << "rep,fold,auc,excluded\n";
    char buf[32];
    for (const auto& r : report.runs) {
      std::snprintf(buf, sizeof buf, "%.9g", r.auc);
      os << r.rep << ',' << r.fold << ',' << (r.excluded ? "" : buf) << ','
         << (r.excluded ? 1 : 0) << "\n";
    }
  }
  {
    std::ofstream os(fs::path(dir) / "roc_points.csv");
    if (!os) throw IoError("write_report: cannot open roc_points.csv");
    os << "fpr,tpr,threshold\n";
    char buf[96];
    for (const auto& p : report.roc) {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", p.fpr, p.tpr,
                    p.threshold);
      os << buf;
    }
  }
}

// ---------------------------------------------------------------------------
// Censored-subgroup analysis

std::vector<std::string> censored_survivors(
    const std::vector<cohort::PatientRecord>& records, double horizon_years,
    double min_years) {
  std::vector<std::string> out;
  for (const auto& r : records) {
    auto label = cohort::label_fracture(r, horizon_years);
    if (label.status == cohort::OutcomeStatus::Censored &&
        r.followup_years >= min_years)
      out.push_back(r.patient_id);
  }
  return out;
}

FpRate fp_rate(const std::vector<std::vector<double>>& per_rep_scores,
               double threshold) {
  if (per_rep_scores.empty())
    throw ValidationError("fp_rate: no repetitions");
  std::vector<double> rates;
  for (const auto& scores : per_rep_scores) {
    if (scores.empty()) throw ValidationError("fp_rate: empty subgroup");
    std::size_t fp = 0;
    for (double s : scores)
      if (s >= threshold) ++fp;
    rates.push_back(static_cast<double>(fp) /
                    static_cast<double>(scores.size()));
  }
  FpRate out;
  out.mean = stats::mean(rates);
  out.se = rates.size() >= 2 ? stats::standard_error(rates) : 0.0;
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing pipeline

namespace {

preprocess::KeyPointSet truth_keypoints(const synth::SideTruth& st) {
  preprocess::KeyPointSet kps;
  for (int k = 0; k < kNumKeyPoints; ++k) kps.points[k] = st.keypoints[k];
  kps.completeness = st.completeness;
  kps.confidence = 1.0;
  return kps;
}

}  // namespace

PreparedDataset prepare_dataset(const synth::SyntheticCohort& cohort,
                                const PrepareConfig& config) {
  if (!config.detector && !config.truth)
    throw ValidationError(
        "prepare_dataset: need a detector or ground-truth keypoints");
  if (config.detector && !config.detector->trained())
    throw ValidationError("prepare_dataset: detector is untrained");

  PreparedDataset out;
  out.schema = cohort.schema;
  out.crop_size = config.crop_size;

  for (std::size_t i = 0; i < cohort.records.size(); ++i) {
    const auto& study = cohort.studies[i];
    PreparedPatient pp;
    pp.record = cohort.records[i];

    Grid2D frontal;
    bool degenerate = false;
    if (study.modality == Modality::Ct3D) {
      auto crop = preprocess::detect_phantom_crop(study.volume);
      const Grid3D* vol = &study.volume;
      Grid3D cropped;
      if (crop.found) {
        cropped = preprocess::crop_volume(study.volume, crop.crop_row);
        vol = &cropped;
      }
      Grid2D proj = preprocess::project_coronal(*vol, config.projection);
      auto res = preprocess::rescale(proj, preprocess::RescaleMode::Global,
                                     config.ct_intensity_scale);
      frontal = std::move(res.image);
      degenerate = res.degenerate;
    } else {
      auto res =
          preprocess::rescale(study.image, preprocess::RescaleMode::PerPatient);
      frontal = std::move(res.image);
      degenerate = res.degenerate;
    }
    if (degenerate) {
      for (Side side : {Side::Right, Side::Left})
        out.exclusions.push_back(pp.record.patient_id + "," +
                                 side_name(side) + ",degenerate_image");
      out.patients.push_back(std::move(pp));
      continue;
    }

    auto halves = preprocess::split_halves(frontal);
    for (Side side : {Side::Right, Side::Left}) {
      const Grid2D& half =
          side == Side::Right ? halves.right : halves.left_flipped;
      preprocess::KeyPointSet kps =
          config.detector
              ? config.detector->detect(half)
              : truth_keypoints(
                    (*config.truth)[i].sides[static_cast<int>(side)]);
      std::string reason;
      if (kps.completeness != Completeness::Complete)
        reason = completeness_name(kps.completeness);
      else if (!preprocess::completeness_filter(kps, study.modality))
        reason = "low_confidence";
      if (reason.empty()) {
        try {
          PreparedHalf ph;
          ph.side = side;
          ph.crop = preprocess::crop_femur(half, kps, config.crop_size);
          pp.halves.push_back(std::move(ph));
        } catch (const ValidationError&) {
          reason = "degenerate_crop";
        }
      }
      if (!reason.empty())
        out.exclusions.push_back(pp.record.patient_id + "," +
                                 side_name(side) + "," + reason);
    }
    out.patients.push_back(std::move(pp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model scorers

namespace {

std::map<std::string, std::size_t> index_of(const PreparedDataset& data) {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < data.patients.size(); ++i)
    out[data.patients[i].record.patient_id] = i;
  return out;
}

int outcome_label(const cohort::PatientRecord& record, double horizon) {
  auto l = cohort::label_fracture(record, horizon);
  switch (l.status) {
    case cohort::OutcomeStatus::Positive: return 1;
    case cohort::OutcomeStatus::Negative: return 0;
    case cohort::OutcomeStatus::Censored:
      throw ValidationError("outcome_label: censored patient " +
                            record.patient_id);
  }
  return 0;
}

double safe_fold_auc(const std::vector<double>& s, const std::vector<int>& y) {
  try {
    return stats::roc_auc(s, y);
  } catch (const ValidationError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace

void protocol_labels(const PreparedDataset& data, double horizon_years,
                     std::vector<std::string>& ids, std::vector<int>& labels,
                     std::vector<std::string>* censored_out) {
  ids.clear();
  labels.clear();
  for (const auto& p : data.patients) {
    auto l = cohort::label_fracture(p.record, horizon_years);
    if (l.status == cohort::OutcomeStatus::Censored) {
      if (censored_out) censored_out->push_back(p.record.patient_id);
      continue;
    }
    ids.push_back(p.record.patient_id);
    labels.push_back(l.status == cohort::OutcomeStatus::Positive ? 1 : 0);
  }
}

std::shared_ptr<const std::vector<std::vector<std::vector<float>>>>
PipelineContext::features(const std::vector<std::string>& fit_ids,
                          const std::vector<std::string>& tune_ids,
                          std::uint64_t seed, const ModelSpec& spec) {
  auto it = cache_.find(seed);
  if (it != cache_.end()) return it->second;

  const auto& data = *data_;
  auto idx = index_of(data);

  extractor::ExtractorConfig cfg = spec.extractor;
  cfg.input_size = data.crop_size;
  cfg.train.seed = derive_seed(seed, 1);

  std::vector<Grid2D> tx, vx;
  std::vector<int> ty, vy;
  auto gather = [&](const std::vector<std::string>& ids,
                    std::vector<Grid2D>& xs, std::vector<int>& ys) {
    for (const auto& id : ids) {
      const auto& p = data.patients[idx.at(id)];
      const int y = outcome_label(p.record, spec.horizon_years);
      for (const auto& h : p.halves) {
        xs.push_back(h.crop);
        ys.push_back(y);
      }
    }
  };
  gather(fit_ids, tx, ty);
  gather(tune_ids, vx, vy);
  if (tx.empty())
    throw ValidationError("pipeline: no usable training halves");

  auto trained = extractor::train_extractor(tx, ty, vx, vy, cfg);

  auto feats = std::make_shared<std::vector<std::vector<std::vector<float>>>>(
      data.patients.size());
  for (std::size_t i = 0; i < data.patients.size(); ++i)
    for (const auto& h : data.patients[i].halves)
      (*feats)[i].push_back(
          extractor::extract_gap_features(trained.net, h.crop));
  cache_[seed] = feats;
  return feats;
}

FoldScorer make_scorer(PipelineContext& ctx, const ModelSpec& spec,
                       const std::vector<std::string>& subgroup,
                       std::vector<std::vector<double>>* subgroup_scores) {
  return [&ctx, spec, subgroup, subgroup_scores](
             const std::vector<std::string>& train_ids,
             const std::vector<std::string>& val_ids, std::uint64_t seed,
             int /*rep*/, int /*fold*/) -> std::map<std::string, double> {
    const auto& data = ctx.data();
    auto idx = index_of(data);

    // inner split of the training fold: models fit on fit_ids and use
    // tune_ids for checkpointing / model selection, so the protocol
    // validation fold never influences training
    std::vector<std::string> fit_ids = train_ids, tune_ids;
    if (train_ids.size() >= 10) {
      std::vector<int> tl;
      for (const auto& id : train_ids)
        tl.push_back(outcome_label(data.patients[idx.at(id)].record,
                                   spec.horizon_years));
      auto inner = kfold_split(train_ids, tl, 5, derive_seed(seed, 0x1A));
      fit_ids = inner.ids_not_in_fold(0);
      tune_ids = inner.ids_in_fold(0);
    } else {
      tune_ids = train_ids;  // too small to split; tune in-sample
    }

    const bool use_image = spec.kind != ModelKind::External &&
                           spec.inputs != risk::RiskInputs::RfOnly;
    const bool use_rf = spec.kind != ModelKind::External &&
                        spec.inputs != risk::RiskInputs::ImageOnly;

    std::shared_ptr<const std::vector<std::vector<std::vector<float>>>> feats;
    if (use_image) feats = ctx.features(fit_ids, tune_ids, seed, spec);

    // risk-factor encoding normalized on the training split only
    cohort::RiskFactorSchema fitted = data.schema;
    std::map<std::string, std::vector<double>> rf;
    if (use_rf) {
      std::vector<cohort::PatientRecord> train_records;
      for (const auto& id : train_ids)
        train_records.push_back(data.patients[idx.at(id)].record);
      fitted = cohort::fit_normalization(train_records, data.schema);
      auto encode_all = [&](const std::vector<std::string>& ids) {
        for (const auto& id : ids) {
          if (rf.count(id)) continue;
          try {
            rf[id] = cohort::encode_risk_factors(
                data.patients[idx.at(id)].record, fitted, spec.rf_group);
          } catch (const cohort::MissingRfError&) {
            // patient excluded from this run
          }
        }
      };
      encode_all(train_ids);
      encode_all(val_ids);
      encode_all(subgroup);
    }

    std::map<std::string, double> out;
    std::vector<double> sub_scores;

    if (spec.kind == ModelKind::External) {
      auto score_of = [&](const std::string& id) {
        const auto& vals = data.patients[idx.at(id)].record.rf_values;
        auto it = vals.find(spec.external_column);
        if (it == vals.end())
          throw ValidationError("external baseline: missing column '" +
                                spec.external_column + "' for " + id);
        return it->second;
      };
      for (const auto& id : val_ids) out[id] = score_of(id);
      for (const auto& id : subgroup) sub_scores.push_back(score_of(id));
    } else if (spec.kind == ModelKind::Form) {
      // standardize GAP features on the training halves; their raw scale is
      // tiny and would otherwise be drowned out by the unit-scale risk factors
      std::vector<float> fmean, fstd;
      if (use_image) {
        std::size_t count = 0;
        for (const auto& id : train_ids) {
          for (const auto& f : (*feats)[idx.at(id)]) {
            if (fmean.empty()) fmean.assign(f.size(), 0.0f);
            for (std::size_t j = 0; j < f.size(); ++j) fmean[j] += f[j];
            ++count;
          }
        }
        if (count == 0)
          throw ValidationError("pipeline: no usable training halves");
        for (auto& m : fmean) m /= static_cast<float>(count);
        fstd.assign(fmean.size(), 0.0f);
        for (const auto& id : train_ids)
          for (const auto& f : (*feats)[idx.at(id)])
            for (std::size_t j = 0; j < f.size(); ++j) {
              const float d = f[j] - fmean[j];
              fstd[j] += d * d;
            }
        for (auto& s : fstd) {
          s = std::sqrt(s / static_cast<float>(count));
          if (s < 1e-8f) s = 1.0f;
        }
      }
      auto standardize = [&](std::vector<float> f) {
        for (std::size_t j = 0; j < f.size(); ++j)
          f[j] = (f[j] - fmean[j]) / fstd[j];
        return f;
      };
      const int k_rf =
          use_rf ? fitted.encoded_width(spec.rf_group) : 0;
      risk::RiskModelConfig rcfg = spec.risk;
      rcfg.inputs = spec.inputs;
      rcfg.feature_width = use_image ? spec.extractor.feature_width() : 0;
      rcfg.rf_width = k_rf;
      rcfg.train.seed = derive_seed(seed, 2);

      auto samples_of = [&](const std::string& id,
                            std::vector<risk::RiskSample>& xs) -> bool {
        const auto& p = data.patients[idx.at(id)];
        std::vector<float> rfe;
        if (use_rf) {
          auto it = rf.find(id);
          if (it == rf.end()) return false;
          rfe.assign(it->second.begin(), it->second.end());
        }
        if (!use_image) {
          risk::RiskSample s;
          s.rf = rfe;
          xs.push_back(std::move(s));
          return true;
        }
        if (p.halves.empty()) return false;
        for (std::size_t h = 0; h < p.halves.size(); ++h) {
          risk::RiskSample s;
          s.image = standardize((*feats)[idx.at(id)][h]);
          s.rf = rfe;
          xs.push_back(std::move(s));
        }
        return true;
      };

      std::vector<risk::RiskSample> tx, vx;
      std::vector<int> ty, vy;
      auto gather = [&](const std::vector<std::string>& ids,
                        std::vector<risk::RiskSample>& xs,
                        std::vector<int>& ys) {
        for (const auto& id : ids) {
          std::vector<risk::RiskSample> s;
          if (!samples_of(id, s)) continue;
          const int y =
              outcome_label(data.patients[idx.at(id)].record,
                            spec.horizon_years);
          for (auto& x : s) {
            xs.push_back(std::move(x));
            ys.push_back(y);
          }
        }
      };
      gather(fit_ids, tx, ty);
      gather(tune_ids, vx, vy);
      auto model = risk::train_risk_model(tx, ty, vx, vy, rcfg);

      auto patient_score = [&](const std::string& id, double& score) -> bool {
        std::vector<risk::RiskSample> s;
        if (!samples_of(id, s)) return false;
        score = risk::aggregate_patient_score(model.predict(s));
        return true;
      };
      for (const auto& id : val_ids) {
        double sc;
        if (patient_score(id, sc)) out[id] = sc;
      }
      for (const auto& id : subgroup) {
        double sc;
        if (patient_score(id, sc)) sub_scores.push_back(sc);
      }
    } else {  // Cox baseline on PCA-reduced GAP features + risk factors
      auto covariate_of = [&](const std::string& id,
                              std::vector<double>& img_part,
                              std::vector<double>& rf_part) -> bool {
        const auto& p = data.patients[idx.at(id)];
        if (use_image) {
          if (p.halves.empty()) return false;
          const auto& f = (*feats)[idx.at(id)];
          img_part.assign(f[0].size(), 0.0);
          for (const auto& h : f)
            for (std::size_t j = 0; j < h.size(); ++j) img_part[j] += h[j];
          for (auto& v : img_part) v /= static_cast<double>(f.size());
        }
        if (use_rf) {
          auto it = rf.find(id);
          if (it == rf.end()) return false;
          rf_part = it->second;
        }
        return true;
      };

      std::vector<std::string> tids;
      std::vector<std::vector<double>> timg, trf;
      for (const auto& id : fit_ids) {
        std::vector<double> a, b;
        if (!covariate_of(id, a, b)) continue;
        tids.push_back(id);
        timg.push_back(std::move(a));
        trf.push_back(std::move(b));
      }
      if (tids.empty())
        throw ValidationError("cox baseline: no usable training patients");

      Eigen::VectorXd times(static_cast<int>(tids.size()));
      std::vector<int> flags(tids.size());
      for (std::size_t i = 0; i < tids.size(); ++i) {
        const auto& rec = data.patients[idx.at(tids[i])].record;
        const bool event = rec.event_observed &&
                           rec.event_time_years.value_or(1e18) <=
                               spec.horizon_years;
        flags[i] = event ? 1 : 0;
        times(static_cast<int>(i)) =
            event ? *rec.event_time_years
                  : std::min(rec.followup_years, spec.horizon_years);
      }

      // side-averaged PCA image features; component count picked on the
      // inner tuning split of the training fold
      std::vector<int> comp_options;
      if (use_image) {
        Eigen::MatrixXd fmat(static_cast<int>(timg.size()),
                             static_cast<int>(timg[0].size()));
        for (std::size_t i = 0; i < timg.size(); ++i)
          for (std::size_t j = 0; j < timg[i].size(); ++j)
            fmat(static_cast<int>(i), static_cast<int>(j)) = timg[i][j];
        for (int n = 1; n <= spec.max_pca_components; ++n)
          comp_options.push_back(n);

        double best_auc = -1.0;
        baselines::CoxModel best_model;
        baselines::PCAProjection best_pca;
        Eigen::VectorXd best_scale;
        int best_n = 0;
        for (int n : comp_options) {
          baselines::PCAProjection pca;
          try {
            pca = baselines::pca_fit(fmat, n);
          } catch (const ValidationError&) {
            break;  // rank exhausted
          }
          const int width = n + static_cast<int>(trf[0].size());
          Eigen::MatrixXd covs(fmat.rows(), width);
          Eigen::MatrixXd proj = pca.transform(fmat);
          // standardize the projected columns: raw GAP variance is tiny, and
          // unit-scale covariates keep the Newton iteration well conditioned
          Eigen::VectorXd scale(n);
          for (int j = 0; j < n; ++j) {
            const double sd =
                std::sqrt(proj.col(j).squaredNorm() /
                          std::max(1, static_cast<int>(proj.rows()) - 1));
            scale(j) = sd > 1e-12 ? sd : 1.0;
          }
          for (int i = 0; i < covs.rows(); ++i) {
            for (int j = 0; j < n; ++j) covs(i, j) = proj(i, j) / scale(j);
            for (std::size_t j = 0; j < trf[i].size(); ++j)
              covs(i, n + static_cast<int>(j)) = trf[i][j];
          }
          baselines::CoxModel model;
          try {
            model = baselines::cox_fit(covs, times, flags);
          } catch (const NumericFault&) {
            continue;
          }
          // tuning-split AUC for this component count
          std::vector<double> vs;
          std::vector<int> vy;
          for (const auto& id : tune_ids) {
            std::vector<double> a, b;
            if (!covariate_of(id, a, b)) continue;
            Eigen::MatrixXd x(1, static_cast<int>(a.size()));
            for (std::size_t j = 0; j < a.size(); ++j)
              x(0, static_cast<int>(j)) = a[j];
            Eigen::MatrixXd xp = pca.transform(x);
            Eigen::MatrixXd cov(1, width);
            for (int j = 0; j < n; ++j) cov(0, j) = xp(0, j) / scale(j);
            for (std::size_t j = 0; j < b.size(); ++j)
              cov(0, n + static_cast<int>(j)) = b[j];
            vs.push_back(baselines::cox_predict(model, cov)(0));
            vy.push_back(
                outcome_label(data.patients[idx.at(id)].record,
                              spec.horizon_years));
          }
          const double auc = safe_fold_auc(vs, vy);
          if (!std::isnan(auc) && auc > best_auc) {
            best_auc = auc;
            best_model = model;
            best_pca = pca;
            best_scale = scale;
            best_n = n;
          }
        }
        if (best_n == 0)
          throw NumericFault("cox baseline: no component count converged");

        auto score_of = [&, best_n](const std::string& id, double& sc) {
          std::vector<double> a, b;
          if (!covariate_of(id, a, b)) return false;
          Eigen::MatrixXd x(1, static_cast<int>(a.size()));
          for (std::size_t j = 0; j < a.size(); ++j)
            x(0, static_cast<int>(j)) = a[j];
          Eigen::MatrixXd xp = best_pca.transform(x);
          Eigen::MatrixXd cov(1, best_n + static_cast<int>(b.size()));
          for (int j = 0; j < best_n; ++j) cov(0, j) = xp(0, j) / best_scale(j);
          for (std::size_t j = 0; j < b.size(); ++j)
            cov(0, best_n + static_cast<int>(j)) = b[j];
          sc = baselines::cox_predict(best_model, cov)(0);
          return true;
        };
        for (const auto& id : val_ids) {
          double sc;
          if (score_of(id, sc)) out[id] = sc;
        }
        for (const auto& id : subgroup) {
          double sc;
          if (score_of(id, sc)) sub_scores.push_back(sc);
        }
      } else {
        // risk factors only
        const int width = static_cast<int>(trf[0].size());
        Eigen::MatrixXd covs(static_cast<int>(trf.size()), width);
        for (std::size_t i = 0; i < trf.size(); ++i)
          for (int j = 0; j < width; ++j)
            covs(static_cast<int>(i), j) = trf[i][j];
        auto model = baselines::cox_fit(covs, times, flags);
        auto score_of = [&](const std::string& id, double& sc) {
          std::vector<double> a, b;
          if (!covariate_of(id, a, b)) return false;
          Eigen::MatrixXd cov(1, width);
          for (int j = 0; j < width; ++j) cov(0, j) = b[j];
          sc = baselines::cox_predict(model, cov)(0);
          return true;
        };
        for (const auto& id : val_ids) {
          double sc;
          if (score_of(id, sc)) out[id] = sc;
        }
        for (const auto& id : subgroup) {
          double sc;
          if (score_of(id, sc)) sub_scores.push_back(sc);
        }
      }
    }

    if (subgroup_scores && !subgroup.empty())
      subgroup_scores->push_back(std::move(sub_scores));
    return out;
  };
}

}  // namespace form::eval
