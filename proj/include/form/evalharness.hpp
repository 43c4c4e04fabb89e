#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "form/baselines.hpp"
#include "form/cohort.hpp"
#include "form/extractor.hpp"
#include "form/keypoints.hpp"
#include "form/risk.hpp"
#include "form/stats.hpp"
#include "form/synthgen.hpp"

namespace form::eval {

// ---------------------------------------------------------------------------
// Fold assignment

struct FoldAssignment {
  int k = 0;
  std::map<std::string, int> fold;  // patient_id -> fold in [0, k)

  std::vector<std::string> ids_in_fold(int f) const;
  std::vector<std::string> ids_not_in_fold(int f) const;
};

/// Deterministic event-stratified patient-level partition; fold sizes differ
/// by at most one. Both image halves of a patient inherit the patient's fold.
FoldAssignment kfold_split(const std::vector<std::string>& patient_ids,
                           const std::vector<int>& event_labels, int k,
                           std::uint64_t seed);

// ---------------------------------------------------------------------------
// Protocol

enum class ProtocolMode {
  CrossValidation,  // all folds; spread = STD across fold means
  Ablation          // one fold, many repetitions; spread = SE across reps
};

struct ProtocolConfig {
  int k = 5;
  int reps = 1;
  ProtocolMode mode = ProtocolMode::CrossValidation;
  int ablation_fold = 0;
  std::uint64_t seed = 0;
};

struct FoldRun {
  int rep = 0;
  int fold = 0;
  double auc = std::numeric_limits<double>::quiet_NaN();
  bool excluded = false;  // single-class validation labels
  std::vector<risk::Prediction> predictions;
};

struct EvaluationReport {
  ProtocolConfig config;
  std::vector<FoldRun> runs;
  double mean_auc = std::numeric_limits<double>::quiet_NaN();
  double spread = 0.0;       // STD (cross-validation) or SE (ablation)
  std::string spread_kind;   // "std_across_folds" | "se_across_reps"
  std::vector<stats::RocPoint> roc;  // pooled over included runs
  std::vector<std::string> warnings;

  std::vector<double> included_aucs() const;
};

/// Scores every validation patient; keys of the returned map must cover
/// val_ids (missing ids are dropped from that run with a warning).
using FoldScorer = std::function<std::map<std::string, double>(
    const std::vector<std::string>& train_ids,
    const std::vector<std::string>& val_ids, std::uint64_t seed, int rep,
    int fold)>;

/// Grouped k-fold protocol with derived per-(rep,fold) seeds. The fold split
/// itself depends only on the master seed, so every model sees the same
/// partition. Single-class validation folds are excluded with a warning.
EvaluationReport run_protocol(const std::vector<std::string>& patient_ids,
                              const std::vector<int>& labels,
                              const FoldScorer& scorer,
                              const ProtocolConfig& config);

/// Welch test between the included per-run AUCs of two reports.
stats::WelchResult compare_reports(const EvaluationReport& a,
                                   const EvaluationReport& b);

// report.json + fold_aucs.csv + roc_points.csv
void write_report(const std::string& dir, const EvaluationReport& report);

// ---------------------------------------------------------------------------
// Censored-subgroup false-positive analysis

/// Patients censored fracture-free with at least `min_years` of follow-up.
std::vector<std::string> censored_survivors(
    const std::vector<cohort::PatientRecord>& records, double horizon_years,
    double min_years = 5.0);

struct FpRate {
  double mean = 0.0;
  double se = 0.0;  // across repetitions
};

/// Fraction of scores >= threshold, mean +- SE across repetitions.
FpRate fp_rate(const std::vector<std::vector<double>>& per_rep_scores,
               double threshold = 0.5);

// ---------------------------------------------------------------------------
// Pipeline: preprocessing + model scorers over a synthetic cohort

struct PreparedHalf {
  Side side = Side::Right;
  Grid2D crop;  // extractor-input crop, crop_size x crop_size
};

struct PreparedPatient {
  cohort::PatientRecord record;
  std::vector<PreparedHalf> halves;  // usable halves after filtering
};

struct PreparedDataset {
  cohort::RiskFactorSchema schema;
  std::vector<PreparedPatient> patients;
  std::vector<std::string> exclusions;  // "patient_id,side,reason" lines
  int crop_size = 0;
};

struct PrepareConfig {
  int crop_size = 64;
  // trained detector; when null, ground-truth keypoints are required
  const keypoints::Detector* detector = nullptr;
  const std::vector<synth::PatientTruth>* truth = nullptr;
  double ct_intensity_scale = 2.0;
  preprocess::Projection projection = preprocess::Projection::Mean;
};

/// Phantom crop + projection (CT), rescale, split, keypoints, completeness
/// filter, femur crop. Every dropped half lands in the exclusion log.
PreparedDataset prepare_dataset(const synth::SyntheticCohort& cohort,
                                const PrepareConfig& config);

enum class ModelKind { Form, Cox, External };

struct ModelSpec {
  ModelKind kind = ModelKind::Form;
  risk::RiskInputs inputs = risk::RiskInputs::Both;
  cohort::RfGroup rf_group = cohort::RfGroup::Base;
  double horizon_years = 10.0;
  std::string external_column = "ext_score";
  int max_pca_components = 5;  // Cox: picked in 1..max on the tuning split
  extractor::ExtractorConfig extractor;
  risk::RiskModelConfig risk;  // widths are filled per fold
};

/// Shared per-(seed) GAP-feature cache so FORM and the Cox baseline reuse the
/// same extractor training when run on identical folds and seeds.
class PipelineContext {
 public:
  explicit PipelineContext(const PreparedDataset& data) : data_(&data) {}

  const PreparedDataset& data() const { return *data_; }

  /// Per-half GAP features, indexed [patient][half]; trains (or reuses) the
  /// extractor for this seed. `fit_ids` are trained on; `tune_ids` only pick
  /// the checkpoint.
  std::shared_ptr<const std::vector<std::vector<std::vector<float>>>> features(
      const std::vector<std::string>& fit_ids,
      const std::vector<std::string>& tune_ids, std::uint64_t seed,
      const ModelSpec& spec);

 private:
  const PreparedDataset* data_;
  std::map<std::uint64_t,
           std::shared_ptr<const std::vector<std::vector<std::vector<float>>>>>
      cache_;
};

/// Patient labels usable for the protocol: censored-by-horizon patients are
/// excluded (their ids land in `censored_out` when given).
void protocol_labels(const PreparedDataset& data, double horizon_years,
                     std::vector<std::string>& ids, std::vector<int>& labels,
                     std::vector<std::string>* censored_out = nullptr);

/// FoldScorer for the given model over the prepared dataset. The returned
/// scorer also records subgroup scores: when `subgroup` is nonempty, each
/// call appends that run's scores on the subgroup ids to `subgroup_scores`.
FoldScorer make_scorer(PipelineContext& ctx, const ModelSpec& spec,
                       const std::vector<std::string>& subgroup = {},
                       std::vector<std::vector<double>>* subgroup_scores =
                           nullptr);

}  // namespace form::eval
