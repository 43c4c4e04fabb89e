#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "form/anatomy.hpp"
#include "form/cohort.hpp"
#include "form/grid.hpp"
#include "form/rng.hpp"

namespace form::synth {

using form::Completeness;
using form::Modality;
using form::PointRC;
using form::Side;

struct GeneratorConfig {
  int n_patients = 500;
  std::uint64_t seed = 0;

  double ct_fraction = 0.0;  // fraction of patients imaged with CT
  // CT volume dims (depth, rows, cols); rows include the phantom/table bands
  int ct_depth = 32;
  int ct_rows = 160;
  int ct_cols = 256;
  // X-ray dims (rows, cols); both hips side by side
  int xray_rows = 224;
  int xray_cols = 448;

  // phantom/table complex at the bottom of CT volumes
  int phantom_gap_px = 2;    // anatomy .. phantom
  int phantom_band_px = 8;
  int table_gap_px = 4;
  int table_band_px = 6;

  // hazard model: p = logistic(a0 + a1*(-q) + a2*age_z + a3*fall +
  //                            a4*smoking + a5*(q*age_z))
  double a1 = 1.2;
  double a2 = 0.8;
  double a3 = 0.7;
  double a4 = 0.5;
  double a5 = 0.5;
  double target_prevalence = 0.03;  // calibrates a0 by bisection
  double horizon_years = 10.0;

  double censor_fraction = 1.0 / 3.0;
  double implant_rate = 0.04;     // per hip half
  double incomplete_rate = 0.04;  // per hip half

  double fall_rate = 0.25;
  double smoking_rate = 0.30;

  // CT voxel scale; the Global rescale divides by this constant
  double ct_intensity_scale = 2.0;

  void validate() const;
  int ct_anatomy_rows() const {
    return ct_rows - phantom_gap_px - phantom_band_px - table_gap_px -
           table_band_px;
  }
};

struct SideTruth {
  std::array<PointRC, kNumKeyPoints> keypoints;  // half-frame coordinates
  Completeness completeness = Completeness::Complete;
};

struct PatientTruth {
  double q = 0.0;       // latent bone quality
  double p = 0.0;       // true fracture probability within the horizon
  bool fracture_within_horizon = false;
  double age_z = 0.0;
  int fall = 0;
  int smoking = 0;
  int phantom_crop_row = -1;  // CT only
  std::array<SideTruth, 2> sides;
};

struct ImageStudy {
  std::string patient_id;
  Modality modality = Modality::Xray;
  Grid2D image;   // XRAY: both hips
  Grid3D volume;  // CT3D
};

struct SyntheticCohort {
  GeneratorConfig config;
  cohort::RiskFactorSchema schema;  // normalization stats unfitted
  std::vector<cohort::PatientRecord> records;
  std::vector<ImageStudy> studies;  // index-aligned with records
  std::vector<PatientTruth> truth;  // index-aligned with records
};

/// Deterministic synthetic cohort from the known generative hazard model.
/// Per-patient seeds derive from the master seed, so per-patient work is
/// order-independent.
SyntheticCohort generate_cohort(const GeneratorConfig& config);

/// Intercept a0 solving mean(p) == target_prevalence by Monte-Carlo
/// bisection; deterministic for a fixed config.
double calibrate_intercept(const GeneratorConfig& config);

/// Risk-factor schema emitted by the generator (age/bmi in Base; case-history
/// booleans in Multiple; abmd/tbs/ext_score in their densitometric groups).
cohort::RiskFactorSchema synthetic_schema();

enum class PredictorScope { ImageOnly, RfOnly, Both };

struct BayesAucResult {
  double auc = 0.0;
  double se = 0.0;  // bootstrap SE over patients
};

/// AUC of the true conditional fracture probability restricted to the
/// scope's inputs; unobserved inputs are integrated out by Monte Carlo.
/// Upper-bounds any learned model on that scope.
BayesAucResult bayes_auc(const GeneratorConfig& config,
                         const std::vector<PatientTruth>& truth,
                         PredictorScope scope, std::uint64_t mc_seed = 1234,
                         int mc_draws = 256, int bootstrap = 64);

/// Canonical right-oriented hip half; exposed for preprocessing tests.
Grid2D render_half(int rows, int cols, double q, Completeness completeness,
                   Rng& rng, SideTruth* truth_out);

// On-disk dataset layout: manifest.csv, schema.json, index.csv (patient_id,
// modality, side, path), grids/*.fgrid, truth.json (tests only).
void write_dataset(const std::string& dir, const SyntheticCohort& cohort);

struct ImageIndexEntry {
  std::string patient_id;
  Modality modality;
  std::string path;  // whole study: XRAY image or CT volume
};
std::vector<ImageIndexEntry> read_image_index(const std::string& dir);

std::vector<PatientTruth> read_truth(const std::string& path);

}  // namespace form::synth
