#include "form/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "form/errors.hpp"
#include "form/rng.hpp"
#include "form/stats.hpp"

namespace form::synth {

namespace fs = std::filesystem;
using nlohmann::json;

void GeneratorConfig::validate() const {
  if (n_patients < 1) throw ValidationError("n_patients must be positive");
  if (!(target_prevalence > 0.0 && target_prevalence < 1.0))
    throw ValidationError("target prevalence must lie in (0,1)");
  if (ct_fraction < 0.0 || ct_fraction > 1.0)
    throw ValidationError("ct_fraction must lie in [0,1]");
  if (xray_rows < 64 || xray_cols < 64)
    throw ValidationError("X-ray dims must be >= 64 per axis");
  if (xray_cols % 2 != 0)
    throw ValidationError("X-ray width must be even (two hip halves)");
  if (ct_depth < 32 || ct_rows < 32 || ct_cols < 32)
    throw ValidationError("CT dims must be >= 32 per axis");
  if (ct_cols % 2 != 0) throw ValidationError("CT width must be even");
  if (phantom_gap_px < 0 || phantom_band_px < 1 || table_gap_px < 0 ||
      table_band_px < 1)
    throw ValidationError("phantom/table band layout invalid");
  if (ct_anatomy_rows() < 24)
    throw ValidationError("CT anatomy region too small below the bands");
  if (censor_fraction < 0.0 || censor_fraction >= 1.0)
    throw ValidationError("censor_fraction must lie in [0,1)");
  if (implant_rate < 0 || incomplete_rate < 0 ||
      implant_rate + incomplete_rate > 1.0)
    throw ValidationError("implant/incomplete rates invalid");
  if (horizon_years <= 1.0) throw ValidationError("horizon too short");
  if (ct_intensity_scale <= 0.0)
    throw ValidationError("ct_intensity_scale must be positive");
}

namespace {

struct Covariates {
  double q = 0.0;
  double age = 74.0;
  double age_z = 0.0;
  int fall = 0;
  int smoking = 0;
};

Covariates draw_covariates(const GeneratorConfig& cfg, Rng& rng) {
  Covariates c;
  c.q = rng.normal();
  c.age = std::clamp(rng.normal(74.0, 6.0), 65.0, 95.0);
  c.age_z = (c.age - 74.0) / 6.0;
  c.fall = rng.bernoulli(cfg.fall_rate) ? 1 : 0;
  c.smoking = rng.bernoulli(cfg.smoking_rate) ? 1 : 0;
  return c;
}

double linear_score(const GeneratorConfig& cfg, double q, double age_z,
                    int fall, int smoking) {
  return cfg.a1 * (-q) + cfg.a2 * age_z + cfg.a3 * fall + cfg.a4 * smoking +
         cfg.a5 * (q * age_z);
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double point_segment_dist(double pr, double pc, double ar, double ac,
                          double br, double bc) {
  double dr = br - ar, dc = bc - ac;
  double len2 = dr * dr + dc * dc;
  double t = len2 > 0 ? ((pr - ar) * dr + (pc - ac) * dc) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double qr = ar + t * dr, qc = ac + t * dc;
  return std::hypot(pr - qr, pc - qc);
}

}  // namespace

double calibrate_intercept(const GeneratorConfig& cfg) {
  // Monte-Carlo bisection: mean logistic(a0 + score) == target prevalence.
  constexpr int kDraws = 200000;
  Rng rng(derive_seed(cfg.seed, 9001));
  std::vector<double> scores(kDraws);
  for (auto& s : scores) {
    auto c = draw_covariates(cfg, rng);
    s = linear_score(cfg, c.q, c.age_z, c.fall, c.smoking);
  }
  auto mean_p = [&](double a0) {
    double acc = 0.0;
    for (double s : scores) acc += logistic(a0 + s);
    return acc / kDraws;
  };
  double lo = -25.0, hi = 10.0;
  if (mean_p(lo) > cfg.target_prevalence || mean_p(hi) < cfg.target_prevalence)
    throw ValidationError(
        "prevalence calibration failed: target unreachable for the given "
        "hazard coefficients");
  for (int it = 0; it < 80; ++it) {
    double mid = 0.5 * (lo + hi);
    (mean_p(mid) < cfg.target_prevalence ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Grid2D render_half(int rows, int cols, double q, Completeness completeness,
                   Rng& rng, SideTruth* truth_out) {
  const double H = rows, W = cols;
  const double scale = std::min(H, W);

  // geometry jitter, drawn before any per-pixel noise
  const double hc_r0 = (0.30 + rng.uniform(-0.02, 0.02)) * H;
  const double hc_c = (0.64 + rng.uniform(-0.02, 0.02)) * W;
  const double R = (0.155 + rng.uniform(-0.008, 0.008)) * scale;
  const double sc = (0.38 + rng.uniform(-0.015, 0.015)) * W;
  const double hw = 0.055 * W;
  const double shaft_top0 = 0.46 * H;

  // cortical rim carries the bone-quality signal
  const double rim_w =
      scale * (0.032 + 0.013 * std::tanh(q / 1.5)) +
      rng.normal(0.0, 0.0008 * scale);
  const double rim_i =
      0.62 + 0.10 * std::tanh(q / 1.5) + rng.normal(0.0, 0.01);
  const double shaft_rim_w = 0.6 * rim_w;

  // incomplete halves are shifted so the femoral head leaves the frame
  const double shift = completeness == Completeness::Incomplete ? -0.22 * H : 0;
  const double hc_r = hc_r0 + shift;
  const double shaft_top = shaft_top0 + shift;

  const double gt_r = 0.44 * H + shift, gt_c = sc - 0.085 * W;
  const double gt_rad = 0.045 * scale;
  const double lt_r = 0.56 * H + shift, lt_c = sc + 0.075 * W;
  const double lt_rad = 0.032 * scale;
  const double neck_rad = 0.5 * R;

  Grid2D img(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      double val = 0.10 + 0.04 * (r / H);  // soft-tissue background
      double hd = std::hypot(r - hc_r, c - hc_c);
      if (hd <= R) val = std::max(val, hd >= R - rim_w ? rim_i : 0.38);
      if (point_segment_dist(r, c, hc_r, hc_c, shaft_top + 0.02 * H, sc) <=
          neck_rad)
        val = std::max(val, 0.40);
      if (r >= shaft_top && std::fabs(c - sc) <= hw)
        val = std::max(val, hw - std::fabs(c - sc) <= shaft_rim_w ? rim_i
                                                                  : 0.42);
      if (std::hypot(r - gt_r, c - gt_c) <= gt_rad) val = std::max(val, 0.48);
      if (std::hypot(r - lt_r, c - lt_c) <= lt_rad) val = std::max(val, 0.48);
      img.at(r, c) = static_cast<float>(val);
    }
  }

  if (completeness == Completeness::Implant) {
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        if (point_segment_dist(r, c, hc_r, hc_c, shaft_top + 0.06 * H, sc) <=
            0.35 * R)
          img.at(r, c) = 0.95f;
  }

  for (auto& v : img.v)
    v = std::clamp(v + static_cast<float>(rng.normal(0.0, 0.03)), 0.0f, 1.0f);

  if (truth_out != nullptr) {
    auto& kp = truth_out->keypoints;
    kp[0] = {hc_r - R, hc_c};          // head apex
    kp[1] = {hc_r, hc_c + R};          // head medial
    kp[2] = {hc_r, hc_c - R};          // head lateral
    kp[3] = {hc_r + R, hc_c};          // head inferior
    kp[4] = {0.5 * (hc_r + shaft_top), 0.5 * (hc_c + sc)};  // neck center
    kp[5] = {gt_r, gt_c - gt_rad};     // greater trochanter tip
    kp[6] = {lt_r, lt_c + lt_rad};     // lesser trochanter
    kp[7] = {0.62 * H + shift, sc};       // shaft centerline, upper
    kp[8] = {0.62 * H + shift, sc + hw};  // shaft medial edge, upper
    kp[9] = {0.85 * H + shift, sc};       // shaft centerline, lower
    kp[10] = {0.85 * H + shift, sc + hw};  // shaft medial edge, lower
    kp[11] = {0.96 * H + shift, sc};
    for (auto& p : kp) {
      p.row = std::clamp(p.row, 0.0, H - 1.0);
      p.col = std::clamp(p.col, 0.0, W - 1.0);
    }
    truth_out->completeness = completeness;
  }
  return img;
}

namespace {

Completeness draw_completeness(const GeneratorConfig& cfg, Rng& rng) {
  double u = rng.uniform();
  if (u < cfg.implant_rate) return Completeness::Implant;
  if (u < cfg.implant_rate + cfg.incomplete_rate)
    return Completeness::Incomplete;
  return Completeness::Complete;
}

// Compose a full coronal frame from two canonical halves: the right hip
// occupies the left half as-is; the left hip is mirrored into the right half
// so that splitting + flipping recovers the canonical orientation.
Grid2D compose_frontal(const Grid2D& right, const Grid2D& left) {
  int rows = right.rows, half = right.cols;
  Grid2D full(rows, 2 * half);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < half; ++c) {
      full.at(r, c) = right.at(r, c);
      full.at(r, half + c) = left.at(r, half - 1 - c);
    }
  return full;
}

}  // namespace

cohort::RiskFactorSchema synthetic_schema() {
  using cohort::RfEntry;
  using cohort::RfGroup;
  using cohort::RfKind;
  cohort::RiskFactorSchema s;
  auto both = std::vector<RfGroup>{RfGroup::Base, RfGroup::Multiple};
  auto multi = std::vector<RfGroup>{RfGroup::Multiple};
  s.entries = {
      RfEntry{"age", RfKind::Continuous, 0, both},
      RfEntry{"bmi", RfKind::Continuous, 0, both},
      RfEntry{"fall_history", RfKind::Categorical, 2, multi},
      RfEntry{"smoking", RfKind::Categorical, 2, multi},
      RfEntry{"alcohol", RfKind::Categorical, 2, multi},
      RfEntry{"cancer", RfKind::Categorical, 2, multi},
      RfEntry{"hypertension", RfKind::Categorical, 2, multi},
      RfEntry{"abmd", RfKind::Continuous, 0, {RfGroup::Abmd}},
      RfEntry{"tbs", RfKind::Continuous, 0, {RfGroup::Tbs}},
      RfEntry{"ext_score", RfKind::Continuous, 0, {RfGroup::Frax}},
  };
  s.validate();
  return s;
}

SyntheticCohort generate_cohort(const GeneratorConfig& config) {
  config.validate();
  const double a0 = calibrate_intercept(config);

  SyntheticCohort out;
  out.config = config;
  out.schema = synthetic_schema();
  out.records.resize(config.n_patients);
  out.studies.resize(config.n_patients);
  out.truth.resize(config.n_patients);

  const int half_w = config.xray_cols / 2;
  const int ct_half_w = config.ct_cols / 2;
  const int anatomy = config.ct_anatomy_rows();
  const double horizon = config.horizon_years;

  for (int i = 0; i < config.n_patients; ++i) {
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(i) + 1));
    auto& rec = out.records[i];
    auto& truth = out.truth[i];
    auto& study = out.studies[i];

    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "P%05d", i);
    rec.patient_id = idbuf;
    study.patient_id = idbuf;

    auto cov = draw_covariates(config, rng);
    double p = logistic(
        a0 + linear_score(config, cov.q, cov.age_z, cov.fall, cov.smoking));
    bool fracture = rng.bernoulli(p);
    double t_event = rng.uniform(0.2, horizon);
    double end_of_obs = rng.bernoulli(config.censor_fraction)
                            ? rng.uniform(0.5, horizon - 0.5)
                            : horizon + rng.uniform(0.5, 3.0);
    if (fracture && t_event <= end_of_obs) {
      rec.event_observed = true;
      rec.event_time_years = t_event;
      rec.followup_years = t_event;
    } else {
      rec.event_observed = false;
      rec.followup_years = end_of_obs;
    }

    rec.rf_values["age"] = cov.age;
    rec.rf_values["bmi"] = std::clamp(rng.normal(27.0, 4.0), 18.0, 40.0);
    rec.rf_values["fall_history"] = cov.fall;
    rec.rf_values["smoking"] = cov.smoking;
    rec.rf_values["alcohol"] = rng.bernoulli(0.20) ? 1 : 0;
    rec.rf_values["cancer"] = rng.bernoulli(0.10) ? 1 : 0;
    rec.rf_values["hypertension"] = rng.bernoulli(0.45) ? 1 : 0;
    rec.rf_values["abmd"] = 0.85 + 0.10 * cov.q + rng.normal(0.0, 0.02);
    rec.rf_values["tbs"] = 1.30 + 0.08 * cov.q + rng.normal(0.0, 0.03);
    rec.rf_values["ext_score"] = p;  // external score oracle: the true p

    truth.q = cov.q;
    truth.p = p;
    truth.fracture_within_horizon = fracture;
    truth.age_z = cov.age_z;
    truth.fall = cov.fall;
    truth.smoking = cov.smoking;

    study.modality =
        rng.bernoulli(config.ct_fraction) ? Modality::Ct3D : Modality::Xray;
    Completeness comp_r = draw_completeness(config, rng);
    Completeness comp_l = draw_completeness(config, rng);

    if (study.modality == Modality::Xray) {
      Grid2D right = render_half(config.xray_rows, half_w, cov.q, comp_r, rng,
                                 &truth.sides[0]);
      Grid2D left = render_half(config.xray_rows, half_w, cov.q, comp_l, rng,
                                &truth.sides[1]);
      study.image = compose_frontal(right, left);
    } else {
      Grid2D right =
          render_half(anatomy, ct_half_w, cov.q, comp_r, rng, &truth.sides[0]);
      Grid2D left =
          render_half(anatomy, ct_half_w, cov.q, comp_l, rng, &truth.sides[1]);
      Grid2D frontal = compose_frontal(right, left);

      // depth weights with mean exactly 1 so the mean projection recovers
      // the frontal template
      std::vector<double> w(config.ct_depth);
      double wsum = 0.0;
      for (int d = 0; d < config.ct_depth; ++d) {
        w[d] = 0.75 + 0.5 * std::sin(M_PI * (d + 0.5) / config.ct_depth);
        wsum += w[d];
      }
      for (auto& x : w) x *= config.ct_depth / wsum;

      const double cs = config.ct_intensity_scale;
      Grid3D vol(config.ct_depth, config.ct_rows, config.ct_cols);
      const int phantom_top = anatomy + config.phantom_gap_px;
      const int phantom_end = phantom_top + config.phantom_band_px;
      const int table_top = phantom_end + config.table_gap_px;
      for (int d = 0; d < config.ct_depth; ++d)
        for (int r = 0; r < config.ct_rows; ++r)
          for (int c = 0; c < config.ct_cols; ++c) {
            double base;
            if (r < anatomy)
              base = w[d] * frontal.at(r, c);
            else if (r >= phantom_top && r < phantom_end)
              base = 0.95;
            else if (r >= table_top)
              base = 0.55;
            else
              base = 0.04;
            vol.at(d, r, c) = static_cast<float>(
                std::max(0.0, cs * base + rng.normal(0.0, 0.015 * cs)));
          }
      study.volume = vol;
      truth.phantom_crop_row = phantom_top;
    }
  }
  return out;
}

BayesAucResult bayes_auc(const GeneratorConfig& config,
                         const std::vector<PatientTruth>& truth,
                         PredictorScope scope, std::uint64_t mc_seed,
                         int mc_draws, int bootstrap) {
  if (truth.size() < 500)
    throw ValidationError("bayes_auc needs at least 500 labeled patients");
  const double a0 = calibrate_intercept(config);

  std::size_t n = truth.size();
  std::vector<int> labels(n);
  std::vector<double> scores(n);
  int n_pos = 0;
  // common random numbers: one shared draw set for every patient, so a
  // constant conditional yields exact ties (AUC 0.5) instead of MC noise
  Rng rng(derive_seed(mc_seed, 1));
  std::vector<Covariates> draws(mc_draws);
  for (auto& d : draws) d = draw_covariates(config, rng);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = truth[i];
    labels[i] = t.fracture_within_horizon ? 1 : 0;
    n_pos += labels[i];
    switch (scope) {
      case PredictorScope::Both:
        scores[i] = t.p;
        break;
      case PredictorScope::RfOnly: {
        double acc = 0.0;
        for (const auto& d : draws)
          acc += logistic(
              a0 + linear_score(config, d.q, t.age_z, t.fall, t.smoking));
        scores[i] = acc / mc_draws;
        break;
      }
      case PredictorScope::ImageOnly: {
        double acc = 0.0;
        for (const auto& d : draws)
          acc += logistic(
              a0 + linear_score(config, t.q, d.age_z, d.fall, d.smoking));
        scores[i] = acc / mc_draws;
        break;
      }
    }
  }
  if (n_pos == 0 || n_pos == static_cast<int>(n))
    throw ValidationError("bayes_auc undefined: single-class cohort");

  BayesAucResult res;
  res.auc = stats::roc_auc(scores, labels);

  Rng brng(derive_seed(mc_seed, 2));
  std::vector<double> boots;
  std::vector<double> bs(n);
  std::vector<int> bl(n);
  for (int b = 0; b < bootstrap; ++b) {
    int pos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t j = brng.index(n);
      bs[i] = scores[j];
      bl[i] = labels[j];
      pos += bl[i];
    }
    if (pos == 0 || pos == static_cast<int>(n)) continue;
    boots.push_back(stats::roc_auc(bs, bl));
  }
  res.se = boots.size() > 1 ? stats::sample_std(boots) : 0.0;
  return res;
}

void write_dataset(const std::string& dir, const SyntheticCohort& cohort) {
  fs::create_directories(fs::path(dir) / "grids");
  cohort::write_manifest((fs::path(dir) / "manifest.csv").string(),
                         cohort.records, cohort.schema);
  cohort::write_schema((fs::path(dir) / "schema.json").string(),
                       cohort.schema);

  std::ofstream idx(fs::path(dir) / "index.csv");
  if (!idx) throw IoError("cannot write image index in " + dir);
  idx << "patient_id,modality,side,path\n";
  for (const auto& study : cohort.studies) {
    std::string name =
        study.patient_id + "_" + modality_name(study.modality) + ".fgrid";
    std::string path = (fs::path(dir) / "grids" / name).string();
    if (study.modality == Modality::Xray)
      write_fgrid(path, study.image);
    else
      write_fgrid(path, study.volume);
    // each grid holds the whole study; halves are produced by preprocessing
    idx << study.patient_id << ',' << modality_name(study.modality)
        << ",both,grids/" << name << '\n';
  }

  json root;
  root["patients"] = json::array();
  for (std::size_t i = 0; i < cohort.truth.size(); ++i) {
    const auto& t = cohort.truth[i];
    json jp;
    jp["id"] = cohort.records[i].patient_id;
    jp["q"] = t.q;
    jp["p"] = t.p;
    jp["fracture"] = t.fracture_within_horizon;
    jp["age_z"] = t.age_z;
    jp["fall"] = t.fall;
    jp["smoking"] = t.smoking;
    jp["phantom_crop_row"] = t.phantom_crop_row;
    jp["sides"] = json::array();
    for (const auto& side : t.sides) {
      json js;
      js["completeness"] = completeness_name(side.completeness);
      js["keypoints"] = json::array();
      for (const auto& kp : side.keypoints)
        js["keypoints"].push_back({kp.row, kp.col});
      jp["sides"].push_back(js);
    }
    root["patients"].push_back(jp);
  }
  std::ofstream tf(fs::path(dir) / "truth.json");
  if (!tf) throw IoError("cannot write ground truth in " + dir);
  tf << root.dump(1) << '\n';
}

std::vector<ImageIndexEntry> read_image_index(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "index.csv");
  if (!in) throw IoError("cannot read image index in " + dir);
  std::string line;
  std::getline(in, line);
  if (line != "patient_id,modality,side,path")
    throw IoError("bad image index header: " + line);
  std::vector<ImageIndexEntry> entries;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ImageIndexEntry e;
    std::size_t p1 = line.find(','), p2 = line.find(',', p1 + 1),
                p3 = line.find(',', p2 + 1);
    if (p3 == std::string::npos)
      throw IoError("bad image index row: " + line);
    e.patient_id = line.substr(0, p1);
    std::string mod = line.substr(p1 + 1, p2 - p1 - 1);
    if (mod == "xray")
      e.modality = Modality::Xray;
    else if (mod == "ct")
      e.modality = Modality::Ct3D;
    else
      throw IoError("unknown modality in index: " + mod);
    e.path = (fs::path(dir) / line.substr(p3 + 1)).string();
    entries.push_back(std::move(e));
  }
  return entries;
}

std::vector<PatientTruth> read_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read ground truth: " + path);
  json root = json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (root.is_discarded())
    throw IoError("malformed ground-truth JSON: " + path);
  std::vector<PatientTruth> out;
  for (const auto& jp : root.at("patients")) {
    PatientTruth t;
    t.q = jp.at("q").get<double>();
    t.p = jp.at("p").get<double>();
    t.fracture_within_horizon = jp.at("fracture").get<bool>();
    t.age_z = jp.at("age_z").get<double>();
    t.fall = jp.at("fall").get<int>();
    t.smoking = jp.at("smoking").get<int>();
    t.phantom_crop_row = jp.at("phantom_crop_row").get<int>();
    for (int s = 0; s < 2; ++s) {
      const auto& js = jp.at("sides").at(s);
      t.sides[s].completeness =
          parse_completeness(js.at("completeness").get<std::string>());
      for (int k = 0; k < kNumKeyPoints; ++k) {
        t.sides[s].keypoints[k].row =
            js.at("keypoints").at(k).at(0).get<double>();
        t.sides[s].keypoints[k].col =
            js.at("keypoints").at(k).at(1).get<double>();
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace form::synth
