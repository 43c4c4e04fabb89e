#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "form/cohort.hpp"
#include "form/errors.hpp"

namespace form::baselines {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// PCA

struct PCAProjection {
  VectorXd mean;          // feature means of the training data
  MatrixXd components;    // n_components x D, orthonormal rows
  VectorXd explained_variance_fraction;  // non-increasing

  MatrixXd transform(const MatrixXd& x) const;  // rows = samples
};

/// Centered SVD PCA. Sign convention: the largest-magnitude entry of each
/// component is positive. Throws on rank deficiency below n_components.
PCAProjection pca_fit(const MatrixXd& x, int n_components);

// ---------------------------------------------------------------------------
// Cox proportional hazards (Breslow ties, Newton-Raphson with step halving)

enum class TieMethod { Breslow, Efron };

struct CoxConfig {
  double tol = 1e-8;  // convergence on gradient infinity norm
  int max_iter = 100;
  TieMethod ties = TieMethod::Breslow;
};

struct CoxModel {
  VectorXd beta;
  std::vector<std::string> covariate_names;
  int iterations = 0;
  double final_gradient_norm = 0.0;
  double log_partial_likelihood = 0.0;
  VectorXd standard_errors;  // from inverse observed information
  VectorXd wald_p;           // two-sided
};

class CoxDivergenceError : public NumericFault {
 public:
  explicit CoxDivergenceError(const std::string& msg) : NumericFault(msg) {}
};

/// Breslow (or Efron) log partial likelihood at beta; exposed for oracles.
double cox_log_partial_likelihood(const MatrixXd& covariates,
                                  const VectorXd& event_times,
                                  const std::vector<int>& event_flags,
                                  const VectorXd& beta,
                                  TieMethod ties = TieMethod::Breslow);

CoxModel cox_fit(const MatrixXd& covariates, const VectorXd& event_times,
                 const std::vector<int>& event_flags,
                 const CoxConfig& config = {},
                 const std::vector<std::string>& names = {});

/// Linear predictor beta . x per row (monotone in hazard).
VectorXd cox_predict(const CoxModel& model, const MatrixXd& covariates);

/// JSON coefficient report (beta, SE, Wald p per covariate).
std::string cox_report_json(const CoxModel& model);

// ---------------------------------------------------------------------------
// External-score baseline: passthrough of a supplied score column
// (e.g. a FRAX-style score ingested as data).

std::vector<double> external_scores(
    const std::vector<cohort::PatientRecord>& records,
    const std::string& score_column);

}  // namespace form::baselines
