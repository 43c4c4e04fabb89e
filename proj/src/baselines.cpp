#include "form/baselines.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "form/stats.hpp"

namespace form::baselines {

MatrixXd PCAProjection::transform(const MatrixXd& x) const {
  return (x.rowwise() - mean.transpose()) * components.transpose();
}

PCAProjection pca_fit(const MatrixXd& x, int n_components) {
  const auto n = x.rows();
  const auto d = x.cols();
  if (n_components < 1) throw ValidationError("pca_fit: n_components < 1");
  if (n <= n_components)
    throw ValidationError("pca_fit: need n_samples > n_components");

  PCAProjection p;
  p.mean = x.colwise().mean();
  MatrixXd centered = x.rowwise() - p.mean.transpose();
  Eigen::BDCSVD<MatrixXd> svd(centered, Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();

  double total_var = sv.array().square().sum();
  if (total_var <= 0.0)
    throw ValidationError("pca_fit: zero-variance data");
  if (n_components > sv.size() ||
      sv(n_components - 1) <= 1e-12 * sv(0))
    throw ValidationError("pca_fit: rank below n_components");

  p.components = svd.matrixV().leftCols(n_components).transpose();
  p.explained_variance_fraction.resize(n_components);
  for (int i = 0; i < n_components; ++i)
    p.explained_variance_fraction(i) = sv(i) * sv(i) / total_var;

  // deterministic sign: largest-magnitude entry of each component positive
  for (int i = 0; i < n_components; ++i) {
    Eigen::Index j;
    p.components.row(i).cwiseAbs().maxCoeff(&j);
    if (p.components(i, j) < 0.0) p.components.row(i) *= -1.0;
  }
  (void)d;
  return p;
}

// ---------------------------------------------------------------------------

namespace {

struct EventGroup {
  double time;
  std::vector<Eigen::Index> events;   // subjects with an event at this time
  std::vector<Eigen::Index> entering; // subjects joining the risk set here
                                      // (time >= this, < previous group time)
};

// Groups ordered by decreasing time so the risk set grows incrementally.
std::vector<EventGroup> build_groups(const VectorXd& times,
                                     const std::vector<int>& flags) {
  const auto n = times.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return times(a) > times(b);
  });

  // distinct event times, descending
  std::vector<double> event_times;
  for (Eigen::Index i = 0; i < n; ++i)
    if (flags[static_cast<std::size_t>(i)]) event_times.push_back(times(i));
  std::sort(event_times.begin(), event_times.end(), std::greater<>());
  event_times.erase(std::unique(event_times.begin(), event_times.end()),
                    event_times.end());

  std::vector<EventGroup> groups;
  std::size_t cursor = 0;
  for (double t : event_times) {
    EventGroup g;
    g.time = t;
    while (cursor < order.size() && times(order[cursor]) >= t) {
      g.entering.push_back(order[cursor]);
      ++cursor;
    }
    for (Eigen::Index i = 0; i < n; ++i)
      if (flags[static_cast<std::size_t>(i)] && times(i) == t)
        g.events.push_back(i);
    groups.push_back(std::move(g));
  }
  return groups;
}

struct LikelihoodParts {
  double loglik = 0.0;
  VectorXd grad;
  MatrixXd neg_hessian;  // observed information
};

LikelihoodParts cox_parts(const MatrixXd& x, const VectorXd& times,
                          const std::vector<int>& flags, const VectorXd& beta,
                          TieMethod ties, bool with_derivs) {
  const auto p = x.cols();
  LikelihoodParts out;
  out.grad = VectorXd::Zero(p);
  out.neg_hessian = MatrixXd::Zero(p, p);

  VectorXd eta = x * beta;
  // stabilize exponentials by the global max linear predictor
  const double eta_max = eta.size() ? eta.maxCoeff() : 0.0;

  auto groups = build_groups(times, flags);
  double s0 = 0.0;
  VectorXd s1 = VectorXd::Zero(p);
  MatrixXd s2 = MatrixXd::Zero(p, p);

  for (const auto& g : groups) {
    for (Eigen::Index i : g.entering) {
      double w = std::exp(eta(i) - eta_max);
      s0 += w;
      s1 += w * x.row(i).transpose();
      if (with_derivs)
        s2 += w * (x.row(i).transpose() * x.row(i));
    }
    const double d = static_cast<double>(g.events.size());

    // tie-set sums (Efron correction)
    double s0d = 0.0;
    VectorXd s1d = VectorXd::Zero(p);
    MatrixXd s2d = MatrixXd::Zero(p, p);
    if (ties == TieMethod::Efron && g.events.size() > 1) {
      for (Eigen::Index i : g.events) {
        double w = std::exp(eta(i) - eta_max);
        s0d += w;
        s1d += w * x.row(i).transpose();
        if (with_derivs) s2d += w * (x.row(i).transpose() * x.row(i));
      }
    }

    for (Eigen::Index i : g.events) {
      out.loglik += eta(i) - eta_max;
      if (with_derivs) out.grad += x.row(i).transpose();
    }

    if (ties == TieMethod::Breslow || g.events.size() == 1) {
      out.loglik -= d * std::log(s0);
      if (with_derivs) {
        VectorXd xb = s1 / s0;
        out.grad -= d * xb;
        out.neg_hessian += d * (s2 / s0 - xb * xb.transpose());
      }
    } else {
      for (std::size_t l = 0; l < g.events.size(); ++l) {
        double f = static_cast<double>(l) / d;
        double den = s0 - f * s0d;
        out.loglik -= std::log(den);
        if (with_derivs) {
          VectorXd num = s1 - f * s1d;
          VectorXd xb = num / den;
          out.grad -= xb;
          out.neg_hessian += (s2 - f * s2d) / den - xb * xb.transpose();
        }
      }
    }
  }
  return out;
}

}  // namespace

double cox_log_partial_likelihood(const MatrixXd& covariates,
                                  const VectorXd& event_times,
                                  const std::vector<int>& event_flags,
                                  const VectorXd& beta, TieMethod ties) {
  return cox_parts(covariates, event_times, event_flags, beta, ties, false)
      .loglik;
}

CoxModel cox_fit(const MatrixXd& covariates, const VectorXd& event_times,
                 const std::vector<int>& event_flags, const CoxConfig& config,
                 const std::vector<std::string>& names) {
  const auto n = covariates.rows();
  const auto p = covariates.cols();
  if (event_times.size() != n ||
      static_cast<Eigen::Index>(event_flags.size()) != n)
    throw ValidationError("cox_fit: size mismatch");
  int n_events = std::accumulate(event_flags.begin(), event_flags.end(), 0);
  if (n_events == 0) throw ValidationError("cox_fit: no events");
  for (Eigen::Index i = 0; i < n; ++i)
    if (event_times(i) < 0.0)
      throw ValidationError("cox_fit: negative event time");

  // monotone-likelihood guard; separated data walks beta past this bound
  // long before the gradient can reach tolerance
  constexpr double kBetaLimit = 15.0;

  CoxModel model;
  model.covariate_names = names;
  model.beta = VectorXd::Zero(p);
  auto cur = cox_parts(covariates, event_times, event_flags, model.beta,
                       config.ties, true);

  int iter = 0;
  for (; iter < config.max_iter; ++iter) {
    model.final_gradient_norm = cur.grad.lpNorm<Eigen::Infinity>();
    if (model.final_gradient_norm < config.tol) break;

    // ridge the information matrix just enough to solve
    MatrixXd info = cur.neg_hessian;
    info.diagonal().array() += 1e-10;
    VectorXd delta = info.ldlt().solve(cur.grad);

    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h < 30; ++h) {
      VectorXd cand = model.beta + step * delta;
      auto cand_parts = cox_parts(covariates, event_times, event_flags, cand,
                                  config.ties, true);
      if (std::isfinite(cand_parts.loglik) &&
          cand_parts.loglik >= cur.loglik - 1e-12) {
        model.beta = cand;
        cur = std::move(cand_parts);
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted)
      throw CoxDivergenceError(
          "cox_fit: step halving failed to improve the likelihood");
    if (model.beta.lpNorm<Eigen::Infinity>() > kBetaLimit)
      throw CoxDivergenceError(
          "cox_fit: coefficients diverging (monotone likelihood / "
          "separation suspected)");
  }
  model.iterations = iter;
  model.final_gradient_norm = cur.grad.lpNorm<Eigen::Infinity>();
  if (model.final_gradient_norm >= config.tol)
    throw CoxDivergenceError(
        "cox_fit: no convergence after " + std::to_string(config.max_iter) +
        " iterations (gradient norm " +
        std::to_string(model.final_gradient_norm) + ")");
  model.log_partial_likelihood = cur.loglik;

  // Wald statistics from the inverse observed information
  MatrixXd info = cur.neg_hessian;
  info.diagonal().array() += 1e-12;
  MatrixXd cov = info.inverse();
  model.standard_errors.resize(p);
  model.wald_p.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    model.standard_errors(j) = std::sqrt(std::max(0.0, cov(j, j)));
    if (model.standard_errors(j) > 0.0) {
      double z = model.beta(j) / model.standard_errors(j);
      model.wald_p(j) = 2.0 * (1.0 - stats::normal_cdf(std::fabs(z)));
    } else {
      model.wald_p(j) = 1.0;
    }
  }
  return model;
}

VectorXd cox_predict(const CoxModel& model, const MatrixXd& covariates) {
  if (covariates.cols() != model.beta.size())
    throw ValidationError("cox_predict: covariate dimension mismatch");
  return covariates * model.beta;
}

std::string cox_report_json(const CoxModel& model) {
  std::ostringstream os;
  os.precision(12);
  os << "{\n  \"log_partial_likelihood\": " << model.log_partial_likelihood
     << ",\n  \"iterations\": " << model.iterations
     << ",\n  \"final_gradient_norm\": " << model.final_gradient_norm
     << ",\n  \"covariates\": [\n";
  for (Eigen::Index j = 0; j < model.beta.size(); ++j) {
    std::string name = j < static_cast<Eigen::Index>(
                               model.covariate_names.size())
                           ? model.covariate_names[static_cast<std::size_t>(j)]
                           : "x" + std::to_string(j);
    os << "    {\"name\": \"" << name << "\", \"beta\": " << model.beta(j)
       << ", \"se\": " << model.standard_errors(j)
       << ", \"wald_p\": " << model.wald_p(j) << "}";
    if (j + 1 < model.beta.size()) os << ",";
    os << "\n";
  }
  os << "  ]\n}\n";
  return os.str();
}

std::vector<double> external_scores(
    const std::vector<cohort::PatientRecord>& records,
    const std::string& score_column) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = r.rf_values.find(score_column);
    if (it == r.rf_values.end() || std::isnan(it->second))
      throw ValidationError("external score column '" + score_column +
                            "' missing for patient " + r.patient_id);
    out.push_back(it->second);
  }
  return out;
}

}  // namespace form::baselines
