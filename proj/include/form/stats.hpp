#pragma once

#include <span>
#include <vector>

namespace form::stats {

/// Tie-aware ROC AUC via midranks (Mann-Whitney concordance), O(n log n).
/// Throws ValidationError when one class is absent.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct WelchResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;  // two-sided
};

/// Two-sample Welch t-test with Welch-Satterthwaite degrees of freedom.
WelchResult welch_test(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> x);
/// Sample standard deviation (n-1 denominator).
double sample_std(std::span<const double> x);
/// Standard error of the mean, sample_std / sqrt(n).
double standard_error(std::span<const double> x);

/// Regularized incomplete beta function I_x(a, b).
double reg_inc_beta(double a, double b, double x);
/// CDF of Student's t with (possibly fractional) df degrees of freedom.
double student_t_cdf(double t, double df);
/// Standard normal CDF.
double normal_cdf(double z);

/// ROC curve points (fpr, tpr, threshold), one per distinct score.
struct RocPoint {
  double fpr, tpr, threshold;
};
std::vector<RocPoint> roc_curve(std::span<const double> scores,
                                std::span<const int> labels);

}  // namespace form::stats
