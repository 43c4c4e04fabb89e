#pragma once

#include <string>
#include <vector>

#include "form/nn/train.hpp"

namespace form::risk {

enum class RiskInputs { ImageOnly, RfOnly, Both };

RiskInputs parse_inputs(const std::string& name);
std::string inputs_name(RiskInputs inputs);

struct RiskModelConfig {
  RiskInputs inputs = RiskInputs::Both;
  int feature_width = 64;   // image feature length D (GAP output)
  int rf_width = 0;         // encoded risk-factor vector length k
  int width_multiplier = 5; // s: image branch reduces to s*k units
  double dropout = 0.5;
  nn::TrainConfig train;

  void validate() const;
  /// Image-branch output width: s*k when fusing with risk factors, a fixed
  /// 128 when running on image features alone.
  int branch_width() const;
  /// Fusion-head input width after concatenation.
  int head_width() const;
};

struct RiskSample {
  std::vector<float> image;  // empty for RfOnly
  std::vector<float> rf;     // empty for ImageOnly
};

/// Two-branch fracture-risk classifier: an image branch
/// FC(128)->ReLU->FC(branch_width)->ReLU reduces GAP features, the result is
/// concatenated with the encoded risk factors and scored by
/// Dropout->FC(128)->ReLU->FC(2) with softmax applied at prediction time.
class RiskModel {
 public:
  RiskModel() = default;

  bool trained() const { return trained_; }
  const RiskModelConfig& config() const { return cfg_; }
  const nn::TrainResult& train_result() const { return result_; }
  const nn::Sequential<float>& branch() const;
  const nn::Sequential<float>& head() const { return head_; }

  /// Positive-class probability; deterministic (dropout disabled).
  double predict(const RiskSample& sample) const;
  std::vector<double> predict(const std::vector<RiskSample>& samples) const;

  friend RiskModel train_risk_model(const std::vector<RiskSample>& train,
                                    const std::vector<int>& train_labels,
                                    const std::vector<RiskSample>& val,
                                    const std::vector<int>& val_labels,
                                    const RiskModelConfig& cfg);

 private:
  RiskModelConfig cfg_;
  mutable nn::Sequential<float> branch_;
  mutable nn::Sequential<float> head_;
  bool has_branch_ = false;
  bool trained_ = false;
  nn::TrainResult result_;
};

/// Adam + class-weighted cross-entropy over both branches jointly; the
/// checkpoint with the best validation AUC is restored before returning.
RiskModel train_risk_model(const std::vector<RiskSample>& train,
                           const std::vector<int>& train_labels,
                           const std::vector<RiskSample>& val,
                           const std::vector<int>& val_labels,
                           const RiskModelConfig& cfg);

/// Patient-level score from per-side probabilities: the maximum. Patients
/// without any usable side must be excluded upstream, so empty input throws.
double aggregate_patient_score(const std::vector<double>& side_scores);

struct Prediction {
  std::string patient_id;
  double probability = 0.0;
  int fold = 0;
  int repetition = 0;
};

// CSV: patient_id,probability,fold,repetition
void write_predictions(const std::string& path,
                       const std::vector<Prediction>& predictions);
std::vector<Prediction> read_predictions(const std::string& path);

}  // namespace form::risk
