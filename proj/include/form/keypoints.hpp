#pragma once

#include <array>
#include <string>
#include <vector>

#include "form/anatomy.hpp"
#include "form/grid.hpp"
#include "form/nn/network.hpp"
#include "form/preprocess.hpp"

namespace form::keypoints {

struct DetectorConfig {
  int input_size = 56;  // square detector input; heatmaps share this size
  double sigma = 2.0;   // Gaussian target stddev, detector-input pixels
  std::vector<int> trunk_channels = {8, 16};
  int heat_hidden = 32;  // 1x1 mixing layer ahead of the heatmap readout
  int class_hidden = 32;
  // balances the sparse-heatmap MSE against the 3-class cross-entropy
  double heat_loss_weight = 5.0;
  int epochs = 30;
  int batch = 16;
  double lr = 5e-3;
  std::uint64_t seed = 0;
  // pure-noise samples mixed in (labeled Incomplete) so off-distribution
  // inputs are not classified Complete
  double noise_fraction = 0.05;
  bool verbose = false;  // per-epoch loss trace on stderr
};

struct TrainSample {
  Grid2D half;  // canonical right-oriented hip half
  std::array<PointRC, kNumKeyPoints> keypoints;  // half-frame coordinates
  Completeness cls = Completeness::Complete;
};

/// Heatmap-regression keypoint detector with a completeness classification
/// head on the shared trunk. Coordinates are refined by center-of-mass over
/// a 5x5 window around each heatmap argmax.
class Detector {
 public:
  Detector() = default;

  bool trained() const { return trained_; }
  int input_size() const { return cfg_.input_size; }

  /// Keypoints in half-frame coordinates plus completeness class and its
  /// softmax confidence. Throws if the detector is untrained.
  preprocess::KeyPointSet detect(const Grid2D& half) const;

  void save(const std::string& dir) const;
  static Detector load(const std::string& dir);

  friend Detector train_detector(const std::vector<TrainSample>& samples,
                                 const DetectorConfig& cfg);

 private:
  DetectorConfig cfg_;
  mutable nn::Sequential<float> trunk_;
  mutable nn::Sequential<float> heat_head_;
  mutable nn::Sequential<float> cls_head_;
  // static location priors (Gaussians at the training-mean keypoint
  // positions), concatenated into the heatmap head input
  nn::Tensor<float> priors_;
  bool trained_ = false;
};

/// Joint training: MSE on Gaussian heatmaps + class-weighted cross-entropy
/// on completeness, Adam over the shared trunk and both heads.
Detector train_detector(const std::vector<TrainSample>& samples,
                        const DetectorConfig& cfg);

/// Mean Euclidean keypoint error (half-frame pixels) over Complete samples.
double mean_keypoint_error(const Detector& det,
                           const std::vector<TrainSample>& samples);

}  // namespace form::keypoints
