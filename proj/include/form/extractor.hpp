#pragma once

#include <string>
#include <vector>

#include "form/anatomy.hpp"
#include "form/grid.hpp"
#include "form/nn/train.hpp"
#include "form/rng.hpp"

namespace form::extractor {

struct ExtractorConfig {
  // stride-2 conv blocks; the last width is the GAP feature dimension D
  std::vector<int> backbone_channels = {8, 16, 32, 64};
  int input_size = 96;  // square crop edge
  double dropout = 0.5;
  nn::TrainConfig train;  // 50 epochs, batch 36, lr 1e-4 defaults

  int feature_width() const { return backbone_channels.back(); }
  void validate() const;
};

/// Backbone conv blocks -> D-channel GAP -> FC(128) -> Dropout -> FC(2);
/// softmax is applied by the prediction helpers, training runs on logits.
nn::Sequential<float> build_extractor(const ExtractorConfig& config, Rng& rng);

/// Horizontal flip (p=0.5), central zoom in [0.9,1.1], intensity scale in
/// [0.9,1.1] plus shift in [-0.05,0.05], clamped to [0,1].
Grid2D augment(const Grid2D& image, Rng& rng);

nn::Tensor<float> crop_tensor(const Grid2D& crop);

struct TrainedExtractor {
  nn::Sequential<float> net;
  nn::TrainResult result;
};

/// Classifier training with augmentation; the checkpoint with the best
/// validation AUC is restored into the returned network.
TrainedExtractor train_extractor(const std::vector<Grid2D>& train_crops,
                                 const std::vector<int>& train_labels,
                                 const std::vector<Grid2D>& val_crops,
                                 const std::vector<int>& val_labels,
                                 const ExtractorConfig& config);

/// Index of the GAP layer inside an extractor network.
std::size_t gap_index(const nn::Sequential<float>& net);

/// GAP activations (pre-head), eval mode; length = configured D.
std::vector<float> extract_gap_features(nn::Sequential<float>& net,
                                        const Grid2D& crop);

struct FeatureVector {
  std::string patient_id;
  Side side = Side::Right;
  std::vector<float> values;
};

// Feature store: CSV (patient_id, side, f_0..f_{D-1}) plus an FGRID matrix
// holding one row per feature vector in file order.
void write_features(const std::string& csv_path, const std::string& fgrid_path,
                    const std::vector<FeatureVector>& features);
std::vector<FeatureVector> read_features(const std::string& csv_path);

}  // namespace form::extractor
