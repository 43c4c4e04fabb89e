#include "form/extractor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "form/errors.hpp"

namespace form::extractor {

void ExtractorConfig::validate() const {
  if (backbone_channels.empty())
    throw ValidationError("extractor: backbone needs at least one conv block");
  for (int c : backbone_channels)
    if (c <= 0) throw ValidationError("extractor: channel width must be > 0");
  if (input_size < 4)
    throw ValidationError("extractor: input_size too small");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ValidationError("extractor: dropout must lie in [0,1)");
}

nn::Sequential<float> build_extractor(const ExtractorConfig& config, Rng& rng) {
  config.validate();
  std::vector<nn::LayerSpec> specs;
  for (int ch : config.backbone_channels) {
    specs.push_back(nn::conv_spec(ch, 3, 2));
    specs.push_back(nn::relu_spec());
  }
  specs.push_back(nn::gap_spec());
  specs.push_back(nn::fc_spec(128));
  specs.push_back(nn::relu_spec());
  specs.push_back(nn::dropout_spec(config.dropout));
  specs.push_back(nn::fc_spec(2));
  return nn::build_network<float>(specs, {1, config.input_size,
                                          config.input_size}, rng);
}

Grid2D augment(const Grid2D& image, Rng& rng) {
  if (image.empty()) throw ValidationError("augment: empty image");
  const bool flip = rng.uniform() < 0.5;
  const double zoom = 0.9 + 0.2 * rng.uniform();
  const double scale = 0.9 + 0.2 * rng.uniform();
  const double shift = -0.05 + 0.1 * rng.uniform();

  Grid2D out(image.rows, image.cols);
  const double cr = 0.5 * (image.rows - 1);
  const double cc = 0.5 * (image.cols - 1);
  for (int r = 0; r < image.rows; ++r) {
    for (int c = 0; c < image.cols; ++c) {
      const int cs = flip ? image.cols - 1 - c : c;
      const double sr = cr + (r - cr) / zoom;
      const double sc = cc + (cs - cc) / zoom;
      double v = bilinear(image, static_cast<float>(sr),
                          static_cast<float>(sc));
      v = scale * v + shift;
      out.at(r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

nn::Tensor<float> crop_tensor(const Grid2D& crop) {
  if (crop.empty()) throw ValidationError("crop_tensor: empty image");
  nn::Tensor<float> t({1, crop.rows, crop.cols});
  t.v = crop.v;
  return t;
}

namespace {

Grid2D tensor_crop(const nn::Tensor<float>& t) {
  Grid2D g(t.dims[1], t.dims[2]);
  g.v = t.v;
  return g;
}

}  // namespace

TrainedExtractor train_extractor(const std::vector<Grid2D>& train_crops,
                                 const std::vector<int>& train_labels,
                                 const std::vector<Grid2D>& val_crops,
                                 const std::vector<int>& val_labels,
                                 const ExtractorConfig& config) {
  config.validate();
  for (const auto& g : train_crops)
    if (g.rows != config.input_size || g.cols != config.input_size)
      throw ValidationError("train_extractor: crop size mismatch");

  Rng init(derive_seed(config.train.seed, 0xEB1));
  TrainedExtractor out{build_extractor(config, init), {}};

  std::vector<nn::Tensor<float>> tx, vx;
  tx.reserve(train_crops.size());
  for (const auto& g : train_crops) tx.push_back(crop_tensor(g));
  vx.reserve(val_crops.size());
  for (const auto& g : val_crops) vx.push_back(crop_tensor(g));

  nn::Augmenter<float> aug = [](const nn::Tensor<float>& x, Rng& rng) {
    return crop_tensor(augment(tensor_crop(x), rng));
  };
  out.result = nn::train_classifier(out.net, tx, train_labels, vx, val_labels,
                                    config.train, aug);
  return out;
}

std::size_t gap_index(const nn::Sequential<float>& net) {
  for (std::size_t i = 0; i < net.size(); ++i)
    if (net.layer(i).spec().kind == nn::LayerSpec::Kind::GlobalAveragePool)
      return i;
  throw ValidationError("gap_index: network has no global-average-pool layer");
}

std::vector<float> extract_gap_features(nn::Sequential<float>& net,
                                        const Grid2D& crop) {
  Rng rng(0);  // eval mode, no randomness consumed
  nn::Tensor<float> x = crop_tensor(crop);
  x.dims.insert(x.dims.begin(), 1);
  nn::Tensor<float> f =
      net.forward_prefix(x, gap_index(net) + 1, /*training=*/false, rng);
  return f.v;
}

void write_features(const std::string& csv_path, const std::string& fgrid_path,
                    const std::vector<FeatureVector>& features) {
  if (features.empty())
    throw ValidationError("write_features: empty feature set");
  const std::size_t d = features.front().values.size();
  std::ofstream os(csv_path);
  if (!os) throw IoError("write_features: cannot open " + csv_path);
  os << "patient_id,side";
  for (std::size_t i = 0; i < d; ++i) os << ",f_" << i;
  os << "\n";
  Grid2D mat(static_cast<int>(features.size()), static_cast<int>(d));
  for (std::size_t r = 0; r < features.size(); ++r) {
    const auto& f = features[r];
    if (f.values.size() != d)
      throw ValidationError("write_features: ragged feature vector");
    os << f.patient_id << ',' << side_name(f.side);
    char buf[32];
    for (std::size_t i = 0; i < d; ++i) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(f.values[i]));
      os << ',' << buf;
      mat.at(static_cast<int>(r), static_cast<int>(i)) = f.values[i];
    }
    os << "\n";
  }
  if (!os) throw IoError("write_features: write failed for " + csv_path);
  write_fgrid(fgrid_path, mat);
}

std::vector<FeatureVector> read_features(const std::string& csv_path) {
  std::ifstream is(csv_path);
  if (!is) throw IoError("read_features: cannot open " + csv_path);
  std::string line;
  if (!std::getline(is, line))
    throw IoError("read_features: missing header in " + csv_path);
  std::vector<FeatureVector> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    FeatureVector f;
    std::string cell;
    if (!std::getline(ls, f.patient_id, ','))
      throw IoError("read_features: malformed row in " + csv_path);
    if (!std::getline(ls, cell, ','))
      throw IoError("read_features: malformed row in " + csv_path);
    if (cell == side_name(Side::Left))
      f.side = Side::Left;
    else if (cell == side_name(Side::Right))
      f.side = Side::Right;
    else
      throw IoError("read_features: unknown side '" + cell + "'");
    while (std::getline(ls, cell, ','))
      f.values.push_back(std::stof(cell));
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace form::extractor
