#include "form/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "form/errors.hpp"
#include "form/nn/adam.hpp"
#include "form/nn/loss.hpp"
#include "form/nn/serialize.hpp"
#include "form/nn/train.hpp"
#include "form/rng.hpp"

namespace form::keypoints {

namespace fs = std::filesystem;
using nn::Tensor;

namespace {

int cls_index(Completeness c) {
  switch (c) {
    case Completeness::Complete: return 0;
    case Completeness::Incomplete: return 1;
    case Completeness::Implant: return 2;
  }
  return 0;
}

Completeness index_cls(int i) {
  switch (i) {
    case 0: return Completeness::Complete;
    case 1: return Completeness::Incomplete;
    default: return Completeness::Implant;
  }
}

// intensity plus normalized row/col coordinate channels; the coordinate
// channels let the small-receptive-field trunk disambiguate repeating local
// patterns (the shaft edge looks identical at every height)
constexpr int kInputChannels = 3;

Tensor<float> input_tensor(const Grid2D& g) {
  const int s = g.rows;
  Tensor<float> t({kInputChannels, g.rows, g.cols});
  std::copy(g.v.begin(), g.v.end(), t.v.begin());
  float* rows = t.v.data() + static_cast<std::size_t>(g.rows) * g.cols;
  float* cols = rows + static_cast<std::size_t>(g.rows) * g.cols;
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) {
      rows[r * g.cols + c] = static_cast<float>(r) / (s - 1);
      cols[r * g.cols + c] = static_cast<float>(c) / (g.cols - 1);
    }
  return t;
}

// pixel-center-aligned coordinate change between half frame and detector frame
PointRC to_detector(const PointRC& p, int half_rows, int half_cols, int s) {
  return {(p.row + 0.5) * s / half_rows - 0.5,
          (p.col + 0.5) * s / half_cols - 0.5};
}

PointRC to_half(const PointRC& p, int half_rows, int half_cols, int s) {
  return {(p.row + 0.5) * half_rows / s - 0.5,
          (p.col + 0.5) * half_cols / s - 0.5};
}

struct PreparedSample {
  Tensor<float> x;
  std::array<PointRC, kNumKeyPoints> kp;  // detector coords
  bool has_heatmap = true;                // false for pure-noise samples
  int label = 0;
};

void fill_heat_target(Tensor<float>& target, int sample,
                      const PreparedSample& ps, int s, double sigma) {
  float* base = target.v.data() +
                static_cast<std::size_t>(sample) * kNumKeyPoints * s * s;
  if (!ps.has_heatmap) return;  // stays zero
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int k = 0; k < kNumKeyPoints; ++k) {
    const auto& p = ps.kp[static_cast<std::size_t>(k)];
    float* map = base + static_cast<std::size_t>(k) * s * s;
    for (int i = 0; i < s; ++i) {
      double dr = i - p.row;
      for (int j = 0; j < s; ++j) {
        double dc = j - p.col;
        map[i * s + j] =
            static_cast<float>(std::exp(-(dr * dr + dc * dc) * inv));
      }
    }
  }
}

// heatmap head input: trunk features ++ raw input channels ++ location priors
Tensor<float> compose_head_input(const Tensor<float>& feat,
                                 const Tensor<float>& x,
                                 const Tensor<float>& priors) {
  const int b = feat.dims[0], s = feat.dims[2];
  const std::size_t fs = feat.sample_size(), xs = x.sample_size(),
                    ps = priors.v.size();
  Tensor<float> out({b, feat.dims[1] + x.dims[1] + priors.dims[0], s, s});
  for (int i = 0; i < b; ++i) {
    float* dst = out.v.data() + static_cast<std::size_t>(i) * (fs + xs + ps);
    std::copy(feat.sample(i), feat.sample(i) + fs, dst);
    std::copy(x.sample(i), x.sample(i) + xs, dst + fs);
    std::copy(priors.v.begin(), priors.v.end(), dst + fs + xs);
  }
  return out;
}

// slice of the head-input gradient that flows back into the trunk
Tensor<float> trunk_slice(const Tensor<float>& head_grad, int trunk_ch) {
  const int b = head_grad.dims[0], s = head_grad.dims[2];
  Tensor<float> out({b, trunk_ch, s, s});
  const std::size_t fs = out.sample_size(), hs = head_grad.sample_size();
  for (int i = 0; i < b; ++i)
    std::copy(head_grad.sample(i), head_grad.sample(i) + fs,
              out.v.data() + static_cast<std::size_t>(i) * fs);
  (void)hs;
  return out;
}

std::vector<double> presence_weights(const std::vector<int>& labels) {
  std::array<int, 3> counts{0, 0, 0};
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  int present = 0;
  for (int c : counts) present += c > 0;
  std::vector<double> w(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    w[i] = static_cast<double>(labels.size()) /
           (present * counts[static_cast<std::size_t>(labels[i])]);
  return w;
}

}  // namespace

Detector train_detector(const std::vector<TrainSample>& samples,
                        const DetectorConfig& cfg) {
  if (samples.empty())
    throw ValidationError("train_detector: no training samples");
  const int s = cfg.input_size;

  std::vector<PreparedSample> prep;
  prep.reserve(samples.size());
  for (const auto& ts : samples) {
    PreparedSample ps;
    ps.x = input_tensor(resample(ts.half, s, s));
    for (int k = 0; k < kNumKeyPoints; ++k)
      ps.kp[static_cast<std::size_t>(k)] = to_detector(
          ts.keypoints[static_cast<std::size_t>(k)], ts.half.rows,
          ts.half.cols, s);
    ps.label = cls_index(ts.cls);
    prep.push_back(std::move(ps));
  }
  // pure-noise padding labeled Incomplete
  Rng noise_rng(derive_seed(cfg.seed, 0x4015E));
  const int n_noise =
      static_cast<int>(std::lround(cfg.noise_fraction * samples.size()));
  for (int i = 0; i < n_noise; ++i) {
    PreparedSample ps;
    Grid2D ng(s, s);
    for (auto& v : ng.v) v = static_cast<float>(noise_rng.uniform());
    ps.x = input_tensor(ng);
    ps.has_heatmap = false;
    ps.label = cls_index(Completeness::Incomplete);
    prep.push_back(std::move(ps));
  }

  Detector det;
  det.cfg_ = cfg;
  Rng init(derive_seed(cfg.seed, 0x111));
  std::vector<nn::LayerSpec> trunk_specs;
  for (int ch : cfg.trunk_channels) {
    trunk_specs.push_back(nn::conv_spec(ch, 3, 1));
    trunk_specs.push_back(nn::relu_spec());
  }
  det.trunk_ =
      nn::build_network<float>(trunk_specs, {kInputChannels, s, s}, init);
  const int trunk_ch = cfg.trunk_channels.back();

  // location priors from the training-mean keypoint positions
  det.priors_ = Tensor<float>({kNumKeyPoints, s, s});
  {
    std::array<PointRC, kNumKeyPoints> mean_kp{};
    int n_kp = 0;
    for (const auto& ps : prep) {
      if (!ps.has_heatmap) continue;
      for (int k = 0; k < kNumKeyPoints; ++k) {
        mean_kp[static_cast<std::size_t>(k)].row +=
            ps.kp[static_cast<std::size_t>(k)].row;
        mean_kp[static_cast<std::size_t>(k)].col +=
            ps.kp[static_cast<std::size_t>(k)].col;
      }
      ++n_kp;
    }
    const double sp = 2.5 * cfg.sigma;  // broad enough to cover jitter
    for (int k = 0; k < kNumKeyPoints; ++k) {
      double mr = mean_kp[static_cast<std::size_t>(k)].row / n_kp;
      double mc = mean_kp[static_cast<std::size_t>(k)].col / n_kp;
      float* map = det.priors_.v.data() + static_cast<std::size_t>(k) * s * s;
      for (int i = 0; i < s; ++i)
        for (int j = 0; j < s; ++j)
          map[i * s + j] = static_cast<float>(std::exp(
              -((i - mr) * (i - mr) + (j - mc) * (j - mc)) /
              (2.0 * sp * sp)));
    }
  }

  const int head_ch = trunk_ch + kInputChannels + kNumKeyPoints;
  det.heat_head_ = nn::build_network<float>(
      {nn::conv_spec(cfg.heat_hidden, 1, 1), nn::relu_spec(),
       nn::conv_spec(kNumKeyPoints, 1, 1)},
      {head_ch, s, s}, init);
  det.cls_head_ = nn::build_network<float>(
      {nn::gap_spec(), nn::fc_spec(cfg.class_hidden), nn::relu_spec(),
       nn::fc_spec(3)},
      {trunk_ch, s, s}, init);

  std::vector<nn::Param<float>*> params;
  for (auto* p : det.trunk_.params()) params.push_back(p);
  for (auto* p : det.heat_head_.params()) params.push_back(p);
  for (auto* p : det.cls_head_.params()) params.push_back(p);
  nn::Adam<float> opt(params, cfg.lr);

  std::vector<int> all_labels;
  for (const auto& ps : prep) all_labels.push_back(ps.label);
  const std::vector<double> weights = presence_weights(all_labels);

  Rng rng(derive_seed(cfg.seed, 0x7247));
  std::vector<std::size_t> order(prep.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double mse_acc = 0.0, ce_acc = 0.0;
    int n_batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      std::vector<std::size_t> idx(
          order.begin() + start,
          order.begin() +
              std::min(order.size(),
                       start + static_cast<std::size_t>(cfg.batch)));
      const int b = static_cast<int>(idx.size());
      Tensor<float> x({b, kInputChannels, s, s});
      Tensor<float> heat_target({b, kNumKeyPoints, s, s});
      std::vector<int> yb;
      std::vector<double> wb;
      for (int i = 0; i < b; ++i) {
        const auto& ps = prep[idx[static_cast<std::size_t>(i)]];
        std::copy(ps.x.v.begin(), ps.x.v.end(),
                  x.v.begin() +
                      static_cast<std::size_t>(i) * kInputChannels * s * s);
        fill_heat_target(heat_target, i, ps, s, cfg.sigma);
        yb.push_back(ps.label);
        wb.push_back(weights[idx[static_cast<std::size_t>(i)]]);
      }

      for (auto* p : params) p->zero_grad();
      Tensor<float> feat = det.trunk_.forward(x, true, rng);
      Tensor<float> head_in = compose_head_input(feat, x, det.priors_);
      Tensor<float> heat = det.heat_head_.forward(head_in, true, rng);
      Tensor<float> logits = det.cls_head_.forward(feat, true, rng);

      // MSE weighted toward blob pixels (weight 1 + 50*target): the plain
      // mean is dominated by the ~99% zero background and collapses to the
      // all-zero prediction
      Tensor<float> heat_grad(heat.dims);
      double wsum = 0.0, wloss = 0.0;
      for (std::size_t i = 0; i < heat.v.size(); ++i)
        wsum += 1.0 + 50.0 * heat_target.v[i];
      for (std::size_t i = 0; i < heat.v.size(); ++i) {
        double w = (1.0 + 50.0 * heat_target.v[i]) / wsum;
        double d = static_cast<double>(heat.v[i]) - heat_target.v[i];
        wloss += w * d * d;
        heat_grad.v[i] =
            static_cast<float>(cfg.heat_loss_weight * 2.0 * w * d);
      }
      mse_acc += wloss;
      Tensor<float> feat_grad =
          trunk_slice(det.heat_head_.backward(heat_grad), trunk_ch);

      Tensor<float> cls_grad;
      ce_acc += nn::softmax_xent(logits, yb, wb, &cls_grad);
      ++n_batches;
      Tensor<float> feat_grad2 = det.cls_head_.backward(cls_grad);
      for (std::size_t i = 0; i < feat_grad.v.size(); ++i)
        feat_grad.v[i] += feat_grad2.v[i];
      det.trunk_.backward(feat_grad);
      opt.step();
    }
    if (cfg.verbose)
      std::fprintf(stderr, "detector epoch %d mse %.6f ce %.4f\n", epoch,
                   mse_acc / n_batches, ce_acc / n_batches);
  }
  det.trained_ = true;
  return det;
}

preprocess::KeyPointSet Detector::detect(const Grid2D& half) const {
  if (!trained_) throw ValidationError("detect: untrained detector");
  if (half.empty()) throw ValidationError("detect: empty image");
  const int s = cfg_.input_size;
  Rng rng(0);  // eval mode consumes no randomness
  Tensor<float> one = input_tensor(resample(half, s, s));
  Tensor<float> x({1, kInputChannels, s, s});
  x.v = one.v;

  Tensor<float> feat = trunk_.forward(x, false, rng);
  Tensor<float> head_in = compose_head_input(feat, x, priors_);
  Tensor<float> heat = heat_head_.forward(head_in, false, rng);
  Tensor<float> logits = cls_head_.forward(feat, false, rng);

  preprocess::KeyPointSet out;
  for (int k = 0; k < kNumKeyPoints; ++k) {
    const float* map = heat.v.data() + static_cast<std::size_t>(k) * s * s;
    int arg = 0;
    for (int i = 1; i < s * s; ++i)
      if (map[i] > map[arg]) arg = i;
    int ar = arg / s, ac = arg % s;
    // center-of-mass refinement over a 5x5 window
    double wsum = 0, rsum = 0, csum = 0;
    for (int i = std::max(0, ar - 2); i <= std::min(s - 1, ar + 2); ++i)
      for (int j = std::max(0, ac - 2); j <= std::min(s - 1, ac + 2); ++j) {
        double w = std::max(0.0f, map[i * s + j]);
        wsum += w;
        rsum += w * i;
        csum += w * j;
      }
    PointRC p = wsum > 0 ? PointRC{rsum / wsum, csum / wsum}
                         : PointRC{static_cast<double>(ar),
                                   static_cast<double>(ac)};
    out.points[static_cast<std::size_t>(k)] =
        to_half(p, half.rows, half.cols, s);
  }

  const float* row = logits.v.data();
  int best = 0;
  for (int i = 1; i < 3; ++i)
    if (row[i] > row[best]) best = i;
  double mx = row[best], sum = 0;
  for (int i = 0; i < 3; ++i) sum += std::exp(row[i] - mx);
  out.completeness = index_cls(best);
  out.confidence = 1.0 / sum;  // exp(0)/sum for the argmax logit
  return out;
}

void Detector::save(const std::string& dir) const {
  if (!trained_) throw ValidationError("save: untrained detector");
  fs::create_directories(dir);
  const int s = cfg_.input_size;
  const int ch = cfg_.trunk_channels.back();
  nn::save_model((fs::path(dir) / "trunk.fnet").string(), trunk_,
                 {kInputChannels, s, s});
  nn::save_model((fs::path(dir) / "heat.fnet").string(), heat_head_,
                 {ch + kInputChannels + kNumKeyPoints, s, s});
  nn::save_model((fs::path(dir) / "cls.fnet").string(), cls_head_,
                 {ch, s, s});
  Grid3D prior_grid(kNumKeyPoints, s, s);
  prior_grid.v = priors_.v;
  write_fgrid((fs::path(dir) / "priors.fgrid").string(), prior_grid);
  nlohmann::json meta;
  meta["input_size"] = s;
  meta["sigma"] = cfg_.sigma;
  meta["trunk_channels"] = cfg_.trunk_channels;
  std::ofstream out(fs::path(dir) / "meta.json");
  if (!out) throw IoError("cannot write detector meta in " + dir);
  out << meta.dump(1) << '\n';
}

Detector Detector::load(const std::string& dir) {
  std::ifstream in(fs::path(dir) / "meta.json");
  if (!in) throw IoError("cannot read detector meta in " + dir);
  nlohmann::json meta = nlohmann::json::parse(in, nullptr, false);
  if (meta.is_discarded())
    throw IoError("malformed detector meta in " + dir);
  Detector det;
  det.cfg_.input_size = meta.at("input_size").get<int>();
  det.cfg_.sigma = meta.at("sigma").get<double>();
  det.cfg_.trunk_channels =
      meta.at("trunk_channels").get<std::vector<int>>();
  det.trunk_ =
      std::move(nn::load_model((fs::path(dir) / "trunk.fnet").string()).net);
  det.heat_head_ =
      std::move(nn::load_model((fs::path(dir) / "heat.fnet").string()).net);
  det.cls_head_ =
      std::move(nn::load_model((fs::path(dir) / "cls.fnet").string()).net);
  Grid3D prior_grid = read_fgrid3((fs::path(dir) / "priors.fgrid").string());
  det.priors_ = Tensor<float>(
      {prior_grid.depth, prior_grid.rows, prior_grid.cols});
  det.priors_.v = prior_grid.v;
  det.trained_ = true;
  return det;
}

double mean_keypoint_error(const Detector& det,
                           const std::vector<TrainSample>& samples) {
  double total = 0.0;
  int n = 0;
  for (const auto& ts : samples) {
    if (ts.cls != Completeness::Complete) continue;
    auto kps = det.detect(ts.half);
    double err = 0.0;
    for (int k = 0; k < kNumKeyPoints; ++k)
      err += std::hypot(
          kps.points[static_cast<std::size_t>(k)].row -
              ts.keypoints[static_cast<std::size_t>(k)].row,
          kps.points[static_cast<std::size_t>(k)].col -
              ts.keypoints[static_cast<std::size_t>(k)].col);
    total += err / kNumKeyPoints;
    ++n;
  }
  if (n == 0) throw ValidationError("mean_keypoint_error: no Complete samples");
  return total / n;
}

}  // namespace form::keypoints
