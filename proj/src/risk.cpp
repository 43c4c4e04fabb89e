#include "form/risk.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "form/errors.hpp"

namespace form::risk {

RiskInputs parse_inputs(const std::string& name) {
  if (name == "image") return RiskInputs::ImageOnly;
  if (name == "rf") return RiskInputs::RfOnly;
  if (name == "both") return RiskInputs::Both;
  throw ValidationError("unknown risk input mode: " + name);
}

std::string inputs_name(RiskInputs inputs) {
  switch (inputs) {
    case RiskInputs::ImageOnly: return "image";
    case RiskInputs::RfOnly: return "rf";
    case RiskInputs::Both: return "both";
  }
  return "both";
}

void RiskModelConfig::validate() const {
  if (inputs != RiskInputs::RfOnly && feature_width <= 0)
    throw ValidationError("risk: feature_width must be > 0");
  if (inputs != RiskInputs::ImageOnly && rf_width <= 0)
    throw ValidationError("risk: rf_width must be > 0");
  if (inputs == RiskInputs::Both && width_multiplier <= 0)
    throw ValidationError("risk: width_multiplier must be > 0");
  if (dropout < 0.0 || dropout >= 1.0)
    throw ValidationError("risk: dropout must lie in [0,1)");
}

int RiskModelConfig::branch_width() const {
  switch (inputs) {
    case RiskInputs::ImageOnly: return 128;
    case RiskInputs::Both: return width_multiplier * rf_width;
    case RiskInputs::RfOnly: return 0;
  }
  return 0;
}

int RiskModelConfig::head_width() const {
  switch (inputs) {
    case RiskInputs::ImageOnly: return branch_width();
    case RiskInputs::RfOnly: return rf_width;
    case RiskInputs::Both: return branch_width() + rf_width;
  }
  return 0;
}

const nn::Sequential<float>& RiskModel::branch() const {
  if (!has_branch_)
    throw ValidationError("risk: model has no image branch");
  return branch_;
}

namespace {

void check_sample(const RiskSample& s, const RiskModelConfig& cfg) {
  if (cfg.inputs != RiskInputs::RfOnly &&
      static_cast<int>(s.image.size()) != cfg.feature_width)
    throw ValidationError("risk: image feature length mismatch");
  if (cfg.inputs != RiskInputs::ImageOnly &&
      static_cast<int>(s.rf.size()) != cfg.rf_width)
    throw ValidationError("risk: risk-factor length mismatch");
}

nn::Tensor<float> stack_images(const std::vector<RiskSample>& samples,
                               const std::vector<std::size_t>& idx, int d) {
  nn::Tensor<float> x({static_cast<int>(idx.size()), d});
  for (std::size_t i = 0; i < idx.size(); ++i)
    std::copy(samples[idx[i]].image.begin(), samples[idx[i]].image.end(),
              x.sample(static_cast<int>(i)));
  return x;
}

// branch output (may be empty) next to the risk factors, per sample
nn::Tensor<float> compose_head_input(const nn::Tensor<float>* branch_out,
                                     const std::vector<RiskSample>& samples,
                                     const std::vector<std::size_t>& idx,
                                     const RiskModelConfig& cfg) {
  const int b = static_cast<int>(idx.size());
  nn::Tensor<float> x({b, cfg.head_width()});
  for (int i = 0; i < b; ++i) {
    float* row = x.sample(i);
    std::size_t off = 0;
    if (branch_out) {
      const float* br = branch_out->sample(i);
      std::copy(br, br + branch_out->sample_size(), row);
      off = branch_out->sample_size();
    }
    if (cfg.inputs != RiskInputs::ImageOnly) {
      const auto& rf = samples[idx[i]].rf;
      std::copy(rf.begin(), rf.end(), row + off);
    }
  }
  return x;
}

}  // namespace

double RiskModel::predict(const RiskSample& sample) const {
  return predict(std::vector<RiskSample>{sample}).front();
}

std::vector<double> RiskModel::predict(
    const std::vector<RiskSample>& samples) const {
  if (!trained_) throw ValidationError("risk: model is untrained");
  Rng rng(0);  // eval mode consumes no randomness
  std::vector<double> out;
  out.reserve(samples.size());
  constexpr std::size_t kBatch = 128;
  for (std::size_t start = 0; start < samples.size(); start += kBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(samples.size(), start + kBatch);
         ++i) {
      check_sample(samples[i], cfg_);
      idx.push_back(i);
    }
    nn::Tensor<float> bout;
    const nn::Tensor<float>* bptr = nullptr;
    if (has_branch_) {
      bout = branch_.forward(stack_images(samples, idx, cfg_.feature_width),
                             /*training=*/false, rng);
      bptr = &bout;
    }
    nn::Tensor<float> logits = head_.forward(
        compose_head_input(bptr, samples, idx, cfg_), /*training=*/false, rng);
    for (int s = 0; s < logits.dims[0]; ++s) {
      const float* row = logits.sample(s);
      const double mx = std::max(row[0], row[1]);
      const double e0 = std::exp(row[0] - mx);
      const double e1 = std::exp(row[1] - mx);
      out.push_back(e1 / (e0 + e1));
    }
  }
  return out;
}

RiskModel train_risk_model(const std::vector<RiskSample>& train,
                           const std::vector<int>& train_labels,
                           const std::vector<RiskSample>& val,
                           const std::vector<int>& val_labels,
                           const RiskModelConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw ValidationError("risk: empty training set");
  if (train.size() != train_labels.size() || val.size() != val_labels.size())
    throw ValidationError("risk: label count mismatch");
  for (const auto& s : train) check_sample(s, cfg);

  RiskModel model;
  model.cfg_ = cfg;
  model.has_branch_ = cfg.inputs != RiskInputs::RfOnly;

  Rng init(derive_seed(cfg.train.seed, 0x815C));
  if (model.has_branch_) {
    std::vector<nn::LayerSpec> bs = {nn::fc_spec(128), nn::relu_spec(),
                                     nn::fc_spec(cfg.branch_width()),
                                     nn::relu_spec()};
    model.branch_ = nn::build_network<float>(bs, {cfg.feature_width}, init);
  }
  std::vector<nn::LayerSpec> hs = {nn::dropout_spec(cfg.dropout),
                                   nn::fc_spec(128), nn::relu_spec(),
                                   nn::fc_spec(2)};
  model.head_ = nn::build_network<float>(hs, {cfg.head_width()}, init);
  model.trained_ = true;  // enables predict() for validation scoring

  std::vector<double> weights;
  if (cfg.train.class_weighting)
    weights = nn::class_weights(train_labels, 2);

  std::vector<nn::Param<float>*> params;
  if (model.has_branch_)
    for (auto* p : model.branch_.params()) params.push_back(p);
  for (auto* p : model.head_.params()) params.push_back(p);
  nn::Adam<float> opt(params, cfg.train.lr);

  Rng rng(cfg.train.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  auto snapshot = [&] {
    std::vector<std::vector<float>> snap;
    for (auto* p : params) snap.push_back(p->value.v);
    return snap;
  };
  std::vector<std::vector<float>> best;

  for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.train.batch)) {
      std::vector<std::size_t> idx(
          order.begin() + start,
          order.begin() +
              std::min(order.size(),
                       start + static_cast<std::size_t>(cfg.train.batch)));
      std::vector<int> yb;
      std::vector<double> wb;
      for (auto i : idx) {
        yb.push_back(train_labels[i]);
        if (!weights.empty()) wb.push_back(weights[i]);
      }
      for (auto* p : params) p->zero_grad();

      nn::Tensor<float> bout;
      const nn::Tensor<float>* bptr = nullptr;
      if (model.has_branch_) {
        bout = model.branch_.forward(
            stack_images(train, idx, cfg.feature_width), /*training=*/true,
            rng);
        bptr = &bout;
      }
      nn::Tensor<float> logits = model.head_.forward(
          compose_head_input(bptr, train, idx, cfg), /*training=*/true, rng);
      nn::Tensor<float> grad;
      nn::softmax_xent(logits, yb, wb, &grad);
      nn::Tensor<float> g_in = model.head_.backward(grad);
      if (model.has_branch_) {
        nn::Tensor<float> g_branch(
            {static_cast<int>(idx.size()), cfg.branch_width()});
        for (int s = 0; s < g_branch.dims[0]; ++s)
          std::copy(g_in.sample(s), g_in.sample(s) + cfg.branch_width(),
                    g_branch.sample(s));
        model.branch_.backward(g_branch);
      }
      opt.step();
    }

    nn::EpochMetrics m;
    if (!val.empty()) {
      m.val_auc = nn::safe_auc(model.predict(val), val_labels);
      if (!std::isnan(m.val_auc) && (model.result_.best_epoch < 0 ||
                                     m.val_auc > model.result_.best_val_auc)) {
        model.result_.best_epoch = epoch;
        model.result_.best_val_auc = m.val_auc;
        best = snapshot();
      }
    }
    model.result_.history.push_back(m);
  }

  if (!best.empty())
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i]->value.v = best[i];
  return model;
}

double aggregate_patient_score(const std::vector<double>& side_scores) {
  if (side_scores.empty())
    throw ValidationError("aggregate_patient_score: no usable sides");
  return *std::max_element(side_scores.begin(), side_scores.end());
}

void write_predictions(const std::string& path,
                       const std::vector<Prediction>& predictions) {
  std::ofstream os(path);
  if (!os) throw IoError("write_predictions: cannot open " + path);
  os << "patient_id,probability,fold,repetition\n";
  char buf[32];
  for (const auto& p : predictions) {
    std::snprintf(buf, sizeof buf, "%.9g", p.probability);
    os << p.patient_id << ',' << buf << ',' << p.fold << ',' << p.repetition
       << "\n";
  }
  if (!os) throw IoError("write_predictions: write failed for " + path);
}

std::vector<Prediction> read_predictions(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("read_predictions: cannot open " + path);
  std::string line;
  if (!std::getline(is, line))
    throw IoError("read_predictions: missing header in " + path);
  std::vector<Prediction> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Prediction p;
    std::string cell;
    if (!std::getline(ls, p.patient_id, ',') || !std::getline(ls, cell, ','))
      throw IoError("read_predictions: malformed row in " + path);
    p.probability = std::stod(cell);
    if (!std::getline(ls, cell, ','))
      throw IoError("read_predictions: malformed row in " + path);
    p.fold = std::stoi(cell);
    if (!std::getline(ls, cell, ','))
      throw IoError("read_predictions: malformed row in " + path);
    p.repetition = std::stoi(cell);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace form::risk
