#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "form/nn/adam.hpp"
#include "form/nn/loss.hpp"
#include "form/nn/network.hpp"
#include "form/stats.hpp"

namespace form::nn {

struct TrainConfig {
  int epochs = 50;
  int batch = 36;
  double lr = 1e-4;
  bool class_weighting = true;
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  double train_loss = 0.0;
  double train_auc = std::numeric_limits<double>::quiet_NaN();
  double val_auc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  int best_epoch = -1;  // epoch with max validation AUC (checkpoint restored)
  double best_val_auc = std::numeric_limits<double>::quiet_NaN();
};

template <typename T>
using Augmenter = std::function<Tensor<T>(const Tensor<T>&, Rng&)>;

template <typename T>
Tensor<T> stack_samples(const std::vector<Tensor<T>>& samples,
                        const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ValidationError("stack_samples: empty batch");
  std::vector<int> dims = samples[idx[0]].dims;
  dims.insert(dims.begin(), static_cast<int>(idx.size()));
  Tensor<T> out(dims);
  const std::size_t per = samples[idx[0]].numel();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto& s = samples[idx[i]];
    if (s.numel() != per) throw ValidationError("stack_samples: ragged sample");
    std::copy(s.v.begin(), s.v.end(), out.v.begin() + per * i);
  }
  return out;
}

// Positive-class softmax probabilities in eval mode, batched.
template <typename T>
std::vector<double> predict_positive(Sequential<T>& net,
                                     const std::vector<Tensor<T>>& samples,
                                     int positive_class = 1, int batch = 64) {
  Rng rng(0);  // eval mode consumes no randomness
  std::vector<double> out;
  out.reserve(samples.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < samples.size();
       start += static_cast<std::size_t>(batch)) {
    idx.clear();
    for (std::size_t i = start;
         i < std::min(samples.size(), start + static_cast<std::size_t>(batch));
         ++i)
      idx.push_back(i);
    Tensor<T> x = stack_samples(samples, idx);
    Tensor<T> logits = net.forward(x, /*training=*/false, rng);
    const int k = static_cast<int>(logits.sample_size());
    for (int s = 0; s < logits.dims[0]; ++s) {
      const T* row = logits.sample(s);
      double mx = static_cast<double>(row[0]);
      for (int i = 1; i < k; ++i)
        mx = std::max(mx, static_cast<double>(row[i]));
      double sum = 0.0;
      for (int i = 0; i < k; ++i)
        sum += std::exp(static_cast<double>(row[i]) - mx);
      out.push_back(std::exp(static_cast<double>(row[positive_class]) - mx) /
                    sum);
    }
  }
  return out;
}

inline double safe_auc(const std::vector<double>& scores,
                       const std::vector<int>& labels) {
  try {
    return stats::roc_auc(scores, labels);
  } catch (const ValidationError&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

// Classifier training loop: Adam, class-weighted cross-entropy, optional
// per-sample augmentation, per-epoch train/validation AUC, checkpoint at the
// best validation AUC (restored before returning).
template <typename T>
TrainResult train_classifier(Sequential<T>& net,
                             const std::vector<Tensor<T>>& train_x,
                             const std::vector<int>& train_y,
                             const std::vector<Tensor<T>>& val_x,
                             const std::vector<int>& val_y,
                             const TrainConfig& cfg,
                             const Augmenter<T>& augment = nullptr,
                             int n_classes = 2) {
  if (train_x.empty()) throw ValidationError("train_classifier: empty dataset");
  if (train_x.size() != train_y.size())
    throw ValidationError("train_classifier: label count mismatch");

  std::vector<double> weights;
  if (cfg.class_weighting) weights = class_weights(train_y, n_classes);

  Rng rng(cfg.seed);
  Adam<T> opt(net.params(), cfg.lr);
  TrainResult result;
  std::vector<std::vector<T>> best_snapshot;

  std::vector<std::size_t> order(train_x.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    double epoch_loss = 0.0;
    std::size_t n_batches = 0;
    std::vector<double> train_scores;
    std::vector<int> train_labels;
    train_scores.reserve(order.size());
    train_labels.reserve(order.size());
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch)) {
      std::vector<std::size_t> idx(
          order.begin() + start,
          order.begin() + std::min(order.size(),
                                   start + static_cast<std::size_t>(cfg.batch)));
      Tensor<T> x;
      if (augment) {
        std::vector<Tensor<T>> aug;
        aug.reserve(idx.size());
        for (auto i : idx) aug.push_back(augment(train_x[i], rng));
        std::vector<std::size_t> all(idx.size());
        std::iota(all.begin(), all.end(), std::size_t{0});
        x = stack_samples(aug, all);
      } else {
        x = stack_samples(train_x, idx);
      }
      std::vector<int> yb;
      std::vector<double> wb;
      for (auto i : idx) {
        yb.push_back(train_y[i]);
        if (!weights.empty()) wb.push_back(weights[i]);
      }
      net.zero_grad();
      Tensor<T> logits = net.forward(x, /*training=*/true, rng);
      Tensor<T> grad;
      epoch_loss += softmax_xent(logits, yb, wb, &grad);
      net.backward(grad);
      opt.step();
      ++n_batches;
      // running train AUC from the batch logits (pre-update)
      const int k = static_cast<int>(logits.sample_size());
      for (int s = 0; s < logits.dims[0]; ++s) {
        const T* row = logits.sample(s);
        train_scores.push_back(static_cast<double>(row[1]) -
                               static_cast<double>(row[0]));
        train_labels.push_back(yb[static_cast<std::size_t>(s)]);
      }
      (void)k;
    }

    EpochMetrics m;
    m.train_loss = epoch_loss / static_cast<double>(n_batches);
    m.train_auc = safe_auc(train_scores, train_labels);
    if (!val_x.empty()) {
      m.val_auc = safe_auc(predict_positive(net, val_x), val_y);
      if (!std::isnan(m.val_auc) &&
          (result.best_epoch < 0 || m.val_auc > result.best_val_auc)) {
        result.best_epoch = epoch;
        result.best_val_auc = m.val_auc;
        best_snapshot = net.snapshot_weights();
      }
    }
    result.history.push_back(m);
  }

  if (!best_snapshot.empty()) net.restore_weights(best_snapshot);
  return result;
}

}  // namespace form::nn
