#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "form/nn/tensor.hpp"

namespace form::nn {

// Weighted softmax cross-entropy on logits (N,K). Returns the mean weighted
// loss; grad_out receives dL/dlogits.
template <typename T>
double softmax_xent(const Tensor<T>& logits, std::span<const int> labels,
                    std::span<const double> weights, Tensor<T>* grad_out) {
  const int n = logits.dims[0];
  const int k = static_cast<int>(logits.sample_size());
  if (static_cast<int>(labels.size()) != n)
    throw ValidationError("softmax_xent: label count mismatch");
  if (grad_out) *grad_out = Tensor<T>(logits.dims);
  double total = 0.0;
  for (int s = 0; s < n; ++s) {
    const T* row = logits.sample(s);
    double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(s)];
    double mx = static_cast<double>(row[0]);
    for (int i = 1; i < k; ++i) mx = std::max(mx, static_cast<double>(row[i]));
    double sum = 0.0;
    for (int i = 0; i < k; ++i) sum += std::exp(static_cast<double>(row[i]) - mx);
    const int y = labels[static_cast<std::size_t>(s)];
    if (y < 0 || y >= k) throw ValidationError("softmax_xent: label out of range");
    double log_p = static_cast<double>(row[y]) - mx - std::log(sum);
    total += -w * log_p;
    if (grad_out) {
      T* g = grad_out->sample(s);
      for (int i = 0; i < k; ++i) {
        double p = std::exp(static_cast<double>(row[i]) - mx) / sum;
        g[i] = static_cast<T>(w * (p - (i == y ? 1.0 : 0.0)) / n);
      }
    }
  }
  if (!std::isfinite(total)) throw NumericFault("softmax_xent: non-finite loss");
  return total / n;
}

// Mean squared error over all elements, optional per-sample weights.
template <typename T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target,
                std::span<const double> weights, Tensor<T>* grad_out) {
  if (!pred.same_shape(target)) throw ValidationError("mse_loss: shape mismatch");
  const int n = pred.dims[0];
  const std::size_t per = pred.sample_size();
  if (grad_out) *grad_out = Tensor<T>(pred.dims);
  double total = 0.0;
  const double inv = 1.0 / static_cast<double>(pred.numel());
  for (int s = 0; s < n; ++s) {
    double w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(s)];
    const T* p = pred.sample(s);
    const T* t = target.sample(s);
    T* g = grad_out ? grad_out->sample(s) : nullptr;
    for (std::size_t i = 0; i < per; ++i) {
      double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
      total += w * d * d * inv;
      if (g) g[i] = static_cast<T>(2.0 * w * d * inv);
    }
  }
  if (!std::isfinite(total)) throw NumericFault("mse_loss: non-finite loss");
  return total;
}

// Per-class sample weights: w_c = N / (K * n_c). Balanced classes give 1.
inline std::vector<double> class_weights(std::span<const int> labels,
                                         int n_classes) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(n_classes), 0);
  for (int l : labels) {
    if (l < 0 || l >= n_classes)
      throw ValidationError("class_weights: label out of range");
    ++counts[static_cast<std::size_t>(l)];
  }
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] == 0)
      throw ValidationError("class_weights: empty class " + std::to_string(c));
  std::vector<double> per_class(counts.size());
  const double n = static_cast<double>(labels.size());
  for (std::size_t c = 0; c < counts.size(); ++c)
    per_class[c] = n / (static_cast<double>(n_classes) *
                        static_cast<double>(counts[c]));
  std::vector<double> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[i] = per_class[static_cast<std::size_t>(labels[i])];
  return out;
}

}  // namespace form::nn
