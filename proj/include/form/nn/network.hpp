#pragma once

#include <memory>
#include <vector>

#include "form/nn/layers.hpp"

namespace form::nn {

// Layer stack with optional taps (e.g. GAP features read pre-head).
template <typename T>
class Sequential {
 public:
  Sequential() = default;

  void add(std::unique_ptr<Layer<T>> layer) {
    layers_.push_back(std::move(layer));
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

  Tensor<T> forward(const Tensor<T>& x, bool training, Rng& rng) {
    Tensor<T> cur = x;
    for (auto& l : layers_) cur = l->forward(cur, training, rng);
    return cur;
  }

  // forward through layers [0, upto)
  Tensor<T> forward_prefix(const Tensor<T>& x, std::size_t upto, bool training,
                           Rng& rng) {
    Tensor<T> cur = x;
    for (std::size_t i = 0; i < upto; ++i)
      cur = layers_[i]->forward(cur, training, rng);
    return cur;
  }
  Tensor<T> forward_suffix(const Tensor<T>& x, std::size_t from, bool training,
                           Rng& rng) {
    Tensor<T> cur = x;
    for (std::size_t i = from; i < layers_.size(); ++i)
      cur = layers_[i]->forward(cur, training, rng);
    return cur;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) {
    Tensor<T> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it)
      g = (*it)->backward(g);
    return g;
  }
  Tensor<T> backward_suffix(const Tensor<T>& grad_out, std::size_t from) {
    Tensor<T> g = grad_out;
    for (std::size_t i = layers_.size(); i-- > from;)
      g = layers_[i]->backward(g);
    return g;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_)
      for (auto* p : l->params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->zero_grad();
  }

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) out.push_back(l->spec());
    return out;
  }

  std::vector<std::vector<T>> snapshot_weights() {
    std::vector<std::vector<T>> out;
    for (auto* p : params()) out.push_back(p->value.v);
    return out;
  }
  void restore_weights(const std::vector<std::vector<T>>& snap) {
    auto ps = params();
    if (ps.size() != snap.size())
      throw ValidationError("restore_weights: parameter count mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value.v = snap[i];
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// Instantiate a stack from specs given the per-sample input dims
// ({C,H,W} for image input, {F} for vector input).
template <typename T>
Sequential<T> build_network(const std::vector<LayerSpec>& specs,
                            std::vector<int> input_dims, Rng& rng) {
  Sequential<T> net;
  std::vector<int> cur = input_dims;
  cur.insert(cur.begin(), 1);  // dummy batch axis for shape tracking
  for (const auto& s : specs) {
    std::unique_ptr<Layer<T>> layer;
    switch (s.kind) {
      case LayerSpec::Kind::Conv: {
        if (cur.size() != 4)
          throw ValidationError("Conv layer needs (C,H,W) input");
        layer = std::make_unique<Conv2D<T>>(cur[1], s.channels_out, s.kernel,
                                            s.stride, rng);
        break;
      }
      case LayerSpec::Kind::FullyConnected: {
        int n_in = 1;
        for (std::size_t i = 1; i < cur.size(); ++i) n_in *= cur[i];
        layer = std::make_unique<Dense<T>>(n_in, s.n_out, rng);
        break;
      }
      case LayerSpec::Kind::ReLU:
        layer = std::make_unique<ReLU<T>>();
        break;
      case LayerSpec::Kind::Dropout:
        layer = std::make_unique<Dropout<T>>(s.rate);
        break;
      case LayerSpec::Kind::GlobalAveragePool:
        layer = std::make_unique<GlobalAveragePool<T>>();
        break;
      case LayerSpec::Kind::Softmax:
        layer = std::make_unique<Softmax<T>>();
        break;
    }
    cur = layer->output_dims(cur);
    net.add(std::move(layer));
  }
  return net;
}

}  // namespace form::nn
