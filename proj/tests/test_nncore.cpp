#include <fstream>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "form/nn/adam.hpp"
#include "form/nn/loss.hpp"
#include "form/nn/network.hpp"
#include "form/nn/serialize.hpp"
#include "form/nn/train.hpp"
#include "gradcheck.hpp"

using namespace form;
using namespace form::nn;

namespace {

Tensor<double> random_tensor(std::vector<int> dims, Rng& rng) {
  Tensor<double> t(std::move(dims));
  for (auto& v : t.v) v = rng.normal(0.0, 1.0);
  return t;
}

// conv/relu/gap/dense trained with weighted cross-entropy
gradcheck::LossFn xent_loss(const Tensor<double>& x,
                            const std::vector<int>& labels,
                            const std::vector<double>& weights) {
  return [=](Sequential<double>& net, bool with_grad, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> logits = net.forward(x, /*training=*/true, rng);
    Tensor<double> grad;
    double loss = softmax_xent(logits, labels, weights,
                               with_grad ? &grad : nullptr);
    if (with_grad) net.backward(grad);
    return loss;
  };
}

gradcheck::LossFn mse_after_net(const Tensor<double>& x,
                                const Tensor<double>& target) {
  return [=](Sequential<double>& net, bool with_grad, std::uint64_t seed) {
    Rng rng(seed);
    Tensor<double> y = net.forward(x, /*training=*/true, rng);
    Tensor<double> grad;
    double loss = mse_loss(y, target, {}, with_grad ? &grad : nullptr);
    if (with_grad) net.backward(grad);
    return loss;
  };
}

}  // namespace

TEST_CASE("gradient check: conv/relu/gap/dense stack") {
  Rng init(42);
  auto net = build_network<double>(
      {conv_spec(3, 3, 1), relu_spec(), conv_spec(4, 3, 2), gap_spec(),
       fc_spec(3)},
      {2, 7, 7}, init);
  Rng data(43);
  auto x = random_tensor({2, 2, 7, 7}, data);
  auto res = gradcheck::check(net, xent_loss(x, {0, 2}, {1.0, 2.0}), 99);
  CHECK(res.n_checked > 0);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gradient check: dense/relu/dropout stack") {
  Rng init(1);
  auto net = build_network<double>(
      {fc_spec(6), relu_spec(), dropout_spec(0.3), fc_spec(2)}, {5}, init);
  Rng data(2);
  auto x = random_tensor({3, 5}, data);
  auto res = gradcheck::check(net, xent_loss(x, {0, 1, 1}, {}), 7);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("gradient check: softmax layer + mse") {
  Rng init(3);
  auto net =
      build_network<double>({fc_spec(4), softmax_spec()}, {3}, init);
  Rng data(4);
  auto x = random_tensor({2, 3}, data);
  Tensor<double> target({2, 4});
  for (auto& v : target.v) v = data.uniform();
  auto res = gradcheck::check(net, mse_after_net(x, target), 5);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("GAP of a constant feature map is the constant") {
  Rng rng(0);
  GlobalAveragePool<double> gap;
  Tensor<double> x({1, 3, 4, 4}, 2.5);
  auto y = gap.forward(x, false, rng);
  REQUIRE(y.dims == std::vector<int>{1, 3});
  for (double v : y.v) CHECK(v == doctest::Approx(2.5));
}

TEST_CASE("dropout is the identity in eval mode") {
  Rng rng(0);
  Dropout<double> d(0.5);
  Tensor<double> x({2, 10});
  for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] = i * 0.1;
  auto y = d.forward(x, /*training=*/false, rng);
  CHECK(y.v == x.v);
}

TEST_CASE("softmax rows sum to 1 within 1e-12") {
  Rng rng(8);
  Softmax<double> sm;
  Tensor<double> x({4, 5});
  for (auto& v : x.v) v = rng.normal(0, 3);
  auto y = sm.forward(x, false, rng);
  for (int s = 0; s < 4; ++s) {
    double sum = 0;
    for (int i = 0; i < 5; ++i) sum += y.sample(s)[i];
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("class weights: 90/10 split and balanced neutrality") {
  std::vector<int> labels;
  for (int i = 0; i < 90; ++i) labels.push_back(0);
  for (int i = 0; i < 10; ++i) labels.push_back(1);
  auto w = class_weights(labels, 2);
  CHECK(w[0] == doctest::Approx(100.0 / (2.0 * 90.0)));  // 0.5556
  CHECK(w[99] == doctest::Approx(5.0));

  std::vector<int> balanced{0, 1, 0, 1};
  auto wb = class_weights(balanced, 2);
  for (double v : wb) CHECK(v == 1.0);
  CHECK_THROWS_AS(class_weights(std::vector<int>{0, 0}, 2), ValidationError);
}

TEST_CASE("zero sample weights give zero gradients") {
  Rng init(12);
  auto net = build_network<double>({fc_spec(2)}, {3}, init);
  Rng data(13);
  auto x = random_tensor({4, 3}, data);
  net.zero_grad();
  Rng rng(0);
  auto logits = net.forward(x, true, rng);
  Tensor<double> grad;
  double loss =
      softmax_xent(logits, std::vector<int>{0, 1, 0, 1},
                   std::vector<double>{0, 0, 0, 0}, &grad);
  CHECK(loss == 0.0);
  net.backward(grad);
  for (auto* p : net.params())
    for (double g : p->grad.v) CHECK(g == 0.0);
}

TEST_CASE("softmax cross-entropy gradient vanishes at a confident correct "
          "prediction") {
  Tensor<double> logits({1, 2});
  logits.v = {30.0, -30.0};
  Tensor<double> grad;
  softmax_xent(logits, std::vector<int>{0}, {}, &grad);
  for (double g : grad.v) CHECK(std::fabs(g) < 1e-12);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto make_data = [] {
    Rng rng(77);
    std::vector<Tensor<float>> xs;
    std::vector<int> ys;
    for (int i = 0; i < 40; ++i) {
      Tensor<float> t({2});
      int y = i % 2;
      t.v = {static_cast<float>(rng.normal(y, 1.0)),
             static_cast<float>(rng.normal(-y, 1.0))};
      xs.push_back(t);
      ys.push_back(y);
    }
    return std::pair{xs, ys};
  };
  auto [xs, ys] = make_data();
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch = 8;
  cfg.lr = 1e-2;
  cfg.seed = 123;
  auto run = [&] {
    Rng init(55);
    auto net = build_network<float>({fc_spec(8), relu_spec(), fc_spec(2)}, {2},
                                    init);
    train_classifier(net, xs, ys, xs, ys, cfg);
    return net.snapshot_weights();
  };
  auto w1 = run();
  auto w2 = run();
  REQUIRE(w1.size() == w2.size());
  for (std::size_t i = 0; i < w1.size(); ++i) CHECK(w1[i] == w2[i]);
}

TEST_CASE("linearly separable toy set reaches AUC >= 0.99 within 50 epochs") {
  Rng rng(5);
  std::vector<Tensor<float>> xs;
  std::vector<int> ys;
  for (int i = 0; i < 100; ++i) {
    int y = i % 2;
    Tensor<float> t({2});
    double margin = y ? 1.5 : -1.5;
    t.v = {static_cast<float>(margin + rng.normal(0, 0.3)),
           static_cast<float>(-margin + rng.normal(0, 0.3))};
    xs.push_back(t);
    ys.push_back(y);
  }
  Rng init(6);
  auto net =
      build_network<float>({fc_spec(8), relu_spec(), fc_spec(2)}, {2}, init);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch = 36;
  cfg.lr = 1e-2;
  cfg.seed = 9;
  auto result = train_classifier(net, xs, ys, xs, ys, cfg);
  CHECK(result.best_val_auc >= 0.99);
}

TEST_CASE("full-batch loss is non-increasing over the first 10 steps at a "
          "small learning rate") {
  Rng rng(21);
  std::vector<Tensor<float>> xs;
  std::vector<int> ys;
  for (int i = 0; i < 16; ++i) {
    Tensor<float> t({3});
    for (auto& v : t.v) v = static_cast<float>(rng.normal());
    xs.push_back(t);
    ys.push_back(i % 2);
  }
  Rng init(22);
  auto net = build_network<float>({fc_spec(4), relu_spec(), fc_spec(2)}, {3},
                                  init);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch = 16;  // full batch
  cfg.lr = 1e-4;
  cfg.seed = 23;
  auto result = train_classifier(net, xs, ys, {}, {}, cfg);
  for (std::size_t i = 1; i < result.history.size(); ++i)
    CHECK(result.history[i].train_loss <=
          result.history[i - 1].train_loss + 1e-9);
}

TEST_CASE("model serialization round trip with checksum") {
  namespace fs = std::filesystem;
  Rng init(31);
  auto net = build_network<float>(
      {conv_spec(2, 3, 2), relu_spec(), gap_spec(), fc_spec(2)}, {1, 8, 8},
      init);
  Rng data(32);
  Tensor<float> x({1, 1, 8, 8});
  for (auto& v : x.v) v = static_cast<float>(data.uniform());
  Rng r0(0);
  auto y1 = net.forward(x, false, r0);

  auto path = (fs::temp_directory_path() / "form_model_test.bin").string();
  save_model(path, net, {1, 8, 8});
  auto loaded = load_model(path);
  auto y2 = loaded.net.forward(x, false, r0);
  REQUIRE(y1.v.size() == y2.v.size());
  for (std::size_t i = 0; i < y1.v.size(); ++i) CHECK(y1.v[i] == y2.v[i]);

  // corrupt one payload byte -> checksum failure
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(20);
    char c;
    f.seekg(20);
    f.get(c);
    f.seekp(20);
    f.put(static_cast<char>(c ^ 0x5a));
  }
  CHECK_THROWS_AS(load_model(path), IoError);
  fs::remove(path);
}

TEST_CASE("forward rejects dimension mismatch") {
  Rng init(41);
  auto net = build_network<double>({conv_spec(2, 3, 1)}, {3, 6, 6}, init);
  Rng rng(0);
  Tensor<double> bad({1, 2, 6, 6});
  CHECK_THROWS_AS(net.forward(bad, false, rng), ValidationError);
}

TEST_CASE("non-finite values trip a numeric fault") {
  Tensor<double> t({1, 2});
  t.v = {1.0, std::numeric_limits<double>::infinity()};
  CHECK_THROWS_AS(t.check_finite("test"), NumericFault);
  Tensor<double> logits({1, 2});
  logits.v = {std::numeric_limits<double>::quiet_NaN(), 0.0};
  Tensor<double> grad;
  CHECK_THROWS_AS(softmax_xent(logits, std::vector<int>{0}, {}, &grad),
                  NumericFault);
}
