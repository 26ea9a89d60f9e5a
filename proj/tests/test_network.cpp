// SPDX-FileCopyrightText: © 2026 nsad authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <vector>

#include "error.hpp"
#include "network.hpp"
#include "rng.hpp"

using namespace nsad;

namespace {

Tensor rand_images(size_t n, uint64_t seed) {
  Tensor t = Tensor::zeros({n, 1, 28, 28}, Precision::B32);
  SplitMix64 gen(seed);
  for (double& v : t.data) v = f32_round(gen.unit());
  return t;
}

size_t count_kind(const NetworkSpec& s, LayerKind k) {
  size_t n = 0;
  for (const LayerDesc& l : s.layers) n += l.kind == k;
  return n;
}

}  // namespace

TEST_SUITE("network") {
  TEST_CASE("names resolve to the published architectures") {
    NetworkSpec lenet = NetworkSpec::from_name("lenet", Precision::B32);
    lenet.validate();
    CHECK(lenet.name == "lenet");
    CHECK(count_kind(lenet, LayerKind::Conv) == 2);
    CHECK(count_kind(lenet, LayerKind::Linear) == 3);
    CHECK(count_kind(lenet, LayerKind::BatchNorm) == 0);
    CHECK(lenet.layers[0].out == 6);
    CHECK(lenet.layers[0].kernel == 5);

    NetworkSpec bn = NetworkSpec::from_name("lenet-bn", Precision::B32);
    bn.validate();
    CHECK(count_kind(bn, LayerKind::BatchNorm) == 2);
    CHECK(bn.has_batchnorm());
    CHECK(!lenet.has_batchnorm());

    NetworkSpec m2 = NetworkSpec::from_name("mini2", Precision::B64);
    m2.validate();
    CHECK(count_kind(m2, LayerKind::Conv) == 2);
    CHECK(count_kind(m2, LayerKind::Linear) == 1);
    CHECK(m2.layers[0].out == 6);

    CHECK(NetworkSpec::from_name("mini1-norm", Precision::B32).pool_kind == PoolKind::Norm);
    CHECK(NetworkSpec::from_name("mini1-bn-norm", Precision::B32).has_batchnorm());
    NetworkSpec mlp = NetworkSpec::from_name("mlp", Precision::B64);
    mlp.validate();
    CHECK(count_kind(mlp, LayerKind::Conv) == 0);

    CHECK_THROWS_AS(NetworkSpec::from_name("lenet5", Precision::B32), Error);
    CHECK_THROWS_AS(NetworkSpec::from_name("mini4", Precision::B32), Error);
  }

  TEST_CASE("parameter count of the reference network") {
    ParameterSet p = init_kaiming_uniform(NetworkSpec::from_name("lenet", Precision::B32), 1);
    CHECK(p.total_size() == 44426);
    ParameterSet q = init_kaiming_uniform(NetworkSpec::from_name("lenet-bn", Precision::B32), 1);
    CHECK(q.total_size() == 44470);  // + gamma/beta over 6 and 16 channels
    CHECK(q.buffers.size() == 4);
  }

  TEST_CASE("initialization is deterministic and inside the fan-in bound") {
    NetworkSpec spec = NetworkSpec::from_name("lenet", Precision::B32);
    ParameterSet a = init_kaiming_uniform(spec, 3);
    ParameterSet b = init_kaiming_uniform(spec, 3);
    ParameterSet c = init_kaiming_uniform(spec, 4);
    REQUIRE(a.params.size() == b.params.size());
    bool all_equal = true, any_diff_seed = false;
    for (size_t i = 0; i < a.params.size(); ++i) {
      all_equal &= a.params[i].t.data == b.params[i].t.data;
      any_diff_seed |= a.params[i].t.data != c.params[i].t.data;
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);

    // Weights and biases share the layer's 1/sqrt(fan-in) bound.
    auto max_abs = [](const Tensor& t) {
      double m = 0;
      for (double v : t.data) m = std::max(m, std::fabs(v));
      return m;
    };
    CHECK(max_abs(*a.find("conv1.weight")) <= 1.0 / std::sqrt(25.0));
    CHECK(max_abs(*a.find("conv1.bias")) <= 1.0 / std::sqrt(25.0));
    CHECK(max_abs(*a.find("conv2.weight")) <= 1.0 / std::sqrt(150.0));
    CHECK(max_abs(*a.find("fc1.weight")) <= 1.0 / std::sqrt(256.0));
    CHECK(max_abs(*a.find("fc3.bias")) <= 1.0 / std::sqrt(84.0));
    // Draws actually fill the bound to within a few percent.
    CHECK(max_abs(*a.find("fc1.weight")) >= 0.9 / std::sqrt(256.0));
  }

  TEST_CASE("batchnorm insertion leaves the shared draws untouched") {
    ParameterSet plain = init_kaiming_uniform(NetworkSpec::from_name("lenet", Precision::B32), 7);
    ParameterSet bn = init_kaiming_uniform(NetworkSpec::from_name("lenet-bn", Precision::B32), 7);
    for (const char* name : {"conv1.weight", "conv2.bias", "fc1.weight", "fc3.bias"})
      CHECK(plain.find(name)->data == bn.find(name)->data);
    for (double v : bn.find("bn1.gamma")->data) CHECK(v == 1.0);
    for (double v : bn.find("bn2.beta")->data) CHECK(v == 0.0);
    for (double v : bn.find("bn1.running_mean")->data) CHECK(v == 0.0);
    for (double v : bn.find("bn2.running_invstd")->data) CHECK(v == 1.0);
  }

  TEST_CASE("forward loss builds a finite scalar and rejects bad batches") {
    NetworkSpec spec = NetworkSpec::from_name("mini1", Precision::B32);
    ParameterSet params = init_kaiming_uniform(spec, 11);
    Tensor images = rand_images(3, 21);
    std::vector<int> labels = {0, 7, 9};
    ForwardBuild fb = forward_loss(spec, params, images, labels, ReductionOrder::sequential(),
                                   true, false);
    REQUIRE(fb.loss >= 0);
    double loss = fb.tape.val(fb.loss).data[0];
    CHECK(std::isfinite(loss));
    CHECK(loss > 0.0);
    REQUIRE(fb.param_ids.size() == params.params.size());
    for (size_t i = 0; i < params.params.size(); ++i)
      CHECK(fb.tape.val(fb.param_ids[i]).data == params.params[i].t.data);

    Tensor bad = Tensor::zeros({3, 1, 27, 28}, Precision::B32);
    CHECK_THROWS_AS(forward_loss(spec, params, bad, labels, ReductionOrder::sequential(),
                                 true, false),
                    Error);
    std::vector<int> short_labels = {0, 7};
    CHECK_THROWS_AS(forward_loss(spec, params, images, short_labels,
                                 ReductionOrder::sequential(), true, false),
                    Error);
    std::vector<int> out_of_range = {0, 7, 10};
    CHECK_THROWS_AS(forward_loss(spec, params, images, out_of_range,
                                 ReductionOrder::sequential(), true, false),
                    Error);
  }

  TEST_CASE("prediction breaks logit ties towards the first class") {
    NetworkSpec spec;
    spec.in_channels = 1;
    spec.in_h = spec.in_w = 2;
    spec.prec = Precision::B64;
    spec.layers = {{LayerKind::Flatten, 0, 0, 0}, {LayerKind::Linear, 10, 0, 0}};
    spec.validate();
    ParameterSet params = init_kaiming_uniform(spec, 1);
    for (double& v : params.find("fc1.weight")->data) v = 0.0;
    Tensor* bias = params.find("fc1.bias");
    for (double& v : bias->data) v = 0.0;
    bias->data[3] = 5.0;
    bias->data[7] = 5.0;  // exact tie with class 3

    Tensor images = Tensor::full({2, 1, 2, 2}, 0.25, Precision::B64);
    std::vector<int> got = predict(spec, params, images);
    CHECK(got == std::vector<int>{3, 3});

    std::vector<int> labels = {3, 7};
    CHECK(accuracy(spec, params, images, labels) == 0.5);
  }

  TEST_CASE("accuracy is chunk-size invariant") {
    NetworkSpec spec = NetworkSpec::from_name("mini1", Precision::B32);
    ParameterSet params = init_kaiming_uniform(spec, 13);
    Tensor images = rand_images(5, 31);
    std::vector<int> labels = {1, 2, 3, 4, 5};
    double full = accuracy(spec, params, images, labels, 256);
    CHECK(accuracy(spec, params, images, labels, 2) == full);
    CHECK(accuracy(spec, params, images, labels, 5) == full);
  }

  TEST_CASE("train-mode forward updates running buffers, eval does not") {
    NetworkSpec spec = NetworkSpec::from_name("mini1-bn", Precision::B32);
    ParameterSet params = init_kaiming_uniform(spec, 17);
    Tensor images = rand_images(4, 41);
    std::vector<int> labels = {0, 1, 2, 3};

    std::vector<double> mean0 = params.find("bn1.running_mean")->data;
    forward_loss(spec, params, images, labels, ReductionOrder::sequential(), true, true);
    std::vector<double> mean1 = params.find("bn1.running_mean")->data;
    CHECK(mean0 != mean1);

    std::vector<double> invstd1 = params.find("bn1.running_invstd")->data;
    forward_loss(spec, params, images, labels, ReductionOrder::sequential(), true, false);
    CHECK(params.find("bn1.running_mean")->data == mean1);
    CHECK(params.find("bn1.running_invstd")->data == invstd1);
  }

  TEST_CASE("parameter l1 norm counts trainable tensors only") {
    NetworkSpec spec;
    spec.in_channels = 1;
    spec.in_h = spec.in_w = 2;
    spec.classes = 2;
    spec.prec = Precision::B64;
    spec.layers = {{LayerKind::Flatten, 0, 0, 0}, {LayerKind::Linear, 2, 0, 0}};
    ParameterSet params = init_kaiming_uniform(spec, 1);
    Tensor* w = params.find("fc1.weight");
    Tensor* b = params.find("fc1.bias");
    for (size_t i = 0; i < w->size(); ++i) w->data[i] = (i % 2) ? -2.0 : 1.5;
    b->data = {0.5, -0.25};
    CHECK(params.l1_norm() == 4 * 1.5 + 4 * 2.0 + 0.75);
  }
}
