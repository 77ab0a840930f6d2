#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "salaudit/models.hpp"
#include "salaudit/ops.hpp"
#include "testutil.hpp"

using namespace salaudit;
namespace tu = salaudit::testutil;

TEST_CASE("identity 1x1 conv reproduces its input") {
  Network net({LayerSpec::conv("id", 1, 1, 1)}, 1, 4, 4);
  WeightStore ws;
  Tensor w({1, 1, 1, 1});
  w.data[0] = 1.0f;
  ws.put("id.weight", w);
  ws.put("id.bias", Tensor({1}));
  const Tensor x = init_truncated_normal({1, 4, 4}, 3, 0.5f);
  const auto out = forward(net, ws, x).output;
  CHECK(out.shape == std::vector<int>{1, 4, 4});
  for (size_t i = 0; i < x.data.size(); ++i) CHECK(out.data[i] == x.data[i]);
}

TEST_CASE("all-zero weights through linear layers give zero output") {
  Network net({LayerSpec::conv("c", 1, 2, 3, 1, 1), LayerSpec::avgpool_layer("p"),
               LayerSpec::dense_layer("d", 2 * 2 * 2, 1)},
              1, 4, 4);
  WeightStore ws;
  ws.put("c.weight", Tensor({2, 1, 3, 3}));
  ws.put("c.bias", Tensor({2}));
  ws.put("d.weight", Tensor({1, 8}));
  ws.put("d.bias", Tensor({1}));
  const Tensor x = init_truncated_normal({1, 4, 4}, 5, 1.0f);
  CHECK(forward(net, ws, x).output.data[0] == 0.0f);
}

TEST_CASE("hand-convolved 2x2 all-ones case") {
  Network net({LayerSpec::conv("c", 1, 1, 2)}, 1, 2, 2);
  WeightStore ws;
  Tensor w({1, 1, 2, 2});
  w.fill(1.0f);
  ws.put("c.weight", w);
  ws.put("c.bias", Tensor({1}));
  Tensor x({1, 2, 2});
  x.fill(1.0f);
  const auto out = forward(net, ws, x).output;
  CHECK(out.numel() == 1);
  CHECK(out.data[0] == 4.0f);
}

TEST_CASE("forward rejects mismatched shapes naming the layer") {
  Network net({LayerSpec::conv("c1", 2, 2, 3, 1, 1)}, 2, 4, 4);
  WeightStore ws = init_weights(net, 1);
  Tensor bad({1, 4, 4});
  CHECK_THROWS_AS(forward(net, ws, bad), ValidationError);
  Network net2({LayerSpec::dense_layer("fc", 16, 1)}, 1, 4, 4);
  WeightStore ws2;
  ws2.put("fc.weight", Tensor({1, 15}));
  ws2.put("fc.bias", Tensor({1}));
  Tensor x({1, 4, 4});
  try {
    forward(net2, ws2, x);
    FAIL("expected a shape failure");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("fc") != std::string::npos);
  }
}

TEST_CASE("forward is pure: bit-identical repeats") {
  const Network net = tu::random_small_net(11);
  const auto ws = init_weights(net, 12);
  const Tensor x = init_truncated_normal({1, net.in_h, net.in_w}, 13, 0.7f);
  const auto a = forward(net, ws, x).output;
  const auto b = forward(net, ws, x).output;
  CHECK(a.data == b.data);
}

TEST_CASE("linear net input gradient is the weight vector") {
  Network net({LayerSpec::dense_layer("fc", 9, 1)}, 1, 3, 3);
  WeightStore ws;
  const Tensor w = init_truncated_normal({1, 9}, 21, 0.5f);
  ws.put("fc.weight", w);
  ws.put("fc.bias", Tensor({1}));
  for (uint64_t s = 0; s < 3; ++s) {
    const Tensor x = init_truncated_normal({1, 3, 3}, 30 + s, 1.0f);
    auto fwd = forward(net, ws, x);
    const auto g = backward_input(net, ws, fwd.tape);
    for (int i = 0; i < 9; ++i)
      CHECK(g.data[static_cast<size_t>(i)] == w.data[static_cast<size_t>(i)]);
  }
}

TEST_CASE("analytic input gradient matches central differences on random nets") {
  for (uint64_t s = 0; s < 6; ++s) {
    const Network net = tu::random_small_net(100 + s);
    auto [ws, x] = tu::differentiable_case(net, 200 + s);
    auto fwd = forward(net, ws, x);
    Ten<double> seed(fwd.output.shape);
    seed.data[0] = 1.0;
    const auto analytic = backward(net, ws, fwd.tape, seed).input_grad;
    const auto fd = tu::fd_input_grad(net, ws, x, seed, 1e-3);
    CHECK(tu::max_rel_err(analytic.data, fd.data) < 1e-4);
  }
}

TEST_CASE("weight gradients match central differences, dense and conv") {
  for (uint64_t s = 0; s < 4; ++s) {
    const Network net = tu::random_small_net(300 + s);
    auto [ws, x] = tu::differentiable_case(net, 400 + s);
    auto fwd = forward(net, ws, x);
    Ten<double> seed(fwd.output.shape);
    seed.data[0] = 1.0;
    const auto analytic = backward(net, ws, fwd.tape, seed).weight_grads;
    const auto fd = tu::fd_weight_grad(net, ws, x, seed, 1e-3);
    for (const auto& name : ws.names())
      CHECK(tu::max_rel_err(analytic.get(name).data, fd.get(name).data) < 1e-4);
  }
}

TEST_CASE("gradients through skip connections and upsampling match differences") {
  using L = LayerSpec;
  Network net({L::conv("e1", 1, 2, 3, 1, 1), L::relu_layer("e1_relu"),
               L::maxpool_layer("e1_pool"), L::conv("mid", 2, 2, 3, 1, 1), L::upsample("up"),
               L::concat("cat", "e1_relu"), L::conv("out", 4, 1, 1)},
              1, 6, 6);
  auto [ws, x] = tu::differentiable_case(net, 77);
  auto fwd = forward(net, ws, x);
  const auto seed = tu::random_tensor(fwd.output.shape, 78, 1.0);
  const auto got = backward(net, ws, fwd.tape, seed);
  const auto fd_in = tu::fd_input_grad(net, ws, x, seed, 1e-3);
  CHECK(tu::max_rel_err(got.input_grad.data, fd_in.data) < 1e-4);
  const auto fd_w = tu::fd_weight_grad(net, ws, x, seed, 1e-3);
  for (const auto& name : ws.names())
    CHECK(tu::max_rel_err(got.weight_grads.get(name).data, fd_w.get(name).data) < 1e-4);
}

TEST_CASE("guided rule zeroes everything when the incoming gradient is negative") {
  using L = LayerSpec;
  Network net({L::conv("c", 1, 1, 1), L::relu_layer("r"), L::globalavgpool_layer("g"),
               L::dense_layer("head", 1, 1)},
              1, 4, 4);
  WeightStore ws;
  Tensor cw({1, 1, 1, 1});
  cw.data[0] = 1.0f;
  ws.put("c.weight", cw);
  ws.put("c.bias", Tensor({1}));
  Tensor hw({1, 1});
  hw.data[0] = -2.0f;  // incoming gradient to the relu is negative everywhere
  ws.put("head.weight", hw);
  ws.put("head.bias", Tensor({1}));
  Tensor x({1, 4, 4});
  x.fill(0.5f);
  auto fwd = forward(net, ws, x);
  const auto guided = backward_input(net, ws, fwd.tape, ReluRule::guided);
  for (float v : guided.data) CHECK(v == 0.0f);
  const auto standard = backward_input(net, ws, fwd.tape, ReluRule::standard);
  CHECK(standard.data[0] != 0.0f);
}

TEST_CASE("guided support never exceeds standard support on single-relu nets") {
  for (uint64_t s = 0; s < 8; ++s) {
    using L = LayerSpec;
    Network net({L::conv("c", 1, 2, 3, 1, 1), L::relu_layer("r"), L::globalavgpool_layer("g"),
                 L::dense_layer("head", 2, 1)},
                1, 4, 4);
    const auto ws = tu::random_weights(net, 500 + s, 0.8);
    const auto x = tu::random_tensor({1, 4, 4}, 600 + s, 1.0);
    auto fwd = forward(net, ws, x);
    Ten<double> seed(fwd.output.shape);
    seed.data[0] = 1.0;
    const auto std_grad = backward(net, ws, fwd.tape, seed, ReluRule::standard).input_grad;
    const auto gui_grad = backward(net, ws, fwd.tape, seed, ReluRule::guided).input_grad;
    for (size_t i = 0; i < std_grad.data.size(); ++i)
      if (gui_grad.data[i] != 0.0) CHECK(std_grad.data[i] != 0.0);
  }
}

TEST_CASE("backward rejects a tape recorded against different weights") {
  const Network net = tu::random_small_net(900);
  auto ws = init_weights(net, 901);
  const Tensor x = init_truncated_normal({1, net.in_h, net.in_w}, 902, 0.5f);
  auto fwd = forward(net, ws, x);
  ws.get_mutable("c1.weight").data[0] += 1.0f;
  Tensor seed({1});
  seed.data[0] = 1.0f;
  CHECK_THROWS_AS(backward(net, ws, fwd.tape, seed), ValidationError);
}

TEST_CASE("bce loss values") {
  const double eps = 1e-7;
  CHECK(bce_loss(std::vector<double>{1.0 - eps}, std::vector<int>{1}) ==
        doctest::Approx(0.0).epsilon(1e-6));
  CHECK(bce_loss(std::vector<double>{0.5}, std::vector<int>{1}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_loss(std::vector<double>{0.5, 0.5}, std::vector<int>{1, 0}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(bce_loss(std::vector<double>{}, std::vector<int>{}), ValidationError);
  // clamping keeps the loss finite at the extremes
  CHECK(std::isfinite(bce_loss(std::vector<double>{0.0}, std::vector<int>{1})));
  for (double p : {0.1, 0.3, 0.9}) {
    CHECK(bce_loss(std::vector<double>{p}, std::vector<int>{0}) >= 0.0);
    CHECK(bce_loss(std::vector<double>{p}, std::vector<int>{1}) >= 0.0);
  }
}

TEST_CASE("prediction equal to the label gives zero weight gradients") {
  Network net({LayerSpec::dense_layer("fc", 4, 1)}, 1, 2, 2);
  WeightStore ws;
  ws.put("fc.weight", Tensor({1, 4}));
  Tensor b({1});
  b.data[0] = 50.0f;  // sigmoid saturates to exactly 1.0 in double
  ws.put("fc.bias", b);
  Tensor x({1, 2, 2});
  x.fill(0.3f);
  auto fwd = forward(net, ws, x);
  const double p = sigmoid(static_cast<double>(fwd.output.data[0]));
  Tensor seed({1});
  seed.data[0] = static_cast<float>(p - 1.0);
  CHECK(seed.data[0] == 0.0f);
  const auto grads = backward(net, ws, fwd.tape, seed).weight_grads;
  for (const auto& name : grads.names())
    for (float v : grads.get(name).data) CHECK(v == 0.0f);
}

TEST_CASE("batch gradient accumulation is additive over duplicates") {
  const Network net = tu::random_small_net(950);
  const auto ws = init_weights(net, 951);
  const Tensor x = init_truncated_normal({1, net.in_h, net.in_w}, 952, 0.6f);
  Tensor seed({1});
  seed.data[0] = 0.37f;
  auto fwd1 = forward(net, ws, x);
  const auto g1 = backward(net, ws, fwd1.tape, seed).weight_grads;
  auto fwd2 = forward(net, ws, x);
  const auto g2 = backward(net, ws, fwd2.tape, seed).weight_grads;
  for (const auto& name : g1.names())
    for (size_t i = 0; i < g1.get(name).data.size(); ++i)
      CHECK(g1.get(name).data[i] + g2.get(name).data[i] == 2.0f * g1.get(name).data[i]);
}

TEST_CASE("adam leaves weights alone under zero gradients") {
  Network net({LayerSpec::dense_layer("fc", 4, 1)}, 1, 2, 2);
  WeightStore ws = init_weights(net, 42);
  const WeightStore before = ws;
  WeightStore zero;
  for (const auto& n : ws.names()) zero.put(n, Tensor(ws.get(n).shape));
  AdamState state;
  for (int i = 0; i < 5; ++i) adam_step(ws, zero, state, 1e-3f);
  for (const auto& n : ws.names()) CHECK(ws.get(n).data == before.get(n).data);
}

TEST_CASE("adam per-step displacement approaches lr under a constant gradient") {
  WeightStore ws;
  ws.put("w", Tensor({1, 2}));
  WeightStore grad;
  Tensor g({1, 2});
  g.data = {0.5f, -2.0f};
  grad.put("w", g);
  AdamState state;
  const float lr = 1e-3f;
  float step_size = 0.0f;
  for (int i = 0; i < 200; ++i) {
    const float before = ws.get("w").data[0];
    adam_step(ws, grad, state, lr);
    step_size = std::abs(ws.get("w").data[0] - before);
  }
  CHECK(step_size == doctest::Approx(lr).epsilon(0.02));
  // sign: constant positive gradient drives the weight down
  CHECK(ws.get("w").data[0] < 0.0f);
  CHECK(ws.get("w").data[1] > 0.0f);
}

TEST_CASE("adam is deterministic") {
  auto run = [] {
    Network net({LayerSpec::dense_layer("fc", 3, 1)}, 1, 1, 3);
    WeightStore ws = init_weights(net, 7);
    AdamState state;
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
      WeightStore grad;
      for (const auto& n : ws.names()) {
        Tensor g(ws.get(n).shape);
        for (auto& v : g.data) v = static_cast<float>(rng.normal());
        grad.put(n, g);
      }
      adam_step(ws, grad, state, 1e-3f);
    }
    return ws.get("fc.weight").data;
  };
  CHECK(run() == run());
}

TEST_CASE("truncated normal: bounds, mean, determinism") {
  const float stddev = 0.4f;
  const Tensor t = init_truncated_normal({100000}, 77, stddev);
  double mean = 0.0;
  bool in_bounds = true;
  for (float v : t.data) {
    in_bounds = in_bounds && v >= -2.0f * stddev && v <= 2.0f * stddev;
    mean += v;
  }
  CHECK(in_bounds);
  mean /= static_cast<double>(t.numel());
  CHECK(std::abs(mean) < 0.02 * stddev);
  CHECK(init_truncated_normal({64}, 123, 0.05f).data ==
        init_truncated_normal({64}, 123, 0.05f).data);
  CHECK(init_truncated_normal({64}, 123, 0.05f).data !=
        init_truncated_normal({64}, 124, 0.05f).data);
  CHECK_THROWS_AS(init_truncated_normal({4}, 1, 0.0f), ValidationError);
}

TEST_CASE("network construction validates names and hyperparameters") {
  using L = LayerSpec;
  CHECK_THROWS_AS(Network({L::relu_layer("a"), L::relu_layer("a")}, 1, 4, 4), ValidationError);
  CHECK_THROWS_AS(L::conv("c", 1, 1, 3, 0), ValidationError);
  CHECK_THROWS_AS(Network({L::conv("c", 1, 1, 9)}, 1, 4, 4), ValidationError);
  CHECK_THROWS_AS(Network({L::concat("k", "missing")}, 1, 4, 4), ValidationError);
  CHECK_THROWS_AS(Network({L::concat("k", "k")}, 1, 4, 4), ValidationError);
}

TEST_CASE("engine outputs stay finite on finite inputs") {
  for (uint64_t s = 0; s < 4; ++s) {
    const Network net = tu::random_small_net(1200 + s);
    const auto ws = init_weights(net, 1300 + s, 0.5f);
    const Tensor x = init_truncated_normal({1, net.in_h, net.in_w}, 1400 + s, 1.0f);
    auto fwd = forward(net, ws, x);
    CHECK(fwd.output.all_finite());
    Tensor seed(fwd.output.shape);
    seed.fill(1.0f);
    auto back = backward(net, ws, fwd.tape, seed);
    CHECK(back.input_grad.all_finite());
  }
}

TEST_CASE("float and double instantiations agree closely") {
  const Network net = tu::random_small_net(1500);
  const WeightStore wsf = init_weights(net, 1501);
  const auto wsd = wsf.cast<double>();
  const Tensor xf = init_truncated_normal({1, net.in_h, net.in_w}, 1502, 0.8f);
  const auto xd = xf.cast<double>();
  auto ff = forward(net, wsf, xf);
  auto fd = forward(net, wsd, xd);
  CHECK(static_cast<double>(ff.output.data[0]) ==
        doctest::Approx(fd.output.data[0]).epsilon(1e-4));
  const auto gf = backward_input(net, wsf, ff.tape);
  const auto gd = backward_input(net, wsd, fd.tape);
  for (size_t i = 0; i < gf.data.size(); ++i)
    CHECK(static_cast<double>(gf.data[i]) == doctest::Approx(gd.data[i]).epsilon(1e-3));
}
