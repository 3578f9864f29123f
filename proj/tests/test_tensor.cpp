#include <cmath>

#include "doctest.h"
#include "tvr/serialize.hpp"
#include "tvr/tensor.hpp"

#include <cstdio>
#include <fstream>

using namespace tvr;

namespace {

// Scalar probe used by finite-difference checks. `build` must be a pure
// function of its input so repeated evaluation is consistent. The default
// step is 1e-2 at unit input scale: the forward pass is float32, so its
// ~1e-7 relative noise divided by 2*eps dominates below that, while the
// central-difference truncation term stays near 1e-6.
double fd_check(const std::function<Tensor(Tape*, const Tensor&)>& build, const Tensor& x0,
                double eps = 1e-2) {
  Tape tape;
  Tensor x = tape.watch(x0);
  Tensor loss = build(&tape, x);
  tape.backward(loss);
  Tensor tape_grad(x0.shape(), tape.grad(x0));
  Tensor fd = fd_gradient([&](const Tensor& xv) { return build(nullptr, xv).item(); }, x0, eps);
  return rel_error(tape_grad, fd);
}

}  // namespace

TEST_CASE("elementwise forward values") {
  Tensor a({2}, {2.0f, 3.0f});
  Tensor b({2}, {4.0f, 5.0f});
  Tensor h = mul(a, b);
  CHECK(h[0] == doctest::Approx(8.0f));
  CHECK(h[1] == doctest::Approx(15.0f));
  CHECK(sigmoid(Tensor::scalar(0.0))[0] == doctest::Approx(0.5));
  CHECK(add(a, b)[1] == doctest::Approx(8.0f));
  CHECK(sub(a, b)[0] == doctest::Approx(-2.0f));
  CHECK(mul_scalar(a, 0.5)[0] == doctest::Approx(1.0f));
  CHECK_THROWS_AS(add(a, Tensor({3})), Error);
}

TEST_CASE("exp gradient matches central differences at x=1") {
  Tensor x0({1}, {1.0f});
  Tape tape;
  Tensor x = tape.watch(x0);
  Tensor y = sum(exp_op(x));
  tape.backward(y);
  double g = tape.grad(x0)[0];
  Tensor fd = fd_gradient([](const Tensor& v) { return sum(exp_op(v)).item(); }, x0, 1e-3);
  CHECK(std::abs(g - fd[0]) / std::exp(1.0) < 1e-5);
}

TEST_CASE("exp and sigmoid stay finite over [-60, 60]") {
  std::vector<float> vals;
  for (double v = -60.0; v <= 60.0; v += 0.5) vals.push_back(static_cast<float>(v));
  Tensor x({static_cast<int>(vals.size())}, vals);
  Tensor e = exp_op(x);
  Tensor s = sigmoid(x);
  for (int64_t i = 0; i < x.size(); ++i) {
    CHECK(std::isfinite(e[i]));
    CHECK(std::isfinite(s[i]));
  }
}

TEST_CASE("tape gradients match finite differences across elementwise ops") {
  Rng rng(7);
  struct Case {
    const char* name;
    std::function<Tensor(Tape*, const Tensor&)> build;
  };
  Tensor other = Tensor::uniform({24}, rng, -1.0, 1.0);
  std::vector<Case> cases = {
      {"add", [&](Tape* tp, const Tensor& x) { return sum(add(x, tp ? tp->watch(other) : other)); }},
      {"sub", [&](Tape*, const Tensor& x) { return sum(sub(x, other)); }},
      {"mul", [&](Tape*, const Tensor& x) { return sum(mul(x, other)); }},
      {"div", [&](Tape*, const Tensor& x) { return sum(div(x, add_scalar(mul(other, other), 0.5))); }},
      {"exp", [&](Tape*, const Tensor& x) { return sum(exp_op(x)); }},
      {"sigmoid", [&](Tape*, const Tensor& x) { return sum(sigmoid(x)); }},
      {"softplus", [&](Tape*, const Tensor& x) { return sum(softplus(x)); }},
      {"scale_act", [&](Tape*, const Tensor& x) { return sum(scale_activation(x, 1.0)); }},
      {"mean", [&](Tape*, const Tensor& x) { return mean(mul(x, x)); }},
      {"l1", [&](Tape*, const Tensor& x) { return l1(x, other); }},
      {"l2", [&](Tape*, const Tensor& x) { return l2(x, other); }},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x0 = Tensor::uniform({24}, rng, -1.0, 1.0);
      // keep leaky/abs kinks away from the probe for the non-smooth losses
      if (std::string(c.name) == "l1")
        for (int64_t i = 0; i < x0.size(); ++i)
          if (std::abs(x0[i] - other[i]) < 0.05f) x0[i] += 0.1f;  // keep |.| kink clear of the probe step
      CHECK(fd_check(c.build, x0) < 1e-4);
    }
  }
}

TEST_CASE("leaky_relu and clamp gradients away from kinks") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x0 = Tensor::uniform({16}, rng, -1.0, 1.0);
    for (int64_t i = 0; i < x0.size(); ++i) {
      if (std::abs(x0[i]) < 0.05f) x0[i] = 0.2f;
      if (std::abs(std::abs(x0[i]) - 0.8f) < 0.05f) x0[i] *= 0.8f;
    }
    CHECK(fd_check([](Tape*, const Tensor& x) { return sum(leaky_relu(x)); }, x0) < 1e-4);
    CHECK(fd_check([](Tape*, const Tensor& x) { return sum(clamp(x, -0.8, 0.8)); }, x0) < 1e-4);
  }
}

TEST_CASE("gradient of mean is 1/n everywhere") {
  Tensor x0({3}, {1.0f, 2.0f, 3.0f});
  CHECK(mean(x0).item() == doctest::Approx(2.0));
  Tape tape;
  Tensor x = tape.watch(x0);
  tape.backward(mean(x));
  for (float g : tape.grad(x0)) CHECK(g == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("l1 of identical tensors is zero") {
  Tensor a({2}, {1.0f, 2.0f});
  CHECK(l1(a, a).item() == doctest::Approx(0.0));
}

TEST_CASE("fd_gradient on sum of squares") {
  Tensor x({2}, {1.0f, 2.0f});
  Tensor g = fd_gradient(
      [](const Tensor& v) {
        double s = 0.0;
        for (int64_t i = 0; i < v.size(); ++i) s += static_cast<double>(v[i]) * v[i];
        return s;
      },
      x, 1e-3);
  CHECK(std::abs(g[0] - 2.0) < 1e-6);
  CHECK(std::abs(g[1] - 4.0) < 1e-6);
  Tensor gc = fd_gradient([](const Tensor&) { return 5.0; }, x, 1e-3);
  CHECK(gc[0] == 0.0f);
  CHECK(gc[1] == 0.0f);
}

TEST_CASE("conv2d forward identity and zero kernels") {
  Rng rng(3);
  Tensor img = Tensor::uniform({2, 4, 4}, rng, 0.0, 1.0);
  Tensor eye({2, 2, 1, 1}, {1.0f, 0.0f, 0.0f, 1.0f});
  Tensor out = conv2d(img, eye, 1, 0);
  CHECK(max_abs_diff(out, img) == 0.0);
  Tensor zk = Tensor::zeros({3, 2, 3, 3});
  Tensor zo = conv2d(img, zk, 1, 1);
  for (int64_t i = 0; i < zo.size(); ++i) CHECK(zo[i] == 0.0f);
  CHECK_THROWS_AS(conv2d(img, Tensor::zeros({3, 2, 3, 3}), 3, 0), Error);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(5);
  Tensor img0 = Tensor::uniform({2, 4, 4}, rng, -1.0, 1.0);
  Tensor ker0 = Tensor::randn({3, 2, 3, 3}, rng, 0.4);

  // d/d(input)
  double err_in = fd_check(
      [&](Tape* tp, const Tensor& x) {
        Tensor k = tp ? tp->watch(ker0) : ker0;
        Tensor y = conv2d(x, k, 1, 1);
        return sum(mul(y, y));
      },
      img0, 1e-2);
  CHECK(err_in < 1e-4);

  // d/d(kernel)
  Tape tape;
  Tensor k = tape.watch(ker0);
  Tensor y = conv2d(img0, k, 1, 1);
  Tensor loss = sum(mul(y, y));
  tape.backward(loss);
  Tensor tape_grad(ker0.shape(), tape.grad(ker0));
  Tensor fd = fd_gradient(
      [&](const Tensor& kv) {
        Tensor yy = conv2d(img0, kv, 1, 1);
        return sum(mul(yy, yy)).item();
      },
      ker0, 1e-2);
  CHECK(rel_error(tape_grad, fd) < 1e-4);
}

TEST_CASE("two-layer conv net agrees with fd oracle") {
  Rng rng(17);
  Tensor k1 = Tensor::randn({4, 1, 3, 3}, rng, 0.4);
  Tensor b1 = Tensor::randn({4}, rng, 0.1);
  Tensor k2 = Tensor::randn({1, 4, 3, 3}, rng, 0.4);
  Tensor x0 = Tensor::uniform({1, 6, 6}, rng, -1.0, 1.0);
  double err = fd_check(
      [&](Tape* tp, const Tensor& x) {
        Tensor w1 = tp ? tp->watch(k1) : k1;
        Tensor bb = tp ? tp->watch(b1) : b1;
        Tensor w2 = tp ? tp->watch(k2) : k2;
        Tensor h = sigmoid(bias_add(conv2d(x, w1, 1, 1), bb));
        Tensor y = conv2d(h, w2, 1, 1);
        return sum(mul(y, y));
      },
      x0, 1e-2);
  CHECK(err < 1e-4);
}

TEST_CASE("linear and channel_scale gradients") {
  Rng rng(23);
  Tensor w = Tensor::randn({3, 5}, rng, 0.5);
  Tensor b = Tensor::randn({3}, rng, 0.2);
  Tensor x0 = Tensor::uniform({5}, rng, -1.0, 1.0);
  CHECK(fd_check(
            [&](Tape* tp, const Tensor& x) {
              Tensor ww = tp ? tp->watch(w) : w;
              Tensor bb = tp ? tp->watch(b) : b;
              Tensor y = linear(x, ww, bb);
              return sum(mul(y, y));
            },
            x0) < 1e-4);

  Tensor img0 = Tensor::uniform({3, 4, 4}, rng, -1.0, 1.0);
  Tensor s = Tensor::uniform({3}, rng, 0.5, 1.5);
  CHECK(fd_check(
            [&](Tape* tp, const Tensor& x) {
              Tensor ss = tp ? tp->watch(s) : s;
              return sum(mul(channel_scale(x, ss), channel_scale(x, ss)));
            },
            img0) < 1e-4);
  // gradient w.r.t. the scale vector
  Tape tape;
  Tensor ss = tape.watch(s);
  Tensor y = channel_scale(img0, ss);
  tape.backward(sum(mul(y, y)));
  Tensor tg(s.shape(), tape.grad(s));
  Tensor fd = fd_gradient(
      [&](const Tensor& sv) {
        Tensor yy = channel_scale(img0, sv);
        return sum(mul(yy, yy)).item();
      },
      s, 1e-3);
  CHECK(rel_error(tg, fd) < 1e-4);
}

TEST_CASE("structure ops roundtrip and gradients") {
  Rng rng(29);
  Tensor a = Tensor::uniform({2, 4, 4}, rng, -1.0, 1.0);
  Tensor b = Tensor::uniform({3, 4, 4}, rng, -1.0, 1.0);
  Tensor cat = concat_ch({a, b});
  CHECK(cat.dim(0) == 5);
  CHECK(max_abs_diff(slice_ch(cat, 0, 2), a) == 0.0);
  CHECK(max_abs_diff(slice_ch(cat, 2, 5), b) == 0.0);

  CHECK(fd_check(
            [&](Tape* tp, const Tensor& x) {
              Tensor other = tp ? tp->watch(b) : b;
              Tensor c = concat_ch({x, other});
              return sum(mul(c, c));
            },
            a) < 1e-4);
  CHECK(fd_check([](Tape*, const Tensor& x) { return sum(mul(upsample2(x), upsample2(x))); }, a) <
        1e-4);
  CHECK(fd_check([](Tape*, const Tensor& x) { return sum(mul(avgpool2(x), avgpool2(x))); }, a) <
        1e-4);
}

TEST_CASE("whole-graph backward equals staged chain-rule composition") {
  Rng rng(31);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x0 = Tensor::uniform({12}, rng, -1.0, 1.0);
    Tensor w = Tensor::uniform({12}, rng, -1.0, 1.0);

    // Whole graph: L = sum((x*w + sigmoid(x))^2)
    Tape whole;
    Tensor x = whole.watch(x0);
    Tensor y = add(mul(x, whole.watch(w)), sigmoid(x));
    Tensor loss = sum(mul(y, y));
    whole.backward(loss);
    std::vector<float> gx_whole = whole.grad(x0);

    // Staged: backward of L w.r.t. y, then seed a second tape recording y(x).
    Tape stage2;
    Tensor y_in = stage2.watch(y.detached());
    stage2.backward(sum(mul(y_in, y_in)));
    std::vector<float> gy = stage2.grad(y.detached());

    Tape stage1;
    Tensor x1 = stage1.watch(x0);
    Tensor y1 = add(mul(x1, stage1.watch(w)), sigmoid(x1));
    stage1.backward(y1, gy);
    std::vector<float> gx_staged = stage1.grad(x0);

    for (size_t i = 0; i < gx_whole.size(); ++i)
      CHECK(gx_whole[i] == doctest::Approx(gx_staged[i]).epsilon(1e-5));
  }
}

TEST_CASE("tape is single-use") {
  Tape tape;
  Tensor x = tape.watch(Tensor::scalar(2.0));
  Tensor y = mul(x, x);
  tape.backward(sum(y));
  CHECK_THROWS_AS(tape.backward(sum(y)), Error);
}

TEST_CASE("watch memoizes shared parameters") {
  Tape tape;
  Tensor p({2}, {1.0f, 2.0f});
  Tensor p1 = tape.watch(p);
  Tensor p2 = tape.watch(p);
  CHECK(p1.node() == p2.node());
  // Both uses accumulate into one gradient slot.
  Tensor loss = sum(add(mul_scalar(p1, 2.0), mul_scalar(p2, 3.0)));
  tape.backward(loss);
  for (float g : tape.grad(p)) CHECK(g == doctest::Approx(5.0));
}

TEST_CASE("quantize8 straight-through estimator") {
  Tensor x({3}, {0.1f, 0.5f, 64.0f / 255.0f});
  Tensor q = quantize8_ste(x);
  CHECK(q[2] == doctest::Approx(64.0f / 255.0f));
  // idempotent on already-quantized values
  Tensor qq = quantize8_ste(q);
  CHECK(max_abs_diff(q, qq) == 0.0);
  // gradient of sum is all-ones
  Tape tape;
  Tensor xt = tape.watch(x);
  tape.backward(sum(quantize8_ste(xt)));
  for (float g : tape.grad(x)) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("assign_values keeps the gradient path of downstream ops") {
  Tensor x0({2}, {1.0f, 2.0f});
  Tape tape;
  Tensor x = tape.watch(x0);
  Tensor mid = mul_scalar(x, 3.0);
  // Overwrite values (as the training bridge does); gradient path intact.
  mid.assign_values(Tensor({2}, {10.0f, 20.0f}));
  Tensor loss = sum(mul(mid, mid));
  tape.backward(loss);
  std::vector<float> g = tape.grad(x0);
  // d/dx sum((assign(3x))^2) uses overwritten values: 2*{10,20}*3
  CHECK(g[0] == doctest::Approx(60.0));
  CHECK(g[1] == doctest::Approx(120.0));
}

TEST_CASE("grad_noise perturbs only the backward pass") {
  Rng rng(101);
  Tensor x0 = Tensor::uniform({64}, rng, -1.0, 1.0);
  {
    Tape tape;
    Tensor x = tape.watch(x0);
    Tensor y = grad_noise(x, 0.0, nullptr);
    CHECK(max_abs_diff(y, x0) == 0.0);
    tape.backward(sum(y));
    for (float g : tape.grad(x0)) CHECK(g == doctest::Approx(1.0));
  }
  {
    Rng noise(5);
    Tape tape;
    Tensor x = tape.watch(x0);
    tape.backward(sum(grad_noise(x, 0.5, &noise)));
    std::vector<float> g = tape.grad(x0);
    double mean_g = 0.0;
    bool any_diff = false;
    for (float v : g) {
      mean_g += v;
      if (std::abs(v - 1.0) > 1e-6) any_diff = true;
    }
    CHECK(any_diff);
    // (1-alpha)*1 plus zero-mean noise: mean stays near 0.5
    CHECK(std::abs(mean_g / static_cast<double>(g.size()) - 0.5) < 0.2);
  }
}

TEST_CASE("adam reduces a quadratic") {
  Tensor p({2}, {4.0f, -3.0f});
  Adam opt({&p}, 0.1);
  for (int i = 0; i < 200; ++i) {
    Tape tape;
    Tensor w = tape.watch(p);
    tape.backward(sum(mul(w, w)));
    opt.step(tape);
  }
  CHECK(std::abs(p[0]) < 0.05f);
  CHECK(std::abs(p[1]) < 0.05f);
}

TEST_CASE("tensor dump roundtrip") {
  Rng rng(41);
  Tensor t = Tensor::uniform({3, 5, 2}, rng, -2.0, 2.0);
  const char* path = "tensor_dump_test.bin";
  save_tensors(path, {&t});
  std::vector<Tensor> loaded = load_tensors(path);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].shape() == t.shape());
  CHECK(max_abs_diff(loaded[0], t) == 0.0);
  std::remove(path);
}

TEST_CASE("tensor dump rejects bad magic") {
  const char* path = "tensor_dump_bad.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os.write("NOPE", 4);
  }
  CHECK_THROWS_AS(load_tensors(path), Error);
  std::remove(path);
}
