#include <doctest.h>

#include <cmath>
#include <random>

#include "egcn/autodiff.hpp"

using namespace egcn;

namespace {

Tensor randt(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = d(rng);
  return t;
}

}  // namespace

TEST_CASE("softmax of a zero 2-vector is (0.5, 0.5), rows sum to one") {
  Var x = Var::constant(Tensor({1, 2}));
  Var y = ops::softmax(x);
  CHECK(y.value()[0] == doctest::Approx(0.5));
  CHECK(y.value()[1] == doctest::Approx(0.5));

  std::mt19937_64 rng(1);
  Var z = ops::softmax(Var::constant(randt({7, 13}, rng, -5.0, 5.0)));
  for (int64_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (int64_t j = 0; j < 13; ++j) {
      const double p = z.value()[r * 13 + j];
      CHECK(p > 0.0);
      s += p;
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("swish fixes zero") {
  Var y = ops::swish(Var::constant(Tensor::scalar(0.0)));
  CHECK(y.value()[0] == 0.0);
}

TEST_CASE("backward of sum(x*x) at x=3 gives 6") {
  Var x = Var::leaf(Tensor::scalar(3.0), true);
  Var loss = ops::sum_all(ops::mul(x, x));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward of sum(A*B) gives ones*B^T for A") {
  Tensor a({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor b({2, 2}, {5.0, 6.0, 7.0, 8.0});
  Var A = Var::leaf(a, true);
  Var B = Var::constant(b);
  backward(ops::sum_all(ops::matmul(A, B)));
  // d/dA sum(AB) = ones(2,2) @ B^T
  CHECK(A.grad().at({0, 0}) == doctest::Approx(5.0 + 6.0));
  CHECK(A.grad().at({0, 1}) == doctest::Approx(7.0 + 8.0));
  CHECK(A.grad().at({1, 0}) == doctest::Approx(5.0 + 6.0));
  CHECK(A.grad().at({1, 1}) == doctest::Approx(7.0 + 8.0));
}

TEST_CASE("a value off the loss path keeps a zero gradient") {
  Var x = Var::leaf(Tensor::scalar(2.0), true);
  Var unused = Var::leaf(Tensor::scalar(5.0), true);
  backward(ops::sum_all(ops::mul(x, x)));
  CHECK(unused.grad().empty());  // never touched -> zero by convention
}

TEST_CASE("non-scalar loss is rejected") {
  Var x = Var::leaf(Tensor({2, 2}), true);
  Var y = ops::add(x, x);
  CHECK_THROWS_AS(backward(y), Error);
}

TEST_CASE("gradient accumulates over all paths") {
  Var x = Var::leaf(Tensor::scalar(1.5), true);
  Var y = ops::add(x, x);  // dy/dx = 2
  backward(ops::sum_all(y));
  CHECK(x.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("shape mismatch diagnostics name the op and both shapes") {
  Var a = Var::constant(Tensor({2, 3}));
  Var b = Var::constant(Tensor({3, 3}));
  try {
    ops::add(a, b);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.category == "shape");
    CHECK(std::string(e.what()).find("add") != std::string::npos);
    CHECK(std::string(e.what()).find("(2,3)") != std::string::npos);
    CHECK(std::string(e.what()).find("(3,3)") != std::string::npos);
  }
}

TEST_CASE("conv1x1 temporal stride halves the length like the depthwise stage") {
  std::mt19937_64 rng(3);
  Var x = Var::constant(randt({1, 4, 16, 5}, rng));
  Var w = Var::constant(randt({6, 4}, rng));
  Var y = ops::conv1x1(x, w, Var(), 2);
  CHECK(y.shape() == Shape{1, 6, 8, 5});
}

TEST_CASE("dwconv_t output length: T=16, stride 2, taps 5, pad 2 -> 8") {
  std::mt19937_64 rng(4);
  Var x = Var::constant(randt({2, 4, 16, 5}, rng));
  Var w = Var::constant(randt({4, 5}, rng));
  Var y = ops::dwconv_t(x, w, Var(), 2);
  CHECK(y.shape() == Shape{2, 4, 8, 5});
}

TEST_CASE("batch_norm inference with identity affine and unit stats is identity") {
  std::mt19937_64 rng(5);
  Tensor x = randt({3, 6, 10, 4}, rng);
  Var gamma = Var::constant(Tensor::full({6}, 1.0));
  Var beta = Var::constant(Tensor({6}));
  Tensor rm({6});
  Tensor rv = Tensor::full({6}, 1.0);
  Var y = ops::batch_norm(Var::constant(x), gamma, beta, rm, rv, false, 0.9, 1e-5);
  for (int64_t i = 0; i < x.size(); ++i) {
    CHECK(std::abs(y.value()[i] - x[i]) < 1e-5 * std::abs(x[i]) + 1e-6);
  }
}

TEST_CASE("batch_norm training normalizes per channel") {
  std::mt19937_64 rng(6);
  Tensor x = randt({4, 3, 8, 5}, rng, -2.0, 3.0);
  Var gamma = Var::constant(Tensor::full({3}, 1.0));
  Var beta = Var::constant(Tensor({3}));
  Tensor rm({3}), rv = Tensor::full({3}, 1.0);
  Var y = ops::batch_norm(Var::constant(x), gamma, beta, rm, rv, true);
  const int64_t R = 8 * 5;
  for (int64_t c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    for (int64_t n = 0; n < 4; ++n) {
      for (int64_t i = 0; i < R; ++i) {
        const double v = y.value()[(n * 3 + c) * R + i];
        s += v;
        s2 += v * v;
      }
    }
    const double nel = 4.0 * R;
    CHECK(std::abs(s / nel) < 1e-10);
    CHECK(s2 / nel == doctest::Approx(1.0).epsilon(1e-3));
  }
  // Running stats moved away from their initial values.
  CHECK(rm[0] != 0.0);
}

TEST_CASE("concat then split recovers operands bit-exactly") {
  std::mt19937_64 rng(7);
  Tensor a = randt({2, 3, 4}, rng);
  Tensor b = randt({2, 5, 4}, rng);
  Var y = ops::concat({Var::constant(a), Var::constant(b)}, 1);
  CHECK(y.shape() == Shape{2, 8, 4});
  Var sa = ops::slice(y, 1, 0, 3);
  Var sb = ops::slice(y, 1, 3, 5);
  CHECK(sa.value().vec() == a.vec());
  CHECK(sb.value().vec() == b.vec());
}

TEST_CASE("finite differences: sigmoid tight, linear essentially exact") {
  std::mt19937_64 rng(8);
  Tensor x = randt({8}, rng);
  const double e1 = finite_diff_check(
      [](const Var& v) { return ops::sum_all(ops::sigmoid(v)); }, x);
  CHECK(e1 <= 1e-6);

  Tensor w = randt({8}, rng);
  const double e2 = finite_diff_check(
      [&](const Var& v) { return ops::sum_all(ops::mul(v, Var::constant(w))); }, x);
  CHECK(e2 <= 1e-9);
}

TEST_CASE("every primitive passes a randomized finite-difference check") {
  std::mt19937_64 rng(9);
  const double tol = 1e-4;

  SUBCASE("elementwise and reductions") {
    Tensor x = randt({2, 3, 4, 5}, rng);
    for (auto f : {+[](const Var& v) { return ops::sum_all(ops::swish(v)); },
                   +[](const Var& v) { return ops::sum_all(ops::hardswish(v)); },
                   +[](const Var& v) { return ops::sum_all(ops::sigmoid(v)); },
                   +[](const Var& v) { return ops::sum_all(ops::mean_axis(v, 2)); },
                   +[](const Var& v) { return ops::sum_all(ops::l2_norm_channels(v)); },
                   +[](const Var& v) { return ops::sum_all(ops::mul(ops::softmax(v), v)); }}) {
      CHECK(finite_diff_check(f, x) <= tol);
    }
  }

  SUBCASE("matmul and linear") {
    Tensor a = randt({3, 4}, rng), b = randt({4, 5}, rng);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::mul(ops::matmul(v, Var::constant(b)),
                                   ops::matmul(v, Var::constant(b))));
    }, a) <= tol);
    Tensor w = randt({6, 4}, rng), bias = randt({6}, rng);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::swish(ops::linear(ops::reshape(v, {3, 4}),
                                                 Var::constant(w), Var::constant(bias))));
    }, a) <= tol);
    // And wrt the weight:
    Tensor xin = randt({3, 4}, rng);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::swish(ops::linear(Var::constant(xin), v, Var::constant(bias))));
    }, w) <= tol);
  }

  SUBCASE("convolutions") {
    Tensor x = randt({2, 3, 7, 4}, rng);
    Tensor w = randt({5, 3}, rng), bias = randt({5}, rng);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::swish(ops::conv1x1(v, Var::constant(w), Var::constant(bias), 2)));
    }, x) <= tol);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::swish(ops::conv1x1(Var::constant(x), v, Var::constant(bias), 1)));
    }, w) <= tol);
    Tensor dw = randt({3, 5}, rng);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::swish(ops::dwconv_t(Var::constant(x), v, Var(), 2)));
    }, dw) <= tol);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::swish(ops::dwconv_t(v, Var::constant(dw), Var(), 1)));
    }, x) <= tol);
  }

  SUBCASE("graph ops") {
    Tensor x = randt({2, 3, 4, 5}, rng);
    Tensor m = randt({5, 5}, rng);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::swish(ops::node_mix(v, Var::constant(m))));
    }, x) <= tol);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::swish(ops::node_mix(Var::constant(x), v)));
    }, m) <= tol);
    Tensor mb = randt({2, 5, 5}, rng);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::swish(ops::node_mix_batched(Var::constant(x), v)));
    }, mb) <= tol);
    Tensor eb = randt({2, 3, 4, 5}, rng);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::swish(ops::similarity(v, Var::constant(eb))));
    }, x) <= tol);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::softmax(ops::similarity(v, v)));
    }, x) <= tol);
  }

  SUBCASE("batch norm, gates, cross entropy") {
    Tensor x = randt({3, 4, 5, 2}, rng);
    Tensor gm = randt({4}, rng, 0.5, 1.5), bt = randt({4}, rng);
    CHECK(finite_diff_check([&](const Var& v) {
      Tensor rm({4}), rv = Tensor::full({4}, 1.0);
      return ops::sum_all(ops::swish(
          ops::batch_norm(v, Var::constant(gm), Var::constant(bt), rm, rv, true)));
    }, x, 1e-4) <= tol);
    CHECK(finite_diff_check([&](const Var& v) {
      Tensor rm({4}), rv = Tensor::full({4}, 1.0);
      return ops::sum_all(ops::swish(
          ops::batch_norm(Var::constant(x), v, Var::constant(bt), rm, rv, true)));
    }, gm) <= tol);

    Tensor gt = randt({3, 4, 5}, rng), gv = randt({3, 4, 2}, rng);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::apply_joint_gates(v, Var::constant(gt), Var::constant(gv)));
    }, x) <= tol);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::apply_joint_gates(Var::constant(x), v, Var::constant(gv)));
    }, gt) <= tol);
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::sum_all(ops::apply_joint_gates(Var::constant(x), Var::constant(gt), v));
    }, gv) <= tol);

    Tensor logits = randt({4, 6}, rng);
    std::vector<int> labels = {0, 3, 5, 2};
    CHECK(finite_diff_check([&](const Var& v) {
      return ops::cross_entropy_sum(v, labels);
    }, logits) <= tol);
  }

  SUBCASE("concat and slice") {
    Tensor x = randt({2, 3, 4}, rng);
    Tensor other = randt({2, 2, 4}, rng);
    CHECK(finite_diff_check([&](const Var& v) {
      Var c = ops::concat({v, Var::constant(other)}, 1);
      return ops::sum_all(ops::swish(ops::slice(c, 1, 1, 3)));
    }, x) <= tol);
  }
}

TEST_CASE("finite_diff_check rejects NaN-producing functions") {
  Tensor x = Tensor::scalar(-1.0);
  CHECK_THROWS_AS(finite_diff_check([](const Var& v) {
    Tensor bad = Tensor::scalar(std::nan(""));
    return ops::sum_all(ops::mul(v, Var::constant(bad)));
  }, x), Error);
}
