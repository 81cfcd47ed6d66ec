#include <catch2/catch_amalgamated.hpp>

#include "dynstg/grad_check.hpp"
#include "dynstg/ops.hpp"
#include "support/oracles.hpp"
#include "support/testutil.hpp"

using namespace dynstg;
using Catch::Approx;

TEST_CASE("tensor construction and invariants") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.at({1, 2}) == 6.0);
  REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0}), ShapeError);
  REQUIRE_THROWS_AS(t.value(), ContractError);
  REQUIRE(Tensor::scalar(3.5).value() == 3.5);
}

TEST_CASE("broadcast add and mul") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3}, {10, 20, 30});
  Tensor y = add(a, b);
  REQUIRE(y.shape() == Shape{2, 3});
  REQUIRE(y.data() == std::vector<double>{11, 22, 33, 14, 25, 36});

  Tensor c({2, 1}, {2, 3});
  Tensor z = mul(a, c);
  REQUIRE(z.data() == std::vector<double>{2, 4, 6, 12, 15, 18});

  REQUIRE_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), ShapeError);

  // scalar broadcast
  Tensor s = scale(a, -1.0);
  REQUIRE(s.at({0, 2}) == -3.0);
}

TEST_CASE("matmul matches scalar oracle including batch broadcast") {
  std::mt19937_64 rng(7);
  const std::size_t m = 3, k = 4, n = 2;
  Tensor a = testutil::random_tensor({m, k}, rng);
  Tensor b = testutil::random_tensor({k, n}, rng);
  Tensor y = matmul(a, b);
  auto ref = oracle::matmul(a.data(), b.data(), m, k, n);
  REQUIRE(testutil::max_abs_diff(y.data(), ref) < 1e-14);

  // 2D x 3D broadcast: shared left matrix across a batch
  Tensor xb = testutil::random_tensor({5, k, n}, rng);
  Tensor yb = matmul(a, xb);
  REQUIRE(yb.shape() == Shape{5, m, n});
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> slice(xb.data().begin() + i * k * n, xb.data().begin() + (i + 1) * k * n);
    auto r = oracle::matmul(a.data(), slice, m, k, n);
    std::vector<double> got(yb.data().begin() + i * m * n, yb.data().begin() + (i + 1) * m * n);
    REQUIRE(testutil::max_abs_diff(got, r) < 1e-14);
  }

  REQUIRE_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({4, 2})), ShapeError);
}

TEST_CASE("conv1d matches scalar oracle") {
  std::mt19937_64 rng(11);
  const std::size_t B = 2, T = 5, M = 3, Cin = 4, Cout = 4, K = 3;

  SECTION("full channel mixing with middle axis") {
    Tensor x = testutil::random_tensor({B, T, M, Cin}, rng);
    Tensor w = testutil::random_tensor({Cout, Cin, K}, rng);
    Tensor bias = testutil::random_tensor({Cout}, rng);
    Tensor y = conv1d(x, w, bias, 1, 1, 1);
    REQUIRE(y.shape() == Shape{B, T, M, Cout});
    auto ref = oracle::conv1d(x.data(), w.data(), bias.data(), B, T, M, Cin, Cout, K, 1, 1, 1);
    REQUIRE(testutil::max_abs_diff(y.data(), ref) < 1e-14);
  }

  SECTION("depth-wise causal") {
    Tensor x = testutil::random_tensor({B, T, Cin}, rng);
    Tensor w = testutil::random_tensor({Cin, 1, K}, rng);
    Tensor y = conv1d(x, w, std::nullopt, K - 1, 0, Cin);
    REQUIRE(y.shape() == Shape{B, T, Cin});
    auto ref = oracle::conv1d(x.data(), w.data(), {}, B, T, 1, Cin, Cin, K, K - 1, 0, Cin);
    REQUIRE(testutil::max_abs_diff(y.data(), ref) < 1e-14);
  }

  SECTION("shape errors") {
    REQUIRE_THROWS_AS(conv1d(Tensor::zeros({2, 3}), Tensor::zeros({2, 2, 3}), std::nullopt, 1, 1),
                      ShapeError);
    REQUIRE_THROWS_AS(
        conv1d(Tensor::zeros({1, 4, 4}), Tensor::zeros({3, 2, 3}), std::nullopt, 1, 1, 1),
        ShapeError);
  }
}

TEST_CASE("softmax properties") {
  SECTION("symmetry") {
    Tensor y = softmax(Tensor({2}, {0.0, 0.0}), 0);
    REQUIRE(y.data()[0] == Approx(0.5).margin(1e-15));
    REQUIRE(y.data()[1] == Approx(0.5).margin(1e-15));
  }
  SECTION("rows sum to one and stay nonnegative") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 25; ++trial) {
      Tensor x = testutil::random_tensor({3, 4, 5}, rng, -30.0, 30.0);
      const std::size_t axis = trial % 3;
      Tensor s = softmax(x, axis);
      Tensor sums = sum(s, {axis});
      for (double v : sums.data()) REQUIRE(v == Approx(1.0).margin(1e-12));
      for (double v : s.data()) REQUIRE(v >= 0.0);
    }
  }
  SECTION("empty axis is a domain error") {
    REQUIRE_THROWS_AS(softmax(Tensor::zeros({2, 0}), 1), DomainError);
  }
}

TEST_CASE("elementwise unaries at anchor points") {
  REQUIRE(silu(Tensor::scalar(0.0)).value() == 0.0);
  REQUIRE(softplus(Tensor::scalar(0.0)).value() == Approx(std::log(2.0)).margin(1e-15));
  REQUIRE(sigmoid(Tensor::scalar(0.0)).value() == 0.5);
  REQUIRE(exp(Tensor::scalar(1.0)).value() == Approx(std::exp(1.0)));
  REQUIRE(log(Tensor::scalar(std::exp(1.0))).value() == Approx(1.0));
  REQUIRE_THROWS_AS(log(Tensor::scalar(0.0)), DomainError);
  REQUIRE_THROWS_AS(log(Tensor::scalar(-1.0)), DomainError);
}

TEST_CASE("reductions and reshape") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  REQUIRE(sum(x).value() == 21.0);
  REQUIRE(mean(x).value() == 3.5);
  Tensor s1 = sum(x, {0});
  REQUIRE(s1.shape() == Shape{3});
  REQUIRE(s1.data() == std::vector<double>{5, 7, 9});
  Tensor s2 = sum(x, {1}, true);
  REQUIRE(s2.shape() == Shape{2, 1});
  REQUIRE(s2.data() == std::vector<double>{6, 15});
  Tensor m01 = mean(x, {0, 1});
  REQUIRE(m01.shape() == Shape{});
  REQUIRE(m01.value() == 3.5);

  Tensor r = reshape(x, {3, 2});
  REQUIRE(r.at({2, 1}) == 6.0);
  REQUIRE_THROWS_AS(reshape(x, {4, 2}), ShapeError);
}

TEST_CASE("l2_normalize behavior") {
  SECTION("unit norm whenever input norm clears the floor") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = testutil::random_tensor({4, 6}, rng);
      Tensor y = l2_normalize(x, 1e-12);
      for (std::size_t r = 0; r < 4; ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < 6; ++c) ss += y.at({r, c}) * y.at({r, c});
        REQUIRE(std::sqrt(ss) == Approx(1.0).margin(1e-9));
      }
    }
  }
  SECTION("zero input maps to zero output") {
    Tensor y = l2_normalize(Tensor::zeros({2, 3}), 1e-12);
    for (double v : y.data()) REQUIRE(v == 0.0);
  }
  REQUIRE_THROWS_AS(l2_normalize(Tensor::zeros({2, 3}), 0.0), ContractError);
}

TEST_CASE("evaluate is pure: repeated evaluation is bit-identical") {
  std::mt19937_64 rng(17);
  Tensor a = testutil::random_tensor({3, 4}, rng);
  Tensor b = testutil::random_tensor({4, 2}, rng);
  Tensor y1 = silu(matmul(softmax(a, 1), b));
  Tensor y2 = silu(matmul(softmax(a, 1), b));
  REQUIRE(testutil::bitwise_equal(y1.data(), y2.data()));
}

TEST_CASE("backward basics") {
  SECTION("d/dx x^2 at 3 is 6") {
    Tape tape;
    Tensor x = Tensor::scalar(3.0).set_requires_grad();
    Tensor y = mul(x, x);
    tape.backward(y);
    REQUIRE(x.grad()[0] == Approx(6.0));
  }
  SECTION("d/dx SiLU at 0 is 0.5, against the finite-difference oracle") {
    const double eps = 1e-6;
    const double numeric = (oracle::silu(eps) - oracle::silu(-eps)) / (2 * eps);
    Tape tape;
    Tensor x = Tensor::scalar(0.0).set_requires_grad();
    Tensor y = silu(x);
    tape.backward(y);
    REQUIRE(x.grad()[0] == Approx(numeric).margin(1e-9));
    REQUIRE(x.grad()[0] == Approx(0.5).margin(1e-12));
  }
  SECTION("grads of sum(softmax(x)) vanish") {
    Tape tape;
    std::mt19937_64 rng(23);
    Tensor x = testutil::random_tensor({5}, rng).set_requires_grad();
    Tensor y = sum(softmax(x, 0));
    tape.backward(y);
    for (double g : x.grad()) REQUIRE(std::abs(g) < 1e-14);
  }
  SECTION("repeated backward accumulates") {
    Tape tape;
    Tensor x = Tensor::scalar(2.0).set_requires_grad();
    Tensor y = mul(x, x);
    tape.backward(y);
    tape.backward(y);
    REQUIRE(x.grad()[0] == Approx(8.0));
    x.zero_grad();
    REQUIRE(x.grad()[0] == 0.0);
  }
  SECTION("contract violations") {
    {
      Tape tape;
      Tensor x = Tensor({2}, {1, 2}).set_requires_grad();
      Tensor y = mul(x, x);
      REQUIRE_THROWS_AS(tape.backward(y), ContractError);
    }
    Tensor z = Tensor::scalar(1.0).set_requires_grad();
    REQUIRE_THROWS_AS(backward(z), ContractError);  // no active tape
  }
  SECTION("NoTape suspends recording") {
    Tape tape;
    Tensor x = Tensor::scalar(1.0).set_requires_grad();
    {
      NoTape guard;
      Tensor y = mul(x, x);
      REQUIRE_FALSE(y.requires_grad());
    }
    Tensor y = mul(x, x);
    REQUIRE(y.requires_grad());
  }
}

TEST_CASE("broadcast gradients reduce correctly") {
  Tape tape;
  Tensor a = Tensor({2, 3}, {1, 2, 3, 4, 5, 6}).set_requires_grad();
  Tensor b = Tensor({3}, {1, 1, 1}).set_requires_grad();
  Tensor y = sum(mul(a, b));
  tape.backward(y);
  // d/db_j = sum_i a_ij
  REQUIRE(b.grad() == std::vector<double>{5, 7, 9});
  REQUIRE(a.grad() == std::vector<double>{1, 1, 1, 1, 1, 1});
}

TEST_CASE("grad_check contract") {
  Tensor x = Tensor({3}, {0.5, -0.2, 1.0}).set_requires_grad();
  auto loss = [&]() { return sum(mul(x, x)); };

  GradCheckOptions opts;
  opts.epsilon = 0.0;
  REQUIRE_THROWS_AS(grad_check(loss, {{"x", x}}, opts), ContractError);
  opts.epsilon = 1e-2;
  REQUIRE_THROWS_AS(grad_check(loss, {{"x", x}}, opts), ContractError);

  opts.epsilon = 1e-5;
  auto report = grad_check(loss, {{"x", x}}, opts);
  REQUIRE(report.pass);
  REQUIRE(report.max_rel_error < 1e-6);

  // loss = sum(x): both gradients are exactly 1. Dyadic values and a
  // power-of-two step keep the central difference exact in floating point.
  Tensor xd = Tensor({3}, {0.5, 0.25, 1.0}).set_requires_grad();
  GradCheckOptions exact;
  exact.epsilon = std::ldexp(1.0, -17);
  auto report2 = grad_check([&]() { return sum(xd); }, {{"x", xd}}, exact);
  REQUIRE(report2.pass);
  REQUIRE(report2.max_rel_error == 0.0);
}

TEST_CASE("grad_check flags losses that blow up at a perturbed point") {
  // x - eps crosses the log domain boundary.
  Tensor x = Tensor({1}, {5e-5}).set_requires_grad();
  auto loss = [&]() { return sum(log(x)); };
  GradCheckOptions opts;
  opts.epsilon = 1e-4;
  auto report = grad_check(loss, {{"x", x}}, opts);
  REQUIRE_FALSE(report.pass);
  REQUIRE_FALSE(report.failure.empty());
  REQUIRE(report.failure.find("x") != std::string::npos);
}
