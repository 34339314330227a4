#include <doctest.h>

#include <cmath>
#include <random>

#include "r2mw/tensor.hpp"

using namespace r2mw;

namespace {

Tensor random_tensor(Shape s, double lo, double hi, std::uint64_t seed,
                     bool requires_grad = false) {
  std::mt19937_64 rng(seed);
  return Tensor::uniform(s, lo, hi, rng, requires_grad);
}

}  // namespace

TEST_CASE("conv2d matches hand-computed values") {
  SUBCASE("1x1 valid: w*x + b") {
    Tensor x = Tensor::from_data({1, 1, 1, 1}, {3.0});
    Tensor w = Tensor::from_data({1, 1, 1, 1}, {2.0});
    Tensor b = Tensor::from_data({1, 1, 1, 1}, {1.0});
    CHECK(conv2d(x, w, b, 1, Padding::kValid).item() == doctest::Approx(7.0));
  }
  SUBCASE("3x3 ones, valid: sum of ones") {
    Tensor x = Tensor::full({1, 3, 3, 1}, 1.0);
    Tensor w = Tensor::full({3, 3, 1, 1}, 1.0);
    Tensor y = conv2d(x, w, 1, Padding::kValid);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(9.0));
  }
  SUBCASE("3x3 ones, same-zero: overlap counts") {
    // Hand enumeration: a corner position overlaps 4 ones, an edge 6, the
    // center all 9.
    Tensor x = Tensor::full({1, 3, 3, 1}, 1.0);
    Tensor w = Tensor::full({3, 3, 1, 1}, 1.0);
    Tensor y = conv2d(x, w, 1, Padding::kSameZero);
    CHECK(y.shape() == Shape{1, 3, 3, 1});
    CHECK(y.at(0, 0, 0, 0) == doctest::Approx(4.0));
    CHECK(y.at(0, 0, 1, 0) == doctest::Approx(6.0));
    CHECK(y.at(0, 1, 0, 0) == doctest::Approx(6.0));
    CHECK(y.at(0, 1, 1, 0) == doctest::Approx(9.0));
    CHECK(y.at(0, 2, 2, 0) == doctest::Approx(4.0));
  }
  SUBCASE("identity 1x1 kernel reproduces the input exactly") {
    Tensor x = random_tensor({2, 4, 5, 3}, -2.0, 2.0, 11);
    std::vector<double> eye(9, 0.0);
    for (int c = 0; c < 3; ++c) eye[c * 3 + c] = 1.0;
    Tensor w = Tensor::from_data({1, 1, 3, 3}, eye);
    Tensor y = conv2d(x, w, 1, Padding::kValid);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
  }
  SUBCASE("stride 2 same-zero keeps ceil(H/stride)") {
    Tensor x = Tensor::full({1, 5, 7, 2}, 1.0);
    Tensor w = Tensor::full({3, 3, 2, 4}, 0.5);
    Tensor y = conv2d(x, w, 2, Padding::kSameZero);
    CHECK(y.shape() == Shape{1, 3, 4, 4});
  }
  SUBCASE("shape errors are descriptive") {
    Tensor x = Tensor::full({1, 2, 2, 3}, 1.0);
    Tensor w = Tensor::full({1, 1, 4, 2}, 1.0);
    CHECK_THROWS_AS(conv2d(x, w, 1, Padding::kValid), std::invalid_argument);
    Tensor big = Tensor::full({5, 5, 3, 2}, 1.0);
    CHECK_THROWS_AS(conv2d(x, big, 1, Padding::kValid), std::invalid_argument);
    CHECK_THROWS_AS(conv2d(x, w, 0, Padding::kValid), std::invalid_argument);
  }
}

TEST_CASE("elementwise ops") {
  Tensor x = random_tensor({1, 2, 3, 2}, -1.0, 1.0, 5);
  SUBCASE("sigmoid(0) = 0.5") {
    CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));
  }
  SUBCASE("add identity") {
    Tensor y = add(x, Tensor::zeros(x.shape()));
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
  }
  SUBCASE("leaky_relu negative slope") {
    CHECK(leaky_relu(Tensor::scalar(-2.0), 0.2).item() == doctest::Approx(-0.4));
    CHECK(leaky_relu(Tensor::scalar(3.0), 0.2).item() == doctest::Approx(3.0));
  }
  SUBCASE("clamp") {
    Tensor y = clamp(Tensor::from_data({1, 1, 1, 3}, {-0.5, 0.5, 1.5}), 0.0, 1.0);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 0.5);
    CHECK(y.data()[2] == 1.0);
  }
  SUBCASE("broadcast over batch and channel") {
    Tensor a = Tensor::full({2, 2, 2, 3}, 2.0);
    Tensor b = Tensor::from_data({1, 1, 1, 3}, {1.0, 2.0, 3.0});
    Tensor y = mul(a, b);
    CHECK(y.shape() == Shape{2, 2, 2, 3});
    CHECK(y.at(1, 1, 1, 0) == doctest::Approx(2.0));
    CHECK(y.at(0, 0, 0, 2) == doctest::Approx(6.0));
  }
  SUBCASE("incompatible broadcast throws") {
    Tensor a = Tensor::full({1, 2, 2, 3}, 1.0);
    Tensor b = Tensor::full({1, 2, 2, 2}, 1.0);
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
  }
  SUBCASE("add/mul commute, add associates to 1e-12") {
    Tensor a = random_tensor({1, 3, 3, 2}, -10.0, 10.0, 1);
    Tensor b = random_tensor({1, 3, 3, 2}, -10.0, 10.0, 2);
    Tensor c = random_tensor({1, 3, 3, 2}, -10.0, 10.0, 3);
    Tensor ab = add(a, b), ba = add(b, a);
    Tensor mab = mul(a, b), mba = mul(b, a);
    Tensor left = add(add(a, b), c), right = add(a, add(b, c));
    for (std::size_t i = 0; i < a.numel(); ++i) {
      CHECK(ab.data()[i] == ba.data()[i]);
      CHECK(mab.data()[i] == mba.data()[i]);
      CHECK(std::fabs(left.data()[i] - right.data()[i]) < 1e-12);
    }
  }
}

TEST_CASE("reductions") {
  SUBCASE("mean of [[1,2],[3,4]]") {
    Tensor x = Tensor::from_data({1, 2, 2, 1}, {1, 2, 3, 4});
    CHECK(mean(x).item() == doctest::Approx(2.5));
  }
  SUBCASE("channel_sum of ones (1,2,2,3)") {
    Tensor x = Tensor::full({1, 2, 2, 3}, 1.0);
    Tensor y = channel_sum(x);
    REQUIRE(y.shape() == Shape{1, 1, 1, 3});
    for (int c = 0; c < 3; ++c) CHECK(y.data()[c] == doctest::Approx(4.0));
  }
  SUBCASE("sum gradient is one everywhere") {
    Tensor x = random_tensor({1, 2, 2, 2}, -1.0, 1.0, 7, true);
    sum(x).backward();
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
  }
  SUBCASE("mean_hw pools to (N,1,1,C)") {
    Tensor x = Tensor::from_data({1, 2, 2, 2}, {1, 10, 2, 20, 3, 30, 4, 40});
    Tensor y = mean_hw(x);
    REQUIRE(y.shape() == Shape{1, 1, 1, 2});
    CHECK(y.data()[0] == doctest::Approx(2.5));
    CHECK(y.data()[1] == doctest::Approx(25.0));
  }
}

TEST_CASE("backward basics") {
  SUBCASE("x == y gives zero gradient of mean squared difference") {
    Tensor x = random_tensor({1, 2, 2, 1}, 0.0, 1.0, 3, true);
    Tensor y = x.detach(false);
    Tensor d = sub(x, y);
    mean(mul(d, d)).backward();
    for (double g : x.grad()) CHECK(g == doctest::Approx(0.0));
  }
  SUBCASE("sum(2x) gives gradient 2") {
    Tensor x = random_tensor({1, 2, 3, 1}, -1.0, 1.0, 4, true);
    sum(scale(x, 2.0)).backward();
    for (double g : x.grad()) CHECK(g == doctest::Approx(2.0));
  }
  SUBCASE("sigmoid'(0) = 0.25") {
    Tensor x = Tensor::from_data({1, 1, 1, 1}, {0.0}, true);
    sum(sigmoid(x)).backward();
    CHECK(x.grad()[0] == doctest::Approx(0.25));
  }
  SUBCASE("non-scalar loss rejected") {
    Tensor x = random_tensor({1, 2, 2, 1}, 0.0, 1.0, 5, true);
    Tensor y = scale(x, 2.0);
    CHECK_THROWS_AS(y.backward(), std::invalid_argument);
  }
  SUBCASE("detached loss rejected") {
    Tensor x = Tensor::scalar(1.0);
    CHECK_THROWS_AS(x.backward(), std::logic_error);
  }
  SUBCASE("second backward on the same graph rejected") {
    Tensor x = random_tensor({1, 2, 2, 1}, 0.0, 1.0, 6, true);
    Tensor loss = sum(mul(x, x));
    loss.backward();
    CHECK_THROWS_AS(loss.backward(), std::logic_error);
  }
  SUBCASE("one local-gradient evaluation per recorded node") {
    Tensor x = random_tensor({1, 2, 2, 1}, 0.1, 1.0, 7, true);
    Tensor loss = mean(mul(sigmoid(x), add(x, x)));
    const std::size_t k = debug::graph_op_count(loss);
    loss.backward();
    CHECK(debug::last_backward_evals() == k);
  }
  SUBCASE("gradients accumulate across shared subexpressions") {
    Tensor x = Tensor::from_data({1, 1, 1, 1}, {3.0}, true);
    sum(add(x, x)).backward();
    CHECK(x.grad()[0] == doctest::Approx(2.0));
  }
  SUBCASE("NoGradGuard suppresses recording") {
    Tensor x = random_tensor({1, 2, 2, 1}, 0.0, 1.0, 8, true);
    NoGradGuard guard;
    Tensor y = sum(mul(x, x));
    CHECK(y.is_leaf());
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_CASE("grad_check") {
  SUBCASE("sum of squares") {
    Tensor x = random_tensor({1, 3, 3, 2}, -2.0, 2.0, 9);
    auto f = [](const Tensor& t) { return sum(mul(t, t)); };
    CHECK(grad_check(f, x, 1e-5) < 1e-6);
  }
  SUBCASE("smooth_l1 away from the threshold") {
    // Values in [-0.6, 0.6]: at least 0.4 from the beta = 1 kink.
    Tensor x = random_tensor({1, 3, 3, 1}, -0.6, 0.6, 10);
    auto f = [](const Tensor& t) { return mean(smooth_l1(t, 1.0)); };
    CHECK(grad_check(f, x, 1e-5) < 1e-5);
  }
  SUBCASE("clamp at interior points") {
    Tensor x = random_tensor({1, 3, 3, 1}, 0.1, 0.9, 11);
    auto f = [](const Tensor& t) { return mean(mul(clamp(t, 0.0, 1.0), t)); };
    CHECK(grad_check(f, x, 1e-5) < 1e-5);
  }
  SUBCASE("composite of pad/concat/slice/crop/div under 1e-4") {
    Tensor x = random_tensor({1, 4, 4, 2}, 0.2, 0.8, 12);
    auto f = [](const Tensor& t) {
      Tensor padded = pad2d(t, 1, 1, 1, 1, PadMode::kReflect);
      Tensor cat = concat_channels({sigmoid(t), leaky_relu(t, 0.2)});
      Tensor right = slice_channels(cat, 1, 2);
      Tensor top = crop2d(padded, 0, 4, 0, 4);
      return div(add(mean(mul(top, right)), Tensor::scalar(2.0)),
                 add(mean(sigmoid(t)), Tensor::scalar(1.0)));
    };
    CHECK(grad_check(f, x, 1e-5) < 1e-4);
  }
  SUBCASE("zero padding gradients") {
    Tensor x = random_tensor({1, 3, 3, 2}, -1.0, 1.0, 18);
    auto f = [](const Tensor& t) {
      return mean(square(pad2d(t, 2, 1, 0, 2, PadMode::kZero)));
    };
    CHECK(grad_check(f, x, 1e-5) < 1e-4);
  }
  SUBCASE("conv2d gradients: input, kernel, bias") {
    Tensor x = random_tensor({1, 4, 4, 2}, -1.0, 1.0, 13);
    Tensor w = random_tensor({3, 3, 2, 3}, -0.5, 0.5, 14);
    Tensor b = random_tensor({1, 1, 1, 3}, -0.1, 0.1, 15);
    auto wrt_input = [&](const Tensor& t) {
      return mean(square(conv2d(t, w, b, 1, Padding::kSameZero)));
    };
    CHECK(grad_check(wrt_input, x, 1e-5) < 1e-4);
    auto wrt_kernel = [&](const Tensor& t) {
      return mean(square(conv2d(x, t, b, 1, Padding::kSameZero)));
    };
    CHECK(grad_check(wrt_kernel, w, 1e-5) < 1e-4);
    auto wrt_bias = [&](const Tensor& t) {
      return mean(square(conv2d(x, w, t, 2, Padding::kSameZero)));
    };
    CHECK(grad_check(wrt_bias, b, 1e-5) < 1e-4);
  }
  SUBCASE("eps outside [1e-7, 1e-3] rejected") {
    Tensor x = Tensor::scalar(1.0);
    auto f = [](const Tensor& t) { return sum(t); };
    CHECK_THROWS_AS(grad_check(f, x, 1e-8), std::invalid_argument);
    CHECK_THROWS_AS(grad_check(f, x, 1e-2), std::invalid_argument);
  }
  SUBCASE("non-scalar f rejected") {
    Tensor x = random_tensor({1, 2, 2, 1}, 0.0, 1.0, 16);
    auto f = [](const Tensor& t) { return scale(t, 2.0); };
    CHECK_THROWS_AS(grad_check(f, x, 1e-5), std::invalid_argument);
  }
}

TEST_CASE("tensor plumbing") {
  SUBCASE("zero-size shapes rejected") {
    CHECK_THROWS_AS(Tensor::zeros({0, 1, 1, 1}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor::from_data({1, 1, 1, 2}, {1.0}), std::invalid_argument);
  }
  SUBCASE("all_finite flags NaN and infinity") {
    Tensor ok = Tensor::full({1, 2, 2, 1}, 1.0);
    CHECK(all_finite(ok));
    Tensor bad = Tensor::from_data({1, 1, 1, 2}, {1.0, std::nan("")});
    CHECK_FALSE(all_finite(bad));
  }
  SUBCASE("detach cuts the graph") {
    Tensor x = random_tensor({1, 2, 2, 1}, 0.0, 1.0, 17, true);
    Tensor y = scale(x, 3.0).detach(false);
    CHECK(y.is_leaf());
    CHECK_FALSE(y.requires_grad());
  }
  SUBCASE("smooth_l1 scalar helper") {
    CHECK(smooth_l1(0.0, 1.0) == doctest::Approx(0.0));
    CHECK(smooth_l1(0.5, 1.0) == doctest::Approx(0.125));
    CHECK(smooth_l1(2.0, 1.0) == doctest::Approx(1.5));
    CHECK(smooth_l1(-2.0, 1.0) == doctest::Approx(1.5));
    CHECK_THROWS_AS(smooth_l1(1.0, 0.0), std::invalid_argument);
  }
}
