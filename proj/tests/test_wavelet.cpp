#include <doctest.h>

#include <cmath>
#include <random>

#include "r2mw/wavelet.hpp"

using namespace r2mw;

namespace {

Tensor random_tensor(Shape s, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::uniform(s, lo, hi, rng);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    worst = std::max(worst, std::fabs(a.data()[i] - b.data()[i]));
  return worst;
}

double energy(const Tensor& t) {
  double e = 0.0;
  for (double v : t.data()) e += v * v;
  return e;
}

}  // namespace

TEST_CASE("dwt of a single 2x2 block") {
  Tensor x = Tensor::from_data({1, 2, 2, 1}, {1, 2, 3, 4});
  SubBands b = dwt(x);
  CHECK(b.ll.item() == doctest::Approx(5.0));
  CHECK(b.lh.item() == doctest::Approx(2.0));
  CHECK(b.hl.item() == doctest::Approx(1.0));
  CHECK(b.hh.item() == doctest::Approx(0.0));

  Tensor back = idwt(b);
  CHECK(back.at(0, 0, 0, 0) == doctest::Approx(1.0));
  CHECK(back.at(0, 0, 1, 0) == doctest::Approx(2.0));
  CHECK(back.at(0, 1, 0, 0) == doctest::Approx(3.0));
  CHECK(back.at(0, 1, 1, 0) == doctest::Approx(4.0));
}

TEST_CASE("idwt reconstructs the worked coefficients") {
  SubBands b{Tensor::from_data({1, 1, 1, 1}, {5.0}), Tensor::from_data({1, 1, 1, 1}, {2.0}),
             Tensor::from_data({1, 1, 1, 1}, {1.0}), Tensor::from_data({1, 1, 1, 1}, {0.0})};
  Tensor x = idwt(b);
  CHECK(x.at(0, 0, 0, 0) == doctest::Approx(1.0));
  CHECK(x.at(0, 0, 1, 0) == doctest::Approx(2.0));
  CHECK(x.at(0, 1, 0, 0) == doctest::Approx(3.0));
  CHECK(x.at(0, 1, 1, 0) == doctest::Approx(4.0));
}

TEST_CASE("high-pass of a constant image is exactly zero") {
  Tensor x = Tensor::full({1, 4, 4, 2}, 1.0);
  SubBands b = dwt(x);
  for (double v : b.ll.data()) CHECK(v == 2.0);
  for (const Tensor* band : {&b.lh, &b.hl, &b.hh})
    for (double v : band->data()) CHECK(v == 0.0);
}

TEST_CASE("sub-band ranges for inputs in [0,1]") {
  Tensor x = random_tensor({1, 8, 8, 3}, 0.0, 1.0, 21);
  SubBands b = dwt(x);
  for (double v : b.ll.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 2.0);
  }
  for (const Tensor* band : {&b.lh, &b.hl, &b.hh})
    for (double v : band->data()) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
}

TEST_CASE("perfect reconstruction and energy preservation") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Tensor x = random_tensor({1, 16, 12, 3}, -10.0, 10.0, 100 + seed);
    SubBands b = dwt(x);
    CHECK(max_abs_diff(idwt(b), x) < 1e-10);
    const double ein = energy(x);
    const double eout = energy(b.ll) + energy(b.lh) + energy(b.hl) + energy(b.hh);
    CHECK(std::fabs(ein - eout) / ein < 1e-9);
  }
}

TEST_CASE("dwt is linear") {
  Tensor x = random_tensor({1, 6, 6, 2}, -3.0, 3.0, 31);
  Tensor y = random_tensor({1, 6, 6, 2}, -3.0, 3.0, 32);
  const double a = 1.7, c = -0.6;
  SubBands lhs = dwt(add(scale(x, a), scale(y, c)));
  SubBands bx = dwt(x), by = dwt(y);
  CHECK(max_abs_diff(lhs.ll, add(scale(bx.ll, a), scale(by.ll, c))) < 1e-12);
  CHECK(max_abs_diff(lhs.hh, add(scale(bx.hh, a), scale(by.hh, c))) < 1e-12);
}

TEST_CASE("all-zero sub-bands give an all-zero image") {
  SubBands b{Tensor::zeros({1, 2, 2, 1}), Tensor::zeros({1, 2, 2, 1}),
             Tensor::zeros({1, 2, 2, 1}), Tensor::zeros({1, 2, 2, 1})};
  Tensor out = idwt(b);
  for (double v : out.data()) CHECK(v == 0.0);
}

TEST_CASE("dwt/idwt error paths") {
  CHECK_THROWS_AS(dwt(Tensor::full({1, 3, 4, 1}, 1.0)), std::invalid_argument);
  CHECK_THROWS_AS(dwt(Tensor::full({1, 4, 5, 1}, 1.0)), std::invalid_argument);
  SubBands b{Tensor::zeros({1, 2, 2, 1}), Tensor::zeros({1, 2, 2, 1}),
             Tensor::zeros({1, 2, 3, 1}), Tensor::zeros({1, 2, 2, 1})};
  CHECK_THROWS_AS(idwt(b), std::invalid_argument);
}

TEST_CASE("dwt/idwt gradients are exact linear maps") {
  Tensor x = random_tensor({1, 4, 4, 2}, -1.0, 1.0, 41);
  auto through_dwt = [](const Tensor& t) {
    SubBands b = dwt(t);
    return add(add(mean(mul(b.ll, b.ll)), mean(mul(b.lh, b.lh))),
               add(mean(mul(b.hl, b.hl)), mean(mul(b.hh, b.hh))));
  };
  CHECK(grad_check(through_dwt, x, 1e-5) < 1e-6);

  Tensor band = random_tensor({1, 2, 2, 2}, -1.0, 1.0, 42);
  auto through_idwt = [](const Tensor& t) {
    SubBands b{t, scale(t, 0.5), scale(t, -0.25), scale(t, 2.0)};
    Tensor y = idwt(b);
    return mean(mul(y, y));
  };
  CHECK(grad_check(through_idwt, band, 1e-5) < 1e-6);
}

TEST_CASE("normalize_subbands maps the theoretical ranges onto [0,1]") {
  SubBands b{Tensor::from_data({1, 1, 1, 1}, {2.0}), Tensor::from_data({1, 1, 1, 1}, {0.0}),
             Tensor::from_data({1, 1, 1, 1}, {-1.0}), Tensor::from_data({1, 1, 1, 1}, {1.0})};
  SubBands n = normalize_subbands(b, 1.0);
  CHECK(n.ll.item() == doctest::Approx(1.0));
  CHECK(n.lh.item() == doctest::Approx(0.5));
  CHECK(n.hl.item() == doctest::Approx(0.0));
  CHECK(n.hh.item() == doctest::Approx(1.0));
}

TEST_CASE("denormalize inverts normalize exactly on dyadic values") {
  // Values on a 2^-20 grid survive the affine pair bit for bit.
  std::mt19937_64 rng(55);
  std::uniform_int_distribution<int> dist(-(1 << 20), 1 << 20);
  auto dyadic = [&](Shape s) {
    std::vector<double> data(s.count());
    for (auto& v : data) v = double(dist(rng)) / double(1 << 20);
    return Tensor::from_data(s, std::move(data));
  };
  SubBands b{dyadic({1, 3, 3, 2}), dyadic({1, 3, 3, 2}), dyadic({1, 3, 3, 2}),
             dyadic({1, 3, 3, 2})};
  SubBands round = denormalize_subbands(normalize_subbands(b, 1.0), 1.0);
  CHECK(max_abs_diff(round.ll, b.ll) == 0.0);
  CHECK(max_abs_diff(round.lh, b.lh) == 0.0);
  CHECK(max_abs_diff(round.hl, b.hl) == 0.0);
  CHECK(max_abs_diff(round.hh, b.hh) == 0.0);
}

namespace {

SubBandAttention zero_attention(int c, int r) {
  SubBandAttention a;
  a.reduction = r;
  for (int i = 0; i < 4; ++i) {
    a.squeeze[i] = Tensor::zeros({1, 1, c, c / r});
    a.excite[i] = Tensor::zeros({1, 1, c / r, c});
  }
  return a;
}

}  // namespace

TEST_CASE("attend_subbands") {
  const int c = 4;
  Tensor x = random_tensor({1, 4, 4, c}, 0.0, 1.0, 61);
  SubBands b = dwt(x);

  SUBCASE("zero weights scale every band by sigmoid(0) = 0.5") {
    Tensor out = attend_subbands(b, zero_attention(c, 4));
    REQUIRE(out.shape() == Shape{1, 2, 2, 4 * c});
    Tensor expected = concat_channels({scale(b.ll, 0.5), scale(b.lh, 0.5), scale(b.hl, 0.5),
                                       scale(b.hh, 0.5)});
    CHECK(max_abs_diff(out, expected) < 1e-15);
  }
  SUBCASE("zero bands stay zero under any weights") {
    SubBands zeros{Tensor::zeros({1, 2, 2, c}), Tensor::zeros({1, 2, 2, c}),
                   Tensor::zeros({1, 2, 2, c}), Tensor::zeros({1, 2, 2, c})};
    SubBandAttention a;
    a.reduction = 4;
    std::mt19937_64 rng(62);
    for (int i = 0; i < 4; ++i) {
      a.squeeze[i] = Tensor::uniform({1, 1, c, 1}, -1.0, 1.0, rng);
      a.excite[i] = Tensor::uniform({1, 1, 1, c}, -1.0, 1.0, rng);
    }
    Tensor out = attend_subbands(zeros, a);
    for (double v : out.data()) CHECK(v == 0.0);
  }
  SUBCASE("channel count is 4C and mismatched weights throw") {
    Tensor out = attend_subbands(b, zero_attention(c, 4));
    CHECK(out.shape().c == 4 * c);
    CHECK_THROWS_AS(attend_subbands(b, zero_attention(8, 4)), std::invalid_argument);
  }
}
