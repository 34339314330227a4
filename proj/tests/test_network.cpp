#include <doctest.h>

#include <cmath>
#include <random>

#include "r2mw/network.hpp"

using namespace r2mw;

namespace {

Tensor random_tensor(Shape s, double lo, double hi, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor::uniform(s, lo, hi, rng);
}

MscBlock zero_bias_block(int cin, int cout, int depth, std::uint64_t seed) {
  MscBlock blk;
  std::mt19937_64 rng(seed);
  blk.map_w = Tensor::uniform({3, 3, cin, cin}, -0.3, 0.3, rng);
  blk.map_b = Tensor::zeros({1, 1, 1, cin});
  blk.proj_w = Tensor::uniform({1, 1, cin, cout}, -0.3, 0.3, rng);
  blk.proj_b = Tensor::zeros({1, 1, 1, cout});
  for (int i = 0; i < depth; ++i)
    blk.convs.emplace_back(Tensor::uniform({3, 3, cout, cout}, -0.3, 0.3, rng),
                           Tensor::zeros({1, 1, 1, cout}));
  return blk;
}

// Naive same-zero conv used as the independent trace for the MSC test.
std::vector<double> naive_conv3x3(const std::vector<double>& in, int h, int w, double kernel[9],
                                  double bias) {
  std::vector<double> out(std::size_t(h) * w, 0.0);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = bias;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
          acc += in[std::size_t(ii) * w + jj] * kernel[(di + 1) * 3 + (dj + 1)];
        }
      out[std::size_t(i) * w + j] = acc;
    }
  return out;
}

// Shape walk over the documented channel plan, kept independent of
// architecture() in network.cpp.
std::size_t expected_param_count(const NetworkConfig& cfg) {
  auto conv = [](int kh, int kw, int cin, int cout, bool bias) {
    return std::size_t(kh) * kw * cin * cout + (bias ? cout : 0);
  };
  auto msc = [&](int cin, int cout) {
    std::size_t total = conv(3, 3, cin, cin, true) + conv(1, 1, cin, cout, true);
    for (int i = 0; i < cfg.msc_depth; ++i) total += conv(3, 3, cout, cout, true);
    return total;
  };
  std::size_t total = 0;
  int cur = cfg.in_channels;
  for (int l = 0; l < cfg.levels; ++l) {
    const int width = cfg.base_channels << l;
    total += msc(cur, width);
    const int r = cfg.attention_reduction;
    total += 4 * (conv(1, 1, width, width / r, false) + conv(1, 1, width / r, width, false));
    total += conv(1, 1, 4 * width, 2 * width, true);
    cur = 2 * width;
  }
  total += msc(cur, cur);
  for (int l = cfg.levels - 1; l >= 0; --l) {
    const int width = cfg.base_channels << l;
    total += conv(1, 1, cur, 4 * width, true);
    total += msc(2 * width, width);
    cur = width;
  }
  total += conv(3, 3, cfg.base_channels, 3, true);
  return total;
}

}  // namespace

TEST_CASE("msc_forward") {
  SUBCASE("zero input with zero biases propagates zeros") {
    MscBlock blk = zero_bias_block(3, 4, 3, 71);
    Tensor out = msc_forward(Tensor::zeros({1, 4, 4, 3}), blk);
    REQUIRE(out.shape() == Shape{1, 4, 4, 4});
    for (double v : out.data()) CHECK(v == 0.0);
  }
  SUBCASE("output keeps spatial size for any valid input") {
    MscBlock blk = zero_bias_block(2, 5, 2, 72);
    Tensor out = msc_forward(random_tensor({2, 6, 10, 2}, 0.0, 1.0, 73), blk);
    CHECK(out.shape() == Shape{2, 6, 10, 5});
  }
  SUBCASE("channel mismatch throws") {
    MscBlock blk = zero_bias_block(3, 4, 1, 74);
    CHECK_THROWS_AS(msc_forward(Tensor::zeros({1, 4, 4, 2}), blk), std::invalid_argument);
  }
  SUBCASE("saturated gate matches an independent trace") {
    // One channel, depth 1. A large negative gate bias drives the attention
    // map to ~0, so the first stacked conv sees 2*proj(X_a) ~= 2*b0.
    const int h = 4, w = 5;
    MscBlock blk;
    std::mt19937_64 rng(75);
    blk.map_w = Tensor::uniform({3, 3, 1, 1}, -0.5, 0.5, rng);
    blk.map_b = Tensor::from_data({1, 1, 1, 1}, {-60.0});
    blk.proj_w = Tensor::from_data({1, 1, 1, 1}, {0.7});
    blk.proj_b = Tensor::from_data({1, 1, 1, 1}, {0.3});
    double k1[9];
    {
      std::uniform_real_distribution<double> dist(-0.5, 0.5);
      for (auto& v : k1) v = dist(rng);
    }
    std::vector<double> k1v(k1, k1 + 9);
    blk.convs.emplace_back(Tensor::from_data({3, 3, 1, 1}, k1v),
                           Tensor::from_data({1, 1, 1, 1}, {0.1}));

    Tensor x = random_tensor({1, h, w, 1}, 0.0, 1.0, 76);
    Tensor out = msc_forward(x, blk);

    // Trace with the gate pinned to zero: X_a = 0, P = b0 everywhere.
    std::vector<double> proj(std::size_t(h) * w, 0.3);
    std::vector<double> pre(std::size_t(h) * w);
    for (std::size_t i = 0; i < pre.size(); ++i) pre[i] = 2.0 * proj[i];
    std::vector<double> conv_out = naive_conv3x3(pre, h, w, k1, 0.1);
    for (auto& v : conv_out) v = v >= 0.0 ? v : 0.2 * v;

    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        CHECK(out.at(0, i, j, 0) ==
              doctest::Approx(conv_out[std::size_t(i) * w + j]).epsilon(1e-9));
  }
}

TEST_CASE("network forward") {
  NetworkConfig cfg;
  cfg.levels = 2;
  cfg.base_channels = 4;
  cfg.msc_depth = 2;

  SUBCASE("output shape equals input shape") {
    ModelParams params = init_params(cfg, 7);
    Tensor x = random_tensor({1, 16, 24, 3}, 0.0, 1.0, 81);
    Tensor y = forward(x, params, cfg);
    CHECK(y.shape() == x.shape());
  }
  SUBCASE("output clamped to [0,1]") {
    ModelParams params = init_params(cfg, 8);
    Tensor x = random_tensor({1, 8, 8, 3}, 0.0, 1.0, 82);
    Tensor y = forward(x, params, cfg);
    for (double v : y.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  SUBCASE("non-divisible extents are rejected with padding advice") {
    ModelParams params = init_params(cfg, 9);
    Tensor x = Tensor::full({1, 10, 8, 3}, 0.5);
    CHECK_THROWS_WITH_AS(forward(x, params, cfg),
                         doctest::Contains("pad the input"), std::invalid_argument);
  }
  SUBCASE("zero parameters with the global residual reproduce the input") {
    // Every conv kernel and bias is zero, so each stage emits zeros and the
    // final correction is the zero constant: output = clamp(x + 0, 0, 1) = x.
    ModelParams params = init_params(cfg, 10);
    for (auto& [name, t] : params.map())
      for (auto& v : t.data_mut()) v = 0.0;
    Tensor x = random_tensor({1, 8, 8, 3}, 0.0, 1.0, 83);
    Tensor y = forward(x, params, cfg);
    REQUIRE(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
  }
  SUBCASE("global residual off gives the raw clamped correction") {
    NetworkConfig plain = cfg;
    plain.global_residual = false;
    ModelParams params = init_params(plain, 11);
    for (auto& [name, t] : params.map())
      for (auto& v : t.data_mut()) v = 0.0;
    Tensor x = random_tensor({1, 8, 8, 3}, 0.0, 1.0, 84);
    Tensor y = forward(x, params, plain);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("forward is deterministic given the seed") {
    ModelParams a = init_params(cfg, 12);
    ModelParams b = init_params(cfg, 12);
    Tensor x = random_tensor({1, 8, 8, 3}, 0.0, 1.0, 85);
    Tensor ya = forward(x, a, cfg);
    Tensor yb = forward(x, b, cfg);
    for (std::size_t i = 0; i < ya.numel(); ++i) CHECK(ya.data()[i] == yb.data()[i]);
  }
  SUBCASE("cutting a skip changes the output") {
    ModelParams params = init_params(cfg, 13);
    Tensor x = random_tensor({1, 8, 8, 3}, 0.0, 1.0, 86);
    Tensor baseline = forward(x, params, cfg);

    // The decoder MSC at level 0 sees {upsampled, skip} concatenated; its
    // skip half is the input-channel range [width, 2*width). Zeroing those
    // kernel columns severs the skip path.
    ModelParams ablated = init_params(cfg, 13);
    const int width = cfg.base_channels;
    for (const char* name : {"dec0.msc.map.w", "dec0.msc.proj.w"}) {
      Tensor& k = ablated.map().at(name);
      const Shape ks = k.shape();
      auto& data = k.data_mut();
      for (int kh = 0; kh < ks.n; ++kh)
        for (int kw = 0; kw < ks.h; ++kw)
          for (int ci = width; ci < 2 * width; ++ci)
            for (int co = 0; co < ks.c; ++co) data[ks.index(kh, kw, ci, co)] = 0.0;
    }
    Tensor cut = forward(x, ablated, cfg);
    double diff = 0.0;
    for (std::size_t i = 0; i < baseline.numel(); ++i)
      diff = std::max(diff, std::fabs(baseline.data()[i] - cut.data()[i]));
    CHECK(diff > 1e-6);
  }
}

TEST_CASE("count_params") {
  SUBCASE("empty model has zero parameters") {
    ModelParams p;
    CHECK(count_params(p) == 0);
  }
  SUBCASE("single 1x1 conv 3->3 with bias") {
    ModelParams p;
    p.add("solo.w", Tensor::zeros({1, 1, 3, 3}));
    p.add("solo.b", Tensor::zeros({1, 1, 1, 3}));
    CHECK(count_params(p) == 12);
  }
  SUBCASE("default and small configs match the shape walk") {
    NetworkConfig small;
    small.levels = 1;
    small.base_channels = 4;
    small.msc_depth = 3;
    CHECK(count_params(init_params(small, 1)) == expected_param_count(small));

    NetworkConfig defaults;
    CHECK(count_params(init_params(defaults, 1)) == expected_param_count(defaults));
  }
  SUBCASE("duplicate names rejected") {
    ModelParams p;
    p.add("w", Tensor::zeros({1, 1, 1, 1}));
    CHECK_THROWS_AS(p.add("w", Tensor::zeros({1, 1, 1, 1})), std::invalid_argument);
  }
}

TEST_CASE("end-to-end gradients on a few parameters") {
  // The acceptance suite sweeps every coordinate; here three representative
  // parameters keep the unit run quick.
  NetworkConfig cfg;
  cfg.levels = 1;
  cfg.base_channels = 4;
  cfg.msc_depth = 1;
  ModelParams params = init_params(cfg, 3);
  for (auto& [name, t] : params.map())
    for (auto& v : t.data_mut()) v *= 0.25;
  Tensor x = random_tensor({1, 8, 8, 3}, 0.3, 0.7, 91);
  Tensor g = random_tensor({1, 8, 8, 3}, 0.3, 0.7, 92);

  for (const char* pname : {"enc0.msc.conv1.w", "enc0.attn.ll.excite.w", "out.b"}) {
    Tensor original = params.at(pname);
    auto f = [&](const Tensor& candidate) {
      ModelParams trial;
      for (const auto& [name, t] : params.map())
        trial.add(name, name == pname ? candidate : t);
      Tensor out = forward(x, trial, cfg);
      Tensor d = sub(out, g);
      return mean(mul(d, d));
    };
    CHECK(grad_check(f, original, 1e-5) < 1e-4);
  }
}
