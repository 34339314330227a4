#include "r2mw/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "r2mw/checkpoint.hpp"

namespace r2mw {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_pair(const Tensor& e, const Tensor& g, const char* who) {
  if (!e.defined() || !g.defined()) fail(std::string(who) + ": undefined tensor");
  if (!(e.shape() == g.shape()))
    fail(std::string(who) + ": shape mismatch " + e.shape().str() + " vs " + g.shape().str());
}

Tensor as_constant(const Tensor& t) { return t.requires_grad() ? t.detach(false) : t; }

// Per-channel filtering as a block-diagonal dense kernel (k,k,C,C); the
// off-diagonal zeros cost a few wasted multiplies at desk sizes.
Tensor depthwise_kernel(const std::vector<double>& taps, int k, int channels) {
  std::vector<double> kd(std::size_t(k) * k * channels * channels, 0.0);
  for (int i = 0; i < k * k; ++i)
    for (int c = 0; c < channels; ++c)
      kd[(std::size_t(i) * channels + c) * channels + c] = taps[i];
  return Tensor::from_data(Shape{k, k, channels, channels}, std::move(kd));
}

const std::vector<double> kSobelX{-1, 0, 1, -2, 0, 2, -1, 0, 1};
const std::vector<double> kSobelY{-1, -2, -1, 0, 0, 0, 1, 2, 1};

std::vector<double> gaussian_taps(const LossConfig& cfg) {
  if (cfg.gauss_ksize < 1 || cfg.gauss_ksize % 2 == 0)
    fail("gaussian_kernel: ksize must be odd and positive");
  if (cfg.gauss_sigma_x <= 0.0 || cfg.gauss_sigma_y <= 0.0)
    fail("gaussian_kernel: sigma must be positive");
  const int k = cfg.gauss_ksize;
  const double mu = (k - 1) / 2.0;
  std::vector<double> taps(std::size_t(k) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      taps[std::size_t(i) * k + j] =
          cfg.gauss_a * std::exp(-(i - mu) * (i - mu) / (2.0 * cfg.gauss_sigma_x) -
                                 (j - mu) * (j - mu) / (2.0 * cfg.gauss_sigma_y));
  return taps;
}

Tensor blur_reflect(const Tensor& x, const std::vector<double>& taps, int k) {
  const int pad = k / 2;
  Tensor padded = pad2d(x, pad, pad, pad, pad, PadMode::kReflect);
  return conv2d(padded, depthwise_kernel(taps, k, x.shape().c), 1, Padding::kValid);
}

}  // namespace

RegionSplit split_regions(const Tensor& reference, double bright_fraction) {
  if (bright_fraction <= 0.0 || bright_fraction >= 1.0)
    fail("split_regions: bright_fraction must lie in (0,1)");
  const Shape s = reference.shape();
  if (s.c != 3) fail("split_regions: expected a 3-channel image, got " + s.str());

  RegionSplit split;
  split.bright_mask.assign(std::size_t(s.n) * s.h * s.w, 0);
  const auto& d = reference.data();
  const std::size_t pixels = std::size_t(s.h) * s.w;
  std::vector<double> lum(pixels);
  std::vector<std::size_t> order(pixels);
  for (int n = 0; n < s.n; ++n) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t p = 0; p < pixels; ++p) {
      const std::size_t base = (std::size_t(n) * pixels + p) * 3;
      lum[p] = 0.299 * d[base] + 0.587 * d[base + 1] + 0.114 * d[base + 2];
      lo = std::min(lo, lum[p]);
      hi = std::max(hi, lum[p]);
    }
    std::size_t bright = (hi > lo) ? std::size_t(std::llround(bright_fraction * double(pixels)))
                                   : 0;  // constant image: everything is dark
    bright = std::min(bright, pixels);
    if (bright > 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return lum[a] > lum[b]; });
      for (std::size_t i = 0; i < bright; ++i)
        split.bright_mask[std::size_t(n) * pixels + order[i]] = 1;
    }
    split.bright_count += bright;
    split.dark_count += pixels - bright;
  }
  return split;
}

Tensor pixel_loss(const Tensor& enhanced, const Tensor& reference, const LossConfig& cfg) {
  check_pair(enhanced, reference, "pixel_loss");
  const Shape s = enhanced.shape();
  if (s.c != 3) fail("pixel_loss: expected 3-channel images, got " + s.str());

  const RegionSplit split = split_regions(reference, cfg.bright_fraction);
  const std::size_t npix = split.bright_mask.size();
  std::vector<double> dark_mask(npix), bright_mask(npix);
  for (std::size_t i = 0; i < npix; ++i) {
    bright_mask[i] = split.bright_mask[i] ? 1.0 : 0.0;
    dark_mask[i] = split.bright_mask[i] ? 0.0 : 1.0;
  }
  const Shape mask_shape{s.n, s.h, s.w, 1};

  Tensor diff = sub(enhanced, as_constant(reference));
  Tensor per_elem = smooth_l1(diff, cfg.smooth_l1_beta);

  Tensor loss = Tensor();
  if (split.dark_count > 0) {
    Tensor masked = mul(per_elem, Tensor::from_data(mask_shape, std::move(dark_mask)));
    loss = scale(sum(masked), cfg.w1 / (double(split.dark_count) * s.c));
  }
  if (split.bright_count > 0) {
    Tensor masked = mul(per_elem, Tensor::from_data(mask_shape, std::move(bright_mask)));
    Tensor bright = scale(sum(masked), cfg.w2 / (double(split.bright_count) * s.c));
    loss = loss.defined() ? add(loss, bright) : bright;
  }
  return loss;
}

Tensor ssim_global(const Tensor& a, const Tensor& b, double c1, double c2) {
  check_pair(a, b, "ssim_global");
  if (c1 <= 0.0 || c2 <= 0.0) fail("ssim_global: stability constants must be positive");
  Tensor mu_a = mean(a);
  Tensor mu_b = mean(b);
  Tensor var_a = sub(mean(mul(a, a)), mul(mu_a, mu_a));
  Tensor var_b = sub(mean(mul(b, b)), mul(mu_b, mu_b));
  Tensor cov = sub(mean(mul(a, b)), mul(mu_a, mu_b));
  Tensor c1t = Tensor::scalar(c1);
  Tensor c2t = Tensor::scalar(c2);
  Tensor num = mul(add(scale(mul(mu_a, mu_b), 2.0), c1t), add(scale(cov, 2.0), c2t));
  Tensor den =
      mul(add(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1t), add(add(var_a, var_b), c2t));
  return div(num, den);
}

Tensor global_loss(const Tensor& enhanced, const Tensor& reference,
                   const PerceptualExtractor& ext, const LossConfig& cfg) {
  check_pair(enhanced, reference, "global_loss");
  Tensor ref = as_constant(reference);
  Tensor fe = ext.features(enhanced);
  Tensor fg = ext.features(ref);
  Tensor perceptual = mean(square(sub(fe, fg)));
  Tensor structural = ssim_global(enhanced, ref, cfg.ssim_c1, cfg.ssim_c2);
  return add(scale(perceptual, cfg.w3), scale(structural, -cfg.w4));
}

Tensor edge_loss(const Tensor& enhanced, const Tensor& reference) {
  check_pair(enhanced, reference, "edge_loss");
  const int c = enhanced.shape().c;
  Tensor ref = as_constant(reference);
  Tensor sx = depthwise_kernel(kSobelX, 3, c);
  Tensor sy = depthwise_kernel(kSobelY, 3, c);
  Tensor dx = sub(conv2d(enhanced, sx, 1, Padding::kSameZero),
                  conv2d(ref, sx, 1, Padding::kSameZero));
  Tensor dy = sub(conv2d(enhanced, sy, 1, Padding::kSameZero),
                  conv2d(ref, sy, 1, Padding::kSameZero));
  return add(mean(abs(dx)), mean(abs(dy)));
}

Tensor gaussian_kernel(const LossConfig& cfg) {
  auto taps = gaussian_taps(cfg);
  return Tensor::from_data(Shape{1, cfg.gauss_ksize, cfg.gauss_ksize, 1}, std::move(taps));
}

double gaussian_kernel_sum(const LossConfig& cfg) {
  const auto taps = gaussian_taps(cfg);
  double s = 0.0;
  for (double v : taps) s += v;
  return s;
}

Tensor channel_loss(const Tensor& enhanced, const Tensor& reference, const LossConfig& cfg) {
  check_pair(enhanced, reference, "channel_loss");
  const Shape s = enhanced.shape();
  if (s.c != 3) fail("channel_loss: expected 3-channel images, got " + s.str());
  const auto taps = gaussian_taps(cfg);
  Tensor eb = blur_reflect(enhanced, taps, cfg.gauss_ksize);
  Tensor gb = blur_reflect(as_constant(reference), taps, cfg.gauss_ksize);
  const double hw = double(s.h) * s.w;
  // Per-image, per-channel blurred totals; the batch dimension is averaged.
  Tensor se = scale(mean_hw(eb), hw);  // (N,1,1,C)
  Tensor sg = scale(mean_hw(gb), hw);
  return scale(sum(abs(sub(se, sg))), 1.0 / s.n);
}

LossBreakdown total_loss(const Tensor& enhanced, const Tensor& reference,
                         const PerceptualExtractor& ext, const LossConfig& cfg) {
  LossBreakdown out;
  Tensor pixel = pixel_loss(enhanced, reference, cfg);
  Tensor global_part = global_loss(enhanced, reference, ext, cfg);
  out.pixel = pixel.item();
  out.global_part = global_part.item();
  Tensor total = add(pixel, global_part);
  if (cfg.use_edge) {
    Tensor edge = scale(edge_loss(enhanced, reference), cfg.edge_weight);
    out.edge = edge.item();
    total = add(total, edge);
  }
  if (cfg.use_channel) {
    Tensor channel = scale(channel_loss(enhanced, reference, cfg), cfg.channel_weight);
    out.channel = channel.item();
    total = add(total, channel);
  }
  out.total = total;
  return out;
}

// ---- perceptual extractor ----------------------------------------------------

PerceptualExtractor PerceptualExtractor::seeded(std::uint64_t seed) {
  PerceptualExtractor ext;
  std::mt19937_64 rng(seed);
  const int widths[4] = {3, 8, 16, 32};
  for (int i = 0; i < 3; ++i) {
    const int cin = widths[i], cout = widths[i + 1];
    const double bound = std::sqrt(6.0 / (9.0 * cin));
    ext.convs_.emplace_back(Tensor::uniform(Shape{3, 3, cin, cout}, -bound, bound, rng),
                            Tensor::zeros(Shape{1, 1, 1, cout}));
  }
  return ext;
}

PerceptualExtractor PerceptualExtractor::from_file(const std::filesystem::path& path) {
  auto tensors = load_named_tensors(path);
  PerceptualExtractor ext;
  for (int i = 1;; ++i) {
    const std::string w = "perc.conv" + std::to_string(i) + ".w";
    const std::string b = "perc.conv" + std::to_string(i) + ".b";
    auto wit = tensors.find(w);
    if (wit == tensors.end()) break;
    auto bit = tensors.find(b);
    if (bit == tensors.end()) fail("perceptual weights: missing '" + b + "'");
    ext.convs_.emplace_back(wit->second.detach(false), bit->second.detach(false));
  }
  if (ext.convs_.empty()) fail("perceptual weights: no 'perc.conv<k>.w' tensors in " +
                               path.string());
  for (std::size_t i = 1; i < ext.convs_.size(); ++i)
    if (ext.convs_[i].first.shape().w != ext.convs_[i - 1].first.shape().c)
      fail("perceptual weights: channel chain broken at layer " + std::to_string(i + 1));
  return ext;
}

Tensor PerceptualExtractor::features(const Tensor& image) const {
  Tensor cur = image;
  for (const auto& [w, b] : convs_)
    cur = leaky_relu(conv2d(cur, w, b, 2, Padding::kSameZero), alpha_);
  return cur;
}

}  // namespace r2mw
