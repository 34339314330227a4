#include "r2mw/network.hpp"

#include <cmath>
#include <stdexcept>

namespace r2mw {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

struct ConvSpec {
  std::string name;  // without the .w/.b suffix
  int kh, kw, cin, cout;
  bool bias;
};

// The complete weight list in creation order; RNG consumption during
// initialization follows this order, so the architecture walk is the single
// source of truth for both init_params and the checkpoint layout.
std::vector<ConvSpec> architecture(const NetworkConfig& cfg) {
  std::vector<ConvSpec> specs;
  auto msc = [&](const std::string& prefix, int cin, int cout) {
    specs.push_back({prefix + ".map", 3, 3, cin, cin, true});
    specs.push_back({prefix + ".proj", 1, 1, cin, cout, true});
    for (int i = 1; i <= cfg.msc_depth; ++i)
      specs.push_back({prefix + ".conv" + std::to_string(i), 3, 3, cout, cout, true});
  };
  auto attention = [&](const std::string& prefix, int c) {
    const int r = cfg.attention_reduction;
    if (c % r != 0)
      fail("attention reduction " + std::to_string(r) + " does not divide " + std::to_string(c) +
           " channels");
    for (const char* band : {"ll", "lh", "hl", "hh"}) {
      specs.push_back({prefix + "." + band + ".squeeze", 1, 1, c, c / r, false});
      specs.push_back({prefix + "." + band + ".excite", 1, 1, c / r, c, false});
    }
  };

  int cur = cfg.in_channels;
  for (int l = 0; l < cfg.levels; ++l) {
    const int width = cfg.base_channels << l;
    const std::string enc = "enc" + std::to_string(l);
    msc(enc + ".msc", cur, width);
    attention(enc + ".attn", width);
    specs.push_back({enc + ".down", 1, 1, 4 * width, 2 * width, true});
    cur = 2 * width;
  }
  msc("mid.msc", cur, cur);
  for (int l = cfg.levels - 1; l >= 0; --l) {
    const int width = cfg.base_channels << l;  // skip width at this level
    const std::string dec = "dec" + std::to_string(l);
    specs.push_back({dec + ".up", 1, 1, cur, 4 * width, true});
    msc(dec + ".msc", 2 * width, width);
    cur = width;
  }
  specs.push_back({"out", 3, 3, cfg.base_channels, 3, true});
  return specs;
}

void validate_config(const NetworkConfig& cfg) {
  if (cfg.levels < 1) fail("network config: levels must be >= 1");
  if (cfg.base_channels < 1) fail("network config: base_channels must be >= 1");
  if (cfg.msc_depth < 1) fail("network config: msc_depth must be >= 1");
}

}  // namespace

Tensor& ModelParams::add(const std::string& name, Tensor t) {
  auto [it, inserted] = params_.emplace(name, std::move(t));
  if (!inserted) fail("ModelParams: duplicate parameter '" + name + "'");
  return it->second;
}

const Tensor& ModelParams::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) fail("ModelParams: missing parameter '" + name + "'");
  return it->second;
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

ModelParams init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  ModelParams p;
  std::mt19937_64 rng(seed);
  for (const ConvSpec& spec : architecture(cfg)) {
    const double bound = std::sqrt(6.0 / (double(spec.kh) * spec.kw * spec.cin));
    p.add(spec.name + ".w",
          Tensor::uniform(Shape{spec.kh, spec.kw, spec.cin, spec.cout}, -bound, bound, rng, true));
    if (spec.bias) p.add(spec.name + ".b", Tensor::zeros(Shape{1, 1, 1, spec.cout}, true));
  }
  return p;
}

std::size_t count_params(const ModelParams& params) {
  std::size_t total = 0;
  for (const auto& [name, t] : params.map()) total += t.numel();
  return total;
}

MscBlock msc_block_view(const ModelParams& params, const std::string& prefix, int depth,
                        double alpha) {
  MscBlock blk;
  blk.map_w = params.at(prefix + ".map.w");
  blk.map_b = params.at(prefix + ".map.b");
  blk.proj_w = params.at(prefix + ".proj.w");
  blk.proj_b = params.at(prefix + ".proj.b");
  for (int i = 1; i <= depth; ++i)
    blk.convs.emplace_back(params.at(prefix + ".conv" + std::to_string(i) + ".w"),
                           params.at(prefix + ".conv" + std::to_string(i) + ".b"));
  blk.alpha = alpha;
  return blk;
}

SubBandAttention attention_view(const ModelParams& params, const std::string& prefix,
                                int reduction) {
  SubBandAttention a;
  a.reduction = reduction;
  const char* bands[4] = {"ll", "lh", "hl", "hh"};
  for (int i = 0; i < 4; ++i) {
    a.squeeze[i] = params.at(prefix + "." + bands[i] + ".squeeze.w");
    a.excite[i] = params.at(prefix + "." + bands[i] + ".excite.w");
  }
  return a;
}

Tensor msc_forward(const Tensor& x, const MscBlock& blk) {
  if (x.shape().c != blk.map_w.shape().w)
    fail("msc_forward: block expects " + std::to_string(blk.map_w.shape().w) +
         " channels, input has " + std::to_string(x.shape().c));
  Tensor gate = sigmoid(conv2d(x, blk.map_w, blk.map_b, 1, Padding::kSameZero));
  Tensor attended = mul(gate, x);
  Tensor proj = conv2d(attended, blk.proj_w, blk.proj_b, 1, Padding::kSameZero);
  Tensor cur = proj;
  for (const auto& [w, b] : blk.convs)
    cur = leaky_relu(conv2d(add(cur, proj), w, b, 1, Padding::kSameZero), blk.alpha);
  return cur;
}

Tensor forward(const Tensor& x, const ModelParams& params, const NetworkConfig& cfg) {
  validate_config(cfg);
  const Shape s = x.shape();
  if (s.c != cfg.in_channels)
    fail("forward: expected " + std::to_string(cfg.in_channels) + "-channel input, got " +
         s.str());
  const int divisor = 1 << cfg.levels;
  if (s.h % divisor != 0 || s.w % divisor != 0)
    fail("forward: input " + s.str() + " not divisible by 2^levels = " + std::to_string(divisor) +
         "; pad the input (e.g. reflect padding) before calling");

  Tensor cur = x;
  std::vector<Tensor> skips;
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string enc = "enc" + std::to_string(l);
    cur = msc_forward(cur, msc_block_view(params, enc + ".msc", cfg.msc_depth, cfg.alpha));
    skips.push_back(cur);
    SubBands bands = normalize_subbands(dwt(cur), 1.0);
    Tensor cat =
        attend_subbands(bands, attention_view(params, enc + ".attn", cfg.attention_reduction),
                        cfg.alpha);
    cur = leaky_relu(
        conv2d(cat, params.at(enc + ".down.w"), params.at(enc + ".down.b"), 1, Padding::kSameZero),
        cfg.alpha);
  }

  cur = msc_forward(cur, msc_block_view(params, "mid.msc", cfg.msc_depth, cfg.alpha));

  for (int l = cfg.levels - 1; l >= 0; --l) {
    const std::string dec = "dec" + std::to_string(l);
    const int width = cfg.base_channels << l;
    Tensor bands4 = leaky_relu(
        conv2d(cur, params.at(dec + ".up.w"), params.at(dec + ".up.b"), 1, Padding::kSameZero),
        cfg.alpha);
    SubBands nb{slice_channels(bands4, 0, width), slice_channels(bands4, width, 2 * width),
                slice_channels(bands4, 2 * width, 3 * width),
                slice_channels(bands4, 3 * width, 4 * width)};
    Tensor up = idwt(denormalize_subbands(nb, 1.0));
    Tensor cat = concat_channels({up, skips[l]});
    cur = msc_forward(cat, msc_block_view(params, dec + ".msc", cfg.msc_depth, cfg.alpha));
  }

  Tensor residual =
      conv2d(cur, params.at("out.w"), params.at("out.b"), 1, Padding::kSameZero);
  Tensor raw = cfg.global_residual ? add(x, residual) : residual;
  return clamp(raw, 0.0, 1.0);
}

}  // namespace r2mw
