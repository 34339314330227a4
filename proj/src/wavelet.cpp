#include "r2mw/wavelet.hpp"

#include <stdexcept>

namespace r2mw {

namespace {

using detail::Node;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

// One analysis band: out(i,j) = 1/2 * signed sum over the 2x2 block. Linear,
// so backward scatters the same pattern onto the input gradient.
Tensor dwt_band(const Tensor& x, int band) {
  const Shape s = x.shape();
  const Shape os{s.n, s.h / 2, s.w / 2, s.c};
  const auto& sg = kHaarSigns[band];
  std::vector<double> out(os.count());
  const auto& d = x.data();
  for (int n = 0; n < s.n; ++n)
    for (int i = 0; i < os.h; ++i)
      for (int j = 0; j < os.w; ++j) {
        const std::size_t a = s.index(n, 2 * i, 2 * j, 0);
        const std::size_t b = s.index(n, 2 * i, 2 * j + 1, 0);
        const std::size_t c = s.index(n, 2 * i + 1, 2 * j, 0);
        const std::size_t e = s.index(n, 2 * i + 1, 2 * j + 1, 0);
        const std::size_t o = os.index(n, i, j, 0);
        for (int ch = 0; ch < s.c; ++ch)
          out[o + ch] = kHaarScale * (sg[0] * d[a + ch] + sg[1] * d[b + ch] +
                                      sg[2] * d[c + ch] + sg[3] * d[e + ch]);
      }
  auto backward = [band](Node& o) {
    Node& p = *o.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buf();
    const Shape s = p.shape;
    const Shape os = o.shape;
    const auto& sg = kHaarSigns[band];
    for (int n = 0; n < os.n; ++n)
      for (int i = 0; i < os.h; ++i)
        for (int j = 0; j < os.w; ++j) {
          const std::size_t a = s.index(n, 2 * i, 2 * j, 0);
          const std::size_t b = s.index(n, 2 * i, 2 * j + 1, 0);
          const std::size_t c = s.index(n, 2 * i + 1, 2 * j, 0);
          const std::size_t e = s.index(n, 2 * i + 1, 2 * j + 1, 0);
          const std::size_t oi = os.index(n, i, j, 0);
          for (int ch = 0; ch < os.c; ++ch) {
            const double gv = kHaarScale * o.grad[oi + ch];
            g[a + ch] += sg[0] * gv;
            g[b + ch] += sg[1] * gv;
            g[c + ch] += sg[2] * gv;
            g[e + ch] += sg[3] * gv;
          }
        }
  };
  return detail::make_op(os, std::move(out), {x.handle()}, std::move(backward), "dwt_band");
}

}  // namespace

SubBands dwt(const Tensor& x) {
  if (!x.defined()) fail("dwt: undefined tensor");
  const Shape s = x.shape();
  if (s.h % 2 != 0 || s.w % 2 != 0)
    fail("dwt: height and width must be even, got " + s.str() + "; pad the input first");
  SubBands b;
  b.ll = dwt_band(x, 0);
  b.lh = dwt_band(x, 1);
  b.hl = dwt_band(x, 2);
  b.hh = dwt_band(x, 3);
  return b;
}

Tensor idwt(const SubBands& b) {
  for (const Tensor* t : {&b.ll, &b.lh, &b.hl, &b.hh})
    if (!t->defined()) fail("idwt: undefined sub-band");
  const Shape s = b.ll.shape();
  if (!(b.lh.shape() == s) || !(b.hl.shape() == s) || !(b.hh.shape() == s))
    fail("idwt: sub-band shapes differ: " + s.str() + ", " + b.lh.shape().str() + ", " +
         b.hl.shape().str() + ", " + b.hh.shape().str());

  const Shape os{s.n, s.h * 2, s.w * 2, s.c};
  std::vector<double> out(os.count());
  const auto& dll = b.ll.data();
  const auto& dlh = b.lh.data();
  const auto& dhl = b.hl.data();
  const auto& dhh = b.hh.data();
  for (int n = 0; n < s.n; ++n)
    for (int i = 0; i < s.h; ++i)
      for (int j = 0; j < s.w; ++j) {
        const std::size_t src = s.index(n, i, j, 0);
        for (int dh = 0; dh < 2; ++dh)
          for (int dw = 0; dw < 2; ++dw) {
            const int pos = dh * 2 + dw;
            const std::size_t dst = os.index(n, 2 * i + dh, 2 * j + dw, 0);
            for (int ch = 0; ch < s.c; ++ch)
              out[dst + ch] = kHaarScale * (kHaarSigns[0][pos] * dll[src + ch] +
                                            kHaarSigns[1][pos] * dlh[src + ch] +
                                            kHaarSigns[2][pos] * dhl[src + ch] +
                                            kHaarSigns[3][pos] * dhh[src + ch]);
          }
      }

  auto backward = [](Node& o) {
    const Shape os = o.shape;
    const Shape s = o.parents[0]->shape;
    for (int band = 0; band < 4; ++band) {
      Node& p = *o.parents[band];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buf();
      const auto& sg = kHaarSigns[band];
      for (int n = 0; n < s.n; ++n)
        for (int i = 0; i < s.h; ++i)
          for (int j = 0; j < s.w; ++j) {
            const std::size_t dst = s.index(n, i, j, 0);
            for (int dh = 0; dh < 2; ++dh)
              for (int dw = 0; dw < 2; ++dw) {
                const int pos = dh * 2 + dw;
                const std::size_t src = os.index(n, 2 * i + dh, 2 * j + dw, 0);
                for (int ch = 0; ch < s.c; ++ch)
                  g[dst + ch] += kHaarScale * sg[pos] * o.grad[src + ch];
              }
          }
    }
  };
  return detail::make_op(os, std::move(out),
                         {b.ll.handle(), b.lh.handle(), b.hl.handle(), b.hh.handle()},
                         std::move(backward), "idwt");
}

SubBands normalize_subbands(const SubBands& b, double vmax) {
  if (vmax <= 0.0) fail("normalize_subbands: vmax must be positive");
  const double m = 1.0 / (2.0 * vmax);
  return SubBands{affine(b.ll, m, 0.0), affine(b.lh, m, 0.5), affine(b.hl, m, 0.5),
                  affine(b.hh, m, 0.5)};
}

SubBands denormalize_subbands(const SubBands& b, double vmax) {
  if (vmax <= 0.0) fail("denormalize_subbands: vmax must be positive");
  const double m = 2.0 * vmax;
  return SubBands{affine(b.ll, m, 0.0), affine(b.lh, m, -vmax), affine(b.hl, m, -vmax),
                  affine(b.hh, m, -vmax)};
}

Tensor attend_subbands(const SubBands& b, const SubBandAttention& a, double alpha) {
  const Tensor* bands[4] = {&b.ll, &b.lh, &b.hl, &b.hh};
  std::vector<Tensor> scaled;
  scaled.reserve(4);
  for (int i = 0; i < 4; ++i) {
    const Tensor& band = *bands[i];
    const int c = band.shape().c;
    if (a.squeeze[i].shape().w != c)
      fail("attend_subbands: attention expects " + std::to_string(a.squeeze[i].shape().w) +
           " channels, band has " + std::to_string(c));
    Tensor pooled = mean_hw(band);  // (N,1,1,C)
    Tensor z = leaky_relu(conv2d(pooled, a.squeeze[i], 1, Padding::kValid), alpha);
    Tensor gates = sigmoid(conv2d(z, a.excite[i], 1, Padding::kValid));  // (N,1,1,C)
    scaled.push_back(mul(band, gates));
  }
  return concat_channels(scaled);
}

}  // namespace r2mw
