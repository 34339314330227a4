#include "r2mw/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace r2mw {

namespace {

thread_local int g_no_grad_depth = 0;
thread_local std::size_t g_last_backward_evals = 0;
thread_local debug::MarginScope* g_margin_scope = nullptr;

bool recording_enabled() { return g_no_grad_depth == 0; }

debug::KinkMargins* active_margins() {
  return g_margin_scope ? &g_margin_scope->margins() : nullptr;
}

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_defined(const Tensor& t, const char* who) {
  if (!t.defined()) fail(std::string(who) + ": undefined tensor");
}

void check_nonempty(const Shape& s, const char* who) {
  if (s.n <= 0 || s.h <= 0 || s.w <= 0 || s.c <= 0)
    fail(std::string(who) + ": zero-size tensor " + s.str());
}

using detail::Node;
using detail::NodePtr;

Tensor make_result(Shape s, std::vector<double> data, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward, const char* op) {
  auto n = std::make_shared<Node>();
  n->shape = s;
  n->data = std::move(data);
  bool track = false;
  if (recording_enabled()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) track = true;
  }
  if (track) {
    n->requires_grad = true;
    n->is_leaf = false;
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward);
    n->op = op;
  }
  return detail::make_tensor(std::move(n));
}

// Index into a broadcast operand: dims of size 1 pin to coordinate 0.
inline std::size_t bindex(const Shape& s, int n, int h, int w, int c) {
  return s.index(s.n == 1 ? 0 : n, s.h == 1 ? 0 : h, s.w == 1 ? 0 : w, s.c == 1 ? 0 : c);
}

[[noreturn]] void broadcast_fail(const Shape& a, const Shape& b, const char* op) {
  fail(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  auto pick = [&](int x, int y) -> int {
    if (x == y) return x;
    if (x == 1) return y;
    if (y == 1) return x;
    broadcast_fail(a, b, op);
  };
  return Shape{pick(a.n, b.n), pick(a.h, b.h), pick(a.w, b.w), pick(a.c, b.c)};
}

template <class F>
std::vector<double> broadcast_eval(const Shape& os, const Node& a, const Node& b, F&& f) {
  std::vector<double> out(os.count());
  if (a.shape == os && b.shape == os) {
    const std::size_t total = out.size();
    for (std::size_t i = 0; i < total; ++i) out[i] = f(a.data[i], b.data[i]);
    return out;
  }
  std::size_t k = 0;
  for (int n = 0; n < os.n; ++n)
    for (int h = 0; h < os.h; ++h)
      for (int w = 0; w < os.w; ++w)
        for (int c = 0; c < os.c; ++c, ++k)
          out[k] = f(a.data[bindex(a.shape, n, h, w, c)], b.data[bindex(b.shape, n, h, w, c)]);
  return out;
}

// Adds f(out_index) into the (possibly broadcast) parent's grad buffer.
template <class F>
void broadcast_accumulate(Node& parent, const Shape& os, F&& per_element) {
  auto& g = parent.grad_buf();
  if (parent.shape == os) {
    const std::size_t total = os.count();
    for (std::size_t i = 0; i < total; ++i) g[i] += per_element(i);
    return;
  }
  std::size_t k = 0;
  for (int n = 0; n < os.n; ++n)
    for (int h = 0; h < os.h; ++h)
      for (int w = 0; w < os.w; ++w)
        for (int c = 0; c < os.c; ++c, ++k)
          g[bindex(parent.shape, n, h, w, c)] += per_element(k);
}

template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F&& f, DA&& dfa, DB&& dfb) {
  check_defined(a, name);
  check_defined(b, name);
  Node* an = a.node();
  Node* bn = b.node();
  Shape os = broadcast_shape(an->shape, bn->shape, name);
  auto data = broadcast_eval(os, *an, *bn, f);
  auto backward = [os, dfa, dfb](Node& o) {
    Node& pa = *o.parents[0];
    Node& pb = *o.parents[1];
    const Shape as = pa.shape;
    const Shape bs = pb.shape;
    if (pa.requires_grad) {
      if (as == os && bs == os) {
        broadcast_accumulate(pa, os, [&](std::size_t k) {
          return dfa(o.grad[k], pa.data[k], pb.data[k], o.data[k]);
        });
      } else {
        auto& g = pa.grad_buf();
        std::size_t k = 0;
        for (int n = 0; n < os.n; ++n)
          for (int h = 0; h < os.h; ++h)
            for (int w = 0; w < os.w; ++w)
              for (int c = 0; c < os.c; ++c, ++k)
                g[bindex(as, n, h, w, c)] +=
                    dfa(o.grad[k], pa.data[bindex(as, n, h, w, c)],
                        pb.data[bindex(bs, n, h, w, c)], o.data[k]);
      }
    }
    if (pb.requires_grad) {
      if (as == os && bs == os) {
        broadcast_accumulate(pb, os, [&](std::size_t k) {
          return dfb(o.grad[k], pa.data[k], pb.data[k], o.data[k]);
        });
      } else {
        auto& g = pb.grad_buf();
        std::size_t k = 0;
        for (int n = 0; n < os.n; ++n)
          for (int h = 0; h < os.h; ++h)
            for (int w = 0; w < os.w; ++w)
              for (int c = 0; c < os.c; ++c, ++k)
                g[bindex(bs, n, h, w, c)] +=
                    dfb(o.grad[k], pa.data[bindex(as, n, h, w, c)],
                        pb.data[bindex(bs, n, h, w, c)], o.data[k]);
      }
    }
  };
  return make_result(os, std::move(data), {a.handle(), b.handle()}, std::move(backward), name);
}

template <class F, class DF>
Tensor unary_op(const Tensor& x, const char* name, F&& f, DF&& df) {
  check_defined(x, name);
  Node* xn = x.node();
  std::vector<double> data(xn->data.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = f(xn->data[i]);
  auto backward = [df](Node& o) {
    Node& p = *o.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buf();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += df(o.grad[i], p.data[i], o.data[i]);
  };
  return make_result(xn->shape, std::move(data), {x.handle()}, std::move(backward), name);
}

}  // namespace

namespace detail {
Tensor make_tensor(NodePtr n) { return Tensor(std::move(n)); }
Tensor make_op(Shape s, std::vector<double> data, std::vector<NodePtr> parents,
               std::function<void(Node&)> backward, const char* op) {
  return make_result(s, std::move(data), std::move(parents), std::move(backward), op);
}
}  // namespace detail

std::string Shape::str() const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "(%d,%d,%d,%d)", n, h, w, c);
  return buf;
}

// ---- Tensor basics ---------------------------------------------------------

Tensor Tensor::zeros(Shape s, bool requires_grad) { return full(s, 0.0, requires_grad); }

Tensor Tensor::full(Shape s, double value, bool requires_grad) {
  check_nonempty(s, "Tensor::full");
  auto n = std::make_shared<detail::Node>();
  n->shape = s;
  n->data.assign(s.count(), value);
  n->requires_grad = requires_grad;
  return detail::make_tensor(std::move(n));
}

Tensor Tensor::scalar(double value) { return full(scalar_shape(), value, false); }

Tensor Tensor::from_data(Shape s, std::vector<double> data, bool requires_grad) {
  check_nonempty(s, "Tensor::from_data");
  if (data.size() != s.count())
    fail("Tensor::from_data: " + std::to_string(data.size()) + " values for shape " + s.str());
  auto n = std::make_shared<detail::Node>();
  n->shape = s;
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return detail::make_tensor(std::move(n));
}

Tensor Tensor::uniform(Shape s, double lo, double hi, std::mt19937_64& rng, bool requires_grad) {
  check_nonempty(s, "Tensor::uniform");
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> data(s.count());
  for (auto& v : data) v = dist(rng);
  return from_data(s, std::move(data), requires_grad);
}

const Shape& Tensor::shape() const {
  check_defined(*this, "Tensor::shape");
  return node_->shape;
}

const std::vector<double>& Tensor::data() const {
  check_defined(*this, "Tensor::data");
  return node_->data;
}

std::vector<double>& Tensor::data_mut() {
  check_defined(*this, "Tensor::data_mut");
  return node_->data;
}

double Tensor::at(int n, int h, int w, int c) const { return data()[shape().index(n, h, w, c)]; }

double Tensor::item() const {
  if (numel() != 1) fail("Tensor::item: tensor has shape " + shape().str());
  return data()[0];
}

bool Tensor::requires_grad() const {
  check_defined(*this, "Tensor::requires_grad");
  return node_->requires_grad;
}

bool Tensor::is_leaf() const {
  check_defined(*this, "Tensor::is_leaf");
  return node_->is_leaf;
}

bool Tensor::has_grad() const {
  check_defined(*this, "Tensor::has_grad");
  return !node_->grad.empty();
}

const std::vector<double>& Tensor::grad() const {
  check_defined(*this, "Tensor::grad");
  if (node_->grad.empty()) throw std::logic_error("Tensor::grad: no gradient present");
  return node_->grad;
}

void Tensor::zero_grad() {
  check_defined(*this, "Tensor::zero_grad");
  node_->grad.clear();
}

Tensor Tensor::detach(bool requires_grad) const {
  check_defined(*this, "Tensor::detach");
  return from_data(node_->shape, node_->data, requires_grad);
}

void Tensor::backward() {
  check_defined(*this, "Tensor::backward");
  Node* root = node_.get();
  if (root->shape.count() != 1) fail("backward: loss must be scalar, got " + root->shape.str());
  if (root->is_leaf) throw std::logic_error("backward: loss is not part of a recorded graph");
  if (root->swept)
    throw std::logic_error(
        "backward: graph already consumed; rebuild the loss before calling backward again");

  // Forward-topological order (parents before consumers) via iterative
  // postorder; swept in reverse so a node's grad is complete before its
  // closure pushes into its parents.
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    std::size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  seen.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.n->parents.size()) {
      Node* p = f.n->parents[f.next++].get();
      if (p && !p->is_leaf && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      topo.push_back(f.n);
      stack.pop_back();
    }
  }

  root->grad_buf()[0] = 1.0;
  g_last_backward_evals = 0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    n->backward_fn(*n);
    ++g_last_backward_evals;
  }
  root->swept = true;
}

// ---- elementwise ------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double, double) { return g; },
      [](double g, double, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double, double) { return g; },
      [](double g, double, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y, double) { return g * y; },
      [](double g, double x, double, double) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double g, double, double y, double) { return g / y; },
      [](double g, double, double y, double out) { return -g * out / y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double g, double, double y) { return g * y * (1.0 - y); });
}

Tensor leaky_relu(const Tensor& x, double alpha) {
  if (auto* m = active_margins()) {
    for (double v : x.data())
      if (std::fabs(v) < m->leaky) m->leaky = std::fabs(v);
  }
  return unary_op(
      x, "leaky_relu", [alpha](double v) { return v >= 0.0 ? v : alpha * v; },
      [alpha](double g, double v, double) { return v >= 0.0 ? g : alpha * g; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) fail("clamp: lo > hi");
  if (auto* m = active_margins()) {
    for (double v : x.data()) {
      double d = std::min(std::fabs(v - lo), std::fabs(v - hi));
      if (d < m->clamp) m->clamp = d;
    }
  }
  return unary_op(
      x, "clamp", [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double g, double v, double) { return (v >= lo && v <= hi) ? g : 0.0; });
}

Tensor scale(const Tensor& x, double s) { return affine(x, s, 0.0); }

Tensor affine(const Tensor& x, double m, double a) {
  return unary_op(
      x, "affine", [m, a](double v) { return v * m + a; },
      [m](double g, double, double) { return g * m; });
}

Tensor abs(const Tensor& x) {
  if (auto* m = active_margins()) {
    for (double v : x.data())
      if (std::fabs(v) < m->abs) m->abs = std::fabs(v);
  }
  return unary_op(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double g, double v, double) { return v > 0.0 ? g : (v < 0.0 ? -g : 0.0); });
}

Tensor square(const Tensor& x) {
  return unary_op(
      x, "square", [](double v) { return v * v; },
      [](double g, double v, double) { return 2.0 * g * v; });
}

double smooth_l1(double d, double beta) {
  if (beta <= 0.0) fail("smooth_l1: beta must be positive");
  double a = std::fabs(d);
  return a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
}

Tensor smooth_l1(const Tensor& d, double beta) {
  if (beta <= 0.0) fail("smooth_l1: beta must be positive");
  if (auto* m = active_margins()) {
    for (double v : d.data()) {
      double dist = std::fabs(std::fabs(v) - beta);
      if (dist < m->smooth_l1) m->smooth_l1 = dist;
    }
  }
  return unary_op(
      d, "smooth_l1",
      [beta](double v) {
        double a = std::fabs(v);
        return a < beta ? 0.5 * v * v / beta : a - 0.5 * beta;
      },
      [beta](double g, double v, double) {
        double a = std::fabs(v);
        if (a < beta) return g * v / beta;
        return v > 0.0 ? g : -g;
      });
}

// ---- reductions -------------------------------------------------------------

Tensor sum(const Tensor& x) {
  check_defined(x, "sum");
  check_nonempty(x.shape(), "sum");
  double total = 0.0;
  for (double v : x.data()) total += v;
  auto backward = [](Node& o) {
    Node& p = *o.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buf();
    double go = o.grad[0];
    for (auto& v : g) v += go;
  };
  return make_result(scalar_shape(), {total}, {x.handle()}, std::move(backward), "sum");
}

Tensor mean(const Tensor& x) {
  check_defined(x, "mean");
  check_nonempty(x.shape(), "mean");
  const double inv = 1.0 / double(x.numel());
  double total = 0.0;
  for (double v : x.data()) total += v;
  auto backward = [inv](Node& o) {
    Node& p = *o.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buf();
    double go = o.grad[0] * inv;
    for (auto& v : g) v += go;
  };
  return make_result(scalar_shape(), {total * inv}, {x.handle()}, std::move(backward), "mean");
}

Tensor channel_sum(const Tensor& x) {
  check_defined(x, "channel_sum");
  const Shape s = x.shape();
  check_nonempty(s, "channel_sum");
  std::vector<double> out(s.c, 0.0);
  const auto& d = x.data();
  const std::size_t pixels = d.size() / s.c;
  for (std::size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < s.c; ++c) out[c] += d[p * s.c + c];
  auto backward = [](Node& o) {
    Node& p = *o.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buf();
    const int ch = p.shape.c;
    const std::size_t pixels = g.size() / ch;
    for (std::size_t px = 0; px < pixels; ++px)
      for (int c = 0; c < ch; ++c) g[px * ch + c] += o.grad[c];
  };
  return make_result(Shape{1, 1, 1, s.c}, std::move(out), {x.handle()}, std::move(backward),
                     "channel_sum");
}

Tensor mean_hw(const Tensor& x) {
  check_defined(x, "mean_hw");
  const Shape s = x.shape();
  check_nonempty(s, "mean_hw");
  const double inv = 1.0 / (double(s.h) * s.w);
  std::vector<double> out(std::size_t(s.n) * s.c, 0.0);
  const auto& d = x.data();
  for (int n = 0; n < s.n; ++n)
    for (int h = 0; h < s.h; ++h)
      for (int w = 0; w < s.w; ++w)
        for (int c = 0; c < s.c; ++c) out[std::size_t(n) * s.c + c] += d[s.index(n, h, w, c)];
  for (auto& v : out) v *= inv;
  auto backward = [inv](Node& o) {
    Node& p = *o.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buf();
    const Shape s = p.shape;
    for (int n = 0; n < s.n; ++n)
      for (int h = 0; h < s.h; ++h)
        for (int w = 0; w < s.w; ++w)
          for (int c = 0; c < s.c; ++c)
            g[s.index(n, h, w, c)] += o.grad[std::size_t(n) * s.c + c] * inv;
  };
  return make_result(Shape{s.n, 1, 1, s.c}, std::move(out), {x.handle()}, std::move(backward),
                     "mean_hw");
}

// ---- convolution ------------------------------------------------------------

namespace {

struct ConvGeom {
  int oh, ow;      // output extents
  int pt, pl;      // top/left padding
};

ConvGeom conv_geometry(const Shape& in, const Shape& k, int stride, Padding padding) {
  ConvGeom g{};
  if (padding == Padding::kValid) {
    if (k.n > in.h || k.h > in.w)
      fail("conv2d: kernel " + k.str() + " larger than input " + in.str() + " (valid padding)");
    g.oh = (in.h - k.n) / stride + 1;
    g.ow = (in.w - k.h) / stride + 1;
    g.pt = 0;
    g.pl = 0;
  } else {
    g.oh = (in.h + stride - 1) / stride;
    g.ow = (in.w + stride - 1) / stride;
    int pad_h = std::max((g.oh - 1) * stride + k.n - in.h, 0);
    int pad_w = std::max((g.ow - 1) * stride + k.h - in.w, 0);
    g.pt = pad_h / 2;
    g.pl = pad_w / 2;
  }
  return g;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              Padding padding) {
  check_defined(input, "conv2d");
  check_defined(kernel, "conv2d");
  const Shape is = input.shape();
  const Shape ks = kernel.shape();  // (kh, kw, cin, cout)
  check_nonempty(is, "conv2d input");
  check_nonempty(ks, "conv2d kernel");
  if (stride < 1) fail("conv2d: stride must be >= 1");
  if (ks.w != is.c)
    fail("conv2d: kernel expects " + std::to_string(ks.w) + " input channels, input has " +
         std::to_string(is.c) + " (input " + is.str() + ", kernel " + ks.str() + ")");
  const bool has_bias = bias.defined();
  if (has_bias) {
    const Shape bs = bias.shape();
    if (!(bs == Shape{1, 1, 1, ks.c}))
      fail("conv2d: bias shape " + bs.str() + " does not match " + std::to_string(ks.c) +
           " output channels");
  }

  const ConvGeom geo = conv_geometry(is, ks, stride, padding);
  const int kh = ks.n, kw = ks.h, cin = ks.w, cout = ks.c;
  const Shape os{is.n, geo.oh, geo.ow, cout};
  std::vector<double> out(os.count(), 0.0);

  const auto& in = input.data();
  const auto& kd = kernel.data();
  for (int n = 0; n < is.n; ++n) {
    for (int oh = 0; oh < geo.oh; ++oh) {
      for (int ow = 0; ow < geo.ow; ++ow) {
        double* opx = &out[os.index(n, oh, ow, 0)];
        if (has_bias) {
          const auto& bd = bias.data();
          for (int co = 0; co < cout; ++co) opx[co] = bd[co];
        }
        for (int dh = 0; dh < kh; ++dh) {
          const int ih = oh * stride - geo.pt + dh;
          if (ih < 0 || ih >= is.h) continue;
          for (int dw = 0; dw < kw; ++dw) {
            const int iw = ow * stride - geo.pl + dw;
            if (iw < 0 || iw >= is.w) continue;
            const double* ipx = &in[is.index(n, ih, iw, 0)];
            const double* krow = &kd[((std::size_t(dh) * kw) + dw) * cin * cout];
            for (int ci = 0; ci < cin; ++ci) {
              const double v = ipx[ci];
              const double* kc = krow + std::size_t(ci) * cout;
              for (int co = 0; co < cout; ++co) opx[co] += v * kc[co];
            }
          }
        }
      }
    }
  }

  auto backward = [stride, geo, has_bias](Node& o) {
    Node& pin = *o.parents[0];
    Node& pk = *o.parents[1];
    Node* pb = has_bias ? o.parents[2].get() : nullptr;
    const Shape is = pin.shape;
    const Shape ks = pk.shape;
    const Shape os = o.shape;
    const int kh = ks.n, kw = ks.h, cin = ks.w, cout = ks.c;
    const bool need_in = pin.requires_grad;
    const bool need_k = pk.requires_grad;
    const bool need_b = pb && pb->requires_grad;
    std::vector<double>* gin = need_in ? &pin.grad_buf() : nullptr;
    std::vector<double>* gk = need_k ? &pk.grad_buf() : nullptr;
    std::vector<double>* gb = need_b ? &pb->grad_buf() : nullptr;
    const auto& in = pin.data;
    const auto& kd = pk.data;
    for (int n = 0; n < is.n; ++n) {
      for (int oh = 0; oh < os.h; ++oh) {
        for (int ow = 0; ow < os.w; ++ow) {
          const double* gpx = &o.grad[os.index(n, oh, ow, 0)];
          if (gb)
            for (int co = 0; co < cout; ++co) (*gb)[co] += gpx[co];
          if (!need_in && !need_k) continue;
          for (int dh = 0; dh < kh; ++dh) {
            const int ih = oh * stride - geo.pt + dh;
            if (ih < 0 || ih >= is.h) continue;
            for (int dw = 0; dw < kw; ++dw) {
              const int iw = ow * stride - geo.pl + dw;
              if (iw < 0 || iw >= is.w) continue;
              const std::size_t ibase = is.index(n, ih, iw, 0);
              const std::size_t kbase = ((std::size_t(dh) * kw) + dw) * cin * cout;
              for (int ci = 0; ci < cin; ++ci) {
                const double* kc = &kd[kbase + std::size_t(ci) * cout];
                if (gin) {
                  double acc = 0.0;
                  for (int co = 0; co < cout; ++co) acc += gpx[co] * kc[co];
                  (*gin)[ibase + ci] += acc;
                }
                if (gk) {
                  const double v = in[ibase + ci];
                  double* gkc = &(*gk)[kbase + std::size_t(ci) * cout];
                  for (int co = 0; co < cout; ++co) gkc[co] += v * gpx[co];
                }
              }
            }
          }
        }
      }
    }
  };

  std::vector<NodePtr> parents{input.handle(), kernel.handle()};
  if (has_bias) parents.push_back(bias.handle());
  return make_result(os, std::move(out), std::move(parents), std::move(backward), "conv2d");
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, Padding padding) {
  return conv2d(input, kernel, Tensor(), stride, padding);
}

// ---- channel concat / slice --------------------------------------------------

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_channels: no inputs");
  const Shape s0 = parts[0].shape();
  int ctotal = 0;
  for (const auto& p : parts) {
    check_defined(p, "concat_channels");
    const Shape s = p.shape();
    if (s.n != s0.n || s.h != s0.h || s.w != s0.w)
      fail("concat_channels: mismatched shapes " + s0.str() + " vs " + s.str());
    ctotal += s.c;
  }
  const Shape os{s0.n, s0.h, s0.w, ctotal};
  std::vector<double> out(os.count());
  const std::size_t pixels = std::size_t(s0.n) * s0.h * s0.w;
  std::vector<int> offsets(parts.size());
  {
    int off = 0;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      offsets[i] = off;
      const int pc = parts[i].shape().c;
      const auto& d = parts[i].data();
      for (std::size_t px = 0; px < pixels; ++px)
        for (int c = 0; c < pc; ++c) out[px * ctotal + off + c] = d[px * pc + c];
      off += pc;
    }
  }
  auto backward = [ctotal, offsets](Node& o) {
    const std::size_t pixels = o.data.size() / ctotal;
    for (std::size_t i = 0; i < o.parents.size(); ++i) {
      Node& p = *o.parents[i];
      if (!p.requires_grad) continue;
      auto& g = p.grad_buf();
      const int pc = p.shape.c;
      const int off = offsets[i];
      for (std::size_t px = 0; px < pixels; ++px)
        for (int c = 0; c < pc; ++c) g[px * pc + c] += o.grad[px * ctotal + off + c];
    }
  };
  std::vector<NodePtr> parents;
  parents.reserve(parts.size());
  for (const auto& p : parts) parents.push_back(p.handle());
  return make_result(os, std::move(out), std::move(parents), std::move(backward),
                     "concat_channels");
}

Tensor slice_channels(const Tensor& x, int c_begin, int c_end) {
  check_defined(x, "slice_channels");
  const Shape s = x.shape();
  if (c_begin < 0 || c_end > s.c || c_begin >= c_end)
    fail("slice_channels: range [" + std::to_string(c_begin) + "," + std::to_string(c_end) +
         ") out of " + std::to_string(s.c) + " channels");
  const int cs = c_end - c_begin;
  const Shape os{s.n, s.h, s.w, cs};
  std::vector<double> out(os.count());
  const auto& d = x.data();
  const std::size_t pixels = std::size_t(s.n) * s.h * s.w;
  for (std::size_t px = 0; px < pixels; ++px)
    for (int c = 0; c < cs; ++c) out[px * cs + c] = d[px * s.c + c_begin + c];
  auto backward = [c_begin, cs](Node& o) {
    Node& p = *o.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buf();
    const int pc = p.shape.c;
    const std::size_t pixels = o.data.size() / cs;
    for (std::size_t px = 0; px < pixels; ++px)
      for (int c = 0; c < cs; ++c) g[px * pc + c_begin + c] += o.grad[px * cs + c];
  };
  return make_result(os, std::move(out), {x.handle()}, std::move(backward), "slice_channels");
}

Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_batch: no inputs");
  const Shape s0 = parts[0].shape();
  int ntotal = 0;
  for (const auto& p : parts) {
    check_defined(p, "concat_batch");
    const Shape s = p.shape();
    if (s.h != s0.h || s.w != s0.w || s.c != s0.c)
      fail("concat_batch: mismatched shapes " + s0.str() + " vs " + s.str());
    ntotal += s.n;
  }
  std::vector<double> out;
  out.reserve(std::size_t(ntotal) * s0.h * s0.w * s0.c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return Tensor::from_data(Shape{ntotal, s0.h, s0.w, s0.c}, std::move(out));
}

// ---- padding / cropping -------------------------------------------------------

namespace {
inline int reflect_index(int i, int n) {
  // Mirror without edge repetition: -1 -> 1, n -> n-2.
  if (i < 0) i = -i;
  if (i >= n) i = 2 * (n - 1) - i;
  return i;
}
}  // namespace

Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right, PadMode mode) {
  check_defined(x, "pad2d");
  const Shape s = x.shape();
  if (top < 0 || bottom < 0 || left < 0 || right < 0) fail("pad2d: negative padding");
  if (mode == PadMode::kReflect &&
      (top >= s.h || bottom >= s.h || left >= s.w || right >= s.w))
    fail("pad2d: reflect padding " + std::to_string(std::max({top, bottom, left, right})) +
         " too large for input " + s.str());
  const Shape os{s.n, s.h + top + bottom, s.w + left + right, s.c};
  std::vector<double> out(os.count(), 0.0);
  const auto& d = x.data();
  for (int n = 0; n < os.n; ++n)
    for (int h = 0; h < os.h; ++h)
      for (int w = 0; w < os.w; ++w) {
        int ih = h - top, iw = w - left;
        if (mode == PadMode::kReflect) {
          ih = reflect_index(ih, s.h);
          iw = reflect_index(iw, s.w);
        } else if (ih < 0 || ih >= s.h || iw < 0 || iw >= s.w) {
          continue;  // zeros already in place
        }
        const std::size_t src = s.index(n, ih, iw, 0);
        const std::size_t dst = os.index(n, h, w, 0);
        for (int c = 0; c < s.c; ++c) out[dst + c] = d[src + c];
      }
  auto backward = [top, left, mode](Node& o) {
    Node& p = *o.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buf();
    const Shape s = p.shape;
    const Shape os = o.shape;
    for (int n = 0; n < os.n; ++n)
      for (int h = 0; h < os.h; ++h)
        for (int w = 0; w < os.w; ++w) {
          int ih = h - top, iw = w - left;
          if (mode == PadMode::kReflect) {
            ih = reflect_index(ih, s.h);
            iw = reflect_index(iw, s.w);
          } else if (ih < 0 || ih >= s.h || iw < 0 || iw >= s.w) {
            continue;
          }
          const std::size_t src = s.index(n, ih, iw, 0);
          const std::size_t dst = os.index(n, h, w, 0);
          for (int c = 0; c < s.c; ++c) g[src + c] += o.grad[dst + c];
        }
  };
  return make_result(os, std::move(out), {x.handle()}, std::move(backward), "pad2d");
}

Tensor crop2d(const Tensor& x, int h0, int h, int w0, int w) {
  check_defined(x, "crop2d");
  const Shape s = x.shape();
  if (h0 < 0 || w0 < 0 || h <= 0 || w <= 0 || h0 + h > s.h || w0 + w > s.w)
    fail("crop2d: window " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
         std::to_string(h0) + "," + std::to_string(w0) + ") outside " + s.str());
  const Shape os{s.n, h, w, s.c};
  std::vector<double> out(os.count());
  const auto& d = x.data();
  for (int n = 0; n < os.n; ++n)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const std::size_t src = s.index(n, h0 + i, w0 + j, 0);
        const std::size_t dst = os.index(n, i, j, 0);
        for (int c = 0; c < s.c; ++c) out[dst + c] = d[src + c];
      }
  auto backward = [h0, w0](Node& o) {
    Node& p = *o.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buf();
    const Shape s = p.shape;
    const Shape os = o.shape;
    for (int n = 0; n < os.n; ++n)
      for (int i = 0; i < os.h; ++i)
        for (int j = 0; j < os.w; ++j) {
          const std::size_t src = s.index(n, h0 + i, w0 + j, 0);
          const std::size_t dst = os.index(n, i, j, 0);
          for (int c = 0; c < s.c; ++c) g[src + c] += o.grad[dst + c];
        }
  };
  return make_result(os, std::move(out), {x.handle()}, std::move(backward), "crop2d");
}

bool all_finite(const Tensor& x) {
  for (double v : x.data())
    if (!std::isfinite(v)) return false;
  return true;
}

// ---- gradient checking --------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  if (eps < 1e-7 || eps > 1e-3) fail("grad_check: eps must lie in [1e-7, 1e-3]");
  Tensor xv = x.detach(true);
  Tensor y = f(xv);
  if (y.numel() != 1) fail("grad_check: f must be scalar valued, got " + y.shape().str());
  y.backward();
  std::vector<double> analytic(x.numel(), 0.0);
  if (xv.has_grad()) analytic = xv.grad();

  Tensor probe = x.detach(false);
  auto& pd = probe.data_mut();
  double worst = 0.0;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double orig = pd[i];
    pd[i] = orig + eps;
    const double fp = f(probe).item();
    pd[i] = orig - eps;
    const double fm = f(probe).item();
    pd[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double err = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
    if (err > worst) worst = err;
  }
  return worst;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

namespace debug {

std::size_t last_backward_evals() { return g_last_backward_evals; }

std::size_t graph_op_count(const Tensor& root) {
  if (!root.defined()) return 0;
  std::unordered_set<const Node*> seen;
  std::vector<const Node*> stack{root.node()};
  std::size_t ops = 0;
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    if (!n->is_leaf) {
      ++ops;
      for (const auto& p : n->parents) stack.push_back(p.get());
    }
  }
  return ops;
}

MarginScope::MarginScope() : prev_(g_margin_scope) { g_margin_scope = this; }
MarginScope::~MarginScope() { g_margin_scope = prev_; }

}  // namespace debug

}  // namespace r2mw
