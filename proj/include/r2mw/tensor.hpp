#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace r2mw {

/// Rank-4 tensor extents, laid out row-major as (batch, height, width, channels).
/// Convolution kernels reuse the same struct as (kh, kw, in_channels, out_channels).
struct Shape {
  int n = 0;
  int h = 0;
  int w = 0;
  int c = 0;

  std::size_t count() const { return std::size_t(n) * h * w * c; }
  std::size_t index(int in, int ih, int iw, int ic) const {
    return ((std::size_t(in) * h + ih) * w + iw) * c + ic;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

inline Shape scalar_shape() { return Shape{1, 1, 1, 1}; }

enum class Padding { kValid, kSameZero };
enum class PadMode { kZero, kReflect };

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // same length as data once allocated
  bool requires_grad = false;
  bool is_leaf = true;
  bool swept = false;  // set on a loss node once backward() has consumed it
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  std::vector<double>& grad_buf() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

using NodePtr = std::shared_ptr<Node>;

}  // namespace detail

class Tensor;

namespace detail {
Tensor make_tensor(NodePtr n);
/// Builds an op node: records parents and the backward closure when any
/// parent requires gradients and recording is enabled, otherwise yields a
/// plain constant. The closure receives the node with its grad complete and
/// must accumulate into parents' grad buffers.
Tensor make_op(Shape s, std::vector<double> data, std::vector<NodePtr> parents,
               std::function<void(Node&)> backward, const char* op);
}

/// Dense 64-bit float tensor with optional reverse-mode gradient tracking.
///
/// Tensor is a cheap handle: copies share the payload. Every op is pure and
/// returns a new tensor; when any input requires gradients (and recording is
/// not suspended via NoGradGuard) the op also records a graph node holding
/// the local backward closure.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor from_data(Shape s, std::vector<double> data, bool requires_grad = false);
  /// He-style or generic uniform fill; consumes rng one draw per element.
  static Tensor uniform(Shape s, double lo, double hi, std::mt19937_64& rng,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const { return shape().count(); }

  const std::vector<double>& data() const;
  /// Mutable access to leaf storage (optimizer updates, finite differencing).
  std::vector<double>& data_mut();
  double at(int n, int h, int w, int c) const;
  /// Value of a one-element tensor.
  double item() const;

  bool requires_grad() const;
  bool is_leaf() const;
  bool has_grad() const;
  const std::vector<double>& grad() const;  // throws if no gradient present
  void zero_grad();

  /// Fresh leaf holding a copy of the data, cut off from any recorded graph.
  Tensor detach(bool requires_grad = false) const;

  /// Reverse-mode sweep from a scalar loss. Every reachable leaf with
  /// requires_grad accumulates d(loss)/d(leaf). A recorded graph is single
  /// use: a second backward() on the same loss throws.
  void backward();

  detail::Node* node() const { return node_.get(); }
  const detail::NodePtr& handle() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}
  detail::NodePtr node_;
  friend Tensor detail::make_tensor(detail::NodePtr);
};

// ---- elementwise ----------------------------------------------------------
// Binary ops broadcast: each dim of either operand may be 1 to broadcast
// against the other (batch, spatial or channel).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor sigmoid(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double alpha);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor scale(const Tensor& x, double s);
/// Elementwise x * m + a.
Tensor affine(const Tensor& x, double m, double a);
Tensor abs(const Tensor& x);
Tensor square(const Tensor& x);
/// Elementwise Huber-style map: 0.5*d^2/beta for |d| < beta, |d| - 0.5*beta otherwise.
Tensor smooth_l1(const Tensor& d, double beta);
double smooth_l1(double d, double beta);

// ---- reductions ------------------------------------------------------------
Tensor sum(const Tensor& x);          // -> (1,1,1,1)
Tensor mean(const Tensor& x);         // -> (1,1,1,1)
Tensor channel_sum(const Tensor& x);  // -> (1,1,1,C), sums over batch and space
Tensor mean_hw(const Tensor& x);      // -> (N,1,1,C), global average pool

// ---- structure -------------------------------------------------------------
/// Cross-correlation (no kernel flip). kernel is (kh,kw,Cin,Cout); bias is
/// (1,1,1,Cout). Same-zero padding yields ceil(H/stride) output extents.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride,
              Padding padding);
Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, Padding padding);

Tensor concat_channels(const std::vector<Tensor>& parts);
Tensor slice_channels(const Tensor& x, int c_begin, int c_end);
/// Joins equal-shaped tensors along the batch axis. Data-only (no gradient).
Tensor concat_batch(const std::vector<Tensor>& parts);

Tensor pad2d(const Tensor& x, int top, int bottom, int left, int right, PadMode mode);
Tensor crop2d(const Tensor& x, int h0, int h, int w0, int w);

bool all_finite(const Tensor& x);

/// Max over coordinates of |analytic - numeric| / max(1,|analytic|,|numeric|),
/// comparing the tape gradient of f at x against central finite differences
/// (f(x+eps) - f(x-eps)) / (2 eps). f must be scalar valued; eps in [1e-7,1e-3].
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

/// Suspends graph recording on this thread while alive (pure inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

namespace debug {

/// Number of local-gradient closures invoked by the most recent backward().
std::size_t last_backward_evals();
/// Number of recorded op nodes reachable from root (leaves excluded).
std::size_t graph_op_count(const Tensor& root);

/// Distances to the nearest non-smooth point seen by kinked ops while a
/// MarginScope is active; used to certify finite-difference checks.
struct KinkMargins {
  double leaky = 1e300;
  double clamp = 1e300;
  double abs = 1e300;
  double smooth_l1 = 1e300;
};

class MarginScope {
 public:
  MarginScope();
  ~MarginScope();
  MarginScope(const MarginScope&) = delete;
  MarginScope& operator=(const MarginScope&) = delete;
  const KinkMargins& margins() const { return m_; }
  KinkMargins& margins() { return m_; }

 private:
  MarginScope* prev_;
  KinkMargins m_;
};

}  // namespace debug

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace r2mw
