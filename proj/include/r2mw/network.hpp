#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "r2mw/tensor.hpp"
#include "r2mw/wavelet.hpp"

namespace r2mw {

/// Multi-level shortcut block: a sigmoid contrast gate picks features from
/// the input, a 1x1 projection matches the output width, and every stacked
/// 3x3 conv re-adds the projection before its activation.
struct MscBlock {
  Tensor map_w, map_b;    // 3x3, C -> C, feeds the sigmoid gate
  Tensor proj_w, proj_b;  // 1x1, C -> C_out
  std::vector<std::pair<Tensor, Tensor>> convs;  // 3x3, C_out -> C_out
  double alpha = 0.2;
};

Tensor msc_forward(const Tensor& x, const MscBlock& blk);

struct NetworkConfig {
  int levels = 3;
  int base_channels = 16;
  int msc_depth = 3;
  bool global_residual = true;
  double alpha = 0.2;          // leaky slope used throughout
  int attention_reduction = 4;
  int in_channels = 3;
};

/// Ordered name -> tensor map for every learnable kernel, bias and attention
/// weight. Iteration order is the lexicographic name order.
class ModelParams {
 public:
  Tensor& add(const std::string& name, Tensor t);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  void zero_grad();

  std::map<std::string, Tensor>& map() { return params_; }
  const std::map<std::string, Tensor>& map() const { return params_; }

 private:
  std::map<std::string, Tensor> params_;
};

/// Seeded construction of all weights. Conv kernels draw from
/// +-sqrt(6/fan_in) uniform; biases start at zero. The same seed always
/// produces the same parameters.
ModelParams init_params(const NetworkConfig& cfg, std::uint64_t seed);

std::size_t count_params(const ModelParams& params);

/// Full enhancement pass: per level an MSC block followed by
/// dwt -> range-normalize -> band attention and a 1x1 projection to twice the
/// width; an MSC bottleneck; then per level a 1x1 expansion into four bands,
/// denormalize, idwt, skip concatenation and an MSC block. A final 3x3 conv
/// emits the 3-channel correction which (with global_residual) is added to
/// the input before clamping to [0,1].
Tensor forward(const Tensor& x, const ModelParams& params, const NetworkConfig& cfg);

/// Reads the named tensors of one MSC block out of params.
MscBlock msc_block_view(const ModelParams& params, const std::string& prefix, int depth,
                        double alpha);
/// Reads one level's sub-band attention weights out of params.
SubBandAttention attention_view(const ModelParams& params, const std::string& prefix,
                                int reduction);

}  // namespace r2mw
