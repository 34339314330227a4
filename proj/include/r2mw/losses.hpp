#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "r2mw/tensor.hpp"

namespace r2mw {

struct LossConfig {
  double w1 = 1.0;  // dark-region pixel weight
  double w2 = 1.5;  // bright-region pixel weight
  double w3 = 1.0;  // perceptual weight
  double w4 = 1.0;  // structural similarity weight (entered negated)
  double bright_fraction = 0.3;
  double smooth_l1_beta = 1.0;
  double gauss_a = 0.2;
  double gauss_sigma_x = 3.0;
  double gauss_sigma_y = 3.0;
  int gauss_ksize = 11;
  double ssim_c1 = 1e-4;  // (0.01)^2 on unit dynamic range
  double ssim_c2 = 9e-4;  // (0.03)^2
  bool use_edge = true;
  bool use_channel = true;
  double edge_weight = 1.0;
  double channel_weight = 1.0;
};

/// Bright/dark partition of an image batch by reference luminance
/// (0.299 R + 0.587 G + 0.114 B). Per image the brightest
/// round(bright_fraction * H * W) pixels are bright, ties broken by pixel
/// index; a constant image is treated as entirely dark.
struct RegionSplit {
  std::vector<std::uint8_t> bright_mask;  // one flag per (n, h, w)
  std::size_t bright_count = 0;
  std::size_t dark_count = 0;
};

RegionSplit split_regions(const Tensor& reference, double bright_fraction);

/// Fixed convolutional feature extractor standing in for a pretrained
/// perceptual network: stride-2 3x3 convs (3 -> 8 -> 16 -> 32) with leaky
/// activations, weights frozen after construction. The seeded form is fully
/// deterministic; from_file loads kernels from a named-tensor checkpoint
/// ("perc.conv<k>.w" / "perc.conv<k>.b") so trained weights can be dropped in.
class PerceptualExtractor {
 public:
  static PerceptualExtractor seeded(std::uint64_t seed = kDefaultSeed);
  static PerceptualExtractor from_file(const std::filesystem::path& path);

  Tensor features(const Tensor& image) const;
  int layers() const { return int(convs_.size()); }
  const std::vector<std::pair<Tensor, Tensor>>& convs() const { return convs_; }

  static constexpr std::uint64_t kDefaultSeed = 0x52324d57ull;

 private:
  std::vector<std::pair<Tensor, Tensor>> convs_;
  double alpha_ = 0.2;
};

// Every component returns a scalar graph tensor; gradients flow to the
// enhanced image only (the reference is treated as a constant).
Tensor pixel_loss(const Tensor& enhanced, const Tensor& reference, const LossConfig& cfg);
Tensor global_loss(const Tensor& enhanced, const Tensor& reference,
                   const PerceptualExtractor& ext, const LossConfig& cfg);
Tensor edge_loss(const Tensor& enhanced, const Tensor& reference);
Tensor channel_loss(const Tensor& enhanced, const Tensor& reference, const LossConfig& cfg);

/// Whole-tensor-statistics structural similarity used inside global_loss.
/// Symmetric, and exactly 1 when both arguments hold identical data.
Tensor ssim_global(const Tensor& a, const Tensor& b, double c1, double c2);

/// Unnormalized Gaussian map (1,k,k,1): gauss_a at the centre, falling off
/// with exp(-(dx^2)/(2 sigma_x) - (dy^2)/(2 sigma_y)).
Tensor gaussian_kernel(const LossConfig& cfg);
double gaussian_kernel_sum(const LossConfig& cfg);

struct LossBreakdown {
  Tensor total;  // scalar, suitable for backward()
  double pixel = 0.0;
  double global_part = 0.0;
  double edge = 0.0;
  double channel = 0.0;
};

/// Sum of the four components; per-component values are reported alongside
/// for logging. Disabled components are omitted from the graph entirely.
LossBreakdown total_loss(const Tensor& enhanced, const Tensor& reference,
                         const PerceptualExtractor& ext, const LossConfig& cfg);

}  // namespace r2mw
