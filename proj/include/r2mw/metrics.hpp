#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "r2mw/tensor.hpp"

namespace r2mw {

/// Peak signal-to-noise ratio in dB against a unit dynamic range:
/// 10*log10(1/MSE) over all pixels and channels. Identical inputs yield the
/// +infinity sentinel, never a crash.
double psnr(const Tensor& enhanced, const Tensor& reference);

/// Standard windowed structural similarity: 11x11 Gaussian window with
/// sigma 1.5, C1=(0.01)^2, C2=(0.03)^2, evaluated per channel over every
/// fully-interior window position, then averaged over positions, channels
/// and batch. Requires min(H, W) >= 11.
double ssim_windowed(const Tensor& enhanced, const Tensor& reference);

struct EvalPair {
  std::string name;
  Tensor enhanced;
  Tensor reference;
};

struct MetricReport {
  struct Entry {
    std::string name;
    double psnr_db = 0.0;
    double ssim = 0.0;
  };
  std::vector<Entry> per_image;
  std::vector<std::string> errors;  // pairs skipped (shape mismatch, ...)
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
};

/// Per-pair metrics plus arithmetic means over the valid pairs, in input
/// order. An empty input list throws; individual bad pairs become error
/// entries and are excluded from the means.
MetricReport evaluate_pairs(const std::vector<EvalPair>& pairs);

/// CSV with the exact header `name,psnr_db,ssim`, one row per image and a
/// terminal MEAN row.
void write_metrics_csv(const MetricReport& report, std::ostream& out);

}  // namespace r2mw
