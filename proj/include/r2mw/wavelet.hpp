#pragma once

#include <array>

#include "r2mw/tensor.hpp"

namespace r2mw {

/// The four half-resolution outputs of one 2x2 Haar analysis stage.
struct SubBands {
  Tensor ll, lh, hl, hh;
};

/// Haar analysis filters as sign patterns over a 2x2 block in row-major
/// order (top-left, top-right, bottom-left, bottom-right). Every filter is
/// applied with a 1/2 scale so the transform is orthonormal: the inverse is
/// the transpose and per-block energy is preserved exactly.
///
/// HH must be [[1,-1],[-1,1]]; the sign pattern [[1,-1],[1,-1]] equals -HL,
/// which makes the 4x4 analysis matrix rank deficient and the transform
/// non-invertible.
inline constexpr std::array<std::array<double, 4>, 4> kHaarSigns{{
    {{1, 1, 1, 1}},     // LL
    {{-1, -1, 1, 1}},   // LH
    {{-1, 1, -1, 1}},   // HL
    {{1, -1, -1, 1}},   // HH
}};
inline constexpr double kHaarScale = 0.5;

/// Splits (N,H,W,C) into four (N,H/2,W/2,C) sub-bands; H and W must be even.
/// idwt(dwt(x)) == x up to float rounding.
SubBands dwt(const Tensor& x);

/// Exact inverse of dwt. All four bands must share one shape.
Tensor idwt(const SubBands& b);

/// Fixed affine range maps for features in [0, vmax]: LL/(2 vmax) lands in
/// [0,1] and (band + vmax)/(2 vmax) centres the high-pass bands on 0.5.
SubBands normalize_subbands(const SubBands& b, double vmax = 1.0);
SubBands denormalize_subbands(const SubBands& b, double vmax = 1.0);

/// Squeeze/excite weights per sub-band, stored as 1x1 conv kernels:
/// squeeze (1,1,C,C/r), excite (1,1,C/r,C). Band order is LL, LH, HL, HH.
struct SubBandAttention {
  std::array<Tensor, 4> squeeze;
  std::array<Tensor, 4> excite;
  int reduction = 4;
};

/// Channel-wise gating per band from its global average, then concatenation
/// along channels in LL, LH, HL, HH order: output is (N, H/2, W/2, 4C).
Tensor attend_subbands(const SubBands& b, const SubBandAttention& a, double alpha = 0.2);

}  // namespace r2mw
