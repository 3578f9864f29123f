#pragma once

#include <array>
#include <utility>
#include <vector>

#include "tvr/nn.hpp"

namespace tvr {

// Flow fields are plain [2,H,W] tensors (channel 0 = dx, channel 1 = dy);
// they are treated as constants by the differentiable warps.

// Full-search block matching in both directions, bilinearly upsampled from
// block centers to per-pixel fields. Returns (F_0->1, F_1->0).
std::pair<Tensor, Tensor> block_flow(const Tensor& i0, const Tensor& i1, int block = 8,
                                     int range = 7);

// F_0->t = t * F_0->1; F_1->t = (1-t) * F_1->0. Requires 0 < t < 1.
std::pair<Tensor, Tensor> scale_flow(const Tensor& f01, const Tensor& f10, double t);

// Bilinear sampling at p + flow(p), border-clamped. Gradient w.r.t. img.
Tensor backward_warp(const Tensor& img, const Tensor& flow);

// Bilinear splatting to p + flow(p) with weight normalization; holes (weight
// below 1e-6) are zero. When hole_mask is given it receives a [1,H,W] map
// with 1 inside holes. Gradient w.r.t. img.
Tensor forward_warp(const Tensor& img, const Tensor& flow, Tensor* hole_mask = nullptr);

// z_init = fwd_warp(I0, F_0->t) - fwd_warp(I1, F_1->t), with flows from
// block matching. Also emits the union hole mask for the synthesis U-Net.
Tensor hf_initial(const Tensor& i0, const Tensor& i1, double t, Tensor* holes = nullptr);

// Four stride-2 conv layers (widths 8,16,32,64) feeding per-level features.
struct ContextExtractor {
  std::array<Conv2dLayer, 4> layers;
  static ContextExtractor make(Rng& rng);
  std::array<Tensor, 4> operator()(Tape* tape, const Tensor& frame) const;
  void params(std::vector<Tensor*>& out);
};

// Per-level features of both reference frames, warped toward time t.
struct ContextPyramid {
  std::array<Tensor, 4> c0;
  std::array<Tensor, 4> c1;
};

// Context-aware U-Net: 4 down / 4 up with skip connections; each down level
// concatenates the warped context features. Emits mask and residue channels
// combined as z = z_init * M' + R' * (1 - M').
struct ContextUnet {
  std::array<Conv2dLayer, 4> down;        // stride-2 reductions
  std::array<Conv2dLayer, 4> down_fuse;   // post-concat 3x3
  std::array<Conv2dLayer, 4> up;          // post-upsample 3x3
  std::array<Conv2dLayer, 3> up_fuse;     // post-skip-concat 3x3
  Conv2dLayer head;                       // 1x1 -> (residue, mask), zero-init

  static ContextUnet make(Rng& rng);
  Tensor operator()(Tape* tape, const Tensor& z_init, const Tensor& holes,
                    const ContextPyramid& ctx) const;
  void params(std::vector<Tensor*>& out);
};

// Whole high-frequency reconstruction module (Theta_z).
struct HfReconstructor {
  ContextExtractor extractor;
  ContextUnet unet;

  static HfReconstructor make(Rng& rng);
  // Reconstructs the missing frame's high-frequency component between the
  // two reference frames at interpolation time t.
  Tensor synthesize(Tape* tape, const Tensor& i0, const Tensor& i1, double t) const;
  void params(std::vector<Tensor*>& out);
};

// Flow pyramid for context warping: level j halves resolution and magnitude.
std::array<Tensor, 4> flow_pyramid(const Tensor& flow);

}  // namespace tvr
