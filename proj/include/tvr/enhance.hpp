#pragma once

#include <array>
#include <vector>

#include "tvr/nn.hpp"
#include "tvr/video.hpp"

namespace tvr {

// Three stride-2 residual stages emitting compression-aware features at
// widths 8, 16, 24 (1/2, 1/4, 1/8 scale).
struct CompressionEncoder {
  std::array<Conv2dLayer, 3> reduce;
  std::array<Conv2dLayer, 3> res_a;
  std::array<Conv2dLayer, 3> res_b;

  static CompressionEncoder make(Rng& rng);
  std::array<Tensor, 3> operator()(Tape* tape, const Tensor& frame) const;
  void params(std::vector<Tensor*>& out);
};

// Global average pool of the level-2 features into three FC layers.
struct Ranker {
  Tensor w1, b1, w2, b2, w3, b3;

  static Ranker make(Rng& rng);
  Tensor score(Tape* tape, const Tensor& level2_features) const;
  void params(std::vector<Tensor*>& out);
};

// Pairwise margin-ranking loss; kappa = +1 if qp_i < qp_j else -1.
Tensor rank_loss(const Tensor& score_i, const Tensor& score_j, int qp_i, int qp_j,
                 double margin = 0.5);

struct RankerTrainReport {
  std::vector<double> loss_curve;
  double holdout_accuracy = 0.0;
};

// Frames of the same content coded at several QPs; pairs with distinct QPs
// drive the hinge. Returns held-out pairwise ordering accuracy.
RankerTrainReport train_ranker(CompressionEncoder& encoder, Ranker& ranker,
                               const std::vector<VideoClip>& clean_clips,
                               const std::vector<int>& qps, int steps, double lr, uint64_t seed);

double ranker_pairwise_accuracy(const CompressionEncoder& encoder, const Ranker& ranker,
                                const std::vector<VideoClip>& clips, const std::vector<int>& qps);

// Gated enhancer: motion-aligned 3-frame window fused into features f_d and a
// candidate frame f_q; a mask U-Net over (f_c, f_d) yields w_q and the output
// is w_q*f_q + (1-w_q)*input.
struct Enhancer {
  Conv2dLayer fuse1, fuse2;   // aligned window -> features f_d
  Conv2dLayer cand;           // f_d -> candidate residual (zero-init)
  // weight-map net: downsampled fusion with compression features
  Conv2dLayer wd1, wd2, wd3;  // stride-2 reductions fused with f_c levels
  Conv2dLayer wu3, wu2, wu1;  // upsample path
  Conv2dLayer whead;          // 1x1 -> logit

  static Enhancer make(Rng& rng);

  // window: aligned frames (prev, cur, next) with neighbors already warped
  // toward the center; f_c: compression features of the center frame.
  Tensor enhance_aligned(Tape* tape, const std::vector<Tensor>& window,
                         const std::array<Tensor, 3>& f_c, const Tensor* forced_wq = nullptr) const;

  // Convenience: align neighbors by block flow, then enhance. `idx` addresses
  // the center frame; the window is clamped at clip edges.
  Tensor enhance_frame(Tape* tape, const std::vector<Tensor>& frames, int idx,
                       const CompressionEncoder& encoder) const;

  void params(std::vector<Tensor*>& out);
};

struct EnhancerTrainReport {
  std::vector<double> loss_curve;
};

EnhancerTrainReport train_enhancer(Enhancer& model, const CompressionEncoder& encoder,
                                   const std::vector<VideoClip>& clean_clips,
                                   const std::vector<int>& qps, int steps, double lr,
                                   uint64_t seed);

}  // namespace tvr
