#pragma once

#include <memory>
#include <vector>

#include "tvr/codec.hpp"
#include "tvr/nn.hpp"
#include "tvr/video.hpp"

namespace tvr {

// Paired temporal low/high frequency frame groups.
struct FrequencyPair {
  std::vector<Tensor> low;   // ceil(N/2) frames
  std::vector<Tensor> high;  // floor(N/2) frames
};

// Group-to-group frame map: the prediction (P) and update (U) roles of the
// lifting transform. n_out names the target frame count.
class FrameMap {
 public:
  virtual ~FrameMap() = default;
  virtual std::vector<Tensor> apply(Tape* tape, const std::vector<Tensor>& in, int n_out) const = 0;
  virtual void params(std::vector<Tensor*>&) {}
};

// P = 0 / U = 0: degenerates the transform to a pure even/odd split.
class ZeroMap : public FrameMap {
 public:
  std::vector<Tensor> apply(Tape*, const std::vector<Tensor>& in, int n_out) const override;
};

// Baseline predictor: odd frame i is the average of its even neighbors
// (edge frames copy the single neighbor).
class AveragePredictor : public FrameMap {
 public:
  std::vector<Tensor> apply(Tape*, const std::vector<Tensor>& in, int n_out) const override;
};

// Learned map: frames stacked along channels through a 3-layer conv stack;
// the final layer starts at zero. For the predictor role the averaging
// baseline is added back, so training starts from the classical transform.
class ConvFrameMap : public FrameMap {
 public:
  static ConvFrameMap make(int frames_in, int frames_out, int hidden, Rng& rng,
                           bool average_base);
  std::vector<Tensor> apply(Tape* tape, const std::vector<Tensor>& in, int n_out) const override;
  void params(std::vector<Tensor*>& out) override;

 private:
  TransformNet net_;
  bool average_base_ = false;
};

// Prediction-first lifting: x_h = x_o - P(x_e); x_l = x_e + U(x_h).
FrequencyPair mimo_twt_forward(Tape* tape, const VideoClip& clip, const FrameMap& P,
                               const FrameMap& U);

// Inverse lifting: x_e = x_l - U(x_h); x_o = x_h + P(x_e); interleave.
VideoClip mimo_twt_inverse(Tape* tape, const FrequencyPair& pair, const FrameMap& P,
                           const FrameMap& U);

// Motion-compensated temporal Haar pair used inside the surrogate.
// y_h = cur - warp(prev, mv_fwd); y_l = prev + warp(cur, mv_bwd).
std::pair<Tensor, Tensor> haar_mv_forward(Tape* tape, const Tensor& prev, const Tensor& cur,
                                          const Tensor& flow_fwd, const Tensor& flow_bwd);

// One-sided inverse: cur = y_h + warp(prev, mv_fwd). Exact when y_h is the
// undegraded forward output and the warp reuses identical inputs.
Tensor haar_mv_reconstruct(Tape* tape, const Tensor& prev, const Tensor& y_h,
                           const Tensor& flow_fwd);

}  // namespace tvr
