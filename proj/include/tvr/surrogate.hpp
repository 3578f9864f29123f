#pragma once

#include <vector>

#include "tvr/codec.hpp"
#include "tvr/coupling.hpp"
#include "tvr/video.hpp"

namespace tvr {

// Differentiable recurrent stand-in for the toy codec. Per frame it runs the
// motion-compensated Haar pair, a Q-coupling stack, quantization of the low
// branch plus a learned collapse of the high branch, then the inverse stack
// and the one-sided Haar reconstruction. With degradation disabled the
// composition returns the input frame (invertibility cancellation).
struct SurrogateCodec {
  CouplingStack qcouplings;  // 3 Q-coupling blocks on single-frame branches
  TransformNet collapse;     // residual degradation of the high branch
  TransformNet intra;        // first-frame degradation (no temporal reference)
  bool quantize_low = true;
  bool degrade = true;

  static SurrogateCodec make(Rng& rng);

  // QP-conditioned intra estimate of the compressed first frame.
  Tensor intra_frame(Tape* tape, const Tensor& y0, int qp) const;

  // One recurrent step; flow fields come from the codec metadata.
  Tensor step(Tape* tape, const Tensor& prev_degraded, const Tensor& y_t, const Tensor& flow_fwd,
              const Tensor& flow_bwd, int qp) const;

  // Whole-clip forward: frame 0 through the intra path, then recurrent steps.
  std::vector<Tensor> run_clip(Tape* tape, const std::vector<Tensor>& y,
                               const CodecMetadata& meta) const;

  void params(std::vector<Tensor*>& out);
  void set_qp_enabled(bool enabled);
};

struct SurrogateFidelity {
  int qp;
  double sim_psnr;       // PSNR(G(y), H(y))
  double baseline_psnr;  // PSNR(y, H(y)), the copy-input baseline
};

struct SurrogateTrainReport {
  std::vector<double> loss_curve;
  std::vector<SurrogateFidelity> fidelity;
};

// Minimizes l1(G(y), H(y)) over (clip, qp) samples with Adam.
SurrogateTrainReport train_surrogate(SurrogateCodec& model, const std::vector<VideoClip>& clips,
                                     const std::vector<int>& qps, int steps, double lr,
                                     uint64_t seed, const std::vector<VideoClip>* eval_clips = nullptr);

// Simulation PSNR of the model against the toy codec on held-out clips.
std::vector<SurrogateFidelity> surrogate_fidelity(const SurrogateCodec& model,
                                                  const std::vector<VideoClip>& clips,
                                                  const std::vector<int>& qps);

}  // namespace tvr
