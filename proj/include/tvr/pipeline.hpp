#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tvr/coupling.hpp"
#include "tvr/enhance.hpp"
#include "tvr/flow.hpp"
#include "tvr/metrics.hpp"
#include "tvr/surrogate.hpp"
#include "tvr/wavelet.hpp"

namespace tvr {

inline constexpr int kGroupSize = 7;  // 7 -> 4 frame-rate rescaling

// Full temporal video rescaling model. The wavelet and coupling parameters
// are shared by the downscale and upscale paths (weight tying through the
// tape's watch memoization).
struct TvrnModel {
  ConvFrameMap predictor;    // Theta_sharp (wavelet P)
  ConvFrameMap updater;      // Theta_sharp (wavelet U)
  CouplingStack couplings;   // Theta_sharp
  HfReconstructor hf;        // Theta_z
  Enhancer enh_lfr;          // Theta_r (#1, before upscaling)
  Enhancer enh_hfr;          // Theta_r (#2, after upscaling)
  CompressionEncoder comp_enc;  // frozen after ranker pretraining
  Ranker ranker;             // used only to pretrain comp_enc
  SurrogateCodec surrogate;  // Theta_c

  static TvrnModel make(uint64_t seed);

  void sharp_params(std::vector<Tensor*>& out);    // wavelet + couplings
  void upscale_params(std::vector<Tensor*>& out);  // Theta_z and Theta_r
  void all_trainable(std::vector<Tensor*>& out);   // sharp + z + r (not c, not encoder)

  void save(const std::string& path) const;
  void load(const std::string& path);
};

struct DownscaleResult {
  std::vector<Tensor> low;   // y frames (ceil(N/2))
  std::vector<Tensor> high;  // z frames (floor(N/2))
};

DownscaleResult downscale(Tape* tape, const VideoClip& clip, const TvrnModel& model);

struct UpscaleOptions {
  bool enhance_lfr = true;
  bool enhance_hfr = true;
  // When set, the true high-frequency component bypasses HF reconstruction
  // (lossless-path testing).
  const std::vector<Tensor>* true_high = nullptr;
};

std::vector<Tensor> upscale(Tape* tape, const std::vector<Tensor>& low_frames,
                            const TvrnModel& model, const UpscaleOptions& opts = {});

// L_basic = l1(x, x_recon) + lambda * guidance(y, x_e); guidance is l1 by
// default, l2 behind the flag (the two appear in different places in the
// source material).
Tensor basic_loss(const std::vector<Tensor>& x, const std::vector<Tensor>& x_recon,
                  const std::vector<Tensor>& y, const std::vector<Tensor>& x_even, double lambda,
                  bool l2_guidance = false);

struct TrainConfig {
  double lambda = 10.0;
  double lr_main = 1e-4;    // eta_1
  double lr_surrogate = 1e-4;  // eta_2
  int lr_halve_every = 10000;
  std::vector<int> qps = {17, 22, 27};
  int steps = 500;
  int batch = 2;
  double gamma = 1.0;
  uint64_t seed = 0;
  double grad_noise_alpha = 0.0;  // degradation-study knob
  bool l2_guidance = false;
};

struct TrainCurves {
  std::vector<double> basic_loss;
  std::vector<double> surrogate_loss;
  std::vector<double> val_psnr;  // sampled every ~50 steps
};

TrainCurves alternate_train(TvrnModel& model, const std::vector<VideoClip>& train_clips,
                            const std::vector<VideoClip>& val_clips, const TrainConfig& config);

// Codec-in-the-loop inference: downscale, encode at qp, upscale.
struct RescaleRun {
  VideoClip reconstruction;
  double bpp = 0.0;
};

RescaleRun rescale_through_codec(const VideoClip& clip, const TvrnModel& model, int qp);

// Frame-skip baselines: even frames coded, odd frames interpolated.
enum class BaselineKind { Average, FlowWarp };
RescaleRun frame_skip_baseline(const VideoClip& clip, int qp, BaselineKind kind);

struct RdCurve {
  std::string label;
  std::vector<RdPoint> points;
};

// RD sweep over QPs, averaged across clips.
RdCurve rd_sweep(const std::vector<VideoClip>& clips, const TvrnModel& model,
                 const std::vector<int>& qps);
RdCurve rd_sweep_baseline(const std::vector<VideoClip>& clips, BaselineKind kind,
                          const std::vector<int>& qps);

}  // namespace tvr
