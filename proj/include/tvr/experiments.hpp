#pragma once

#include <string>
#include <vector>

#include "tvr/pipeline.hpp"

namespace tvr {

// One (output-discrepancy, gradient-error) sample from the bound experiment.
struct GradBoundSample {
  double d_hat;
  double delta_g;
};

struct GradBoundReport {
  std::vector<GradBoundSample> samples;
  std::vector<double> bin_centers;     // 16 bins over d_hat
  std::vector<double> bin_q95;         // 95th percentile of delta_g per bin
  double envelope_a = 0.0;             // delta_g <= a * d_hat + b
  double envelope_b = 0.0;
  double coverage = 0.0;               // fraction of samples under the line
  double median_delta_g = 0.0;
  double epsilon = 0.0;
  int directions = 0;
};

// Scalar functional J = mean pixel of the output clip; the codec side is
// probed with central differences along K random unit directions, the
// surrogate side with a tape directional derivative. Codec evaluation never
// touches a tape (the codec rejects tracked inputs).
GradBoundReport grad_bound_experiment(const SurrogateCodec& surrogate,
                                      const std::vector<VideoClip>& clips, int qp, double eps,
                                      int directions, uint64_t seed);

struct GradNoiseResult {
  double alpha;
  double bd_rate_vs_clean;  // positive means worse than the alpha=0 run
  double avg_psnr;
  RdCurve curve;
};

// Retrains the model per alpha with perturbed surrogate gradients, then
// evaluates RD against the alpha=0 run.
std::vector<GradNoiseResult> grad_noise_experiment(const std::vector<double>& alphas,
                                                   const std::vector<VideoClip>& train_clips,
                                                   const std::vector<VideoClip>& eval_clips,
                                                   TrainConfig config,
                                                   const std::vector<int>& eval_qps,
                                                   const TvrnModel* init = nullptr);

struct FreqMethodReport {
  std::string method;
  double rho_ovl;  // percent vs frame-skip reference
};

// Spectrum comparison of LFR frames (original subtracted) between frame-skip
// and TVRN downscaling at one QP.
std::vector<FreqMethodReport> freq_analysis(const std::vector<VideoClip>& clips,
                                            const TvrnModel& model, int qp);

// Per-frame spectrum histogram of (lfr - original_even) differences.
Histogram lfr_spectrum_histogram(const std::vector<Tensor>& lfr_frames,
                                 const std::vector<Tensor>& original_even, double lo, double hi);

}  // namespace tvr
