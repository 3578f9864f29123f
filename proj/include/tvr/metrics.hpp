#pragma once

#include <functional>
#include <vector>

#include "tvr/video.hpp"

namespace tvr {

inline constexpr double kPsnrCap = 99.0;  // stands in for +inf on zero MSE

struct RdPoint {
  double bpp = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

enum class PsnrMode { AvgLog, AvgMse };

double psnr(const VideoClip& a, const VideoClip& b, PsnrMode mode = PsnrMode::AvgLog);
double psnr_frame(const Tensor& a, const Tensor& b);
double sigma_psnr(const VideoClip& a, const VideoClip& b);
double ssim(const VideoClip& a, const VideoClip& b);
double ssim_frame(const Tensor& a, const Tensor& b);

// log(1 + |FFTshift(FFT2(frame))|) of a [1,H,W] or [H,W] frame.
Tensor log_magnitude_spectrum(const Tensor& frame);

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<double> counts;
};

Histogram histogram(const Tensor& values, int bins, double lo, double hi);

// 100 * area(min(test, ref)) / area(ref); both histograms must share binning.
double overlap_ratio(const Histogram& test, const Histogram& ref);

struct SpectrumReport {
  Tensor spectrum;       // log-magnitude spectrum
  Histogram hist;        // 64 bins over pooled range
  double rho_ovl = 0.0;  // percent vs reference
};

// Bidirectional flow estimator signature: (I0, I1) -> flow I0->I1.
using FlowFn = std::function<Tensor(const Tensor&, const Tensor&)>;

double tof(const VideoClip& recon, const VideoClip& gt, const FlowFn& flow_fn);
double warp_psnr(const VideoClip& clip, const FlowFn& flow_fn);

// Bjontegaard delta rate of curve_b vs curve_a (negative: b saves bits).
double bd_rate(const std::vector<RdPoint>& curve_a, const std::vector<RdPoint>& curve_b);

}  // namespace tvr
