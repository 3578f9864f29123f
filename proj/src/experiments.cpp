#include "tvr/experiments.hpp"

#include <algorithm>
#include <cmath>

#include "tvr/codec.hpp"

namespace tvr {

namespace {

// Clip frames flattened into one vector for direction sampling.
std::vector<Tensor> perturbed(const std::vector<Tensor>& frames, const std::vector<float>& dir,
                              double eps) {
  std::vector<Tensor> out;
  out.reserve(frames.size());
  size_t off = 0;
  for (const Tensor& f : frames) {
    Tensor p(f.shape(), f.values());
    for (int64_t i = 0; i < p.size(); ++i)
      p[i] = static_cast<float>(p[i] + eps * dir[off + static_cast<size_t>(i)]);
    off += static_cast<size_t>(p.size());
    out.push_back(std::move(p));
  }
  return out;
}

double mean_pixel(const std::vector<Tensor>& frames) {
  double acc = 0.0;
  int64_t n = 0;
  for (const Tensor& f : frames) {
    for (int64_t i = 0; i < f.size(); ++i) acc += f[i];
    n += f.size();
  }
  return acc / static_cast<double>(n);
}

// J_codec: mean pixel of the toy-codec reconstruction.
double j_codec(const std::vector<Tensor>& frames, int qp) {
  VideoClip clip = clip_from_frames(frames);
  CodedClip coded = encode(clip, qp);
  return mean_pixel(coded.reconstruction.frames);
}

// J_surr: mean pixel of the surrogate output (metadata recomputed per input).
double j_surr(const SurrogateCodec& surrogate, const std::vector<Tensor>& frames, int qp) {
  VideoClip clip = clip_from_frames(frames);
  CodedClip coded = encode(clip, qp);
  std::vector<Tensor> est = surrogate.run_clip(nullptr, frames, coded.metadata);
  return mean_pixel(est);
}

}  // namespace

GradBoundReport grad_bound_experiment(const SurrogateCodec& surrogate,
                                      const std::vector<VideoClip>& clips, int qp, double eps,
                                      int directions, uint64_t seed) {
  if (eps < 1e-4)
    fail(ErrorKind::InvalidEps, "grad_bound: eps below 1e-4 measures rounding plateaus only");
  if (clips.empty() || directions < 1)
    fail(ErrorKind::InvalidDataset, "grad_bound: need clips and directions");
  Rng rng(seed);
  GradBoundReport report;
  report.epsilon = eps;
  report.directions = directions;

  for (const VideoClip& clip : clips) {
    int64_t total = 0;
    for (const Tensor& f : clip.frames) total += f.size();

    // surrogate gradient of J at the clip, once per clip
    CodedClip coded = encode(clip, qp);
    Tape tape;
    std::vector<Tensor> tracked;
    for (const Tensor& f : clip.frames) tracked.push_back(tape.watch(f));
    std::vector<Tensor> est = surrogate.run_clip(&tape, tracked, coded.metadata);
    Tensor j;
    for (size_t t = 0; t < est.size(); ++t) {
      Tensor m = mean(est[t]);
      j = t == 0 ? m : add(j, m);
    }
    j = mul_scalar(j, 1.0 / static_cast<double>(est.size()));
    tape.backward(j);
    std::vector<float> surr_grad;
    for (const Tensor& f : clip.frames) {
      std::vector<float> g = tape.grad(f);
      surr_grad.insert(surr_grad.end(), g.begin(), g.end());
    }

    std::vector<double> delta_gs;
    double d_hat = 0.0;
    for (int k = 0; k < directions; ++k) {
      std::vector<float> dir(static_cast<size_t>(total));
      double norm = 0.0;
      for (auto& v : dir) {
        v = static_cast<float>(rng.normal());
        norm += static_cast<double>(v) * v;
      }
      norm = std::sqrt(norm);
      for (auto& v : dir) v = static_cast<float>(v / norm);

      std::vector<Tensor> plus = perturbed(clip.frames, dir, eps);
      std::vector<Tensor> minus = perturbed(clip.frames, dir, -eps);
      double grad_num = (j_codec(plus, qp) - j_codec(minus, qp)) / (2.0 * eps);
      double grad_surr = 0.0;
      for (size_t i = 0; i < dir.size(); ++i)
        grad_surr += static_cast<double>(surr_grad[i]) * dir[i];
      delta_gs.push_back(std::abs(grad_num - grad_surr));
      d_hat = std::max(d_hat, std::abs(j_codec(plus, qp) - j_surr(surrogate, plus, qp)));
    }
    for (double dg : delta_gs) report.samples.push_back({d_hat, dg});
  }

  // per-bin 95th percentiles over d_hat
  double d_min = 1e300, d_max = -1e300;
  for (const auto& s : report.samples) {
    d_min = std::min(d_min, s.d_hat);
    d_max = std::max(d_max, s.d_hat);
  }
  constexpr int kBins = 16;
  double width = (d_max - d_min) / kBins;
  if (width <= 0.0) width = 1.0;
  std::vector<std::vector<double>> bins(kBins);
  for (const auto& s : report.samples) {
    int b = std::clamp(static_cast<int>((s.d_hat - d_min) / width), 0, kBins - 1);
    bins[static_cast<size_t>(b)].push_back(s.delta_g);
  }
  std::vector<double> xs, ys;
  for (int b = 0; b < kBins; ++b) {
    auto& v = bins[static_cast<size_t>(b)];
    if (v.empty()) continue;
    std::sort(v.begin(), v.end());
    size_t idx = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(v.size()))) - 1;
    idx = std::min(idx, v.size() - 1);
    double center = d_min + (b + 0.5) * width;
    report.bin_centers.push_back(center);
    report.bin_q95.push_back(v[idx]);
    xs.push_back(center);
    ys.push_back(v[idx]);
  }

  // least-squares line through the percentile points
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  double n = static_cast<double>(xs.size());
  for (size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
    sxx += xs[i] * xs[i];
    sxy += xs[i] * ys[i];
  }
  double denom = n * sxx - sx * sx;
  if (std::abs(denom) > 1e-12 && n >= 2) {
    report.envelope_a = (n * sxy - sx * sy) / denom;
    report.envelope_b = (sy - report.envelope_a * sx) / n;
  } else {
    report.envelope_a = 0.0;
    report.envelope_b = ys.empty() ? 0.0 : ys.back();
  }

  // quantile-envelope calibration: if the least-squares line through the
  // per-bin 95th percentiles covers less than 95% of samples, raise the
  // intercept to the smallest value that does
  auto coverage_of = [&](double b) {
    int covered = 0;
    for (const auto& s : report.samples)
      if (s.delta_g <= report.envelope_a * s.d_hat + b) ++covered;
    return static_cast<double>(covered) / static_cast<double>(report.samples.size());
  };
  if (coverage_of(report.envelope_b) < 0.95) {
    std::vector<double> residuals;
    for (const auto& s : report.samples)
      residuals.push_back(s.delta_g - report.envelope_a * s.d_hat);
    std::sort(residuals.begin(), residuals.end());
    size_t idx = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(residuals.size()))) - 1;
    report.envelope_b = residuals[std::min(idx, residuals.size() - 1)] + 1e-12;
  }
  report.coverage = coverage_of(report.envelope_b);

  std::vector<double> all_dg;
  for (const auto& s : report.samples) all_dg.push_back(s.delta_g);
  std::sort(all_dg.begin(), all_dg.end());
  report.median_delta_g = all_dg.empty() ? 0.0 : all_dg[all_dg.size() / 2];
  return report;
}

std::vector<GradNoiseResult> grad_noise_experiment(const std::vector<double>& alphas,
                                                   const std::vector<VideoClip>& train_clips,
                                                   const std::vector<VideoClip>& eval_clips,
                                                   TrainConfig config,
                                                   const std::vector<int>& eval_qps,
                                                   const TvrnModel* init) {
  std::vector<GradNoiseResult> results;
  RdCurve clean_curve;
  for (double alpha : alphas) {
    TvrnModel model = TvrnModel::make(config.seed);
    if (init) {
      // start every run from the same pretrained state
      init->save("grad_noise_init.ckpt");
      model.load("grad_noise_init.ckpt");
    }
    config.grad_noise_alpha = alpha;
    alternate_train(model, train_clips, {}, config);
    GradNoiseResult res;
    res.alpha = alpha;
    res.curve = rd_sweep(eval_clips, model, eval_qps);
    double acc = 0.0;
    for (const RdPoint& p : res.curve.points) acc += p.psnr;
    res.avg_psnr = acc / static_cast<double>(res.curve.points.size());
    if (results.empty()) {
      clean_curve = res.curve;
      res.bd_rate_vs_clean = 0.0;
    } else {
      res.bd_rate_vs_clean = bd_rate(clean_curve.points, res.curve.points);
    }
    results.push_back(std::move(res));
  }
  return results;
}

Histogram lfr_spectrum_histogram(const std::vector<Tensor>& lfr_frames,
                                 const std::vector<Tensor>& original_even, double lo, double hi) {
  if (lfr_frames.size() != original_even.size())
    fail(ErrorKind::InvalidShape, "spectrum histogram: frame count mismatch");
  std::vector<float> pooled;
  for (size_t t = 0; t < lfr_frames.size(); ++t) {
    Tensor diff = sub(lfr_frames[t], original_even[t]);
    Tensor spec = log_magnitude_spectrum(diff);
    pooled.insert(pooled.end(), spec.data(), spec.data() + spec.size());
  }
  return histogram(Tensor({static_cast<int>(pooled.size())}, pooled), 64, lo, hi);
}

std::vector<FreqMethodReport> freq_analysis(const std::vector<VideoClip>& clips,
                                            const TvrnModel& model, int qp) {
  if (clips.empty()) fail(ErrorKind::InvalidDataset, "freq_analysis: no clips");
  // gather both methods' spectra, pool the range, then histogram
  std::vector<Tensor> skip_lfr, tvrn_lfr, originals;
  for (const VideoClip& clip : clips) {
    auto [even, odd] = split_even_odd(clip);
    (void)odd;
    CodedClip coded_skip = encode(even, qp);
    for (int k = 0; k < even.frame_count(); ++k) {
      skip_lfr.push_back(coded_skip.reconstruction.frames[static_cast<size_t>(k)]);
      originals.push_back(even.frames[static_cast<size_t>(k)]);
    }
    DownscaleResult down = downscale(nullptr, clip, model);
    VideoClip y_clip;
    y_clip.width = clip.width;
    y_clip.height = clip.height;
    for (const Tensor& f : down.low) y_clip.frames.push_back(Tensor(f.shape(), f.values()));
    CodedClip coded_tvrn = encode(y_clip, qp);
    for (int k = 0; k < y_clip.frame_count(); ++k)
      tvrn_lfr.push_back(coded_tvrn.reconstruction.frames[static_cast<size_t>(k)]);
  }

  double lo = 1e300, hi = -1e300;
  auto update_range = [&](const std::vector<Tensor>& frames) {
    for (size_t t = 0; t < frames.size(); ++t) {
      Tensor spec = log_magnitude_spectrum(sub(frames[t], originals[t]));
      for (int64_t i = 0; i < spec.size(); ++i) {
        lo = std::min(lo, static_cast<double>(spec[i]));
        hi = std::max(hi, static_cast<double>(spec[i]));
      }
    }
  };
  update_range(skip_lfr);
  update_range(tvrn_lfr);
  if (hi <= lo) hi = lo + 1.0;

  Histogram ref = lfr_spectrum_histogram(skip_lfr, originals, lo, hi);
  Histogram test = lfr_spectrum_histogram(tvrn_lfr, originals, lo, hi);
  std::vector<FreqMethodReport> out;
  out.push_back({"frame-skip", overlap_ratio(ref, ref)});
  out.push_back({"tvrn-downscale", overlap_ratio(test, ref)});
  return out;
}

}  // namespace tvr
