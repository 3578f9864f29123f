#include "tvr/pipeline.hpp"

#include <cmath>
#include <fstream>

#include "tvr/codec.hpp"
#include "tvr/serialize.hpp"

namespace tvr {

TvrnModel TvrnModel::make(uint64_t seed) {
  Rng rng(seed);
  TvrnModel m;
  int n_even = (kGroupSize + 1) / 2;  // 4
  int n_odd = kGroupSize / 2;         // 3
  m.predictor = ConvFrameMap::make(n_even, n_odd, 16, rng, /*average_base=*/true);
  m.updater = ConvFrameMap::make(n_odd, n_even, 16, rng, /*average_base=*/false);
  m.couplings = CouplingStack::make(3, n_even, n_odd, 16, rng, /*with_qp=*/false);
  m.hf = HfReconstructor::make(rng);
  m.enh_lfr = Enhancer::make(rng);
  m.enh_hfr = Enhancer::make(rng);
  m.comp_enc = CompressionEncoder::make(rng);
  m.ranker = Ranker::make(rng);
  m.surrogate = SurrogateCodec::make(rng);
  return m;
}

void TvrnModel::sharp_params(std::vector<Tensor*>& out) {
  predictor.params(out);
  updater.params(out);
  couplings.params(out);
}

void TvrnModel::upscale_params(std::vector<Tensor*>& out) {
  hf.params(out);
  enh_lfr.params(out);
  enh_hfr.params(out);
}

void TvrnModel::all_trainable(std::vector<Tensor*>& out) {
  sharp_params(out);
  upscale_params(out);
}

void TvrnModel::save(const std::string& path) const {
  TvrnModel& self = const_cast<TvrnModel&>(*this);
  std::vector<Tensor*> ps;
  self.sharp_params(ps);
  self.upscale_params(ps);
  self.comp_enc.params(ps);
  self.ranker.params(ps);
  self.surrogate.params(ps);
  std::vector<const Tensor*> cps(ps.begin(), ps.end());
  save_tensors(path, cps);
}

void TvrnModel::load(const std::string& path) {
  std::vector<Tensor*> ps;
  sharp_params(ps);
  upscale_params(ps);
  comp_enc.params(ps);
  ranker.params(ps);
  surrogate.params(ps);
  load_tensors_into(path, ps);
}

DownscaleResult downscale(Tape* tape, const VideoClip& clip, const TvrnModel& model) {
  if (clip.frame_count() < 2) fail(ErrorKind::InvalidLength, "downscale: need >= 2 frames");
  if (clip.height % 16 != 0 || clip.width % 16 != 0)
    fail(ErrorKind::InvalidGeometry, "downscale: geometry must be divisible by 16");
  FrequencyPair pair = mimo_twt_forward(tape, clip, model.predictor, model.updater);
  Tensor low = concat_ch(pair.low);
  Tensor high = concat_ch(pair.high);
  auto [y, z] = model.couplings.forward(tape, low, high);
  DownscaleResult out;
  for (int i = 0; i < y.dim(0); ++i) out.low.push_back(slice_ch(y, i, i + 1));
  for (int i = 0; i < z.dim(0); ++i) out.high.push_back(slice_ch(z, i, i + 1));
  return out;
}

std::vector<Tensor> upscale(Tape* tape, const std::vector<Tensor>& low_frames,
                            const TvrnModel& model, const UpscaleOptions& opts) {
  if (low_frames.size() != static_cast<size_t>((kGroupSize + 1) / 2))
    fail(ErrorKind::InvalidLength, "upscale: expected ceil(N/2) low-frequency frames");

  // enhancement #1 on the compressed LFR frames
  std::vector<Tensor> base = low_frames;
  if (opts.enhance_lfr) {
    std::vector<Tensor> enhanced;
    for (size_t i = 0; i < base.size(); ++i)
      enhanced.push_back(model.enh_lfr.enhance_frame(tape, base, static_cast<int>(i), model.comp_enc));
    base = std::move(enhanced);
  }

  // high-frequency reconstruction per interpolated position (t = 1/2 between
  // each adjacent LFR pair)
  std::vector<Tensor> high;
  if (opts.true_high) {
    high = *opts.true_high;
  } else {
    for (size_t k = 0; k + 1 < base.size(); ++k)
      high.push_back(model.hf.synthesize(tape, base[k], base[k + 1], 0.5));
  }

  auto [low_rec, high_rec] =
      model.couplings.inverse(tape, concat_ch(base), concat_ch(high));
  FrequencyPair pair;
  for (int i = 0; i < low_rec.dim(0); ++i) pair.low.push_back(slice_ch(low_rec, i, i + 1));
  for (int i = 0; i < high_rec.dim(0); ++i) pair.high.push_back(slice_ch(high_rec, i, i + 1));
  VideoClip recon = mimo_twt_inverse(tape, pair, model.predictor, model.updater);

  std::vector<Tensor> frames = recon.frames;
  if (opts.enhance_hfr) {
    std::vector<Tensor> enhanced;
    for (size_t i = 0; i < frames.size(); ++i)
      enhanced.push_back(model.enh_hfr.enhance_frame(tape, frames, static_cast<int>(i), model.comp_enc));
    frames = std::move(enhanced);
  }
  return frames;
}

Tensor basic_loss(const std::vector<Tensor>& x, const std::vector<Tensor>& x_recon,
                  const std::vector<Tensor>& y, const std::vector<Tensor>& x_even, double lambda,
                  bool l2_guidance) {
  if (x.size() != x_recon.size() || y.size() != x_even.size())
    fail(ErrorKind::InvalidShape, "basic_loss: frame count mismatch");
  Tensor recon_term;
  for (size_t t = 0; t < x.size(); ++t) {
    Tensor term = l1(x[t], x_recon[t]);
    recon_term = t == 0 ? term : add(recon_term, term);
  }
  recon_term = mul_scalar(recon_term, 1.0 / static_cast<double>(x.size()));
  Tensor guide_term;
  for (size_t t = 0; t < y.size(); ++t) {
    Tensor term = l2_guidance ? l2(y[t], x_even[t]) : l1(y[t], x_even[t]);
    guide_term = t == 0 ? term : add(guide_term, term);
  }
  guide_term = mul_scalar(guide_term, lambda / static_cast<double>(y.size()));
  return add(recon_term, guide_term);
}

namespace {

VideoClip detach_frames(const std::vector<Tensor>& frames) {
  std::vector<Tensor> copy;
  copy.reserve(frames.size());
  for (const Tensor& f : frames) copy.push_back(Tensor(f.shape(), f.values()));
  return clip_from_frames(std::move(copy));
}

double eval_model_psnr(const TvrnModel& model, const std::vector<VideoClip>& clips, int qp) {
  double acc = 0.0;
  for (const VideoClip& clip : clips) {
    RescaleRun run = rescale_through_codec(clip, model, qp);
    acc += psnr(run.reconstruction, clip);
  }
  return acc / static_cast<double>(clips.size());
}

}  // namespace

TrainCurves alternate_train(TvrnModel& model, const std::vector<VideoClip>& train_clips,
                            const std::vector<VideoClip>& val_clips, const TrainConfig& config) {
  if (train_clips.empty()) fail(ErrorKind::InvalidDataset, "alternate_train: no training clips");
  Rng rng(config.seed);
  Rng noise_rng(config.seed ^ 0xabcdef12345ull);

  std::vector<Tensor*> main_ps;
  model.all_trainable(main_ps);
  Adam main_opt(main_ps, config.lr_main);
  std::vector<Tensor*> surr_ps;
  model.surrogate.params(surr_ps);
  Adam surr_opt(surr_ps, config.lr_surrogate);

  TrainCurves curves;
  for (int step = 0; step < config.steps; ++step) {
    double decay = std::pow(0.5, step / std::max(1, config.lr_halve_every));
    main_opt.set_lr(config.lr_main * decay);
    surr_opt.set_lr(config.lr_surrogate * decay);
    int qp = config.qps[static_cast<size_t>(rng.uniform_int(static_cast<int>(config.qps.size())))];

    // ---- phase A: update Theta_sharp, Theta_z, Theta_r; surrogate frozen ----
    Tape tape;
    Tensor loss_a;
    std::vector<VideoClip> batch_clips;
    for (int b = 0; b < config.batch; ++b) {
      const VideoClip& clip =
          train_clips[static_cast<size_t>(rng.uniform_int(static_cast<int>(train_clips.size())))];
      DownscaleResult down = downscale(&tape, clip, model);

      // codec runs off-tape on the downscaled values
      VideoClip y_clip = detach_frames(down.low);
      CodedClip coded = encode(y_clip, qp);

      // surrogate forward on the tape, then the value reassignment
      std::vector<Tensor> y_hat = model.surrogate.run_clip(&tape, down.low, coded.metadata);
      for (size_t t = 0; t < y_hat.size(); ++t)
        y_hat[t].assign_values(coded.reconstruction.frames[t]);
      if (config.grad_noise_alpha > 0.0)
        for (Tensor& f : y_hat) f = grad_noise(f, config.grad_noise_alpha, &noise_rng);

      std::vector<Tensor> x_recon = upscale(&tape, y_hat, model);
      auto [even, odd] = split_even_odd(clip);
      (void)odd;
      Tensor term = basic_loss(clip.frames, x_recon, down.low, even.frames, config.lambda,
                               config.l2_guidance);
      loss_a = b == 0 ? term : add(loss_a, term);
      batch_clips.push_back(y_clip);
    }
    loss_a = mul_scalar(loss_a, 1.0 / config.batch);
    double la = loss_a.item();
    if (!std::isfinite(la)) fail(ErrorKind::Training, "alternate_train: basic loss diverged");
    curves.basic_loss.push_back(la);
    tape.backward(loss_a);
    main_opt.step(tape);

    // ---- phase B: update Theta_c on the surrogate loss; main frozen ----
    Tape tape_b;
    Tensor loss_b;
    for (size_t b = 0; b < batch_clips.size(); ++b) {
      CodedClip coded = encode(batch_clips[b], qp);
      std::vector<Tensor> est = model.surrogate.run_clip(&tape_b, batch_clips[b].frames, coded.metadata);
      Tensor term;
      for (size_t t = 0; t < est.size(); ++t) {
        Tensor fterm = l1(est[t], coded.reconstruction.frames[t]);
        term = t == 0 ? fterm : add(term, fterm);
      }
      term = mul_scalar(term, 1.0 / static_cast<double>(est.size()));
      loss_b = b == 0 ? term : add(loss_b, term);
    }
    loss_b = mul_scalar(loss_b, 1.0 / static_cast<double>(batch_clips.size()));
    double lb = loss_b.item();
    if (!std::isfinite(lb)) fail(ErrorKind::Training, "alternate_train: surrogate loss diverged");
    curves.surrogate_loss.push_back(lb);
    tape_b.backward(loss_b);
    surr_opt.step(tape_b);

    if (!val_clips.empty() && (step % 50 == 49 || step + 1 == config.steps))
      curves.val_psnr.push_back(eval_model_psnr(model, val_clips, config.qps[config.qps.size() / 2]));
  }
  return curves;
}

RescaleRun rescale_through_codec(const VideoClip& clip, const TvrnModel& model, int qp) {
  DownscaleResult down = downscale(nullptr, clip, model);
  VideoClip y_clip = detach_frames(down.low);
  CodedClip coded = encode(y_clip, qp);
  std::vector<Tensor> recon = upscale(nullptr, coded.reconstruction.frames, model);
  RescaleRun run;
  run.reconstruction = detach_frames(recon);
  for (Tensor& f : run.reconstruction.frames)
    f = clamp(f, 0.0, 1.0);
  run.bpp = static_cast<double>(coded.metadata.bits) /
            (static_cast<double>(clip.frame_count()) * clip.height * clip.width);
  return run;
}

RescaleRun frame_skip_baseline(const VideoClip& clip, int qp, BaselineKind kind) {
  auto [even, odd] = split_even_odd(clip);
  CodedClip coded = encode(even, qp);
  const std::vector<Tensor>& ref = coded.reconstruction.frames;
  std::vector<Tensor> frames;
  for (size_t k = 0; k < ref.size(); ++k) {
    frames.push_back(ref[k]);
    if (k + 1 < ref.size()) {
      if (kind == BaselineKind::Average) {
        frames.push_back(mul_scalar(add(ref[k], ref[k + 1]), 0.5));
      } else {
        // flow-guided interpolation at t = 1/2 with hole fallback to average
        auto [f01, f10] = block_flow(ref[k], ref[k + 1]);
        auto [f0t, f1t] = scale_flow(f01, f10, 0.5);
        Tensor h0, h1;
        Tensor w0 = forward_warp(ref[k], f0t, &h0);
        Tensor w1 = forward_warp(ref[k + 1], f1t, &h1);
        Tensor avg = mul_scalar(add(ref[k], ref[k + 1]), 0.5);
        Tensor mid(w0.shape());
        for (int64_t i = 0; i < mid.size(); ++i) {
          bool hole0 = h0[i] > 0.5f, hole1 = h1[i] > 0.5f;
          if (!hole0 && !hole1)
            mid[i] = 0.5f * (w0[i] + w1[i]);
          else if (!hole0)
            mid[i] = w0[i];
          else if (!hole1)
            mid[i] = w1[i];
          else
            mid[i] = avg[i];
        }
        frames.push_back(std::move(mid));
      }
    }
  }
  RescaleRun run;
  run.reconstruction = clip_from_frames(std::move(frames));
  run.bpp = static_cast<double>(coded.metadata.bits) /
            (static_cast<double>(clip.frame_count()) * clip.height * clip.width);
  return run;
}

namespace {

RdCurve sweep_impl(const std::vector<VideoClip>& clips, const std::vector<int>& qps,
                   const std::function<RescaleRun(const VideoClip&, int)>& runner,
                   std::string label) {
  RdCurve curve;
  curve.label = std::move(label);
  for (int qp : qps) {
    RdPoint point;
    for (const VideoClip& clip : clips) {
      RescaleRun run = runner(clip, qp);
      point.bpp += run.bpp;
      point.psnr += psnr(run.reconstruction, clip);
      point.ssim += ssim(run.reconstruction, clip);
    }
    double n = static_cast<double>(clips.size());
    point.bpp /= n;
    point.psnr /= n;
    point.ssim /= n;
    curve.points.push_back(point);
  }
  return curve;
}

}  // namespace

RdCurve rd_sweep(const std::vector<VideoClip>& clips, const TvrnModel& model,
                 const std::vector<int>& qps) {
  return sweep_impl(
      clips, qps,
      [&](const VideoClip& clip, int qp) { return rescale_through_codec(clip, model, qp); },
      "tvrn");
}

RdCurve rd_sweep_baseline(const std::vector<VideoClip>& clips, BaselineKind kind,
                          const std::vector<int>& qps) {
  return sweep_impl(
      clips, qps,
      [&](const VideoClip& clip, int qp) { return frame_skip_baseline(clip, qp, kind); },
      kind == BaselineKind::Average ? "frame-skip-avg" : "frame-skip-flow");
}

}  // namespace tvr
