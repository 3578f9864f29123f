#include "tvr/surrogate.hpp"

#include <cmath>

#include "tvr/flow.hpp"
#include "tvr/metrics.hpp"
#include "tvr/wavelet.hpp"

namespace tvr {

SurrogateCodec SurrogateCodec::make(Rng& rng) {
  SurrogateCodec s;
  s.qcouplings = CouplingStack::make(3, 1, 1, 16, rng, /*with_qp=*/true);
  s.collapse = TransformNet::make(1, 1, 16, rng, /*with_qp=*/true);
  s.intra = TransformNet::make(1, 1, 16, rng, /*with_qp=*/true);
  return s;
}

Tensor SurrogateCodec::intra_frame(Tape* tape, const Tensor& y0, int qp) const {
  // residual form: zero-initialized net starts as the identity
  return add(y0, intra(tape, y0, qp_norm(qp)));
}

Tensor SurrogateCodec::step(Tape* tape, const Tensor& prev_degraded, const Tensor& y_t,
                            const Tensor& flow_fwd, const Tensor& flow_bwd, int qp) const {
  auto [y_l_init, y_h_init] = haar_mv_forward(tape, prev_degraded, y_t, flow_fwd, flow_bwd);
  auto [y_l, y_h] = qcouplings.forward(tape, y_l_init, y_h_init, qp_norm(qp));
  Tensor y_l_deg = y_l;
  Tensor y_h_deg = y_h;
  if (degrade) {
    if (quantize_low) y_l_deg = quantize8_ste(y_l);
    y_h_deg = add(y_h, collapse(tape, y_h, qp_norm(qp)));
  }
  auto [y_l_rec, y_h_rec] = qcouplings.inverse(tape, y_l_deg, y_h_deg, qp_norm(qp));
  (void)y_l_rec;  // the recurrent path owns the previous degraded frame
  return haar_mv_reconstruct(tape, prev_degraded, y_h_rec, flow_fwd);
}

std::vector<Tensor> SurrogateCodec::run_clip(Tape* tape, const std::vector<Tensor>& y,
                                             const CodecMetadata& meta) const {
  if (y.empty()) fail(ErrorKind::InvalidLength, "surrogate: empty clip");
  if (meta.mv.size() + 1 < y.size())
    fail(ErrorKind::InvalidMetadata, "surrogate: metadata does not cover the clip");
  int h = y[0].dim(1), w = y[0].dim(2);
  std::vector<Tensor> out;
  out.reserve(y.size());
  out.push_back(degrade ? intra_frame(tape, y[0], meta.qp) : y[0]);
  for (size_t t = 1; t < y.size(); ++t) {
    Tensor flow_fwd = mv_to_flow(meta.mv[t - 1], h, w);
    Tensor flow_bwd = mv_to_flow(negate_mv(meta.mv[t - 1]), h, w);
    out.push_back(step(tape, out.back(), y[t], flow_fwd, flow_bwd, meta.qp));
  }
  return out;
}

void SurrogateCodec::params(std::vector<Tensor*>& out) {
  qcouplings.params(out);
  collapse.params(out);
  intra.params(out);
}

void SurrogateCodec::set_qp_enabled(bool enabled) {
  qcouplings.set_qp_enabled(enabled);
  collapse.qp_enabled = enabled;
  intra.qp_enabled = enabled;
}

namespace {

VideoClip tensors_to_clip(const std::vector<Tensor>& frames) {
  std::vector<Tensor> copy;
  copy.reserve(frames.size());
  for (const Tensor& f : frames) copy.push_back(f.detached());
  return clip_from_frames(std::move(copy));
}

}  // namespace

std::vector<SurrogateFidelity> surrogate_fidelity(const SurrogateCodec& model,
                                                  const std::vector<VideoClip>& clips,
                                                  const std::vector<int>& qps) {
  std::vector<SurrogateFidelity> report;
  for (int qp : qps) {
    double sim = 0.0, base = 0.0;
    for (const VideoClip& clip : clips) {
      CodedClip coded = encode(clip, qp);
      std::vector<Tensor> est = model.run_clip(nullptr, clip.frames, coded.metadata);
      VideoClip est_clip = tensors_to_clip(est);
      sim += psnr(est_clip, coded.reconstruction);
      base += psnr(clip, coded.reconstruction);
    }
    report.push_back({qp, sim / static_cast<double>(clips.size()),
                      base / static_cast<double>(clips.size())});
  }
  return report;
}

SurrogateTrainReport train_surrogate(SurrogateCodec& model, const std::vector<VideoClip>& clips,
                                     const std::vector<int>& qps, int steps, double lr,
                                     uint64_t seed, const std::vector<VideoClip>* eval_clips) {
  if (clips.empty() || qps.empty())
    fail(ErrorKind::InvalidDataset, "train_surrogate: empty dataset or qp set");
  Rng rng(seed);
  std::vector<Tensor*> ps;
  model.params(ps);
  Adam opt(ps, lr);
  SurrogateTrainReport report;
  for (int step = 0; step < steps; ++step) {
    const VideoClip& clip = clips[static_cast<size_t>(rng.uniform_int(static_cast<int>(clips.size())))];
    int qp = qps[static_cast<size_t>(rng.uniform_int(static_cast<int>(qps.size())))];
    CodedClip coded = encode(clip, qp);
    Tape tape;
    std::vector<Tensor> est = model.run_clip(&tape, clip.frames, coded.metadata);
    Tensor loss = Tensor::scalar(0.0);
    bool first = true;
    for (size_t t = 0; t < est.size(); ++t) {
      Tensor term = l1(est[t], coded.reconstruction.frames[t]);
      loss = first ? term : add(loss, term);
      first = false;
    }
    loss = mul_scalar(loss, 1.0 / static_cast<double>(est.size()));
    double lv = loss.item();
    if (!std::isfinite(lv)) fail(ErrorKind::Training, "train_surrogate: loss diverged");
    report.loss_curve.push_back(lv);
    tape.backward(loss);
    opt.step(tape);
  }
  report.fidelity = surrogate_fidelity(model, eval_clips ? *eval_clips : clips, qps);
  return report;
}

}  // namespace tvr
