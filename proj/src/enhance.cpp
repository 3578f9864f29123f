#include "tvr/enhance.hpp"

#include <cmath>

#include "tvr/codec.hpp"
#include "tvr/flow.hpp"

namespace tvr {

CompressionEncoder CompressionEncoder::make(Rng& rng) {
  CompressionEncoder e;
  const int widths[3] = {8, 16, 24};
  int c_in = 1;
  for (int l = 0; l < 3; ++l) {
    e.reduce[static_cast<size_t>(l)] = Conv2dLayer::make(c_in, widths[l], 3, rng);
    e.res_a[static_cast<size_t>(l)] = Conv2dLayer::make(widths[l], widths[l], 3, rng);
    e.res_b[static_cast<size_t>(l)] = Conv2dLayer::make(widths[l], widths[l], 3, rng);
    c_in = widths[l];
  }
  return e;
}

std::array<Tensor, 3> CompressionEncoder::operator()(Tape* tape, const Tensor& frame) const {
  std::array<Tensor, 3> feats;
  Tensor x = frame;
  for (int l = 0; l < 3; ++l) {
    // conv at the incoming resolution, then pool: block-boundary artifacts
    // stay visible to the reduction filters
    x = avgpool2(leaky_relu(reduce[static_cast<size_t>(l)](tape, x)));
    Tensor r = leaky_relu(res_a[static_cast<size_t>(l)](tape, x));
    r = res_b[static_cast<size_t>(l)](tape, r);
    x = leaky_relu(add(x, r));
    feats[static_cast<size_t>(l)] = x;
  }
  return feats;
}

void CompressionEncoder::params(std::vector<Tensor*>& out) {
  for (int l = 0; l < 3; ++l) {
    reduce[static_cast<size_t>(l)].params(out);
    res_a[static_cast<size_t>(l)].params(out);
    res_b[static_cast<size_t>(l)].params(out);
  }
}

Ranker Ranker::make(Rng& rng) {
  Ranker r;
  r.w1 = Tensor::randn({16, 16}, rng, 0.3);
  r.b1 = Tensor::zeros({16});
  r.w2 = Tensor::randn({16, 16}, rng, 0.3);
  r.b2 = Tensor::zeros({16});
  r.w3 = Tensor::randn({1, 16}, rng, 0.3);
  r.b3 = Tensor::zeros({1});
  return r;
}

namespace {

// Global average pool of [C,H,W] to [C].
Tensor gap(const Tensor& x) {
  int c = x.dim(0);
  std::vector<Tensor> per_channel;
  per_channel.reserve(static_cast<size_t>(c));
  Tape* tape = x.tracked() ? x.tape() : nullptr;
  (void)tape;
  // mean over each channel slice keeps the gradient path
  Tensor out;
  std::vector<Tensor> means;
  for (int ci = 0; ci < c; ++ci) means.push_back(mean(slice_ch(x, ci, ci + 1)));
  // stack scalars into a [C] vector
  // (concat_ch needs [C,H,W]; build via a tiny dedicated path)
  std::vector<Tensor> reshaped;
  for (Tensor& m : means) {
    // scalar [1] -> [1,1,1]
    Tensor r({1, 1, 1}, {m[0]});
    if (m.tracked()) {
      Tape* tp2 = m.tape();
      int pm = m.node();
      r = tp2->adopt(std::move(r), tp2->emplace(1, [pm](Tape& t, const std::vector<float>& g) {
        if (pm >= 0) t.grad_buf(pm)[0] += g[0];
      }));
    }
    reshaped.push_back(r);
  }
  Tensor stacked = concat_ch(reshaped);  // [C,1,1]
  // flatten [C,1,1] -> [C]
  Tensor flat({c}, stacked.values());
  if (stacked.tracked()) {
    Tape* tp2 = stacked.tape();
    int pn = stacked.node();
    flat = tp2->adopt(std::move(flat), tp2->emplace(c, [pn, c](Tape& t, const std::vector<float>& g) {
      if (pn < 0) return;
      auto& gp = t.grad_buf(pn);
      for (int i = 0; i < c; ++i) gp[static_cast<size_t>(i)] += g[static_cast<size_t>(i)];
    }));
  }
  out = flat;
  return out;
}

}  // namespace

Tensor Ranker::score(Tape* tape, const Tensor& level2_features) const {
  Tensor pooled = gap(level2_features);
  Tensor h = leaky_relu(linear(pooled, tp(tape, w1), tp(tape, b1)));
  h = leaky_relu(linear(h, tp(tape, w2), tp(tape, b2)));
  return linear(h, tp(tape, w3), tp(tape, b3));
}

void Ranker::params(std::vector<Tensor*>& out) {
  out.push_back(&w1);
  out.push_back(&b1);
  out.push_back(&w2);
  out.push_back(&b2);
  out.push_back(&w3);
  out.push_back(&b3);
}

Tensor rank_loss(const Tensor& score_i, const Tensor& score_j, int qp_i, int qp_j, double margin) {
  if (qp_i == qp_j) fail(ErrorKind::InvalidPair, "rank_loss: QPs must differ");
  double kappa = qp_i < qp_j ? 1.0 : -1.0;
  Tensor diff = mul_scalar(sub(score_i, score_j), kappa);
  Tensor shifted = add_scalar(diff, margin);
  // hinge: max(0, .) with zero gradient in the cleared region
  return sum(leaky_relu(shifted, 0.0));
}

double ranker_pairwise_accuracy(const CompressionEncoder& encoder, const Ranker& ranker,
                                const std::vector<VideoClip>& clips, const std::vector<int>& qps) {
  if (qps.size() < 2) fail(ErrorKind::InvalidDataset, "ranker accuracy: need >= 2 QPs");
  int correct = 0, total = 0;
  for (const VideoClip& clip : clips) {
    std::vector<double> scores;
    for (int qp : qps) {
      CodedClip coded = encode(clip, qp);
      const Tensor& frame = coded.reconstruction.frames[0];
      scores.push_back(ranker.score(nullptr, encoder(nullptr, frame)[1]).item());
    }
    for (size_t i = 0; i < qps.size(); ++i)
      for (size_t j = i + 1; j < qps.size(); ++j) {
        // kappa convention: the lower-QP frame should score lower
        double kappa = qps[i] < qps[j] ? 1.0 : -1.0;
        if ((scores[i] - scores[j]) * kappa < 0.0) ++correct;
        ++total;
      }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

RankerTrainReport train_ranker(CompressionEncoder& encoder, Ranker& ranker,
                               const std::vector<VideoClip>& clean_clips,
                               const std::vector<int>& qps, int steps, double lr, uint64_t seed) {
  if (qps.size() < 2) fail(ErrorKind::InvalidDataset, "train_ranker: dataset must cover >= 2 QPs");
  if (clean_clips.size() < 2)
    fail(ErrorKind::InvalidDataset, "train_ranker: need clips for train and holdout");
  Rng rng(seed);
  size_t holdout = clean_clips.size() / 4 + 1;
  std::vector<VideoClip> train(clean_clips.begin(), clean_clips.end() - static_cast<long>(holdout));
  std::vector<VideoClip> held(clean_clips.end() - static_cast<long>(holdout), clean_clips.end());

  std::vector<Tensor*> ps;
  encoder.params(ps);
  ranker.params(ps);
  Adam opt(ps, lr);
  RankerTrainReport report;
  for (int step = 0; step < steps; ++step) {
    const VideoClip& clip = train[static_cast<size_t>(rng.uniform_int(static_cast<int>(train.size())))];
    int qi = qps[static_cast<size_t>(rng.uniform_int(static_cast<int>(qps.size())))];
    int qj = qi;
    while (qj == qi) qj = qps[static_cast<size_t>(rng.uniform_int(static_cast<int>(qps.size())))];
    int frame_idx = rng.uniform_int(clip.frame_count());
    CodedClip ci = encode(clip, qi);
    CodedClip cj = encode(clip, qj);
    Tape tape;
    Tensor si = ranker.score(&tape, encoder(&tape, ci.reconstruction.frames[static_cast<size_t>(frame_idx)])[1]);
    Tensor sj = ranker.score(&tape, encoder(&tape, cj.reconstruction.frames[static_cast<size_t>(frame_idx)])[1]);
    Tensor loss = rank_loss(si, sj, qi, qj);
    report.loss_curve.push_back(loss.item());
    tape.backward(loss);
    opt.step(tape);
  }
  report.holdout_accuracy = ranker_pairwise_accuracy(encoder, ranker, held, qps);
  return report;
}

Enhancer Enhancer::make(Rng& rng) {
  Enhancer e;
  e.fuse1 = Conv2dLayer::make(3, 16, 3, rng);
  e.fuse2 = Conv2dLayer::make(16, 16, 3, rng);
  e.cand = Conv2dLayer::make(16, 1, 3, rng, 1, /*zero_init=*/true);
  e.wd1 = Conv2dLayer::make(16, 8, 3, rng);
  e.wd2 = Conv2dLayer::make(8 + 8, 16, 3, rng);
  e.wd3 = Conv2dLayer::make(16 + 16, 24, 3, rng);
  e.wu3 = Conv2dLayer::make(24 + 24, 16, 3, rng);
  e.wu2 = Conv2dLayer::make(16, 8, 3, rng);
  e.wu1 = Conv2dLayer::make(8, 8, 3, rng);
  e.whead = Conv2dLayer::make(8, 1, 1, rng, 1, /*zero_init=*/true);
  return e;
}

Tensor Enhancer::enhance_aligned(Tape* tape, const std::vector<Tensor>& window,
                                 const std::array<Tensor, 3>& f_c,
                                 const Tensor* forced_wq) const {
  if (window.size() % 2 == 0) fail(ErrorKind::InvalidWindow, "enhance: window length must be odd");
  const Tensor& center = window[window.size() / 2];
  Tensor stacked = concat_ch(window);
  Tensor fd = leaky_relu(fuse1(tape, stacked));
  fd = leaky_relu(fuse2(tape, fd));
  Tensor f_q = add(center, cand(tape, fd));

  Tensor wq;
  if (forced_wq) {
    wq = *forced_wq;
  } else {
    Tensor d1 = avgpool2(leaky_relu(wd1(tape, fd)));                       // 1/2, 8ch
    Tensor d2 = avgpool2(leaky_relu(wd2(tape, concat_ch({d1, f_c[0]}))));  // 1/4, 16ch
    Tensor d3 = avgpool2(leaky_relu(wd3(tape, concat_ch({d2, f_c[1]}))));  // 1/8, 24ch
    Tensor u3 = leaky_relu(wu3(tape, concat_ch({d3, f_c[2]})));
    Tensor u2 = leaky_relu(wu2(tape, upsample2(u3)));
    Tensor u1 = leaky_relu(wu1(tape, upsample2(u2)));
    wq = sigmoid(whead(tape, upsample2(u1)));
  }
  // I_HQ = w_q * f_q + (1 - w_q) * I_LQ
  Tensor keep = mul(wq, f_q);
  Tensor pass = mul(add_scalar(mul_scalar(wq, -1.0), 1.0), center);
  return add(keep, pass);
}

Tensor Enhancer::enhance_frame(Tape* tape, const std::vector<Tensor>& frames, int idx,
                               const CompressionEncoder& encoder) const {
  if (frames.empty()) fail(ErrorKind::InvalidLength, "enhance_frame: empty clip");
  int n = static_cast<int>(frames.size());
  const Tensor& center = frames[static_cast<size_t>(idx)];
  auto aligned_neighbor = [&](int j) {
    if (j < 0) j = 0;
    if (j >= n) j = n - 1;
    if (j == idx) return center;
    auto [fc, _] = block_flow(center.detached(), frames[static_cast<size_t>(j)].detached());
    return backward_warp(frames[static_cast<size_t>(j)], fc);
  };
  std::vector<Tensor> window = {aligned_neighbor(idx - 1), center, aligned_neighbor(idx + 1)};
  std::array<Tensor, 3> f_c = encoder(nullptr, center.detached());
  return enhance_aligned(tape, window, f_c);
}

void Enhancer::params(std::vector<Tensor*>& out) {
  fuse1.params(out);
  fuse2.params(out);
  cand.params(out);
  wd1.params(out);
  wd2.params(out);
  wd3.params(out);
  wu3.params(out);
  wu2.params(out);
  wu1.params(out);
  whead.params(out);
}

EnhancerTrainReport train_enhancer(Enhancer& model, const CompressionEncoder& encoder,
                                   const std::vector<VideoClip>& clean_clips,
                                   const std::vector<int>& qps, int steps, double lr,
                                   uint64_t seed) {
  if (clean_clips.empty() || qps.empty())
    fail(ErrorKind::InvalidDataset, "train_enhancer: empty dataset");
  Rng rng(seed);
  std::vector<Tensor*> ps;
  model.params(ps);
  Adam opt(ps, lr);
  EnhancerTrainReport report;
  for (int step = 0; step < steps; ++step) {
    const VideoClip& clip =
        clean_clips[static_cast<size_t>(rng.uniform_int(static_cast<int>(clean_clips.size())))];
    int qp = qps[static_cast<size_t>(rng.uniform_int(static_cast<int>(qps.size())))];
    CodedClip coded = encode(clip, qp);
    int idx = rng.uniform_int(clip.frame_count());
    Tape tape;
    Tensor out = model.enhance_frame(&tape, coded.reconstruction.frames, idx, encoder);
    Tensor loss = l1(out, clip.frames[static_cast<size_t>(idx)]);
    report.loss_curve.push_back(loss.item());
    tape.backward(loss);
    opt.step(tape);
  }
  return report;
}

}  // namespace tvr
