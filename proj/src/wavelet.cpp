#include "tvr/wavelet.hpp"

#include "tvr/flow.hpp"

namespace tvr {

std::vector<Tensor> ZeroMap::apply(Tape*, const std::vector<Tensor>& in, int n_out) const {
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(n_out));
  for (int i = 0; i < n_out; ++i) out.push_back(Tensor::zeros(in[0].shape()));
  return out;
}

std::vector<Tensor> AveragePredictor::apply(Tape*, const std::vector<Tensor>& in,
                                            int n_out) const {
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(n_out));
  for (int i = 0; i < n_out; ++i) {
    if (static_cast<size_t>(i + 1) < in.size())
      out.push_back(mul_scalar(add(in[static_cast<size_t>(i)], in[static_cast<size_t>(i + 1)]), 0.5));
    else
      out.push_back(in[static_cast<size_t>(i)]);  // edge: single neighbor
  }
  return out;
}

ConvFrameMap ConvFrameMap::make(int frames_in, int frames_out, int hidden, Rng& rng,
                                bool average_base) {
  ConvFrameMap map;
  map.net_ = TransformNet::make(frames_in, frames_out, hidden, rng, /*with_qp=*/false);
  map.average_base_ = average_base;
  return map;
}

std::vector<Tensor> ConvFrameMap::apply(Tape* tape, const std::vector<Tensor>& in,
                                        int n_out) const {
  Tensor stacked = concat_ch(in);
  Tensor mapped = net_(tape, stacked, std::nullopt);
  if (mapped.dim(0) != n_out)
    fail(ErrorKind::InvalidPair, "ConvFrameMap: configured frame count does not match request");
  std::vector<Tensor> base;
  if (average_base_) base = AveragePredictor().apply(tape, in, n_out);
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(n_out));
  for (int i = 0; i < n_out; ++i) {
    Tensor frame = slice_ch(mapped, i, i + 1);
    out.push_back(average_base_ ? add(base[static_cast<size_t>(i)], frame) : frame);
  }
  return out;
}

void ConvFrameMap::params(std::vector<Tensor*>& out) { net_.params(out); }

FrequencyPair mimo_twt_forward(Tape* tape, const VideoClip& clip, const FrameMap& P,
                               const FrameMap& U) {
  if (clip.frame_count() < 2) fail(ErrorKind::InvalidLength, "mimo_twt_forward: need >= 2 frames");
  auto [even, odd] = split_even_odd(clip);
  FrequencyPair pair;
  // x_h = x_o - P(x_e)
  std::vector<Tensor> pred = P.apply(tape, even.frames, odd.frame_count());
  for (int i = 0; i < odd.frame_count(); ++i)
    pair.high.push_back(sub(odd.frames[static_cast<size_t>(i)], pred[static_cast<size_t>(i)]));
  // x_l = x_e + U(x_h)
  std::vector<Tensor> upd = U.apply(tape, pair.high, even.frame_count());
  for (int i = 0; i < even.frame_count(); ++i)
    pair.low.push_back(add(even.frames[static_cast<size_t>(i)], upd[static_cast<size_t>(i)]));
  return pair;
}

VideoClip mimo_twt_inverse(Tape* tape, const FrequencyPair& pair, const FrameMap& P,
                           const FrameMap& U) {
  int diff = static_cast<int>(pair.low.size()) - static_cast<int>(pair.high.size());
  if (pair.low.empty() || diff < 0 || diff > 1)
    fail(ErrorKind::InvalidPair, "mimo_twt_inverse: branch frame counts incompatible");
  // x_e = x_l - U(x_h)
  std::vector<Tensor> upd = U.apply(tape, pair.high, static_cast<int>(pair.low.size()));
  std::vector<Tensor> even;
  for (size_t i = 0; i < pair.low.size(); ++i) even.push_back(sub(pair.low[i], upd[i]));
  // x_o = x_h + P(x_e)
  std::vector<Tensor> pred = P.apply(tape, even, static_cast<int>(pair.high.size()));
  std::vector<Tensor> odd;
  for (size_t i = 0; i < pair.high.size(); ++i) odd.push_back(add(pair.high[i], pred[i]));
  VideoClip even_clip = clip_from_frames(std::move(even));
  VideoClip odd_clip = clip_from_frames(std::move(odd));
  return merge_even_odd(even_clip, odd_clip);
}

std::pair<Tensor, Tensor> haar_mv_forward(Tape* tape, const Tensor& prev, const Tensor& cur,
                                          const Tensor& flow_fwd, const Tensor& flow_bwd) {
  (void)tape;  // warps pick the tape up from their tracked image arguments
  Tensor y_h = sub(cur, backward_warp(prev, flow_fwd));
  Tensor y_l = add(prev, backward_warp(cur, flow_bwd));
  return {y_l, y_h};
}

Tensor haar_mv_reconstruct(Tape* tape, const Tensor& prev, const Tensor& y_h,
                           const Tensor& flow_fwd) {
  (void)tape;
  return add(y_h, backward_warp(prev, flow_fwd));
}

}  // namespace tvr
