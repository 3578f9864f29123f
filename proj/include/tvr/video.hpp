#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tvr/tensor.hpp"

namespace tvr {

// Single-channel clip; frames are [1,H,W] tensors with values in [0,1].
struct VideoClip {
  int width = 0;
  int height = 0;
  std::vector<Tensor> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }
  bool empty() const { return frames.empty(); }
};

VideoClip make_clip(int width, int height, int frame_count);
VideoClip clip_from_frames(std::vector<Tensor> frames);

// ".tvc" container: magic "TVC1", u16 width, u16 height, u16 frame_count,
// u8 bit-depth (8), raw planar 8-bit luma payload.
void save_clip(const VideoClip& clip, const std::string& path);
VideoClip load_clip(const std::string& path);

enum class Pattern { TranslatingRectangle, DriftingSinusoid, TwoLayerParallax };

struct SyntheticSpec {
  Pattern pattern = Pattern::TranslatingRectangle;
  double vx = 1.0;  // pixels/frame, may be fractional
  double vy = 0.0;
  int frames = 7;
  int width = 32;
  int height = 32;
  double noise = 0.0;
  uint64_t seed = 0;
};

struct SyntheticClip {
  VideoClip clip;
  // Ground-truth flow from frame t to t+1, one [2,H,W] field per frame pair
  // (channel 0 = dx, channel 1 = dy).
  std::vector<Tensor> flow;
};

SyntheticClip generate_synthetic(const SyntheticSpec& spec);

Pattern pattern_from_name(const std::string& name);

// Even/odd frame split; merging restores the clip exactly.
std::pair<VideoClip, VideoClip> split_even_odd(const VideoClip& clip);
VideoClip merge_even_odd(const VideoClip& even, const VideoClip& odd);

// Duplicate the last frame until frame_count is a multiple of `group`.
VideoClip pad_to_multiple(const VideoClip& clip, int group);

}  // namespace tvr
