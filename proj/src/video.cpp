#include "tvr/video.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace tvr {

VideoClip make_clip(int width, int height, int frame_count) {
  if (width <= 0 || height <= 0 || frame_count <= 0)
    fail(ErrorKind::InvalidSpec, "make_clip: non-positive dimensions");
  VideoClip clip;
  clip.width = width;
  clip.height = height;
  clip.frames.reserve(static_cast<size_t>(frame_count));
  for (int i = 0; i < frame_count; ++i) clip.frames.emplace_back(std::vector<int>{1, height, width});
  return clip;
}

VideoClip clip_from_frames(std::vector<Tensor> frames) {
  if (frames.empty()) fail(ErrorKind::InvalidLength, "clip_from_frames: no frames");
  for (const Tensor& f : frames)
    if (f.rank() != 3 || f.dim(0) != 1 || f.shape() != frames[0].shape())
      fail(ErrorKind::InvalidShape, "clip_from_frames: frames must share [1,H,W] geometry");
  VideoClip clip;
  clip.height = frames[0].dim(1);
  clip.width = frames[0].dim(2);
  clip.frames = std::move(frames);
  return clip;
}

namespace {

void write_u16(std::ostream& os, uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); }

uint16_t read_u16(std::istream& is) {
  uint16_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 2);
  if (!is) fail(ErrorKind::Format, "truncated clip header");
  return v;
}

uint8_t quantize8(float v) {
  float x = std::clamp(v, 0.0f, 1.0f) * 255.0f;
  return static_cast<uint8_t>(std::nearbyint(x));
}

}  // namespace

void save_clip(const VideoClip& clip, const std::string& path) {
  if (clip.empty()) fail(ErrorKind::InvalidLength, "save_clip: empty clip");
  if (clip.width > 0xffff || clip.height > 0xffff || clip.frame_count() > 0xffff)
    fail(ErrorKind::Format, "save_clip: dimensions exceed container limits");
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Format, "cannot open for writing: " + path);
  os.write("TVC1", 4);
  write_u16(os, static_cast<uint16_t>(clip.width));
  write_u16(os, static_cast<uint16_t>(clip.height));
  write_u16(os, static_cast<uint16_t>(clip.frame_count()));
  uint8_t depth = 8;
  os.write(reinterpret_cast<const char*>(&depth), 1);
  std::vector<uint8_t> plane(static_cast<size_t>(clip.width) * clip.height);
  for (const Tensor& f : clip.frames) {
    for (int64_t i = 0; i < f.size(); ++i) plane[static_cast<size_t>(i)] = quantize8(f[i]);
    os.write(reinterpret_cast<const char*>(plane.data()), static_cast<std::streamsize>(plane.size()));
  }
  if (!os) fail(ErrorKind::Format, "write failed: " + path);
}

VideoClip load_clip(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Format, "cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TVC1", 4) != 0) fail(ErrorKind::Format, "bad clip magic");
  int w = read_u16(is);
  int h = read_u16(is);
  int n = read_u16(is);
  uint8_t depth = 0;
  is.read(reinterpret_cast<char*>(&depth), 1);
  if (!is) fail(ErrorKind::Format, "truncated clip header");
  if (w == 0 || h == 0 || n == 0) fail(ErrorKind::Format, "zero extent in clip header");
  if (depth != 8) fail(ErrorKind::Format, "unsupported bit depth");
  VideoClip clip = make_clip(w, h, n);
  std::vector<uint8_t> plane(static_cast<size_t>(w) * h);
  for (Tensor& f : clip.frames) {
    is.read(reinterpret_cast<char*>(plane.data()), static_cast<std::streamsize>(plane.size()));
    if (!is) fail(ErrorKind::Format, "truncated clip payload");
    for (int64_t i = 0; i < f.size(); ++i)
      f[i] = static_cast<float>(plane[static_cast<size_t>(i)]) / 255.0f;
  }
  return clip;
}

namespace {

// Bilinear sample with border clamp.
float sample_bilinear(const Tensor& img, double x, double y) {
  int h = img.dim(1), w = img.dim(2);
  double cx = std::clamp(x, 0.0, static_cast<double>(w - 1));
  double cy = std::clamp(y, 0.0, static_cast<double>(h - 1));
  int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy));
  int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  double fx = cx - x0, fy = cy - y0;
  double v00 = img[static_cast<int64_t>(y0) * w + x0];
  double v01 = img[static_cast<int64_t>(y0) * w + x1];
  double v10 = img[static_cast<int64_t>(y1) * w + x0];
  double v11 = img[static_cast<int64_t>(y1) * w + x1];
  return static_cast<float>((1 - fy) * ((1 - fx) * v00 + fx * v01) +
                            fy * ((1 - fx) * v10 + fx * v11));
}

Tensor paint_rectangle_base(const SyntheticSpec& spec, Rng& rng) {
  Tensor base({1, spec.height, spec.width});
  double bg = 0.25 + 0.1 * rng.uniform();
  double fg = 0.65 + 0.2 * rng.uniform();
  int rw = std::max(4, spec.width / 3);
  int rh = std::max(4, spec.height / 3);
  int rx = 2 + rng.uniform_int(std::max(1, spec.width - rw - 4));
  int ry = 2 + rng.uniform_int(std::max(1, spec.height - rh - 4));
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      bool inside = x >= rx && x < rx + rw && y >= ry && y < ry + rh;
      base[static_cast<int64_t>(y) * spec.width + x] = static_cast<float>(inside ? fg : bg);
    }
  return base;
}

float sinusoid_value(double x, double y, double fx, double fy, double phase) {
  return static_cast<float>(0.5 + 0.4 * std::sin(2.0 * M_PI * (fx * x + fy * y) + phase));
}

}  // namespace

SyntheticClip generate_synthetic(const SyntheticSpec& spec) {
  if (spec.width < 8 || spec.height < 8)
    fail(ErrorKind::InvalidSpec, "generate_synthetic: dimensions smaller than pattern");
  if (spec.frames < 1) fail(ErrorKind::InvalidSpec, "generate_synthetic: need at least one frame");
  Rng rng(spec.seed);
  SyntheticClip out;
  out.clip = make_clip(spec.width, spec.height, spec.frames);

  const int w = spec.width, h = spec.height;

  if (spec.pattern == Pattern::DriftingSinusoid) {
    // Analytic translation: frame t evaluates the sinusoid at x - t*v.
    double fx = 2.0 / w, fy = 1.0 / h;
    double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int t = 0; t < spec.frames; ++t) {
      Tensor& f = out.clip.frames[static_cast<size_t>(t)];
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          f[static_cast<int64_t>(y) * w + x] =
              sinusoid_value(x - t * spec.vx, y - t * spec.vy, fx, fy, phase);
    }
  } else if (spec.pattern == Pattern::TranslatingRectangle) {
    Tensor base = paint_rectangle_base(spec, rng);
    out.clip.frames[0] = Tensor(base.shape(), base.values());
    for (int t = 1; t < spec.frames; ++t) {
      Tensor& f = out.clip.frames[static_cast<size_t>(t)];
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          f[static_cast<int64_t>(y) * w + x] =
              sample_bilinear(base, x - t * spec.vx, y - t * spec.vy);
    }
  } else {  // TwoLayerParallax: sinusoid background at half speed, rectangle on top.
    double fx = 3.0 / w, fy = 2.0 / h;
    double phase = rng.uniform(0.0, 2.0 * M_PI);
    double fg = 0.75 + 0.15 * rng.uniform();
    int rw = std::max(4, w / 4), rh = std::max(4, h / 4);
    int rx = w / 4 + rng.uniform_int(std::max(1, w / 4));
    int ry = h / 4 + rng.uniform_int(std::max(1, h / 4));
    for (int t = 0; t < spec.frames; ++t) {
      Tensor& f = out.clip.frames[static_cast<size_t>(t)];
      double ox = rx + t * spec.vx, oy = ry + t * spec.vy;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          float v = sinusoid_value(x - t * spec.vx * 0.5, y - t * spec.vy * 0.5, fx, fy, phase);
          if (x >= ox && x < ox + rw && y >= oy && y < oy + rh) v = static_cast<float>(fg);
          f[static_cast<int64_t>(y) * w + x] = v;
        }
    }
  }

  if (spec.noise > 0.0) {
    for (Tensor& f : out.clip.frames)
      for (int64_t i = 0; i < f.size(); ++i)
        f[i] = std::clamp(f[i] + static_cast<float>(rng.uniform(-spec.noise, spec.noise)), 0.0f,
                          1.0f);
  }

  for (int t = 0; t + 1 < spec.frames; ++t) {
    Tensor flow({2, h, w});
    int64_t plane = static_cast<int64_t>(h) * w;
    for (int64_t i = 0; i < plane; ++i) {
      flow[i] = static_cast<float>(spec.vx);
      flow[plane + i] = static_cast<float>(spec.vy);
    }
    out.flow.push_back(std::move(flow));
  }
  return out;
}

Pattern pattern_from_name(const std::string& name) {
  if (name == "rect" || name == "translating-rectangle") return Pattern::TranslatingRectangle;
  if (name == "sine" || name == "drifting-sinusoid") return Pattern::DriftingSinusoid;
  if (name == "parallax" || name == "two-layer-parallax") return Pattern::TwoLayerParallax;
  fail(ErrorKind::InvalidSpec, "unknown pattern: " + name);
}

std::pair<VideoClip, VideoClip> split_even_odd(const VideoClip& clip) {
  if (clip.frame_count() < 2) fail(ErrorKind::InvalidLength, "split_even_odd: need >= 2 frames");
  VideoClip even, odd;
  even.width = odd.width = clip.width;
  even.height = odd.height = clip.height;
  for (int i = 0; i < clip.frame_count(); ++i) {
    if (i % 2 == 0)
      even.frames.push_back(clip.frames[static_cast<size_t>(i)]);
    else
      odd.frames.push_back(clip.frames[static_cast<size_t>(i)]);
  }
  return {even, odd};
}

VideoClip merge_even_odd(const VideoClip& even, const VideoClip& odd) {
  int diff = even.frame_count() - odd.frame_count();
  if (even.empty() || diff < 0 || diff > 1)
    fail(ErrorKind::InvalidPair, "merge_even_odd: branch frame counts incompatible");
  VideoClip clip;
  clip.width = even.width;
  clip.height = even.height;
  for (int i = 0; i < even.frame_count() + odd.frame_count(); ++i)
    clip.frames.push_back(i % 2 == 0 ? even.frames[static_cast<size_t>(i / 2)]
                                     : odd.frames[static_cast<size_t>(i / 2)]);
  return clip;
}

VideoClip pad_to_multiple(const VideoClip& clip, int group) {
  if (group < 1) fail(ErrorKind::InvalidSpec, "pad_to_multiple: group must be positive");
  VideoClip out = clip;
  while (out.frame_count() % group != 0) out.frames.push_back(out.frames.back());
  return out;
}

}  // namespace tvr
