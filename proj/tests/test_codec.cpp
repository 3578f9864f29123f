#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "tvr/codec.hpp"
#include "tvr/metrics.hpp"

using namespace tvr;

namespace {

VideoClip shifted_clip(int w, int h, int n, int step_x, uint64_t seed) {
  // integer global shift per frame; content wraps so every block keeps detail
  Rng rng(seed);
  Tensor base({1, h, w});
  for (int64_t i = 0; i < base.size(); ++i) base[i] = static_cast<float>(rng.uniform(0.1, 0.9));
  // smooth it a little so SAD surfaces are well-behaved
  Tensor smooth({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          int yy = (y + dy + h) % h, xx = (x + dx + w) % w;
          acc += base[static_cast<int64_t>(yy) * w + xx];
        }
      smooth[static_cast<int64_t>(y) * w + x] = acc / 9.0f;
    }
  VideoClip clip = make_clip(w, h, n);
  for (int t = 0; t < n; ++t)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        clip.frames[static_cast<size_t>(t)][static_cast<int64_t>(y) * w + x] =
            smooth[static_cast<int64_t>(y) * w + ((x - t * step_x) % w + w) % w];
  return clip;
}

}  // namespace

TEST_CASE("qstep values") {
  CHECK(qstep(4) == doctest::Approx(1.0));
  CHECK(qstep(10) == doctest::Approx(2.0));
  CHECK(qstep(22) == doctest::Approx(8.0));
  CHECK_THROWS_AS(qstep(-1), Error);
  CHECK_THROWS_AS(qstep(52), Error);
}

TEST_CASE("motion search finds zero MVs on identical frames") {
  Rng rng(5);
  Tensor f = Tensor::uniform({1, 16, 16}, rng, 0.0, 1.0);
  MvGrid grid = motion_search(f, f);
  for (size_t i = 0; i < grid.dx.size(); ++i) {
    CHECK(grid.dx[i] == 0);
    CHECK(grid.dy[i] == 0);
  }
}

TEST_CASE("motion search recovers an integer global shift") {
  VideoClip clip = shifted_clip(32, 32, 2, 2, 11);
  MvGrid grid = motion_search(clip.frames[0], clip.frames[1]);
  // content moved +2 in x: the block in the current frame matches the
  // reference sampled 2 px to the left
  for (int by = 0; by < grid.grid_h; ++by)
    for (int bx = 1; bx + 1 < grid.grid_w; ++bx) {
      CHECK(grid.dx[static_cast<size_t>(by) * grid.grid_w + bx] == -2);
      CHECK(grid.dy[static_cast<size_t>(by) * grid.grid_w + bx] == 0);
    }
}

TEST_CASE("motion search saturates beyond the window") {
  VideoClip clip = shifted_clip(48, 16, 2, 9, 13);
  MvGrid grid = motion_search(clip.frames[0], clip.frames[1]);
  // true shift is -9, outside +-7: vectors clamp to the window edge
  int hits = 0;
  for (int by = 0; by < grid.grid_h; ++by)
    for (int bx = 2; bx + 2 < grid.grid_w; ++bx)
      if (grid.dx[static_cast<size_t>(by) * grid.grid_w + bx] == -7) ++hits;
  CHECK(hits > 0);
  for (int8_t v : grid.dx) CHECK(std::abs(v) <= 7);
}

TEST_CASE("encode rejects bad geometry and tracked inputs") {
  CHECK_THROWS_AS(encode(make_clip(12, 12, 2), 22), Error);
  VideoClip ok = make_clip(16, 16, 1);
  Tape tape;
  ok.frames[0] = tape.watch(ok.frames[0]);
  CHECK_THROWS_AS(encode(ok, 22), Error);
}

TEST_CASE("static clip codes to zero MVs and repeated frames") {
  Rng rng(17);
  Tensor f = Tensor::uniform({1, 16, 16}, rng, 0.2, 0.8);
  VideoClip clip = make_clip(16, 16, 4);
  for (Tensor& fr : clip.frames) fr = Tensor(f.shape(), f.values());
  CodedClip coded = encode(clip, 32);
  for (const MvGrid& g : coded.metadata.mv)
    for (size_t i = 0; i < g.dx.size(); ++i) {
      CHECK(g.dx[i] == 0);
      CHECK(g.dy[i] == 0);
    }
  // at qp 32 the zero residual quantizes to zero, so frames 1.. repeat frame 0
  for (int t = 1; t < 4; ++t)
    for (int64_t i = 0; i < f.size(); ++i)
      CHECK(coded.reconstruction.frames[static_cast<size_t>(t)][i] ==
            coded.reconstruction.frames[0][i]);
}

TEST_CASE("qp=0 is near-lossless with a checked quantization bound") {
  Rng rng(23);
  VideoClip clip = make_clip(16, 16, 3);
  for (Tensor& f : clip.frames)
    for (int64_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(rng.uniform(0.1, 0.9));
  CodedClip coded = encode(clip, 0);
  // per-pixel bound: every DCT coefficient is off by <= qstep/2 (8-bit units)
  double bound = quantization_error_bound(0) / 255.0;
  CHECK(bound < 0.02);
  for (int64_t i = 0; i < clip.frames[0].size(); ++i)
    CHECK(std::abs(coded.reconstruction.frames[0][i] - clip.frames[0][i]) <= bound + 1e-6);
  CHECK(psnr(coded.reconstruction, clip) > 45.0);
}

TEST_CASE("bits decrease and MSE increases with qp") {
  SyntheticSpec spec;
  spec.pattern = Pattern::TwoLayerParallax;
  spec.vx = 1.0;
  spec.vy = 0.5;
  spec.frames = 4;
  spec.width = 32;
  spec.height = 32;
  spec.noise = 0.01;
  spec.seed = 31;
  VideoClip clip = generate_synthetic(spec).clip;
  int64_t prev_bits = -1;
  double prev_psnr = 1e9;
  for (int qp : {12, 17, 22, 27, 32, 37}) {
    CodedClip coded = encode(clip, qp);
    double p = psnr(coded.reconstruction, clip);
    if (prev_bits >= 0) {
      CHECK(coded.metadata.bits <= prev_bits);
      CHECK(p <= prev_psnr + 1e-9);
    }
    prev_bits = coded.metadata.bits;
    prev_psnr = p;
  }
}

TEST_CASE("encode is deterministic") {
  SyntheticSpec spec;
  spec.seed = 41;
  spec.noise = 0.02;
  VideoClip clip = generate_synthetic(spec).clip;
  CodedClip a = encode(clip, 27);
  CodedClip b = encode(clip, 27);
  CHECK(a.metadata.bits == b.metadata.bits);
  for (int t = 0; t < clip.frame_count(); ++t)
    for (int64_t i = 0; i < clip.frames[0].size(); ++i)
      CHECK(a.reconstruction.frames[static_cast<size_t>(t)][i] ==
            b.reconstruction.frames[static_cast<size_t>(t)][i]);
  for (size_t t = 0; t < a.metadata.mv.size(); ++t)
    for (size_t i = 0; i < a.metadata.mv[t].dx.size(); ++i) {
      CHECK(a.metadata.mv[t].dx[i] == b.metadata.mv[t].dx[i]);
      CHECK(a.metadata.mv[t].dy[i] == b.metadata.mv[t].dy[i]);
    }
}

TEST_CASE("metadata container roundtrip") {
  SyntheticSpec spec;
  spec.seed = 43;
  VideoClip clip = generate_synthetic(spec).clip;
  CodedClip coded = encode(clip, 22);
  const char* path = "meta_roundtrip.bin";
  save_metadata(coded.metadata, path);
  CodecMetadata loaded = load_metadata(path);
  CHECK(loaded.qp == coded.metadata.qp);
  CHECK(loaded.bits == coded.metadata.bits);
  CHECK(loaded.intra_bits == coded.metadata.intra_bits);
  REQUIRE(loaded.mv.size() == coded.metadata.mv.size());
  for (size_t t = 0; t < loaded.mv.size(); ++t)
    for (size_t i = 0; i < loaded.mv[t].dx.size(); ++i) {
      CHECK(loaded.mv[t].dx[i] == coded.metadata.mv[t].dx[i]);
      CHECK(loaded.mv[t].dy[i] == coded.metadata.mv[t].dy[i]);
    }
  std::remove(path);
}

TEST_CASE("mv_to_flow paints constant blocks") {
  MvGrid grid;
  grid.grid_w = 2;
  grid.grid_h = 1;
  grid.dx = {3, -2};
  grid.dy = {0, 1};
  Tensor flow = mv_to_flow(grid, 8, 16);
  CHECK(flow[0] == 3.0f);
  CHECK(flow[10] == -2.0f);
  CHECK(flow[8 * 16 + 10] == 1.0f);
}
