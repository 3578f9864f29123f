#pragma once

#include <string>
#include <vector>

#include "tvr/video.hpp"

namespace tvr {

inline constexpr int kBlockSize = 8;
inline constexpr int kSearchRange = 7;

// Per-frame block motion vectors, in pixels (prediction samples the previous
// reconstruction at p + mv, i.e. the field plays the role of mv_{t-1 -> t}).
struct MvGrid {
  int grid_w = 0;
  int grid_h = 0;
  std::vector<int8_t> dx;
  std::vector<int8_t> dy;
};

struct CodecMetadata {
  int qp = 0;
  int64_t bits = 0;        // total coded bits estimate (intra + inter)
  int64_t intra_bits = 0;  // frame 0 share
  std::vector<MvGrid> mv;  // one grid per inter frame (t = 1..N-1)
};

struct CodedClip {
  VideoClip reconstruction;
  CodecMetadata metadata;
};

// HEVC-style exponential step; valid qp range [0, 51].
double qstep(int qp);

// Full-search block matching of `cur` against `ref` (8x8 blocks, +-7 px, SAD;
// ties broken by smallest |mv| then raster order of the offset).
MvGrid motion_search(const Tensor& ref, const Tensor& cur);

// Negated field, used as the mv_{t -> t-1} stand-in.
MvGrid negate_mv(const MvGrid& grid);

// Constant-per-block per-pixel flow field [2,H,W] from a block MV grid.
Tensor mv_to_flow(const MvGrid& grid, int height, int width);

// Deterministic low-delay IPPP encode. Never placed on a gradient tape; the
// input must be untracked.
CodedClip encode(const VideoClip& clip, int qp);

// Metadata container: magic "TVM1", qp, bits, MV grid dims, i8 MV pairs.
void save_metadata(const CodecMetadata& meta, const std::string& path);
CodecMetadata load_metadata(const std::string& path);

// Worst-case per-pixel reconstruction error of one 8x8 block given that every
// DCT coefficient is off by at most qstep/2 (in 8-bit units).
double quantization_error_bound(int qp);

}  // namespace tvr
