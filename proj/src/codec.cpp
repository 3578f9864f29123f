#include "tvr/codec.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>

namespace tvr {

double qstep(int qp) {
  if (qp < 0 || qp > 51) fail(ErrorKind::InvalidQp, "qp outside [0, 51]");
  return std::pow(2.0, (qp - 4) / 6.0);
}

namespace {

constexpr int kB = kBlockSize;

// Orthonormal 8-point DCT-II basis, row u: c_u * cos((2i+1)u*pi/16).
const std::array<double, kB * kB>& dct_basis() {
  static const std::array<double, kB * kB> basis = [] {
    std::array<double, kB * kB> m{};
    for (int u = 0; u < kB; ++u) {
      double cu = u == 0 ? std::sqrt(1.0 / kB) : std::sqrt(2.0 / kB);
      for (int i = 0; i < kB; ++i)
        m[static_cast<size_t>(u) * kB + i] = cu * std::cos((2 * i + 1) * u * M_PI / (2 * kB));
    }
    return m;
  }();
  return basis;
}

void dct2(const double* in, double* out) {
  const auto& b = dct_basis();
  double tmp[kB * kB];
  for (int u = 0; u < kB; ++u)
    for (int j = 0; j < kB; ++j) {
      double acc = 0.0;
      for (int i = 0; i < kB; ++i) acc += b[static_cast<size_t>(u) * kB + i] * in[i * kB + j];
      tmp[u * kB + j] = acc;
    }
  for (int u = 0; u < kB; ++u)
    for (int v = 0; v < kB; ++v) {
      double acc = 0.0;
      for (int j = 0; j < kB; ++j) acc += tmp[u * kB + j] * b[static_cast<size_t>(v) * kB + j];
      out[u * kB + v] = acc;
    }
}

void idct2(const double* in, double* out) {
  const auto& b = dct_basis();
  double tmp[kB * kB];
  for (int i = 0; i < kB; ++i)
    for (int v = 0; v < kB; ++v) {
      double acc = 0.0;
      for (int u = 0; u < kB; ++u) acc += b[static_cast<size_t>(u) * kB + i] * in[u * kB + v];
      tmp[i * kB + v] = acc;
    }
  for (int i = 0; i < kB; ++i)
    for (int j = 0; j < kB; ++j) {
      double acc = 0.0;
      for (int v = 0; v < kB; ++v) acc += tmp[i * kB + v] * b[static_cast<size_t>(v) * kB + j];
      out[i * kB + j] = acc;
    }
}

int64_t coeff_bits(int64_t q) {
  // ceil(log2(1+|q|)) + 1 per coefficient.
  uint64_t m = static_cast<uint64_t>(q < 0 ? -q : q) + 1;
  int64_t bits = 0;
  while ((1ull << bits) < m) ++bits;
  return bits + 1;
}

// Quantize one 8x8 block of residual/intra samples (8-bit units); returns
// bits and writes the dequantized samples.
int64_t code_block(const double* samples, double step, double* recon) {
  double coef[kB * kB];
  dct2(samples, coef);
  int64_t bits = 0;
  for (int i = 0; i < kB * kB; ++i) {
    int64_t q = std::llround(coef[i] / step);
    bits += coeff_bits(q);
    coef[i] = static_cast<double>(q) * step;
  }
  idct2(coef, recon);
  return bits;
}

struct BlockView {
  const float* data;
  int stride;
};

int sad8(const float* a, int stride_a, const float* b, int stride_b) {
  // SAD over 8-bit units, rounded per pixel so ties are stable across builds.
  int acc = 0;
  for (int y = 0; y < kB; ++y)
    for (int x = 0; x < kB; ++x) {
      int va = static_cast<int>(std::nearbyint(a[y * stride_a + x] * 255.0f));
      int vb = static_cast<int>(std::nearbyint(b[y * stride_b + x] * 255.0f));
      acc += std::abs(va - vb);
    }
  return acc;
}

}  // namespace

MvGrid motion_search(const Tensor& ref, const Tensor& cur) {
  if (ref.shape() != cur.shape()) fail(ErrorKind::InvalidShape, "motion_search: shape mismatch");
  int h = cur.dim(1), w = cur.dim(2);
  if (h % kB != 0 || w % kB != 0)
    fail(ErrorKind::InvalidGeometry, "motion_search: geometry not a multiple of 8");
  MvGrid grid;
  grid.grid_w = w / kB;
  grid.grid_h = h / kB;
  grid.dx.assign(static_cast<size_t>(grid.grid_w) * grid.grid_h, 0);
  grid.dy.assign(static_cast<size_t>(grid.grid_w) * grid.grid_h, 0);
  const float* rp = ref.data();
  const float* cp = cur.data();
  for (int by = 0; by < grid.grid_h; ++by) {
    for (int bx = 0; bx < grid.grid_w; ++bx) {
      int y0 = by * kB, x0 = bx * kB;
      int best_sad = -1, best_dx = 0, best_dy = 0, best_mag = 0;
      for (int dy = -kSearchRange; dy <= kSearchRange; ++dy) {
        int ry = y0 + dy;
        if (ry < 0 || ry + kB > h) continue;
        for (int dx = -kSearchRange; dx <= kSearchRange; ++dx) {
          int rx = x0 + dx;
          if (rx < 0 || rx + kB > w) continue;
          int sad = sad8(cp + static_cast<int64_t>(y0) * w + x0, w,
                         rp + static_cast<int64_t>(ry) * w + rx, w);
          int mag = dx * dx + dy * dy;
          bool better = best_sad < 0 || sad < best_sad ||
                        (sad == best_sad && mag < best_mag);
          // Raster order of (dy, dx) resolves remaining ties because the loop
          // only replaces on strict improvement.
          if (better) {
            best_sad = sad;
            best_dx = dx;
            best_dy = dy;
            best_mag = mag;
          }
        }
      }
      grid.dx[static_cast<size_t>(by) * grid.grid_w + bx] = static_cast<int8_t>(best_dx);
      grid.dy[static_cast<size_t>(by) * grid.grid_w + bx] = static_cast<int8_t>(best_dy);
      if (kink_probe_active())
        kink_note_branch(static_cast<uint64_t>((best_dx + 64) * 256 + best_dy + 64));
    }
  }
  return grid;
}

MvGrid negate_mv(const MvGrid& grid) {
  MvGrid out = grid;
  for (auto& v : out.dx) v = static_cast<int8_t>(-v);
  for (auto& v : out.dy) v = static_cast<int8_t>(-v);
  return out;
}

Tensor mv_to_flow(const MvGrid& grid, int height, int width) {
  Tensor flow({2, height, width});
  int64_t plane = static_cast<int64_t>(height) * width;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      int b = std::min(y / kB, grid.grid_h - 1) * grid.grid_w + std::min(x / kB, grid.grid_w - 1);
      flow[static_cast<int64_t>(y) * width + x] = grid.dx[static_cast<size_t>(b)];
      flow[plane + static_cast<int64_t>(y) * width + x] = grid.dy[static_cast<size_t>(b)];
    }
  return flow;
}

CodedClip encode(const VideoClip& clip, int qp) {
  double step = qstep(qp);
  if (clip.empty()) fail(ErrorKind::InvalidLength, "encode: empty clip");
  if (clip.height % kB != 0 || clip.width % kB != 0)
    fail(ErrorKind::InvalidGeometry, "encode: geometry not a multiple of 8");
  for (const Tensor& f : clip.frames)
    if (f.tracked())
      fail(ErrorKind::InvalidSpec, "encode: codec input must not be gradient-tracked");

  const int h = clip.height, w = clip.width;
  CodedClip out;
  out.reconstruction = make_clip(w, h, clip.frame_count());
  out.metadata.qp = qp;

  double samples[kB * kB], recon[kB * kB];

  // Frame 0: intra, plain 8x8 transform coding in 8-bit units.
  {
    const Tensor& src = clip.frames[0];
    Tensor& dst = out.reconstruction.frames[0];
    int64_t bits = 0;
    for (int y0 = 0; y0 < h; y0 += kB)
      for (int x0 = 0; x0 < w; x0 += kB) {
        for (int y = 0; y < kB; ++y)
          for (int x = 0; x < kB; ++x)
            samples[y * kB + x] = src[static_cast<int64_t>(y0 + y) * w + x0 + x] * 255.0;
        bits += code_block(samples, step, recon);
        for (int y = 0; y < kB; ++y)
          for (int x = 0; x < kB; ++x)
            dst[static_cast<int64_t>(y0 + y) * w + x0 + x] =
                std::clamp(static_cast<float>(recon[y * kB + x] / 255.0), 0.0f, 1.0f);
      }
    out.metadata.intra_bits = bits;
    out.metadata.bits = bits;
  }

  // Frames t >= 1: motion-compensated prediction from the previous
  // reconstruction, then transform-coded residual.
  for (int t = 1; t < clip.frame_count(); ++t) {
    const Tensor& src = clip.frames[static_cast<size_t>(t)];
    const Tensor& ref = out.reconstruction.frames[static_cast<size_t>(t - 1)];
    Tensor& dst = out.reconstruction.frames[static_cast<size_t>(t)];
    MvGrid grid = motion_search(ref, src);
    int64_t bits = 8 * static_cast<int64_t>(grid.dx.size());  // 8 bits per motion vector
    for (int by = 0; by < grid.grid_h; ++by)
      for (int bx = 0; bx < grid.grid_w; ++bx) {
        int y0 = by * kB, x0 = bx * kB;
        int dx = grid.dx[static_cast<size_t>(by) * grid.grid_w + bx];
        int dy = grid.dy[static_cast<size_t>(by) * grid.grid_w + bx];
        for (int y = 0; y < kB; ++y)
          for (int x = 0; x < kB; ++x) {
            double pred = ref[static_cast<int64_t>(y0 + y + dy) * w + (x0 + x + dx)];
            samples[y * kB + x] =
                (src[static_cast<int64_t>(y0 + y) * w + x0 + x] - pred) * 255.0;
          }
        bits += code_block(samples, step, recon);
        for (int y = 0; y < kB; ++y)
          for (int x = 0; x < kB; ++x) {
            double pred = ref[static_cast<int64_t>(y0 + y + dy) * w + (x0 + x + dx)];
            dst[static_cast<int64_t>(y0 + y) * w + x0 + x] =
                std::clamp(static_cast<float>(pred + recon[y * kB + x] / 255.0), 0.0f, 1.0f);
          }
      }
    out.metadata.bits += bits;
    out.metadata.mv.push_back(std::move(grid));
  }
  return out;
}

void save_metadata(const CodecMetadata& meta, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::Format, "cannot open for writing: " + path);
  os.write("TVM1", 4);
  auto put_u16 = [&](uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); };
  auto put_u64 = [&](uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); };
  put_u16(static_cast<uint16_t>(meta.qp));
  put_u64(static_cast<uint64_t>(meta.bits));
  put_u64(static_cast<uint64_t>(meta.intra_bits));
  int gw = meta.mv.empty() ? 0 : meta.mv[0].grid_w;
  int gh = meta.mv.empty() ? 0 : meta.mv[0].grid_h;
  put_u16(static_cast<uint16_t>(gw));
  put_u16(static_cast<uint16_t>(gh));
  put_u16(static_cast<uint16_t>(meta.mv.size()));
  for (const MvGrid& g : meta.mv)
    for (size_t i = 0; i < g.dx.size(); ++i) {
      os.write(reinterpret_cast<const char*>(&g.dx[i]), 1);
      os.write(reinterpret_cast<const char*>(&g.dy[i]), 1);
    }
  if (!os) fail(ErrorKind::Format, "write failed: " + path);
}

CodecMetadata load_metadata(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::Format, "cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TVM1", 4) != 0) fail(ErrorKind::Format, "bad metadata magic");
  auto get_u16 = [&]() {
    uint16_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 2);
    return v;
  };
  auto get_u64 = [&]() {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  CodecMetadata meta;
  meta.qp = get_u16();
  meta.bits = static_cast<int64_t>(get_u64());
  meta.intra_bits = static_cast<int64_t>(get_u64());
  int gw = get_u16(), gh = get_u16(), n = get_u16();
  if (!is) fail(ErrorKind::Format, "truncated metadata header");
  for (int t = 0; t < n; ++t) {
    MvGrid g;
    g.grid_w = gw;
    g.grid_h = gh;
    g.dx.resize(static_cast<size_t>(gw) * gh);
    g.dy.resize(static_cast<size_t>(gw) * gh);
    for (size_t i = 0; i < g.dx.size(); ++i) {
      is.read(reinterpret_cast<char*>(&g.dx[i]), 1);
      is.read(reinterpret_cast<char*>(&g.dy[i]), 1);
    }
    meta.mv.push_back(std::move(g));
  }
  if (!is) fail(ErrorKind::Format, "truncated metadata payload");
  return meta;
}

double quantization_error_bound(int qp) {
  // Per-pixel bound: sum over coefficients of |basis product| times qstep/2.
  const auto& b = dct_basis();
  double worst = 0.0;
  for (int i = 0; i < kB; ++i)
    for (int j = 0; j < kB; ++j) {
      double s = 0.0;
      for (int u = 0; u < kB; ++u)
        for (int v = 0; v < kB; ++v)
          s += std::abs(b[static_cast<size_t>(u) * kB + i] * b[static_cast<size_t>(v) * kB + j]);
      worst = std::max(worst, s);
    }
  return worst * qstep(qp) / 2.0;
}

}  // namespace tvr
