#include "tvr/flow.hpp"

#include <algorithm>
#include <cmath>

namespace tvr {

namespace {

constexpr float kSplatEps = 1e-6f;

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Block-center SAD search of cur against ref; returns per-block offsets.
void block_search(const Tensor& ref, const Tensor& cur, int block, int range,
                  std::vector<float>& bdx, std::vector<float>& bdy, int& gw, int& gh) {
  int h = cur.dim(1), w = cur.dim(2);
  gw = w / block;
  gh = h / block;
  bdx.assign(static_cast<size_t>(gw) * gh, 0.0f);
  bdy.assign(static_cast<size_t>(gw) * gh, 0.0f);
  for (int by = 0; by < gh; ++by)
    for (int bx = 0; bx < gw; ++bx) {
      int y0 = by * block, x0 = bx * block;
      double best_sad = -1.0;
      int best_dx = 0, best_dy = 0, best_mag = 0;
      for (int dy = -range; dy <= range; ++dy) {
        int ry = y0 + dy;
        if (ry < 0 || ry + block > h) continue;
        for (int dx = -range; dx <= range; ++dx) {
          int rx = x0 + dx;
          if (rx < 0 || rx + block > w) continue;
          double sad = 0.0;
          for (int y = 0; y < block; ++y)
            for (int x = 0; x < block; ++x)
              sad += std::abs(static_cast<double>(cur[static_cast<int64_t>(y0 + y) * w + x0 + x]) -
                              ref[static_cast<int64_t>(ry + y) * w + rx + x]);
          int mag = dx * dx + dy * dy;
          bool better = best_sad < 0.0 || sad < best_sad - 1e-12 ||
                        (std::abs(sad - best_sad) <= 1e-12 && mag < best_mag);
          if (better) {
            best_sad = sad;
            best_dx = dx;
            best_dy = dy;
            best_mag = mag;
          }
        }
      }
      bdx[static_cast<size_t>(by) * gw + bx] = static_cast<float>(best_dx);
      bdy[static_cast<size_t>(by) * gw + bx] = static_cast<float>(best_dy);
      if (kink_probe_active())
        kink_note_branch(static_cast<uint64_t>((best_dx + 64) * 256 + best_dy + 64));
    }
}

// Bilinear interpolation of block-center values to a per-pixel field.
void upsample_grid(const std::vector<float>& grid, int gw, int gh, int block, Tensor& out,
                   int channel) {
  int h = out.dim(1), w = out.dim(2);
  int64_t plane = static_cast<int64_t>(h) * w;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double gx = (x + 0.5) / block - 0.5;
      double gy = (y + 0.5) / block - 0.5;
      int x0 = clampi(static_cast<int>(std::floor(gx)), 0, gw - 1);
      int y0 = clampi(static_cast<int>(std::floor(gy)), 0, gh - 1);
      int x1 = std::min(x0 + 1, gw - 1), y1 = std::min(y0 + 1, gh - 1);
      double fx = std::clamp(gx - x0, 0.0, 1.0);
      double fy = std::clamp(gy - y0, 0.0, 1.0);
      double v = (1 - fy) * ((1 - fx) * grid[static_cast<size_t>(y0) * gw + x0] +
                             fx * grid[static_cast<size_t>(y0) * gw + x1]) +
                 fy * ((1 - fx) * grid[static_cast<size_t>(y1) * gw + x0] +
                       fx * grid[static_cast<size_t>(y1) * gw + x1]);
      out[channel * plane + static_cast<int64_t>(y) * w + x] = static_cast<float>(v);
    }
}

}  // namespace

std::pair<Tensor, Tensor> block_flow(const Tensor& i0, const Tensor& i1, int block, int range) {
  if (i0.shape() != i1.shape() || i0.rank() != 3 || i0.dim(0) != 1)
    fail(ErrorKind::InvalidShape, "block_flow: expects matching [1,H,W] frames");
  int h = i0.dim(1), w = i0.dim(2);
  if (h % block != 0 || w % block != 0)
    fail(ErrorKind::InvalidGeometry, "block_flow: geometry not a multiple of block");
  std::vector<float> bdx, bdy;
  int gw = 0, gh = 0;
  Tensor f01({2, h, w}), f10({2, h, w});
  // Matching an I0 block at p against I1 at p+d gives I0(p) ~ I1(p+d), so d
  // is F_0->1 directly (where the content went, and where to fetch it from).
  block_search(i1, i0, block, range, bdx, bdy, gw, gh);
  upsample_grid(bdx, gw, gh, block, f01, 0);
  upsample_grid(bdy, gw, gh, block, f01, 1);
  block_search(i0, i1, block, range, bdx, bdy, gw, gh);
  upsample_grid(bdx, gw, gh, block, f10, 0);
  upsample_grid(bdy, gw, gh, block, f10, 1);
  return {f01, f10};
}

std::pair<Tensor, Tensor> scale_flow(const Tensor& f01, const Tensor& f10, double t) {
  if (t <= 0.0 || t >= 1.0) fail(ErrorKind::InvalidTime, "scale_flow: t must be in (0,1)");
  return {mul_scalar(f01, t), mul_scalar(f10, 1.0 - t)};
}

Tensor backward_warp(const Tensor& img, const Tensor& flow) {
  if (img.rank() != 3 || flow.rank() != 3 || flow.dim(0) != 2 || flow.dim(1) != img.dim(1) ||
      flow.dim(2) != img.dim(2))
    fail(ErrorKind::InvalidShape, "backward_warp: flow must be [2,H,W] matching the image");
  Tape* tape = img.tracked() ? img.tape() : nullptr;
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int64_t plane = static_cast<int64_t>(h) * w;
  Tensor out(img.shape());

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int64_t i = static_cast<int64_t>(y) * w + x;
      double sx = std::clamp(static_cast<double>(x) + flow[i], 0.0, static_cast<double>(w - 1));
      double sy =
          std::clamp(static_cast<double>(y) + flow[plane + i], 0.0, static_cast<double>(h - 1));
      int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      float fx = static_cast<float>(sx - x0), fy = static_cast<float>(sy - y0);
      for (int cc = 0; cc < c; ++cc) {
        const float* sp = img.data() + cc * plane;
        out[cc * plane + i] = (1 - fy) * ((1 - fx) * sp[static_cast<int64_t>(y0) * w + x0] +
                                          fx * sp[static_cast<int64_t>(y0) * w + x1]) +
                              fy * ((1 - fx) * sp[static_cast<int64_t>(y1) * w + x0] +
                                    fx * sp[static_cast<int64_t>(y1) * w + x1]);
      }
    }

  if (tape) {
    int pi = img.node();
    Tensor flow_copy(flow.shape(), flow.values());
    out = tape->adopt(
        std::move(out),
        tape->emplace(out.size(), [pi, c, h, w, plane, flow_copy](Tape& tp2,
                                                                  const std::vector<float>& g) {
          if (pi < 0) return;
          auto& gi = tp2.grad_buf(pi);
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              int64_t i = static_cast<int64_t>(y) * w + x;
              double sx = std::clamp(static_cast<double>(x) + flow_copy[i], 0.0,
                                     static_cast<double>(w - 1));
              double sy = std::clamp(static_cast<double>(y) + flow_copy[plane + i], 0.0,
                                     static_cast<double>(h - 1));
              int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
              int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
              float fx = static_cast<float>(sx - x0), fy = static_cast<float>(sy - y0);
              for (int cc = 0; cc < c; ++cc) {
                float gv = g[static_cast<size_t>(cc * plane + i)];
                gi[static_cast<size_t>(cc * plane + static_cast<int64_t>(y0) * w + x0)] +=
                    (1 - fy) * (1 - fx) * gv;
                gi[static_cast<size_t>(cc * plane + static_cast<int64_t>(y0) * w + x1)] +=
                    (1 - fy) * fx * gv;
                gi[static_cast<size_t>(cc * plane + static_cast<int64_t>(y1) * w + x0)] +=
                    fy * (1 - fx) * gv;
                gi[static_cast<size_t>(cc * plane + static_cast<int64_t>(y1) * w + x1)] +=
                    fy * fx * gv;
              }
            }
        }));
  }
  return out;
}

namespace {

// Splat weights for one source pixel; shared by forward pass and backward.
struct Splat {
  int64_t idx[4];
  float w[4];
  int count;
};

Splat splat_of(int x, int y, const Tensor& flow, int h, int w, int64_t plane) {
  Splat s{};
  s.count = 0;
  int64_t i = static_cast<int64_t>(y) * w + x;
  double txf = x + flow[i];
  double tyf = y + flow[plane + i];
  int x0 = static_cast<int>(std::floor(txf)), y0 = static_cast<int>(std::floor(tyf));
  double fx = txf - x0, fy = tyf - y0;
  const double wts[4] = {(1 - fy) * (1 - fx), (1 - fy) * fx, fy * (1 - fx), fy * fx};
  const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
  for (int k = 0; k < 4; ++k) {
    if (xs[k] < 0 || xs[k] >= w || ys[k] < 0 || ys[k] >= h) continue;
    s.idx[s.count] = static_cast<int64_t>(ys[k]) * w + xs[k];
    s.w[s.count] = static_cast<float>(wts[k]);
    ++s.count;
  }
  return s;
}

}  // namespace

Tensor forward_warp(const Tensor& img, const Tensor& flow, Tensor* hole_mask) {
  if (img.rank() != 3 || flow.rank() != 3 || flow.dim(0) != 2 || flow.dim(1) != img.dim(1) ||
      flow.dim(2) != img.dim(2))
    fail(ErrorKind::InvalidShape, "forward_warp: flow must be [2,H,W] matching the image");
  Tape* tape = img.tracked() ? img.tape() : nullptr;
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);
  const int64_t plane = static_cast<int64_t>(h) * w;

  // Accumulated weights depend only on the flow.
  std::vector<float> weight(static_cast<size_t>(plane), 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Splat s = splat_of(x, y, flow, h, w, plane);
      for (int k = 0; k < s.count; ++k) weight[static_cast<size_t>(s.idx[k])] += s.w[k];
    }

  Tensor out(img.shape());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      Splat s = splat_of(x, y, flow, h, w, plane);
      int64_t i = static_cast<int64_t>(y) * w + x;
      for (int cc = 0; cc < c; ++cc) {
        float v = img[cc * plane + i];
        for (int k = 0; k < s.count; ++k) out[cc * plane + s.idx[k]] += s.w[k] * v;
      }
    }
  for (int64_t q = 0; q < plane; ++q) {
    float wt = weight[static_cast<size_t>(q)];
    if (wt > kSplatEps) {
      for (int cc = 0; cc < c; ++cc) out[cc * plane + q] /= wt;
    } else {
      for (int cc = 0; cc < c; ++cc) out[cc * plane + q] = 0.0f;
    }
  }
  if (hole_mask) {
    *hole_mask = Tensor({1, h, w});
    for (int64_t q = 0; q < plane; ++q)
      (*hole_mask)[q] = weight[static_cast<size_t>(q)] <= kSplatEps ? 1.0f : 0.0f;
  }

  if (tape) {
    int pi = img.node();
    Tensor flow_copy(flow.shape(), flow.values());
    std::vector<float> weight_copy = weight;
    out = tape->adopt(
        std::move(out),
        tape->emplace(out.size(), [pi, c, h, w, plane, flow_copy,
                                   weight_copy](Tape& tp2, const std::vector<float>& g) {
          if (pi < 0) return;
          auto& gi = tp2.grad_buf(pi);
          for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
              Splat s = splat_of(x, y, flow_copy, h, w, plane);
              int64_t i = static_cast<int64_t>(y) * w + x;
              for (int k = 0; k < s.count; ++k) {
                float wt = weight_copy[static_cast<size_t>(s.idx[k])];
                if (wt <= kSplatEps) continue;
                float coef = s.w[k] / wt;
                for (int cc = 0; cc < c; ++cc)
                  gi[static_cast<size_t>(cc * plane + i)] +=
                      coef * g[static_cast<size_t>(cc * plane + s.idx[k])];
              }
            }
        }));
  }
  return out;
}

Tensor hf_initial(const Tensor& i0, const Tensor& i1, double t, Tensor* holes) {
  auto [f01, f10] = block_flow(i0.detached(), i1.detached());
  auto [f0t, f1t] = scale_flow(f01, f10, t);
  Tensor h0, h1;
  Tensor w0 = forward_warp(i0, f0t, &h0);
  Tensor w1 = forward_warp(i1, f1t, &h1);
  if (holes) {
    *holes = Tensor({2, i0.dim(1), i0.dim(2)});
    std::copy(h0.data(), h0.data() + h0.size(), holes->data());
    std::copy(h1.data(), h1.data() + h1.size(), holes->data() + h0.size());
  }
  return sub(w0, w1);
}

ContextExtractor ContextExtractor::make(Rng& rng) {
  ContextExtractor e;
  const int widths[4] = {8, 16, 32, 64};
  int c_in = 1;
  for (int j = 0; j < 4; ++j) {
    e.layers[static_cast<size_t>(j)] = Conv2dLayer::make(c_in, widths[j], 3, rng);
    c_in = widths[j];
  }
  return e;
}

std::array<Tensor, 4> ContextExtractor::operator()(Tape* tape, const Tensor& frame) const {
  // conv at the incoming resolution, then pool to the level's scale
  std::array<Tensor, 4> feats;
  Tensor x = frame;
  for (int j = 0; j < 4; ++j) {
    x = avgpool2(leaky_relu(layers[static_cast<size_t>(j)](tape, x)));
    feats[static_cast<size_t>(j)] = x;
  }
  return feats;
}

void ContextExtractor::params(std::vector<Tensor*>& out) {
  for (auto& l : layers) l.params(out);
}

std::array<Tensor, 4> flow_pyramid(const Tensor& flow) {
  std::array<Tensor, 4> levels;
  // level 0 matches the first stride-2 feature map: half size, half magnitude
  Tensor f = mul_scalar(avgpool2(flow), 0.5);
  levels[0] = f;
  for (int j = 1; j < 4; ++j) {
    f = mul_scalar(avgpool2(f), 0.5);
    levels[static_cast<size_t>(j)] = f;
  }
  return levels;
}

ContextUnet ContextUnet::make(Rng& rng) {
  ContextUnet u;
  const int widths[4] = {8, 16, 32, 64};
  const int ctx[4] = {8, 16, 32, 64};
  int c_in = 3;  // z_init + two hole masks
  for (int j = 0; j < 4; ++j) {
    u.down[static_cast<size_t>(j)] = Conv2dLayer::make(c_in, widths[j], 3, rng);
    u.down_fuse[static_cast<size_t>(j)] =
        Conv2dLayer::make(widths[j] + 2 * ctx[j], widths[j], 3, rng);
    c_in = widths[j];
  }
  u.up[3] = Conv2dLayer::make(64, 32, 3, rng);
  u.up_fuse[2] = Conv2dLayer::make(64, 32, 3, rng);
  u.up[2] = Conv2dLayer::make(32, 16, 3, rng);
  u.up_fuse[1] = Conv2dLayer::make(32, 16, 3, rng);
  u.up[1] = Conv2dLayer::make(16, 8, 3, rng);
  u.up_fuse[0] = Conv2dLayer::make(16, 8, 3, rng);
  u.up[0] = Conv2dLayer::make(8, 8, 3, rng);
  u.head = Conv2dLayer::make(8, 2, 1, rng, 1, /*zero_init=*/true);
  return u;
}

Tensor ContextUnet::operator()(Tape* tape, const Tensor& z_init, const Tensor& holes,
                               const ContextPyramid& ctx) const {
  if (z_init.dim(1) % 16 != 0 || z_init.dim(2) % 16 != 0)
    fail(ErrorKind::InvalidGeometry, "hf synthesis requires geometry divisible by 16");
  Tensor x = concat_ch({z_init, holes});
  std::array<Tensor, 4> skips;
  for (int j = 0; j < 4; ++j) {
    x = avgpool2(leaky_relu(down[static_cast<size_t>(j)](tape, x)));
    x = concat_ch({x, ctx.c0[static_cast<size_t>(j)], ctx.c1[static_cast<size_t>(j)]});
    x = leaky_relu(down_fuse[static_cast<size_t>(j)](tape, x));
    skips[static_cast<size_t>(j)] = x;
  }
  for (int j = 3; j >= 1; --j) {
    x = leaky_relu(up[static_cast<size_t>(j)](tape, upsample2(x)));
    x = concat_ch({x, skips[static_cast<size_t>(j - 1)]});
    x = leaky_relu(up_fuse[static_cast<size_t>(j - 1)](tape, x));
  }
  x = leaky_relu(up[0](tape, upsample2(x)));
  Tensor rm = head(tape, x);
  Tensor residue = slice_ch(rm, 0, 1);
  Tensor mask = slice_ch(rm, 1, 2);
  Tensor m_norm = sigmoid(mask);                                        // (0,1)
  Tensor r_norm = add_scalar(mul_scalar(sigmoid(residue), 2.0), -1.0);  // (-1,1)
  // z = z_init * M' + R' * (1 - M')
  Tensor keep = mul(z_init, m_norm);
  Tensor fill = mul(r_norm, add_scalar(mul_scalar(m_norm, -1.0), 1.0));
  return add(keep, fill);
}

void ContextUnet::params(std::vector<Tensor*>& out) {
  for (auto& l : down) l.params(out);
  for (auto& l : down_fuse) l.params(out);
  for (auto& l : up) l.params(out);
  for (auto& l : up_fuse) l.params(out);
  head.params(out);
}

HfReconstructor HfReconstructor::make(Rng& rng) {
  HfReconstructor hf;
  hf.extractor = ContextExtractor::make(rng);
  hf.unet = ContextUnet::make(rng);
  return hf;
}

Tensor HfReconstructor::synthesize(Tape* tape, const Tensor& i0, const Tensor& i1,
                                   double t) const {
  Tensor holes;
  auto [f01, f10] = block_flow(i0.detached(), i1.detached());
  auto [f0t, f1t] = scale_flow(f01, f10, t);
  Tensor h0, h1;
  Tensor w0 = forward_warp(i0, f0t, &h0);
  Tensor w1 = forward_warp(i1, f1t, &h1);
  Tensor z_init = sub(w0, w1);
  holes = Tensor({2, i0.dim(1), i0.dim(2)});
  std::copy(h0.data(), h0.data() + h0.size(), holes.data());
  std::copy(h1.data(), h1.data() + h1.size(), holes.data() + h0.size());

  ContextPyramid ctx;
  std::array<Tensor, 4> feats0 = extractor(tape, i0);
  std::array<Tensor, 4> feats1 = extractor(tape, i1);
  std::array<Tensor, 4> p0 = flow_pyramid(f0t);
  std::array<Tensor, 4> p1 = flow_pyramid(f1t);
  for (int j = 0; j < 4; ++j) {
    ctx.c0[static_cast<size_t>(j)] =
        forward_warp(feats0[static_cast<size_t>(j)], p0[static_cast<size_t>(j)]);
    ctx.c1[static_cast<size_t>(j)] =
        forward_warp(feats1[static_cast<size_t>(j)], p1[static_cast<size_t>(j)]);
  }
  return unet(tape, z_init, holes, ctx);
}

void HfReconstructor::params(std::vector<Tensor*>& out) {
  extractor.params(out);
  unet.params(out);
}

}  // namespace tvr
