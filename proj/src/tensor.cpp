#include "tvr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

namespace tvr {

namespace {

int64_t shape_size(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) fail(ErrorKind::InvalidShape, "non-positive extent in shape");
    n *= d;
  }
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    fail(ErrorKind::InvalidShape, std::string(op) + ": operand shapes differ");
}

// All tracked operands must live on the same tape.
Tape* merge_tape(std::initializer_list<const Tensor*> ts) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->tracked()) continue;
    if (tape && tape != t->tape())
      fail(ErrorKind::InvalidShape, "operands recorded on different tapes");
    tape = t->tape();
  }
  return tape;
}

void accum(std::vector<float>& dst, const std::vector<float>& g) {
  for (size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

}  // namespace

// ---- Tensor ----

Tensor::Tensor(std::vector<int> shape)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<float>>(static_cast<size_t>(shape_size(shape_)), 0.0f)) {}

Tensor::Tensor(std::vector<int> shape, std::vector<float> values) : shape_(std::move(shape)) {
  if (static_cast<int64_t>(values.size()) != shape_size(shape_))
    fail(ErrorKind::InvalidShape, "value count does not match shape");
  data_ = std::make_shared<std::vector<float>>(std::move(values));
}

Tensor Tensor::scalar(double v) {
  Tensor t({1}, {static_cast<float>(v)});
  t.scalar_cache_ = v;
  t.has_scalar_cache_ = true;
  return t;
}

Tensor Tensor::full(std::vector<int> shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_->begin(), t.data_->end(), value);
  return t;
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : *t.data_) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

Tensor Tensor::uniform(std::vector<int> shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  for (auto& v : *t.data_) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

double Tensor::item() const {
  if (has_scalar_cache_) return scalar_cache_;
  if (size() != 1) fail(ErrorKind::InvalidShape, "item() on non-scalar tensor");
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.tape_ = nullptr;
  t.node_ = -1;
  return t;
}

void Tensor::assign_values(const Tensor& src) {
  check_same_shape(*this, src, "assign_values");
  std::memcpy(data_->data(), src.data(), static_cast<size_t>(size()) * sizeof(float));
  has_scalar_cache_ = false;
}

// ---- Tape ----

Tensor Tape::watch(const Tensor& t) {
  if (!t.defined()) fail(ErrorKind::InvalidShape, "watch on undefined tensor");
  if (t.tracked()) {
    if (t.tape() != this) fail(ErrorKind::InvalidShape, "tensor tracked by another tape");
    return t;
  }
  Tensor out = t;
  auto it = watched_.find(t.buffer_id());
  if (it != watched_.end()) {
    out.node_ = it->second;
  } else {
    out.node_ = emplace(t.size(), nullptr);
    watched_.emplace(t.buffer_id(), out.node_);
  }
  out.tape_ = this;
  return out;
}

int Tape::emplace(int64_t out_size, BackFn back) {
  nodes_.push_back(Node{out_size, std::move(back)});
  return static_cast<int>(nodes_.size()) - 1;
}

std::vector<float>& Tape::grad_buf(int node) {
  auto& g = grads_[static_cast<size_t>(node)];
  if (g.empty()) g.assign(static_cast<size_t>(nodes_[static_cast<size_t>(node)].size), 0.0f);
  return g;
}

void Tape::backward(const Tensor& root) {
  if (root.size() != 1) fail(ErrorKind::InvalidShape, "backward root must be scalar");
  backward(root, {1.0f});
}

void Tape::backward(const Tensor& root, std::vector<float> seed) {
  if (consumed_) fail(ErrorKind::Training, "tape already consumed; re-record before backward");
  if (!root.tracked() || root.tape() != this)
    fail(ErrorKind::Training, "backward root is not recorded on this tape");
  if (static_cast<int64_t>(seed.size()) != root.size())
    fail(ErrorKind::InvalidShape, "seed size does not match root");
  consumed_ = true;
  grads_.assign(nodes_.size(), {});
  grads_[static_cast<size_t>(root.node())] = std::move(seed);
  for (int i = root.node(); i >= 0; --i) {
    auto& g = grads_[static_cast<size_t>(i)];
    if (g.empty()) continue;
    if (nodes_[static_cast<size_t>(i)].back) nodes_[static_cast<size_t>(i)].back(*this, g);
  }
}

std::vector<float> Tape::grad(const Tensor& t) const {
  int node = -1;
  if (t.tracked() && t.tape() == this) {
    node = t.node();
  } else {
    auto it = watched_.find(t.buffer_id());
    if (it != watched_.end()) node = it->second;
  }
  if (node < 0) fail(ErrorKind::Training, "tensor was never recorded on this tape");
  const auto& g = grads_[static_cast<size_t>(node)];
  if (g.empty()) return std::vector<float>(static_cast<size_t>(t.size()), 0.0f);
  return g;
}

bool Tape::has(const Tensor& t) const {
  if (t.tracked() && t.tape() == this) return true;
  return watched_.find(t.buffer_id()) != watched_.end();
}

// ---- op helpers ----

namespace {

using Buf = std::shared_ptr<std::vector<float>>;

// Snapshot of an input at record time. Copying pins the values a backward
// closure differentiates at, which keeps gradients consistent under parameter
// updates and value reassignment.
Buf buf_of(const Tensor& t) { return std::make_shared<std::vector<float>>(t.values()); }

}  // namespace

// Elementwise binary with custom forward/backward kernels.
template <typename FwdFn, typename BackA, typename BackB>
static Tensor ew_binary(const char* name, const Tensor& a, const Tensor& b, FwdFn fwd,
                        BackA back_a, BackB back_b) {
  check_same_shape(a, b, name);
  Tape* tape = merge_tape({&a, &b});
  const int64_t n = a.size();
  Tensor out(a.shape());
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(a[i], b[i]);
  if (tape) {
    int pa = a.node(), pb = b.node();
    Buf da = buf_of(a), db = buf_of(b);
    out = tape->adopt(std::move(out), tape->emplace(n, [pa, pb, da, db, back_a, back_b](Tape& tp,
                                                                  const std::vector<float>& g) {
      if (pa >= 0) {
        auto& ga = tp.grad_buf(pa);
        for (size_t i = 0; i < g.size(); ++i) ga[i] += back_a((*da)[i], (*db)[i]) * g[i];
      }
      if (pb >= 0) {
        auto& gb = tp.grad_buf(pb);
        for (size_t i = 0; i < g.size(); ++i) gb[i] += back_b((*da)[i], (*db)[i]) * g[i];
      }
    }));
  }
  return out;
}

template <typename FwdFn, typename DerivFn>
static Tensor ew_unary(const Tensor& a, FwdFn fwd, DerivFn deriv) {
  Tape* tape = merge_tape({&a});
  const int64_t n = a.size();
  Tensor out(a.shape());
  for (int64_t i = 0; i < n; ++i) out[i] = fwd(a[i]);
  if (tape) {
    int pa = a.node();
    Buf da = buf_of(a);
    out = tape->adopt(std::move(out), tape->emplace(n, [pa, da, deriv](Tape& tp, const std::vector<float>& g) {
      if (pa < 0) return;
      auto& ga = tp.grad_buf(pa);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += deriv((*da)[i]) * g[i];
    }));
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return ew_binary(
      "add", a, b, [](float x, float y) { return x + y; }, [](float, float) { return 1.0f; },
      [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return ew_binary(
      "sub", a, b, [](float x, float y) { return x - y; }, [](float, float) { return 1.0f; },
      [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return ew_binary(
      "hadamard", a, b, [](float x, float y) { return x * y; },
      [](float, float y) { return y; }, [](float x, float) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return ew_binary(
      "div", a, b, [](float x, float y) { return x / y; },
      [](float, float y) { return 1.0f / y; },
      [](float x, float y) { return -x / (y * y); });
}

Tensor add_scalar(const Tensor& a, double s) {
  float fs = static_cast<float>(s);
  return ew_unary(a, [fs](float x) { return x + fs; }, [](float) { return 1.0f; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  float fs = static_cast<float>(s);
  return ew_unary(a, [fs](float x) { return x * fs; }, [fs](float) { return fs; });
}

namespace {
inline float exp_clamped(float x) { return std::exp(std::clamp(x, -80.0f, 80.0f)); }
inline float sigmoid_v(float x) { return 1.0f / (1.0f + exp_clamped(-x)); }

thread_local uint64_t g_kink_hash = 0;
thread_local bool g_kink_active = false;

inline void kink_note(uint64_t v) {
  if (g_kink_active) g_kink_hash = (g_kink_hash ^ v) * 1099511628211ull;
}

}  // namespace

void kink_probe_begin() {
  g_kink_hash = 1469598103934665603ull;
  g_kink_active = true;
}

uint64_t kink_probe_end() {
  g_kink_active = false;
  return g_kink_hash;
}

bool kink_probe_active() { return g_kink_active; }

void kink_note_branch(uint64_t v) { kink_note(v); }

Tensor exp_op(const Tensor& a) {
  return ew_unary(a, [](float x) { return exp_clamped(x); },
                  [](float x) { return (x > -80.0f && x < 80.0f) ? exp_clamped(x) : 0.0f; });
}

Tensor sigmoid(const Tensor& a) {
  return ew_unary(a, [](float x) { return sigmoid_v(x); },
                  [](float x) {
                    float s = sigmoid_v(x);
                    return s * (1.0f - s);
                  });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  float k = static_cast<float>(slope);
  if (kink_probe_active())
    for (int64_t i = 0; i < a.size(); ++i) kink_note(a[i] >= 0.0f ? 2u : 3u);
  return ew_unary(a, [k](float x) { return x >= 0.0f ? x : k * x; },
                  [k](float x) { return x >= 0.0f ? 1.0f : k; });
}

Tensor softplus(const Tensor& a) {
  return ew_unary(a,
                  [](float x) { return x > 30.0f ? x : std::log1p(exp_clamped(x)); },
                  [](float x) { return sigmoid_v(x); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  float flo = static_cast<float>(lo), fhi = static_cast<float>(hi);
  if (kink_probe_active())
    for (int64_t i = 0; i < a.size(); ++i)
      kink_note(a[i] <= flo ? 5u : (a[i] >= fhi ? 6u : 7u));
  return ew_unary(a, [flo, fhi](float x) { return std::clamp(x, flo, fhi); },
                  [flo, fhi](float x) { return (x > flo && x < fhi) ? 1.0f : 0.0f; });
}

Tensor scale_activation(const Tensor& u, double gamma) {
  if (gamma <= 0) fail(ErrorKind::InvalidSpec, "scale_activation: gamma must be positive");
  float g = static_cast<float>(gamma);
  return ew_unary(u,
                  [g](float x) { return std::exp(g * (2.0f * sigmoid_v(x) - 1.0f)); },
                  [g](float x) {
                    float s = sigmoid_v(x);
                    float f = std::exp(g * (2.0f * s - 1.0f));
                    return f * g * 2.0f * s * (1.0f - s);
                  });
}

Tensor quantize8_ste(const Tensor& a) {
  if (kink_probe_active())
    for (int64_t i = 0; i < a.size(); ++i)
      kink_note(static_cast<uint64_t>(static_cast<int64_t>(std::nearbyint(a[i] * 255.0f)) + (1 << 20)));
  return ew_unary(a,
                  [](float x) { return static_cast<float>(std::nearbyint(x * 255.0f)) / 255.0f; },
                  [](float) { return 1.0f; });
}

Tensor grad_noise(const Tensor& a, double alpha, Rng* rng) {
  if (alpha < 0.0 || alpha > 1.0) fail(ErrorKind::InvalidSpec, "grad_noise: alpha outside [0,1]");
  Tape* tape = merge_tape({&a});
  Tensor out(a.shape(), a.values());
  if (tape) {
    int pa = a.node();
    out = tape->adopt(std::move(out), tape->emplace(a.size(), [pa, alpha, rng](Tape& tp, const std::vector<float>& g) {
      if (pa < 0) return;
      double sq = 0.0;
      for (float v : g) sq += static_cast<double>(v) * v;
      double rms = std::sqrt(sq / static_cast<double>(g.size()));
      auto& ga = tp.grad_buf(pa);
      for (size_t i = 0; i < g.size(); ++i) {
        double noise = rng ? rng->normal() : 0.0;
        ga[i] += static_cast<float>((1.0 - alpha) * g[i] + alpha * rms * noise);
      }
    }));
  }
  return out;
}

// ---- structure ops ----

Tensor concat_ch(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail(ErrorKind::InvalidShape, "concat_ch: empty input");
  for (const Tensor& t : parts)
    if (t.rank() != 3) fail(ErrorKind::InvalidShape, "concat_ch expects [C,H,W] tensors");
  int h = parts[0].dim(1), w = parts[0].dim(2);
  int c_total = 0;
  std::vector<const Tensor*> ptrs;
  for (const Tensor& t : parts) {
    if (t.dim(1) != h || t.dim(2) != w)
      fail(ErrorKind::InvalidShape, "concat_ch: spatial dims differ");
    c_total += t.dim(0);
    ptrs.push_back(&t);
  }
  Tape* tape = nullptr;
  for (const Tensor* t : ptrs) {
    Tape* tt = merge_tape({t});
    if (tt) {
      if (tape && tape != tt) fail(ErrorKind::InvalidShape, "concat_ch: mixed tapes");
      tape = tt;
    }
  }
  Tensor out({c_total, h, w});
  int64_t off = 0;
  for (const Tensor& t : parts) {
    std::memcpy(out.data() + off, t.data(), static_cast<size_t>(t.size()) * sizeof(float));
    off += t.size();
  }
  if (tape) {
    std::vector<int> pnodes;
    std::vector<int64_t> sizes;
    for (const Tensor& t : parts) {
      pnodes.push_back(t.node());
      sizes.push_back(t.size());
    }
    out = tape->adopt(std::move(out), tape->emplace(out.size(), [pnodes, sizes](Tape& tp, const std::vector<float>& g) {
      int64_t off2 = 0;
      for (size_t k = 0; k < pnodes.size(); ++k) {
        if (pnodes[k] >= 0) {
          auto& gp = tp.grad_buf(pnodes[k]);
          for (int64_t i = 0; i < sizes[k]; ++i) gp[static_cast<size_t>(i)] += g[static_cast<size_t>(off2 + i)];
        }
        off2 += sizes[k];
      }
    }));
  }
  return out;
}

Tensor slice_ch(const Tensor& a, int c0, int c1) {
  if (a.rank() != 3) fail(ErrorKind::InvalidShape, "slice_ch expects [C,H,W]");
  if (c0 < 0 || c1 > a.dim(0) || c0 >= c1) fail(ErrorKind::InvalidShape, "slice_ch: bad range");
  Tape* tape = merge_tape({&a});
  int h = a.dim(1), w = a.dim(2);
  int64_t plane = static_cast<int64_t>(h) * w;
  Tensor out({c1 - c0, h, w});
  std::memcpy(out.data(), a.data() + c0 * plane, static_cast<size_t>(out.size()) * sizeof(float));
  if (tape) {
    int pa = a.node();
    int64_t off = c0 * plane, n = out.size();
    out = tape->adopt(std::move(out), tape->emplace(n, [pa, off, n](Tape& tp, const std::vector<float>& g) {
      if (pa < 0) return;
      auto& ga = tp.grad_buf(pa);
      for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(off + i)] += g[static_cast<size_t>(i)];
    }));
  }
  return out;
}

Tensor upsample2(const Tensor& a) {
  if (a.rank() != 3) fail(ErrorKind::InvalidShape, "upsample2 expects [C,H,W]");
  Tape* tape = merge_tape({&a});
  int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < 2 * h; ++y)
      for (int x = 0; x < 2 * w; ++x)
        out[(static_cast<int64_t>(ci) * 2 * h + y) * 2 * w + x] =
            a[(static_cast<int64_t>(ci) * h + y / 2) * w + x / 2];
  if (tape) {
    int pa = a.node();
    out = tape->adopt(std::move(out), tape->emplace(out.size(), [pa, c, h, w](Tape& tp, const std::vector<float>& g) {
      if (pa < 0) return;
      auto& ga = tp.grad_buf(pa);
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < 2 * h; ++y)
          for (int x = 0; x < 2 * w; ++x)
            ga[(static_cast<size_t>(ci) * h + y / 2) * w + x / 2] +=
                g[(static_cast<size_t>(ci) * 2 * h + y) * 2 * w + x];
    }));
  }
  return out;
}

Tensor avgpool2(const Tensor& a) {
  if (a.rank() != 3) fail(ErrorKind::InvalidShape, "avgpool2 expects [C,H,W]");
  int c = a.dim(0), h = a.dim(1), w = a.dim(2);
  if (h % 2 != 0 || w % 2 != 0) fail(ErrorKind::InvalidGeometry, "avgpool2: odd extent");
  Tape* tape = merge_tape({&a});
  Tensor out({c, h / 2, w / 2});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h / 2; ++y)
      for (int x = 0; x < w / 2; ++x) {
        float s = 0.0f;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            s += a[(static_cast<int64_t>(ci) * h + 2 * y + dy) * w + 2 * x + dx];
        out[(static_cast<int64_t>(ci) * (h / 2) + y) * (w / 2) + x] = s * 0.25f;
      }
  if (tape) {
    int pa = a.node();
    out = tape->adopt(std::move(out), tape->emplace(out.size(), [pa, c, h, w](Tape& tp, const std::vector<float>& g) {
      if (pa < 0) return;
      auto& ga = tp.grad_buf(pa);
      for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h / 2; ++y)
          for (int x = 0; x < w / 2; ++x) {
            float gv = 0.25f * g[(static_cast<size_t>(ci) * (h / 2) + y) * (w / 2) + x];
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx)
                ga[(static_cast<size_t>(ci) * h + 2 * y + dy) * w + 2 * x + dx] += gv;
          }
    }));
  }
  return out;
}

// ---- NN ops ----

Tensor conv2d(const Tensor& input, const Tensor& kernel, int stride, int padding) {
  if (input.rank() != 3 || kernel.rank() != 4)
    fail(ErrorKind::InvalidShape, "conv2d expects input [C,H,W] and kernel [Co,Ci,kh,kw]");
  int ci = input.dim(0), h = input.dim(1), w = input.dim(2);
  int co = kernel.dim(0), kci = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kci != ci) fail(ErrorKind::InvalidShape, "conv2d: channel mismatch");
  if (kh % 2 == 0 || kw % 2 == 0) fail(ErrorKind::InvalidGeometry, "conv2d: kernel extents must be odd");
  if (padding < 0 || stride < 1) fail(ErrorKind::InvalidGeometry, "conv2d: bad stride/padding");
  if ((h + 2 * padding - kh) % stride != 0 || (w + 2 * padding - kw) % stride != 0)
    fail(ErrorKind::InvalidGeometry, "conv2d: non-integer output extent");
  int oh = (h + 2 * padding - kh) / stride + 1;
  int ow = (w + 2 * padding - kw) / stride + 1;
  Tape* tape = merge_tape({&input, &kernel});

  Tensor out({co, oh, ow});
  const float* in = input.data();
  const float* kn = kernel.data();
  float* o = out.data();
  auto in_at = [&](int c, int y, int x) -> float {
    return in[(static_cast<int64_t>(c) * h + y) * w + x];
  };
  for (int c = 0; c < co; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float acc = 0.0f;
        int iy0 = oy * stride - padding, ix0 = ox * stride - padding;
        for (int cc = 0; cc < ci; ++cc) {
          const float* kp = kn + ((static_cast<int64_t>(c) * ci + cc) * kh) * kw;
          for (int ky = 0; ky < kh; ++ky) {
            int iy = iy0 + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              int ix = ix0 + kx;
              if (ix < 0 || ix >= w) continue;
              acc += in_at(cc, iy, ix) * kp[ky * kw + kx];
            }
          }
        }
        o[(static_cast<int64_t>(c) * oh + oy) * ow + ox] = acc;
      }
    }
  }

  if (tape) {
    int pi = input.node(), pk = kernel.node();
    Buf din = buf_of(input), dkn = buf_of(kernel);
    out = tape->adopt(std::move(out), tape->emplace(
        out.size(),
        [pi, pk, din, dkn, ci, h, w, co, kh, kw, oh, ow, stride,
         padding](Tape& tp, const std::vector<float>& g) {
          const float* in2 = din->data();
          const float* kn2 = dkn->data();
          std::vector<float>* gi = pi >= 0 ? &tp.grad_buf(pi) : nullptr;
          std::vector<float>* gk = pk >= 0 ? &tp.grad_buf(pk) : nullptr;
          for (int c = 0; c < co; ++c) {
            for (int oy = 0; oy < oh; ++oy) {
              for (int ox = 0; ox < ow; ++ox) {
                float gv = g[(static_cast<size_t>(c) * oh + oy) * ow + ox];
                if (gv == 0.0f) continue;
                int iy0 = oy * stride - padding, ix0 = ox * stride - padding;
                for (int cc = 0; cc < ci; ++cc) {
                  for (int ky = 0; ky < kh; ++ky) {
                    int iy = iy0 + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < kw; ++kx) {
                      int ix = ix0 + kx;
                      if (ix < 0 || ix >= w) continue;
                      size_t iidx = (static_cast<size_t>(cc) * h + iy) * w + ix;
                      size_t kidx = ((static_cast<size_t>(c) * ci + cc) * kh + ky) * kw + kx;
                      if (gi) (*gi)[iidx] += kn2[kidx] * gv;
                      if (gk) (*gk)[kidx] += in2[iidx] * gv;
                    }
                  }
                }
              }
            }
          }
        }));
  }
  return out;
}

Tensor bias_add(const Tensor& x, const Tensor& b) {
  if (x.rank() != 3 || b.rank() != 1 || b.dim(0) != x.dim(0))
    fail(ErrorKind::InvalidShape, "bias_add: bias must be [C] matching input channels");
  Tape* tape = merge_tape({&x, &b});
  int c = x.dim(0);
  int64_t plane = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  Tensor out(x.shape());
  for (int ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < plane; ++i) out[ci * plane + i] = x[ci * plane + i] + b[ci];
  if (tape) {
    int px = x.node(), pb = b.node();
    out = tape->adopt(std::move(out), tape->emplace(out.size(), [px, pb, c, plane](Tape& tp, const std::vector<float>& g) {
      if (px >= 0) accum(tp.grad_buf(px), g);
      if (pb >= 0) {
        auto& gb = tp.grad_buf(pb);
        for (int ci = 0; ci < c; ++ci) {
          double s = 0.0;
          for (int64_t i = 0; i < plane; ++i) s += g[static_cast<size_t>(ci * plane + i)];
          gb[static_cast<size_t>(ci)] += static_cast<float>(s);
        }
      }
    }));
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 1 || w.rank() != 2 || w.dim(1) != x.dim(0))
    fail(ErrorKind::InvalidShape, "linear: expects x [n], w [m,n]");
  int n = x.dim(0), m = w.dim(0);
  if (b.defined() && (b.rank() != 1 || b.dim(0) != m))
    fail(ErrorKind::InvalidShape, "linear: bias must be [m]");
  Tape* tape = b.defined() ? merge_tape({&x, &w, &b}) : merge_tape({&x, &w});
  Tensor out({m});
  for (int i = 0; i < m; ++i) {
    double acc = b.defined() ? b[i] : 0.0;
    for (int j = 0; j < n; ++j) acc += static_cast<double>(w[static_cast<int64_t>(i) * n + j]) * x[j];
    out[i] = static_cast<float>(acc);
  }
  if (tape) {
    int px = x.node(), pw = w.node(), pb = b.defined() ? b.node() : -1;
    Buf dx = buf_of(x), dw = buf_of(w);
    out = tape->adopt(std::move(out), tape->emplace(m, [px, pw, pb, dx, dw, n, m](Tape& tp, const std::vector<float>& g) {
      if (px >= 0) {
        auto& gx = tp.grad_buf(px);
        for (int j = 0; j < n; ++j) {
          double s = 0.0;
          for (int i = 0; i < m; ++i) s += static_cast<double>((*dw)[static_cast<size_t>(i) * n + j]) * g[static_cast<size_t>(i)];
          gx[static_cast<size_t>(j)] += static_cast<float>(s);
        }
      }
      if (pw >= 0) {
        auto& gw = tp.grad_buf(pw);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j)
            gw[static_cast<size_t>(i) * n + j] += g[static_cast<size_t>(i)] * (*dx)[static_cast<size_t>(j)];
      }
      if (pb >= 0) accum(tp.grad_buf(pb), g);
    }));
  }
  return out;
}

Tensor channel_scale(const Tensor& x, const Tensor& s) {
  if (x.rank() != 3 || s.rank() != 1 || s.dim(0) != x.dim(0))
    fail(ErrorKind::InvalidShape, "channel_scale: scale must be [C]");
  Tape* tape = merge_tape({&x, &s});
  int c = x.dim(0);
  int64_t plane = static_cast<int64_t>(x.dim(1)) * x.dim(2);
  Tensor out(x.shape());
  for (int ci = 0; ci < c; ++ci)
    for (int64_t i = 0; i < plane; ++i) out[ci * plane + i] = x[ci * plane + i] * s[ci];
  if (tape) {
    int px = x.node(), ps = s.node();
    Buf dx = buf_of(x), ds = buf_of(s);
    out = tape->adopt(std::move(out), tape->emplace(out.size(), [px, ps, dx, ds, c, plane](Tape& tp,
                                                                     const std::vector<float>& g) {
      if (px >= 0) {
        auto& gx = tp.grad_buf(px);
        for (int ci = 0; ci < c; ++ci)
          for (int64_t i = 0; i < plane; ++i)
            gx[static_cast<size_t>(ci * plane + i)] += g[static_cast<size_t>(ci * plane + i)] * (*ds)[static_cast<size_t>(ci)];
      }
      if (ps >= 0) {
        auto& gs = tp.grad_buf(ps);
        for (int ci = 0; ci < c; ++ci) {
          double acc = 0.0;
          for (int64_t i = 0; i < plane; ++i)
            acc += static_cast<double>(g[static_cast<size_t>(ci * plane + i)]) * (*dx)[static_cast<size_t>(ci * plane + i)];
          gs[static_cast<size_t>(ci)] += static_cast<float>(acc);
        }
      }
    }));
  }
  return out;
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
  Tape* tape = merge_tape({&a});
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) acc += a[i];
  Tensor out = Tensor::scalar(acc);
  if (tape) {
    int pa = a.node();
    int64_t n = a.size();
    out = tape->adopt(std::move(out), tape->emplace(1, [pa, n](Tape& tp, const std::vector<float>& g) {
      if (pa < 0) return;
      auto& ga = tp.grad_buf(pa);
      for (int64_t i = 0; i < n; ++i) ga[static_cast<size_t>(i)] += g[0];
    }));
  }
  return out;
}

Tensor mean(const Tensor& a) {
  Tape* tape = merge_tape({&a});
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) acc += a[i];
  double n = static_cast<double>(a.size());
  Tensor out = Tensor::scalar(acc / n);
  if (tape) {
    int pa = a.node();
    int64_t cnt = a.size();
    float inv = static_cast<float>(1.0 / n);
    out = tape->adopt(std::move(out), tape->emplace(1, [pa, cnt, inv](Tape& tp, const std::vector<float>& g) {
      if (pa < 0) return;
      auto& ga = tp.grad_buf(pa);
      for (int64_t i = 0; i < cnt; ++i) ga[static_cast<size_t>(i)] += inv * g[0];
    }));
  }
  return out;
}

Tensor l1(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "l1");
  Tape* tape = merge_tape({&a, &b});
  if (kink_probe_active())
    for (int64_t i = 0; i < a.size(); ++i) kink_note(a[i] >= b[i] ? 11u : 12u);
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(a[i]) - b[i]);
  double n = static_cast<double>(a.size());
  Tensor out = Tensor::scalar(acc / n);
  if (tape) {
    int pa = a.node(), pb = b.node();
    Buf da = buf_of(a), db = buf_of(b);
    float inv = static_cast<float>(1.0 / n);
    out = tape->adopt(std::move(out), tape->emplace(1, [pa, pb, da, db, inv](Tape& tp, const std::vector<float>& g) {
      for (size_t i = 0; i < da->size(); ++i) {
        float d = (*da)[i] - (*db)[i];
        float s = (d > 0.0f) ? 1.0f : (d < 0.0f ? -1.0f : 0.0f);
        if (pa >= 0) tp.grad_buf(pa)[i] += s * inv * g[0];
        if (pb >= 0) tp.grad_buf(pb)[i] -= s * inv * g[0];
      }
    }));
  }
  return out;
}

Tensor l2(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "l2");
  Tape* tape = merge_tape({&a, &b});
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  double n = static_cast<double>(a.size());
  Tensor out = Tensor::scalar(acc / n);
  if (tape) {
    int pa = a.node(), pb = b.node();
    Buf da = buf_of(a), db = buf_of(b);
    float inv = static_cast<float>(2.0 / n);
    out = tape->adopt(std::move(out), tape->emplace(1, [pa, pb, da, db, inv](Tape& tp, const std::vector<float>& g) {
      for (size_t i = 0; i < da->size(); ++i) {
        float d = (*da)[i] - (*db)[i];
        if (pa >= 0) tp.grad_buf(pa)[i] += d * inv * g[0];
        if (pb >= 0) tp.grad_buf(pb)[i] -= d * inv * g[0];
      }
    }));
  }
  return out;
}

// ---- finite differences ----

Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
  if (eps <= 0.0) fail(ErrorKind::InvalidEps, "fd_gradient: eps must be positive");
  Tensor probe(x.shape(), x.values());
  Tensor grad(x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    float orig = probe[i];
    float xp = static_cast<float>(static_cast<double>(orig) + eps);
    float xm = static_cast<float>(static_cast<double>(orig) - eps);
    probe[i] = xp;
    double fp = f(probe);
    probe[i] = xm;
    double fm = f(probe);
    probe[i] = orig;
    double h = static_cast<double>(xp) - static_cast<double>(xm);
    grad[i] = static_cast<float>((fp - fm) / h);
  }
  return grad;
}

Tensor fd_gradient_masked(const std::function<double(const Tensor&)>& f, const Tensor& x,
                          double eps, std::vector<bool>* valid) {
  if (eps <= 0.0) fail(ErrorKind::InvalidEps, "fd_gradient_masked: eps must be positive");
  Tensor probe(x.shape(), x.values());
  Tensor grad(x.shape());
  if (valid) valid->assign(static_cast<size_t>(x.size()), true);
  for (int64_t i = 0; i < x.size(); ++i) {
    float orig = probe[i];
    float xp = static_cast<float>(static_cast<double>(orig) + eps);
    float xm = static_cast<float>(static_cast<double>(orig) - eps);
    probe[i] = xp;
    kink_probe_begin();
    double fp = f(probe);
    uint64_t sig_p = kink_probe_end();
    probe[i] = xm;
    kink_probe_begin();
    double fm = f(probe);
    uint64_t sig_m = kink_probe_end();
    probe[i] = orig;
    double h = static_cast<double>(xp) - static_cast<double>(xm);
    grad[i] = static_cast<float>((fp - fm) / h);
    if (valid) (*valid)[static_cast<size_t>(i)] = sig_p == sig_m;
  }
  return grad;
}

Tensor fd_gradient_adaptive(const std::function<double(const Tensor&)>& f, const Tensor& x,
                            const std::vector<double>& eps_list, std::vector<bool>* valid) {
  if (eps_list.empty()) fail(ErrorKind::InvalidEps, "fd_gradient_adaptive: empty eps list");
  Tensor probe(x.shape(), x.values());
  Tensor grad(x.shape());
  if (valid) valid->assign(static_cast<size_t>(x.size()), false);
  for (int64_t i = 0; i < x.size(); ++i) {
    float orig = probe[i];
    for (double eps : eps_list) {
      float xp = static_cast<float>(static_cast<double>(orig) + eps);
      float xm = static_cast<float>(static_cast<double>(orig) - eps);
      probe[i] = xp;
      kink_probe_begin();
      double fp = f(probe);
      uint64_t sig_p = kink_probe_end();
      probe[i] = xm;
      kink_probe_begin();
      double fm = f(probe);
      uint64_t sig_m = kink_probe_end();
      probe[i] = orig;
      if (sig_p != sig_m) continue;
      double h = static_cast<double>(xp) - static_cast<double>(xm);
      grad[i] = static_cast<float>((fp - fm) / h);
      if (valid) (*valid)[static_cast<size_t>(i)] = true;
      break;
    }
  }
  return grad;
}

double rel_error_masked(const Tensor& a, const Tensor& b, const std::vector<bool>& valid,
                        double* coverage) {
  if (a.shape() != b.shape() || static_cast<int64_t>(valid.size()) != a.size())
    fail(ErrorKind::InvalidShape, "rel_error_masked: mismatched inputs");
  double num = 0.0, den = 0.0;
  int64_t kept = 0;
  for (int64_t i = 0; i < a.size(); ++i) {
    if (!valid[static_cast<size_t>(i)]) continue;
    double d = static_cast<double>(a[i]) - b[i];
    num += d * d;
    den += static_cast<double>(b[i]) * b[i];
    ++kept;
  }
  if (coverage) *coverage = static_cast<double>(kept) / static_cast<double>(a.size());
  if (kept == 0) return 0.0;
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

double rel_error(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "rel_error");
  double num = 0.0, den = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    num += d * d;
    den += static_cast<double>(b[i]) * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

// ---- Adam ----

Adam::Adam(std::vector<Tensor*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (Tensor* p : params_) {
    m_.emplace_back(static_cast<size_t>(p->size()), 0.0);
    v_.emplace_back(static_cast<size_t>(p->size()), 0.0);
  }
}

void Adam::step(Tape& tape) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor* p = params_[k];
    if (!tape.has(*p)) continue;  // parameter unused in this graph
    std::vector<float> g = tape.grad(*p);
    for (int64_t i = 0; i < p->size(); ++i) {
      size_t ii = static_cast<size_t>(i);
      double gi = g[ii];
      m_[k][ii] = beta1_ * m_[k][ii] + (1.0 - beta1_) * gi;
      v_[k][ii] = beta2_ * v_[k][ii] + (1.0 - beta2_) * gi * gi;
      double mh = m_[k][ii] / bc1;
      double vh = v_[k][ii] / bc2;
      (*p)[i] = static_cast<float>((*p)[i] - lr_ * mh / (std::sqrt(vh) + eps_));
    }
  }
}

}  // namespace tvr
