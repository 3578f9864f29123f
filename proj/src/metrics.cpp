#include "tvr/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numeric>

namespace tvr {

namespace {

void check_geometry(const VideoClip& a, const VideoClip& b, const char* op) {
  if (a.width != b.width || a.height != b.height || a.frame_count() != b.frame_count())
    fail(ErrorKind::InvalidShape, std::string(op) + ": clip geometry mismatch");
}

double frame_mse(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double mse_to_db(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace

double psnr_frame(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) fail(ErrorKind::InvalidShape, "psnr_frame: shape mismatch");
  return mse_to_db(frame_mse(a, b));
}

double psnr(const VideoClip& a, const VideoClip& b, PsnrMode mode) {
  check_geometry(a, b, "psnr");
  if (mode == PsnrMode::AvgLog) {
    double acc = 0.0;
    for (int i = 0; i < a.frame_count(); ++i)
      acc += mse_to_db(frame_mse(a.frames[static_cast<size_t>(i)], b.frames[static_cast<size_t>(i)]));
    return acc / a.frame_count();
  }
  double acc = 0.0;
  for (int i = 0; i < a.frame_count(); ++i)
    acc += frame_mse(a.frames[static_cast<size_t>(i)], b.frames[static_cast<size_t>(i)]);
  return mse_to_db(acc / a.frame_count());
}

double sigma_psnr(const VideoClip& a, const VideoClip& b) {
  check_geometry(a, b, "sigma_psnr");
  std::vector<double> db;
  for (int i = 0; i < a.frame_count(); ++i)
    db.push_back(mse_to_db(frame_mse(a.frames[static_cast<size_t>(i)], b.frames[static_cast<size_t>(i)])));
  double m = std::accumulate(db.begin(), db.end(), 0.0) / static_cast<double>(db.size());
  double var = 0.0;
  for (double v : db) var += (v - m) * (v - m);
  return std::sqrt(var / static_cast<double>(db.size()));
}

double ssim_frame(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) fail(ErrorKind::InvalidShape, "ssim_frame: shape mismatch");
  const int h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  constexpr int kWin = 8;
  constexpr double kC1 = 0.01 * 0.01;  // (0.01*MAX)^2, MAX=1
  constexpr double kC2 = 0.03 * 0.03;
  if (h < kWin || w < kWin) fail(ErrorKind::InvalidShape, "ssim_frame: frame smaller than window");
  double acc = 0.0;
  int64_t count = 0;
  for (int y = 0; y + kWin <= h; ++y) {
    for (int x = 0; x + kWin <= w; ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = 0; dy < kWin; ++dy)
        for (int dx = 0; dx < kWin; ++dx) {
          double va = a[static_cast<int64_t>(y + dy) * w + (x + dx)];
          double vb = b[static_cast<int64_t>(y + dy) * w + (x + dx)];
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      constexpr double n = kWin * kWin;
      double mu_a = sa / n, mu_b = sb / n;
      double var_a = saa / n - mu_a * mu_a;
      double var_b = sbb / n - mu_b * mu_b;
      double cov = sab / n - mu_a * mu_b;
      double num = (2 * mu_a * mu_b + kC1) * (2 * cov + kC2);
      double den = (mu_a * mu_a + mu_b * mu_b + kC1) * (var_a + var_b + kC2);
      acc += num / den;
      ++count;
    }
  }
  return acc / static_cast<double>(count);
}

double ssim(const VideoClip& a, const VideoClip& b) {
  check_geometry(a, b, "ssim");
  double acc = 0.0;
  for (int i = 0; i < a.frame_count(); ++i)
    acc += ssim_frame(a.frames[static_cast<size_t>(i)], b.frames[static_cast<size_t>(i)]);
  return acc / a.frame_count();
}

namespace {

// Naive DFT along one axis; frames are tiny so O(n^2) per line is fine.
void dft_lines(std::vector<std::complex<double>>& data, int lines, int n, int stride,
               int line_stride) {
  std::vector<std::complex<double>> tmp(static_cast<size_t>(n));
  std::vector<std::complex<double>> twiddle(static_cast<size_t>(n) * n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j) {
      double ang = -2.0 * M_PI * k * j / n;
      twiddle[static_cast<size_t>(k) * n + j] = {std::cos(ang), std::sin(ang)};
    }
  for (int l = 0; l < lines; ++l) {
    std::complex<double>* base = data.data() + static_cast<size_t>(l) * line_stride;
    for (int k = 0; k < n; ++k) {
      std::complex<double> acc{0.0, 0.0};
      for (int j = 0; j < n; ++j) acc += base[static_cast<size_t>(j) * stride] * twiddle[static_cast<size_t>(k) * n + j];
      tmp[static_cast<size_t>(k)] = acc;
    }
    for (int k = 0; k < n; ++k) base[static_cast<size_t>(k) * stride] = tmp[static_cast<size_t>(k)];
  }
}

}  // namespace

Tensor log_magnitude_spectrum(const Tensor& frame) {
  if (frame.rank() != 2 && !(frame.rank() == 3 && frame.dim(0) == 1))
    fail(ErrorKind::InvalidShape, "log_magnitude_spectrum: expects a 2-D frame");
  const int h = frame.dim(frame.rank() - 2), w = frame.dim(frame.rank() - 1);
  std::vector<std::complex<double>> data(static_cast<size_t>(h) * w);
  for (int64_t i = 0; i < frame.size(); ++i) data[static_cast<size_t>(i)] = {static_cast<double>(frame[i]), 0.0};
  dft_lines(data, h, w, 1, w);  // rows
  dft_lines(data, w, h, w, 1);  // columns
  Tensor out({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int sy = (y + h / 2) % h;  // FFT shift: DC to center
      int sx = (x + w / 2) % w;
      out[static_cast<int64_t>(sy) * w + sx] =
          static_cast<float>(std::log1p(std::abs(data[static_cast<size_t>(y) * w + x])));
    }
  return out;
}

Histogram histogram(const Tensor& values, int bins, double lo, double hi) {
  if (bins < 1) fail(ErrorKind::InvalidSpec, "histogram: bins must be positive");
  Histogram hist;
  hist.lo = lo;
  hist.hi = hi;
  hist.counts.assign(static_cast<size_t>(bins), 0.0);
  if (hi <= lo) {
    hist.counts[0] = static_cast<double>(values.size());
    return hist;
  }
  double scale = bins / (hi - lo);
  for (int64_t i = 0; i < values.size(); ++i) {
    int b = static_cast<int>((values[i] - lo) * scale);
    b = std::clamp(b, 0, bins - 1);
    hist.counts[static_cast<size_t>(b)] += 1.0;
  }
  return hist;
}

double overlap_ratio(const Histogram& test, const Histogram& ref) {
  if (test.counts.size() != ref.counts.size())
    fail(ErrorKind::InvalidShape, "overlap_ratio: histogram bin counts differ");
  double inter = 0.0, area_ref = 0.0;
  for (size_t i = 0; i < ref.counts.size(); ++i) {
    inter += std::min(test.counts[i], ref.counts[i]);
    area_ref += ref.counts[i];
  }
  if (area_ref <= 0.0) return 100.0;  // degenerate reference: defined as full overlap
  return 100.0 * inter / area_ref;
}

double tof(const VideoClip& recon, const VideoClip& gt, const FlowFn& flow_fn) {
  check_geometry(recon, gt, "tof");
  if (recon.frame_count() < 2) fail(ErrorKind::InvalidLength, "tof: need >= 2 frames");
  double acc = 0.0;
  int64_t count = 0;
  for (int t = 1; t < recon.frame_count(); ++t) {
    Tensor fb = flow_fn(recon.frames[static_cast<size_t>(t - 1)], recon.frames[static_cast<size_t>(t)]);
    Tensor fg = flow_fn(gt.frames[static_cast<size_t>(t - 1)], gt.frames[static_cast<size_t>(t)]);
    for (int64_t i = 0; i < fb.size(); ++i) acc += std::abs(static_cast<double>(fb[i]) - fg[i]);
    count += fb.size();
  }
  return acc / static_cast<double>(count);
}

namespace {

// Plain bilinear backward warp (no tape); border-clamped sampling.
Tensor warp_plain(const Tensor& img, const Tensor& flow) {
  int h = img.dim(1), w = img.dim(2);
  int64_t plane = static_cast<int64_t>(h) * w;
  Tensor out(img.shape());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int64_t i = static_cast<int64_t>(y) * w + x;
      double sx = std::clamp(static_cast<double>(x) + flow[i], 0.0, static_cast<double>(w - 1));
      double sy = std::clamp(static_cast<double>(y) + flow[plane + i], 0.0, static_cast<double>(h - 1));
      int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      double fx = sx - x0, fy = sy - y0;
      out[i] = static_cast<float>(
          (1 - fy) * ((1 - fx) * img[static_cast<int64_t>(y0) * w + x0] + fx * img[static_cast<int64_t>(y0) * w + x1]) +
          fy * ((1 - fx) * img[static_cast<int64_t>(y1) * w + x0] + fx * img[static_cast<int64_t>(y1) * w + x1]));
    }
  return out;
}

}  // namespace

double warp_psnr(const VideoClip& clip, const FlowFn& flow_fn) {
  if (clip.frame_count() < 2) fail(ErrorKind::InvalidLength, "warp_psnr: need >= 2 frames");
  double acc_mse = 0.0;
  for (int t = 1; t < clip.frame_count(); ++t) {
    const Tensor& prev = clip.frames[static_cast<size_t>(t - 1)];
    const Tensor& cur = clip.frames[static_cast<size_t>(t)];
    // Flow from current to previous, so sampling prev at p+flow aligns it
    // with the current frame.
    Tensor f = flow_fn(cur, prev);
    Tensor warped = warp_plain(prev, f);
    acc_mse += frame_mse(warped, cur);
  }
  return mse_to_db(acc_mse / (clip.frame_count() - 1));
}

namespace {

// Least-squares cubic fit y(x) = c0 + c1 x + c2 x^2 + c3 x^3.
std::array<double, 4> polyfit3(const std::vector<double>& x, const std::vector<double>& y) {
  constexpr int kOrder = 4;
  double a[kOrder][kOrder] = {};
  double b[kOrder] = {};
  for (size_t k = 0; k < x.size(); ++k) {
    double p[2 * kOrder - 1];
    p[0] = 1.0;
    for (int i = 1; i < 2 * kOrder - 1; ++i) p[i] = p[i - 1] * x[k];
    for (int i = 0; i < kOrder; ++i) {
      for (int j = 0; j < kOrder; ++j) a[i][j] += p[i + j];
      b[i] += p[i] * y[k];
    }
  }
  // Gaussian elimination with partial pivoting.
  for (int col = 0; col < kOrder; ++col) {
    int piv = col;
    for (int r = col + 1; r < kOrder; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    std::swap(a[piv], a[col]);
    std::swap(b[piv], b[col]);
    if (std::abs(a[col][col]) < 1e-12) fail(ErrorKind::InvalidSpec, "bd_rate: singular fit");
    for (int r = col + 1; r < kOrder; ++r) {
      double f = a[r][col] / a[col][col];
      for (int c = col; c < kOrder; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  std::array<double, 4> coef{};
  for (int r = kOrder - 1; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < kOrder; ++c) acc -= a[r][c] * coef[static_cast<size_t>(c)];
    coef[static_cast<size_t>(r)] = acc / a[r][r];
  }
  return coef;
}

double polyint_eval(const std::array<double, 4>& c, double x) {
  // Antiderivative evaluated at x.
  return x * (c[0] + x * (c[1] / 2 + x * (c[2] / 3 + x * c[3] / 4)));
}

}  // namespace

double bd_rate(const std::vector<RdPoint>& curve_a, const std::vector<RdPoint>& curve_b) {
  if (curve_a.size() < 4 || curve_b.size() < 4)
    fail(ErrorKind::InvalidSpec, "bd_rate: need at least 4 points per curve");
  std::vector<double> pa, ra, pb, rb;
  for (const RdPoint& p : curve_a) {
    if (p.bpp <= 0.0) fail(ErrorKind::InvalidSpec, "bd_rate: non-positive rate");
    pa.push_back(p.psnr);
    ra.push_back(std::log10(p.bpp));
  }
  for (const RdPoint& p : curve_b) {
    if (p.bpp <= 0.0) fail(ErrorKind::InvalidSpec, "bd_rate: non-positive rate");
    pb.push_back(p.psnr);
    rb.push_back(std::log10(p.bpp));
  }
  double lo = std::max(*std::min_element(pa.begin(), pa.end()),
                       *std::min_element(pb.begin(), pb.end()));
  double hi = std::min(*std::max_element(pa.begin(), pa.end()),
                       *std::max_element(pb.begin(), pb.end()));
  if (hi - lo < 1e-9)
    fail(ErrorKind::InvalidSpec, "bd_rate: insufficient PSNR overlap between curves");
  auto ca = polyfit3(pa, ra);
  auto cb = polyfit3(pb, rb);
  double int_a = polyint_eval(ca, hi) - polyint_eval(ca, lo);
  double int_b = polyint_eval(cb, hi) - polyint_eval(cb, lo);
  double avg_diff = (int_b - int_a) / (hi - lo);
  return (std::pow(10.0, avg_diff) - 1.0) * 100.0;
}

}  // namespace tvr
