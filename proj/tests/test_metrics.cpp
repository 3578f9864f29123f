#include <cmath>

#include "doctest.h"
#include "tvr/metrics.hpp"

using namespace tvr;

namespace {

VideoClip uniform_clip(int w, int h, int n, float v) {
  VideoClip clip = make_clip(w, h, n);
  for (Tensor& f : clip.frames)
    for (int64_t i = 0; i < f.size(); ++i) f[i] = v;
  return clip;
}

}  // namespace

TEST_CASE("identical clips hit the PSNR cap with zero sigma") {
  VideoClip a = uniform_clip(16, 16, 3, 0.5f);
  CHECK(psnr(a, a, PsnrMode::AvgLog) == doctest::Approx(99.0));
  CHECK(psnr(a, a, PsnrMode::AvgMse) == doctest::Approx(99.0));
  CHECK(sigma_psnr(a, a) == doctest::Approx(0.0));
  CHECK(ssim(a, a) == doctest::Approx(1.0));
}

TEST_CASE("uniform error of one 8-bit step gives the closed-form PSNR") {
  VideoClip a = uniform_clip(16, 16, 2, 0.5f);
  VideoClip b = uniform_clip(16, 16, 2, 0.5f + 1.0f / 255.0f);
  double expect = 20.0 * std::log10(255.0);  // 48.1308 dB
  CHECK(psnr(a, b, PsnrMode::AvgLog) == doctest::Approx(expect).epsilon(1e-4));
  CHECK(psnr(a, b, PsnrMode::AvgMse) == doctest::Approx(expect).epsilon(1e-4));
}

TEST_CASE("avg-mse PSNR pools MSE across frames") {
  // frame MSEs m and 4m -> avg-mse PSNR = 10*log10(2/(5m))
  double m = 1e-4;
  VideoClip a = uniform_clip(16, 16, 2, 0.5f);
  VideoClip b = a;
  b.frames[0] = Tensor(a.frames[0].shape(), a.frames[0].values());
  b.frames[1] = Tensor(a.frames[1].shape(), a.frames[1].values());
  float d1 = static_cast<float>(std::sqrt(m)), d2 = 2.0f * d1;
  for (int64_t i = 0; i < b.frames[0].size(); ++i) b.frames[0][i] += d1;
  for (int64_t i = 0; i < b.frames[1].size(); ++i) b.frames[1][i] += d2;
  double expect = 10.0 * std::log10(2.0 / (5.0 * m));
  CHECK(psnr(a, b, PsnrMode::AvgMse) == doctest::Approx(expect).epsilon(1e-3));
  CHECK_THROWS_AS(psnr(a, uniform_clip(8, 8, 2, 0.0f)), Error);
}

TEST_CASE("constant frame spectrum is zero except DC") {
  Tensor frame = Tensor::full({16, 16}, 0.4f);
  Tensor spec = log_magnitude_spectrum(frame);
  int w = 16;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < w; ++x) {
      float v = spec[static_cast<int64_t>(y) * w + x];
      if (y == 8 && x == 8)
        CHECK(v > 1.0f);  // DC bin, shifted to center
      else
        CHECK(std::abs(v) < 1e-4f);
    }
}

TEST_CASE("overlap ratio trivial cases") {
  Rng rng(3);
  Tensor v = Tensor::uniform({256}, rng, 0.0, 4.0);
  Histogram h = histogram(v, 64, 0.0, 4.0);
  CHECK(overlap_ratio(h, h) == doctest::Approx(100.0));
  // scaling both histograms by the same factor leaves the ratio unchanged
  Histogram h2 = h;
  for (double& c : h2.counts) c *= 3.5;
  Histogram ref2 = h;
  for (double& c : ref2.counts) c *= 3.5;
  Tensor w = Tensor::uniform({256}, rng, 0.0, 4.0);
  Histogram hw = histogram(w, 64, 0.0, 4.0);
  Histogram hw2 = hw;
  for (double& c : hw2.counts) c *= 3.5;
  CHECK(overlap_ratio(hw, h) == doctest::Approx(overlap_ratio(hw2, ref2)));
  // disjoint histograms
  Histogram lo = histogram(Tensor::full({64}, 0.1f), 64, 0.0, 4.0);
  Histogram hi = histogram(Tensor::full({64}, 3.9f), 64, 0.0, 4.0);
  CHECK(overlap_ratio(lo, hi) == doctest::Approx(0.0));
}

TEST_CASE("tOF and warp_psnr trivial cases") {
  Rng rng(9);
  VideoClip clip = make_clip(16, 16, 3);
  for (Tensor& f : clip.frames)
    for (int64_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(rng.uniform());
  // dummy flow estimator: always zero flow
  FlowFn zero_flow = [](const Tensor& a, const Tensor&) {
    return Tensor({2, a.dim(1), a.dim(2)});
  };
  CHECK(tof(clip, clip, zero_flow) == doctest::Approx(0.0));
  VideoClip stat = uniform_clip(16, 16, 3, 0.3f);
  CHECK(warp_psnr(stat, zero_flow) == doctest::Approx(99.0));
  CHECK_THROWS_AS(tof(uniform_clip(8, 8, 1, 0.0f), uniform_clip(8, 8, 1, 0.0f), zero_flow), Error);
}

TEST_CASE("bd_rate of identical curves is zero") {
  std::vector<RdPoint> a = {{0.1, 30.0, 0.9}, {0.2, 33.0, 0.92}, {0.4, 36.0, 0.94}, {0.8, 39.0, 0.96}};
  CHECK(std::abs(bd_rate(a, a)) < 1e-9);
}

TEST_CASE("doubling all bitrates costs +100%") {
  std::vector<RdPoint> a = {{0.1, 30.0, 0.9}, {0.2, 33.0, 0.92}, {0.4, 36.0, 0.94}, {0.8, 39.0, 0.96}};
  std::vector<RdPoint> b = a;
  for (RdPoint& p : b) p.bpp *= 2.0;
  CHECK(bd_rate(a, b) == doctest::Approx(100.0).epsilon(1e-6));
  CHECK(bd_rate(b, a) == doctest::Approx(-50.0).epsilon(1e-6));
}

TEST_CASE("bd_rate rejects insufficient overlap") {
  std::vector<RdPoint> a = {{0.1, 30.0, 0.9}, {0.2, 31.0, 0.92}, {0.4, 32.0, 0.94}, {0.8, 33.0, 0.96}};
  std::vector<RdPoint> b = {{0.1, 40.0, 0.9}, {0.2, 41.0, 0.92}, {0.4, 42.0, 0.94}, {0.8, 43.0, 0.96}};
  CHECK_THROWS_AS(bd_rate(a, b), Error);
  CHECK_THROWS_AS(bd_rate({{0.1, 30.0, 0.9}}, a), Error);
}

TEST_CASE("bd_rate agrees with trapezoid integration of the fitted cubics") {
  // Independent oracle: rebuild the two cubic fits and integrate them
  // numerically instead of analytically.
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<RdPoint> a, b;
    double p = 28.0 + rng.uniform() * 2.0;
    double r = 0.05 + rng.uniform() * 0.05;
    for (int i = 0; i < 5; ++i) {
      a.push_back({r, p, 0.9});
      p += 2.0 + rng.uniform() * 2.0;
      r *= 1.8 + rng.uniform() * 0.6;
    }
    p = 28.5 + rng.uniform() * 2.0;
    r = 0.04 + rng.uniform() * 0.05;
    for (int i = 0; i < 5; ++i) {
      b.push_back({r, p, 0.9});
      p += 2.0 + rng.uniform() * 2.0;
      r *= 1.8 + rng.uniform() * 0.6;
    }
    double got = bd_rate(a, b);

    // trapezoid oracle over the fitted log-rate cubics
    auto fit = [](const std::vector<RdPoint>& pts) {
      // least squares via normal equations (same established method, but
      // integration below is numerical)
      std::vector<double> xs, ys;
      for (const RdPoint& q : pts) {
        xs.push_back(q.psnr);
        ys.push_back(std::log10(q.bpp));
      }
      double m[4][5] = {};
      for (size_t k = 0; k < xs.size(); ++k) {
        double px[7];
        px[0] = 1;
        for (int i = 1; i < 7; ++i) px[i] = px[i - 1] * xs[k];
        for (int i = 0; i < 4; ++i) {
          for (int j = 0; j < 4; ++j) m[i][j] += px[i + j];
          m[i][4] += px[i] * ys[k];
        }
      }
      for (int col = 0; col < 4; ++col) {
        int piv = col;
        for (int rr = col + 1; rr < 4; ++rr)
          if (std::abs(m[rr][col]) > std::abs(m[piv][col])) piv = rr;
        for (int c = 0; c < 5; ++c) std::swap(m[piv][c], m[col][c]);
        for (int rr = col + 1; rr < 4; ++rr) {
          double f = m[rr][col] / m[col][col];
          for (int c = col; c < 5; ++c) m[rr][c] -= f * m[col][c];
        }
      }
      std::array<double, 4> coef{};
      for (int rr = 3; rr >= 0; --rr) {
        double acc = m[rr][4];
        for (int c = rr + 1; c < 4; ++c) acc -= m[rr][c] * coef[static_cast<size_t>(c)];
        coef[static_cast<size_t>(rr)] = acc / m[rr][rr];
      }
      return coef;
    };
    auto ca = fit(a), cb = fit(b);
    double lo = std::max(a.front().psnr, b.front().psnr);
    double hi = std::min(a.back().psnr, b.back().psnr);
    auto eval = [](const std::array<double, 4>& c, double x) {
      return c[0] + x * (c[1] + x * (c[2] + x * c[3]));
    };
    const int kSteps = 20000;
    double ia = 0.0, ib = 0.0;
    for (int i = 0; i < kSteps; ++i) {
      double x0 = lo + (hi - lo) * i / kSteps;
      double x1 = lo + (hi - lo) * (i + 1) / kSteps;
      ia += 0.5 * (eval(ca, x0) + eval(ca, x1)) * (x1 - x0);
      ib += 0.5 * (eval(cb, x0) + eval(cb, x1)) * (x1 - x0);
    }
    double expect = (std::pow(10.0, (ib - ia) / (hi - lo)) - 1.0) * 100.0;
    CHECK(got == doctest::Approx(expect).epsilon(1e-3));
  }
}
