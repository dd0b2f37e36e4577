// Independent reference implementations used to cross-check the library.
// Everything here is written as plain scalar loops against the documented
// conventions, deliberately sharing no code with src/.
#pragma once

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <vector>

namespace oracles {

// Rotation via Eigen's quaternion-backed AngleAxis, a different code path
// from the skew-matrix Rodrigues form in the library.
inline Eigen::Matrix3d rotation_from_axis_angle(const Eigen::Vector3d& aa) {
  const double theta = aa.norm();
  if (theta == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(theta, aa / theta).toRotationMatrix();
}

// Bilinear gather on a row-major plane with zero padding outside the
// raster. Matches the floor-corner convention.
inline double bilinear(const std::vector<double>& plane, int w, int h, double u, double v) {
  if (!std::isfinite(u) || !std::isfinite(v)) return 0.0;
  const int x0 = static_cast<int>(std::floor(u));
  const int y0 = static_cast<int>(std::floor(v));
  const double ax = u - x0;
  const double ay = v - y0;
  auto px = [&](int x, int y) -> double {
    if (x < 0 || x >= w || y < 0 || y >= h) return 0.0;
    return plane[static_cast<size_t>(y) * w + x];
  };
  return px(x0, y0) * (1 - ax) * (1 - ay) + px(x0 + 1, y0) * ax * (1 - ay) +
         px(x0, y0 + 1) * (1 - ax) * ay + px(x0 + 1, y0 + 1) * ax * ay;
}

// Direct convolution with same-padding, written index-by-index. `reflect`
// false means zero padding; true mirrors about the border pixel.
inline std::vector<double> conv2d(const std::vector<double>& in, int ci, int h, int w,
                                  const std::vector<double>& weight, int co, int k,
                                  const std::vector<double>& bias, int stride, bool reflect) {
  const int pad = k / 2;
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (w + 2 * pad - k) / stride + 1;
  auto fetch = [&](int c, int y, int x) -> double {
    if (y < 0 || y >= h) {
      if (!reflect) return 0.0;
      y = y < 0 ? -y : 2 * h - 2 - y;
    }
    if (x < 0 || x >= w) {
      if (!reflect) return 0.0;
      x = x < 0 ? -x : 2 * w - 2 - x;
    }
    return in[(static_cast<size_t>(c) * h + y) * w + x];
  };
  std::vector<double> out(static_cast<size_t>(co) * ho * wo);
  for (int c = 0; c < co; ++c)
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        double s = bias[c];
        for (int cc = 0; cc < ci; ++cc)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
              s += fetch(cc, oy * stride - pad + ky, ox * stride - pad + kx) *
                   weight[((static_cast<size_t>(c) * ci + cc) * k + ky) * k + kx];
        out[(static_cast<size_t>(c) * ho + oy) * wo + ox] = s;
      }
  return out;
}

// Per-pixel SSIM dissimilarity map (1-SSIM)/2, channel-averaged, with a
// 3x3 box filter and mirror padding, written as direct loops.
inline std::vector<double> ssim_map(const std::vector<double>& a, const std::vector<double>& b,
                                    int c, int h, int w) {
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  auto reflect = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  auto box = [&](auto&& f, int ch, int y, int x) {
    double s = 0.0;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) s += f(ch, reflect(y + dy, h), reflect(x + dx, w));
    return s / 9.0;
  };
  auto pa = [&](int ch, int y, int x) { return a[(static_cast<size_t>(ch) * h + y) * w + x]; };
  auto pb = [&](int ch, int y, int x) { return b[(static_cast<size_t>(ch) * h + y) * w + x]; };

  std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double mu_a = box(pa, ch, y, x);
        const double mu_b = box(pb, ch, y, x);
        const double e_aa = box([&](int cc, int yy, int xx) { return pa(cc, yy, xx) * pa(cc, yy, xx); }, ch, y, x);
        const double e_bb = box([&](int cc, int yy, int xx) { return pb(cc, yy, xx) * pb(cc, yy, xx); }, ch, y, x);
        const double e_ab = box([&](int cc, int yy, int xx) { return pa(cc, yy, xx) * pb(cc, yy, xx); }, ch, y, x);
        const double va = e_aa - mu_a * mu_a;
        const double vb = e_bb - mu_b * mu_b;
        const double vab = e_ab - mu_a * mu_b;
        const double ssim = ((2 * mu_a * mu_b + c1) * (2 * vab + c2)) /
                            ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
        out[static_cast<size_t>(y) * w + x] += (1.0 - ssim) / 2.0 / c;
      }
  return out;
}

// Edge-aware smoothness of mean-normalized inverse depth, direct loops.
inline double smoothness(const std::vector<double>& depth, const std::vector<double>& image,
                         int c, int h, int w) {
  std::vector<double> inv(depth.size());
  double mean = 0.0;
  for (size_t i = 0; i < depth.size(); ++i) {
    inv[i] = 1.0 / depth[i];
    mean += inv[i];
  }
  mean /= static_cast<double>(depth.size());
  for (auto& v : inv) v /= mean;

  auto img = [&](int ch, int y, int x) { return image[(static_cast<size_t>(ch) * h + y) * w + x]; };
  double term_x = 0.0, term_y = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 1 < w; ++x) {
      double gx = 0.0;
      for (int ch = 0; ch < c; ++ch) gx += std::abs(img(ch, y, x + 1) - img(ch, y, x));
      gx /= c;
      term_x += std::abs(inv[static_cast<size_t>(y) * w + x + 1] - inv[static_cast<size_t>(y) * w + x]) *
                std::exp(-gx);
    }
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x < w; ++x) {
      double gy = 0.0;
      for (int ch = 0; ch < c; ++ch) gy += std::abs(img(ch, y + 1, x) - img(ch, y, x));
      gy /= c;
      term_y += std::abs(inv[(static_cast<size_t>(y) + 1) * w + x] - inv[static_cast<size_t>(y) * w + x]) *
                std::exp(-gy);
    }
  return term_x / (static_cast<double>(h) * (w - 1)) + term_y / (static_cast<double>(h - 1) * w);
}

// Lower median by full sort.
inline double sorted_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

// Projects a single lifted pixel through a rigid transform and back,
// step by step with plain arithmetic.
struct PinholeOracle {
  double fx, fy, cx, cy;

  Eigen::Vector3d lift(double u, double v, double d) const {
    return {d * (u - cx) / fx, d * (v - cy) / fy, d};
  }
  // Returns (u, v, z) after transforming by R, t.
  Eigen::Vector3d reproject(double u, double v, double d, const Eigen::Matrix3d& r,
                            const Eigen::Vector3d& t) const {
    const Eigen::Vector3d p = r * lift(u, v, d) + t;
    return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy, p.z()};
  }
};

}  // namespace oracles
