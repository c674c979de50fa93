// Photometric supervision (L1 + D-SSIM) with analytic image gradients, and
// the anisotropy scale regularizer.
//
// SSIM uses the 11x11 Gaussian window with sigma 1.5 and constants
// C1 = 0.01^2, C2 = 0.03^2 on the [0,1] range, computed per channel and
// averaged; windows are zero-padded at the borders.

#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <utility>
#include <vector>

#include "gscalib/errors.hpp"
#include "gscalib/image.hpp"
#include "gscalib/lie.hpp"

namespace gscalib {

struct LossReport {
  double total = 0.0;
  double photo = 0.0;
  double scale_reg = 0.0;
  Image d_image;  // dL/dImage for the rendered image
};

namespace detail {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

inline const std::array<double, kSsimWindow>& ssim_taps() {
  static const std::array<double, kSsimWindow> taps = [] {
    std::array<double, kSsimWindow> t{};
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
      const double u = i - (kSsimWindow - 1) / 2.0;
      t[static_cast<std::size_t>(i)] = std::exp(-u * u / (2.0 * kSsimSigma * kSsimSigma));
      sum += t[static_cast<std::size_t>(i)];
    }
    for (double& v : t) v /= sum;
    return t;
  }();
  return taps;
}

using Plane = Eigen::ArrayXXd;  // H x W

/// Separable Gaussian filter, zero-padded "same". Symmetric kernel, so the
/// operator is self-adjoint and reusable for the backward pass.
inline Plane gauss_filter(const Plane& in) {
  const auto& taps = ssim_taps();
  const int h = static_cast<int>(in.rows()), w = static_cast<int>(in.cols());
  const int r = kSsimWindow / 2;
  Plane tmp = Plane::Zero(h, w), out = Plane::Zero(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      const int k0 = std::max(-r, -x), k1 = std::min(r, w - 1 - x);
      for (int k = k0; k <= k1; ++k)
        acc += taps[static_cast<std::size_t>(k + r)] * in(y, x + k);
      tmp(y, x) = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    const int k0 = std::max(-r, -y), k1 = std::min(r, h - 1 - y);
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = k0; k <= k1; ++k)
        acc += taps[static_cast<std::size_t>(k + r)] * tmp(y + k, x);
      out(y, x) = acc;
    }
  }
  return out;
}

inline Plane channel(const Image& img, int c) {
  Plane p(img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) p(y, x) = img.at(y, x, c);
  return p;
}

}  // namespace detail

/// Mean SSIM over pixels and channels, plus d(meanSSIM)/d(rendered) when a
/// gradient buffer is supplied.
inline double ssim(const Image& rendered, const Image& observed, Image* d_rendered = nullptr) {
  require_same_shape(rendered, observed);
  using detail::Plane;
  const int h = rendered.height(), w = rendered.width();
  const double count = static_cast<double>(h) * w * 3.0;
  double total = 0.0;
  if (d_rendered && !d_rendered->same_shape(rendered)) *d_rendered = Image(h, w);

  for (int c = 0; c < 3; ++c) {
    const Plane x = detail::channel(rendered, c);
    const Plane y = detail::channel(observed, c);
    const Plane mu_x = detail::gauss_filter(x);
    const Plane mu_y = detail::gauss_filter(y);
    const Plane x2 = detail::gauss_filter(x * x);
    const Plane y2 = detail::gauss_filter(y * y);
    const Plane xy = detail::gauss_filter(x * y);
    const Plane var_x = x2 - mu_x * mu_x;
    const Plane var_y = y2 - mu_y * mu_y;
    const Plane cov = xy - mu_x * mu_y;

    const Plane a1 = 2.0 * mu_x * mu_y + detail::kSsimC1;
    const Plane a2 = 2.0 * cov + detail::kSsimC2;
    const Plane b1 = mu_x * mu_x + mu_y * mu_y + detail::kSsimC1;
    const Plane b2 = var_x + var_y + detail::kSsimC2;
    const Plane denom = b1 * b2;
    const Plane map = (a1 * a2) / denom;
    total += map.sum();

    if (d_rendered) {
      // partials w.r.t. the filtered statistics m = mu_x, p2 = E[x^2], q2 = E[xy]
      const Plane g_m = (a2 / denom) * (2.0 * mu_y) - (map / b1) * (2.0 * mu_x) +
                        (map / b2) * (2.0 * mu_x) - (2.0 * a1 / denom) * mu_y;
      const Plane g_p = -map / b2;
      const Plane g_q = 2.0 * a1 / denom;
      const Plane back =
          detail::gauss_filter(g_m) + 2.0 * x * detail::gauss_filter(g_p) +
          y * detail::gauss_filter(g_q);
      for (int yy = 0; yy < h; ++yy)
        for (int xx = 0; xx < w; ++xx) d_rendered->at(yy, xx, c) += back(yy, xx) / count;
    }
  }
  return total / count;
}

/// (1 - lambda) * L1 + lambda * (1 - SSIM)/2, with the analytic gradient
/// with respect to the rendered image.
inline std::pair<double, Image> photometric(const Image& rendered, const Image& observed,
                                            double lambda_dssim) {
  require_same_shape(rendered, observed);
  const int h = rendered.height(), w = rendered.width();
  const double count = static_cast<double>(h) * w * 3.0;

  double l1 = 0.0;
  Image grad(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double diff = rendered.at(y, x, c) - observed.at(y, x, c);
        l1 += std::abs(diff);
        const double s = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
        grad.at(y, x, c) = (1.0 - lambda_dssim) * s / count;
      }
    }
  }
  l1 /= count;

  Image d_ssim_map;
  const double ssim_value = ssim(rendered, observed, &d_ssim_map);
  const double dssim = (1.0 - ssim_value) / 2.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        grad.at(y, x, c) += lambda_dssim * (-0.5) * d_ssim_map.at(y, x, c);

  return {(1.0 - lambda_dssim) * l1 + lambda_dssim * dssim, std::move(grad)};
}

/// Anisotropy regularizer: mean over the visible set of
/// max(max(s)/min(s) - sigma, 0). Empty set evaluates to zero. The
/// subgradient at ratio == sigma is taken as zero. Ties on max/min pick the
/// first component, deterministically.
inline std::pair<double, std::vector<Vec3>> scale_reg(const std::vector<Vec3>& visible_scales,
                                                      double sigma) {
  std::vector<Vec3> grads(visible_scales.size(), Vec3::Zero());
  if (visible_scales.empty()) return {0.0, std::move(grads)};
  const double inv_n = 1.0 / static_cast<double>(visible_scales.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < visible_scales.size(); ++i) {
    const Vec3& s = visible_scales[i];
    int imax = 0, imin = 0;
    for (int a = 1; a < 3; ++a) {
      if (s(a) > s(imax)) imax = a;
      if (s(a) < s(imin)) imin = a;
    }
    const double ratio = s(imax) / s(imin);
    if (ratio > sigma) {
      loss += (ratio - sigma) * inv_n;
      grads[i](imax) += inv_n / s(imin);
      grads[i](imin) -= inv_n * s(imax) / (s(imin) * s(imin));
    }
  }
  return {loss, std::move(grads)};
}

}  // namespace gscalib
