#pragma once

// Independent oracles shared by the unit suites and the acceptance binary.
// These deliberately re-derive results through different algorithms than the
// implementations they check.

#include <cmath>
#include <vector>

#include "xmark/core/tensor.hpp"

namespace oracles {

// ---- Student-t upper tail by adaptive Simpson quadrature (long double) ----

namespace detail {

inline long double t_pdf(long double u, long double nu) {
  long double c = std::exp(std::lgammal((nu + 1) / 2) - std::lgammal(nu / 2)) /
                  std::sqrt(nu * 3.14159265358979323846264338327950288L);
  return c * std::pow(1.0L + u * u / nu, -(nu + 1) / 2);
}

// integrand after the substitution u = t + s/(1-s)
inline long double integrand(long double s, long double t, long double nu) {
  if (s >= 1.0L) {
    if (nu == 1.0L) return 1.0L / 3.14159265358979323846264338327950288L;
    return 0.0L;
  }
  long double u = t + s / (1 - s);
  return t_pdf(u, nu) / ((1 - s) * (1 - s));
}

inline long double simpson(long double t, long double nu, long double a, long double b,
                           long double fa, long double fb, long double fm, long double eps,
                           int depth) {
  long double m = (a + b) / 2;
  long double flm = integrand((a + m) / 2, t, nu), frm = integrand((m + b) / 2, t, nu);
  long double whole = (b - a) / 6 * (fa + 4 * fm + fb);
  long double left = (m - a) / 6 * (fa + 4 * flm + fm);
  long double right = (b - m) / 6 * (fm + 4 * frm + fb);
  if (depth <= 0 || std::fabs(left + right - whole) < 15 * eps)
    return left + right + (left + right - whole) / 15;
  return simpson(t, nu, a, m, fa, fm, flm, eps / 2, depth - 1) +
         simpson(t, nu, m, b, fm, fb, frm, eps / 2, depth - 1);
}

}  // namespace detail

inline double student_t_sf(double t, int dof) {
  long double nu = dof;
  long double tt = std::fabs(static_cast<long double>(t));
  long double tail = detail::simpson(tt, nu, 0.0L, 1.0L, detail::integrand(0.0L, tt, nu),
                                     detail::integrand(1.0L, tt, nu),
                                     detail::integrand(0.5L, tt, nu), 1e-16L, 60);
  return t >= 0 ? static_cast<double>(tail) : static_cast<double>(1.0L - tail);
}

// ---- double-precision Laplacian pyramid loss ----

using DImg = std::vector<std::vector<double>>;

inline DImg to_dimg(const xmark::Tensor& t) {
  DImg d(static_cast<std::size_t>(t.dim(0)), std::vector<double>(static_cast<std::size_t>(t.dim(1))));
  for (int y = 0; y < t.dim(0); ++y)
    for (int x = 0; x < t.dim(1); ++x)
      d[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = t.at2(y, x);
  return d;
}

namespace detail {

inline int reflect(int i, int n) {
  if (i < 0) i = -i - 1;
  if (i >= n) i = 2 * n - 1 - i;
  return i;
}

inline DImg dblur(const DImg& im) {
  static const double tap[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  int h = static_cast<int>(im.size()), w = static_cast<int>(im[0].size());
  DImg tmp(im), out(im);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int t = -2; t <= 2; ++t)
        s += tap[t + 2] * im[static_cast<std::size_t>(y)][static_cast<std::size_t>(reflect(x + t, w))];
      tmp[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0;
      for (int t = -2; t <= 2; ++t)
        s += tap[t + 2] * tmp[static_cast<std::size_t>(reflect(y + t, h))][static_cast<std::size_t>(x)];
      out[static_cast<std::size_t>(y)][static_cast<std::size_t>(x)] = s;
    }
  return out;
}

inline DImg ddown(const DImg& im) {
  int h = static_cast<int>(im.size()), w = static_cast<int>(im[0].size());
  DImg b = dblur(im);
  DImg out(static_cast<std::size_t>((h + 1) / 2), std::vector<double>(static_cast<std::size_t>((w + 1) / 2)));
  for (std::size_t y = 0; y < out.size(); ++y)
    for (std::size_t x = 0; x < out[0].size(); ++x) out[y][x] = b[2 * y][2 * x];
  return out;
}

inline DImg dup(const DImg& im, int oh, int ow) {
  int h = static_cast<int>(im.size()), w = static_cast<int>(im[0].size());
  DImg out(static_cast<std::size_t>(oh), std::vector<double>(static_cast<std::size_t>(ow)));
  auto lerp = [](int o, int in, int outn, int& i0, int& i1, double& f) {
    double src = (o + 0.5) * (static_cast<double>(in) / outn) - 0.5;
    src = std::max(0.0, std::min(src, static_cast<double>(in - 1)));
    i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
    i1 = std::min(i0 + 1, in - 1);
    f = src - i0;
  };
  for (int oy = 0; oy < oh; ++oy) {
    int y0, y1;
    double fy;
    lerp(oy, h, oh, y0, y1, fy);
    for (int ox = 0; ox < ow; ++ox) {
      int x0, x1;
      double fx;
      lerp(ox, w, ow, x0, x1, fx);
      double top = im[static_cast<std::size_t>(y0)][static_cast<std::size_t>(x0)] * (1 - fx) +
                   im[static_cast<std::size_t>(y0)][static_cast<std::size_t>(x1)] * fx;
      double bot = im[static_cast<std::size_t>(y1)][static_cast<std::size_t>(x0)] * (1 - fx) +
                   im[static_cast<std::size_t>(y1)][static_cast<std::size_t>(x1)] * fx;
      out[static_cast<std::size_t>(oy)][static_cast<std::size_t>(ox)] = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

}  // namespace detail

inline double pyramid_loss(const DImg& a0, const DImg& b0, int levels) {
  DImg ga = a0, gb = b0;
  double total = 0;
  for (int l = 0; l < levels; ++l) {
    DImg da = detail::ddown(ga), db = detail::ddown(gb);
    DImg ua = detail::dup(da, static_cast<int>(ga.size()), static_cast<int>(ga[0].size()));
    DImg ub = detail::dup(db, static_cast<int>(gb.size()), static_cast<int>(gb[0].size()));
    double s = 0;
    for (std::size_t y = 0; y < ga.size(); ++y)
      for (std::size_t x = 0; x < ga[0].size(); ++x)
        s += std::fabs((ga[y][x] - ua[y][x]) - (gb[y][x] - ub[y][x]));
    total += s / (static_cast<double>(ga.size()) * ga[0].size());
    ga = da;
    gb = db;
  }
  return total;
}

}  // namespace oracles
