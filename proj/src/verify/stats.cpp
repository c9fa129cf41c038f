#include "xmark/verify/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "xmark/core/error.hpp"

namespace xmark::stats {

namespace {

// Continued fraction for the incomplete beta, modified Lentz algorithm.
double betacf(double x, double a, double b) {
  const double tiny = 1e-300;
  const double eps = 1e-16;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta_reg(double x, double a, double b) {
  XM_CHECK(a > 0.0 && b > 0.0, "incomplete_beta_reg: a,b must be positive");
  XM_CHECK(x >= 0.0 && x <= 1.0, "incomplete_beta_reg: x outside [0,1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  double lnfront = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                   b * std::log1p(-x);
  double front = std::exp(lnfront);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(x, a, b) / a;
  return 1.0 - front * betacf(1.0 - x, b, a) / b;
}

double student_t_sf(double t, int dof) {
  XM_CHECK(dof >= 1, "student_t_sf: dof must be >= 1");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  if (t == 0.0) return 0.5;
  double nu = static_cast<double>(dof);
  double x = nu / (nu + t * t);
  double tail = 0.5 * incomplete_beta_reg(x, 0.5 * nu, 0.5);
  return t > 0.0 ? tail : 1.0 - tail;
}

TTest paired_t_test(const std::vector<double>& p_b, const std::vector<double>& p_v, double tau) {
  XM_CHECK(p_b.size() == p_v.size(), "paired_t_test: length mismatch (", p_b.size(), " vs ",
           p_v.size(), ")");
  std::size_t n = p_b.size();
  XM_CHECK(n >= 2, "paired_t_test: need at least 2 pairs, got ", n);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = p_v[i] - p_b[i] - tau;
  double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double di : d) {
    double dev = di - mean;
    ss += dev * dev;
  }
  double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    // undefined t; decision semantics preserved by the sign of the mean
    if (mean > 0.0) return {std::numeric_limits<double>::infinity(), 0.0};
    if (mean < 0.0) return {-std::numeric_limits<double>::infinity(), 1.0};
    return {0.0, 0.5};
  }
  double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  return {t, student_t_sf(t, static_cast<int>(n) - 1)};
}

double auroc(const std::vector<float>& scores, const std::vector<int>& labels) {
  XM_CHECK(scores.size() == labels.size(), "auroc: length mismatch");
  std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    double mid = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (labels[k]) {
      pos += 1.0;
      rank_sum += rank[k];
    }
  double neg = static_cast<double>(n) - pos;
  XM_CHECK(pos > 0 && neg > 0, "auroc: needs both classes present");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

}  // namespace xmark::stats
