#pragma once

#include <vector>

namespace xmark::stats {

// Regularized incomplete beta I_x(a,b) via the Lentz continued fraction.
double incomplete_beta_reg(double x, double a, double b);

// Upper-tail survival function of Student's t with `dof` degrees of freedom.
double student_t_sf(double t, int dof);

struct TTest {
  double t_stat;
  double p_value;
};

// One-sided paired test of H0: P_b + tau = P_v against H1: P_b + tau < P_v.
// d_i = P_v,i - P_b,i - tau; t = mean(d) / (sd(d)/sqrt(n)) with the n-1
// denominator; p = student_t_sf(t, n-1). All-equal d (sd = 0) degenerates to
// p = 0 / 1 / 0.5 by the sign of mean(d).
TTest paired_t_test(const std::vector<double>& p_b, const std::vector<double>& p_v, double tau);

// Rank-based AUROC (ties handled by midranks). Requires both classes present.
double auroc(const std::vector<float>& scores, const std::vector<int>& labels);

}  // namespace xmark::stats
