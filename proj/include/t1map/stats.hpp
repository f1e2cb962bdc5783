#pragma once

#include <span>

namespace t1map {

/// Regularized incomplete beta function I_x(a, b) via the Lentz continued
/// fraction; a, b > 0, x in [0, 1].
double regularized_incomplete_beta(double a, double b, double x);

/// Two-sided p-value of a Student-t statistic with df degrees of freedom:
/// p = I_{df/(df+t^2)}(df/2, 1/2).
double student_t_two_sided_p(double t, int df);

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    bool degenerate = false; // zero-variance differences with nonzero mean
};

/// Paired t-test of equal-length samples: d = a - b, t = mean(d) /
/// (sd(d)/sqrt(n)) with the sample (n-1) standard deviation. Throws when
/// n < 2.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

/// (mean, sample std) of a sample; std is 0 for n < 2.
std::pair<double, double> mean_and_sample_std(std::span<const double> values);

} // namespace t1map
