#pragma once

// Scalar statistics helpers: normal distribution, regularized incomplete
// gamma (for Poisson / chi-square tail probabilities), weighted mean.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "vip/errors.hpp"

namespace vip {

inline constexpr double kPi = 3.141592653589793238462643383279502884;
// 2*sqrt(2*ln 2): ratio between a Gaussian FWHM and its sigma.
inline constexpr double kFwhmPerSigma = 2.3548200450309493;

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * kPi);
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Inverse standard normal CDF. Rational approximation (relative error
// ~1e-9) refined with one Halley step against normal_cdf, giving results
// accurate to a few ulp across p in (0,1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must be in (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    double q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement.
  double e = normal_cdf(x) - p;
  double u = e / normal_pdf(x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

namespace detail {

inline double gamma_series(double a, double x) {
  double sum = 1.0 / a;
  double term = sum;
  for (int n = 1; n < 1000; ++n) {
    term *= x / (a + n);
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Continued fraction for Q(a,x), modified Lentz.
inline double gamma_cont_frac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 1000; ++i) {
    double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace detail

// Regularized lower incomplete gamma P(a,x).
inline double gamma_p(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw DomainError("gamma_p: need a > 0, x >= 0");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return detail::gamma_series(a, x);
  return 1.0 - detail::gamma_cont_frac(a, x);
}

// Regularized upper incomplete gamma Q(a,x) = 1 - P(a,x).
inline double gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw DomainError("gamma_q: need a > 0, x >= 0");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - detail::gamma_series(a, x);
  return detail::gamma_cont_frac(a, x);
}

// P(X <= k) for X ~ Poisson(mean). Exact via the incomplete gamma identity.
inline double poisson_cdf(std::uint64_t k, double mean) {
  if (mean < 0.0) throw DomainError("poisson_cdf: mean must be >= 0");
  if (mean == 0.0) return 1.0;
  return gamma_q(static_cast<double>(k) + 1.0, mean);
}

// Survival probability of a chi-square with `ndf` degrees of freedom.
inline double chi2_survival(double chi2, int ndf) {
  if (chi2 < 0.0 || ndf <= 0) throw DomainError("chi2_survival: need chi2 >= 0, ndf > 0");
  return gamma_q(0.5 * ndf, 0.5 * chi2);
}

struct WeightedLine {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_var = 0.0;
  double intercept_var = 0.0;
  double slope_intercept_cov = 0.0;
};

// Weighted least squares y = slope*x + intercept, weights w = 1/err^2.
// Solved around the weighted mean abscissa, which keeps the normal
// equations free of the cancellation that raw sums suffer for large x.
inline WeightedLine fit_weighted_line(const std::vector<double>& x, const std::vector<double>& y,
                                      const std::vector<double>& err) {
  if (x.size() < 2 || x.size() != y.size() || x.size() != err.size())
    throw DomainError("fit_weighted_line: need >= 2 points with matching sizes");
  double sw = 0, swx = 0, swy = 0;
  std::vector<double> w(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double e = err[i] > 0.0 ? err[i] : 1.0;
    w[i] = 1.0 / (e * e);
    sw += w[i];
    swx += w[i] * x[i];
    swy += w[i] * y[i];
  }
  const double xbar = swx / sw;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - xbar;
    sxx += w[i] * dx * dx;
    sxy += w[i] * dx * y[i];
  }
  double scale = 0.0;
  for (double xi : x) scale = std::max(scale, xi * xi);
  if (!(sxx > 1e-20 * sw * std::max(scale, 1.0)))
    throw DomainError("fit_weighted_line: degenerate abscissae");
  WeightedLine out;
  out.slope = sxy / sxx;
  out.intercept = swy / sw - out.slope * xbar;
  out.slope_var = 1.0 / sxx;
  out.intercept_var = 1.0 / sw + xbar * xbar / sxx;
  out.slope_intercept_cov = -xbar / sxx;
  return out;
}

}  // namespace vip
