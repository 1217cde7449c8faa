#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "linalg.hpp"
#include "rng.hpp"

namespace vfb {

inline constexpr double kLogTwoPi = 1.8378770664093454836;
inline constexpr double kGveDf = 3.0;  // degrees of freedom of the visit-effect t, fixed

// ---------------------------------------------------------------------------
// Normal CDF

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

/// log Phi(x); asymptotic tail expansion below -8 to avoid underflow.
inline double log_norm_cdf(double x) {
  if (x > -8.0) return std::log(norm_cdf(x));
  // Phi(x) ~ phi(x)/(-x) * (1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8)
  const double x2 = x * x;
  double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2) + 105.0 / (x2 * x2 * x2 * x2);
  return -0.5 * x2 - 0.5 * kLogTwoPi - std::log(-x) + std::log(series);
}

// ---------------------------------------------------------------------------
// Log densities

inline double logpdf_normal(double x, double mu, double sd) {
  if (!(sd > 0.0)) throw std::invalid_argument("logpdf_normal: sd must be positive");
  const double z = (x - mu) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLogTwoPi;
}

inline double logpdf_inverse_gamma(double x, double shape, double rate) {
  if (!(shape > 0.0) || !(rate > 0.0)) throw std::invalid_argument("logpdf_inverse_gamma: bad parameters");
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - rate / x;
}

/// Generalized t with 3 df: location mu, scale sigma.
inline double logpdf_t3(double x, double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("logpdf_t3: scale must be positive");
  const double z = (x - mu) / sigma;
  // log Gamma(2) - log Gamma(3/2) - 0.5 log(3 pi) - 2 log(1 + z^2/3)
  static const double c = std::lgamma(2.0) - std::lgamma(1.5) - 0.5 * std::log(3.0 * M_PI);
  return c - std::log(sigma) - 2.0 * std::log1p(z * z / 3.0);
}

template <std::size_t N>
double logpdf_mvn(const Vec<N>& x, const Vec<N>& mean, const SqMat<N>& chol_cov) {
  const Vec<N> z = forward_solve(chol_cov, x - mean);
  return -0.5 * dot(z, z) - 0.5 * chol_logdet(chol_cov) - 0.5 * N * kLogTwoPi;
}

inline double logpdf_mvn2(const Vec2& x, const Vec2& mean, const Mat2& cov) {
  return logpdf_mvn<2>(x, mean, cholesky(cov));
}

template <std::size_t N>
double log_multigamma(double a) {
  double s = 0.25 * N * (N - 1) * std::log(M_PI);
  for (std::size_t j = 0; j < N; ++j) s += std::lgamma(a - 0.5 * j);
  return s;
}

template <std::size_t N>
double logpdf_inverse_wishart(const SqMat<N>& x, double df, const SqMat<N>& scale) {
  const SqMat<N> Lx = cholesky(x);
  const SqMat<N> Ls = cholesky(scale);
  // tr(scale x^-1) via solves on columns of scale
  double tr = 0.0;
  for (std::size_t j = 0; j < N; ++j) {
    Vec<N> col;
    for (std::size_t i = 0; i < N; ++i) col[i] = scale(i, j);
    tr += chol_solve(Lx, col)[j];
  }
  return 0.5 * df * chol_logdet(Ls) - 0.5 * df * N * std::log(2.0) - log_multigamma<N>(0.5 * df) -
         0.5 * (df + N + 1.0) * chol_logdet(Lx) - 0.5 * tr;
}

// ---------------------------------------------------------------------------
// Samplers

/// Draw from Normal(mu, sd) conditioned on value < upper. Robert's
/// exponential-proposal rejection handles deep truncation robustly.
inline double sample_truncated_normal(double mu, double sd, double upper, RngStream& rng) {
  if (!(sd > 0.0)) throw std::invalid_argument("sample_truncated_normal: sd must be positive");
  if (upper == std::numeric_limits<double>::infinity()) return mu + sd * rng.normal();
  const double b = (upper - mu) / sd;
  double z;
  if (b >= 0.0) {
    do {
      z = rng.normal();
    } while (z >= b);
  } else {
    // sample -z > -b >= 0 from the lower tail
    const double a = -b;
    const double lam = 0.5 * (a + std::sqrt(a * a + 4.0));
    for (;;) {
      const double x = a + rng.exponential() / lam;
      const double d = x - lam;
      if (std::log(rng.uniform()) <= -0.5 * d * d) {
        z = -x;
        break;
      }
    }
  }
  return mu + sd * z;
}

template <std::size_t N>
Vec<N> sample_mvn_chol(const Vec<N>& mean, const SqMat<N>& chol_cov, RngStream& rng) {
  Vec<N> z;
  for (std::size_t i = 0; i < N; ++i) z[i] = rng.normal();
  Vec<N> x = mean;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j <= i; ++j) x[i] += chol_cov(i, j) * z[j];
  return x;
}

template <std::size_t N>
Vec<N> sample_mvn(const Vec<N>& mean, const SqMat<N>& cov, RngStream& rng) {
  return sample_mvn_chol(mean, cholesky(cov), rng);
}

/// Wishart(df, scale) by the Bartlett decomposition.
template <std::size_t N>
SqMat<N> sample_wishart(double df, const SqMat<N>& scale, RngStream& rng) {
  if (df < static_cast<double>(N)) throw std::invalid_argument("sample_wishart: df below dimension");
  const SqMat<N> Ls = cholesky(scale);
  SqMat<N> A;
  for (std::size_t i = 0; i < N; ++i) {
    A(i, i) = std::sqrt(rng.chi_squared(df - static_cast<double>(i)));
    for (std::size_t j = 0; j < i; ++j) A(i, j) = rng.normal();
  }
  SqMat<N> LA;  // Ls * A, both lower triangular
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = j; k <= i; ++k) s += Ls(i, k) * A(k, j);
      LA(i, j) = s;
    }
  return matmul_lt(LA);
}

template <std::size_t N>
SqMat<N> sample_inverse_wishart(double df, const SqMat<N>& scale, RngStream& rng) {
  const SqMat<N> W = sample_wishart<N>(df, inverse_spd(scale), rng);
  return inverse_spd(W);
}

inline Mat2 sample_inverse_wishart2(double df, const Mat2& scale, RngStream& rng) {
  return sample_inverse_wishart<2>(df, scale, rng);
}

/// Draw from t(0, sigma_phi^2, 3) via the chi-squared scale mixture.
inline double sample_gve_t(double sigma_phi, RngStream& rng) {
  if (!(sigma_phi > 0.0)) throw std::invalid_argument("sample_gve_t: scale must be positive");
  const double w = rng.chi_squared(kGveDf);
  return sigma_phi * rng.normal() / std::sqrt(w / kGveDf);
}

inline Mat2 cholesky2(const Mat2& m) {
  if (std::abs(m(0, 1) - m(1, 0)) > 1e-9) throw FactorizationError("cholesky2: matrix not symmetric");
  return cholesky(m);
}

}  // namespace vfb
