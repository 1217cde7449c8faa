#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>

namespace vfb {

template <std::size_t N>
using Vec = std::array<double, N>;

using Vec2 = Vec<2>;
using Vec3 = Vec<3>;

/// Dense square matrix of compile-time size, row-major.
template <std::size_t N>
struct SqMat {
  std::array<double, N * N> a{};

  double& operator()(std::size_t i, std::size_t j) { return a[i * N + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a[i * N + j]; }

  static SqMat identity() {
    SqMat m;
    for (std::size_t i = 0; i < N; ++i) m(i, i) = 1.0;
    return m;
  }

  static SqMat diagonal(double d) {
    SqMat m;
    for (std::size_t i = 0; i < N; ++i) m(i, i) = d;
    return m;
  }
};

using Mat2 = SqMat<2>;
using Mat3 = SqMat<3>;

struct FactorizationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Lower-triangular Cholesky factor; throws FactorizationError when the
/// input is not symmetric positive definite (pivot tolerance 1e-12).
template <std::size_t N>
SqMat<N> cholesky(const SqMat<N>& m) {
  SqMat<N> L;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      if (i == j) {
        if (s <= 1e-12) throw FactorizationError("cholesky: matrix not positive definite");
        L(i, i) = std::sqrt(s);
      } else {
        L(i, j) = s / L(j, j);
      }
    }
  }
  return L;
}

template <std::size_t N>
SqMat<N> matmul_lt(const SqMat<N>& L) {  // L * L^T
  SqMat<N> m;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k <= std::min(i, j); ++k) s += L(i, k) * L(j, k);
      m(i, j) = s;
    }
  return m;
}

/// Solve L x = b with L lower triangular.
template <std::size_t N>
Vec<N> forward_solve(const SqMat<N>& L, const Vec<N>& b) {
  Vec<N> x;
  for (std::size_t i = 0; i < N; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= L(i, k) * x[k];
    x[i] = s / L(i, i);
  }
  return x;
}

/// Solve L^T x = b with L lower triangular.
template <std::size_t N>
Vec<N> backward_solve(const SqMat<N>& L, const Vec<N>& b) {
  Vec<N> x;
  for (std::size_t ii = N; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < N; ++k) s -= L(k, ii) * x[k];
    x[ii] = s / L(ii, ii);
  }
  return x;
}

/// Solve M x = b given the Cholesky factor of M.
template <std::size_t N>
Vec<N> chol_solve(const SqMat<N>& L, const Vec<N>& b) {
  return backward_solve(L, forward_solve(L, b));
}

template <std::size_t N>
SqMat<N> chol_inverse(const SqMat<N>& L) {
  SqMat<N> inv;
  for (std::size_t j = 0; j < N; ++j) {
    Vec<N> e{};
    e[j] = 1.0;
    Vec<N> col = chol_solve(L, e);
    for (std::size_t i = 0; i < N; ++i) inv(i, j) = col[i];
  }
  return inv;
}

template <std::size_t N>
SqMat<N> inverse_spd(const SqMat<N>& m) {
  return chol_inverse(cholesky(m));
}

template <std::size_t N>
double chol_logdet(const SqMat<N>& L) {  // log det of L L^T
  double s = 0.0;
  for (std::size_t i = 0; i < N; ++i) s += std::log(L(i, i));
  return 2.0 * s;
}

template <std::size_t N>
Vec<N> matvec(const SqMat<N>& m, const Vec<N>& v) {
  Vec<N> r{};
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) r[i] += m(i, j) * v[j];
  return r;
}

template <std::size_t N>
Vec<N> operator+(const Vec<N>& a, const Vec<N>& b) {
  Vec<N> r;
  for (std::size_t i = 0; i < N; ++i) r[i] = a[i] + b[i];
  return r;
}

template <std::size_t N>
Vec<N> operator-(const Vec<N>& a, const Vec<N>& b) {
  Vec<N> r;
  for (std::size_t i = 0; i < N; ++i) r[i] = a[i] - b[i];
  return r;
}

template <std::size_t N>
SqMat<N> operator+(const SqMat<N>& a, const SqMat<N>& b) {
  SqMat<N> r;
  for (std::size_t i = 0; i < N * N; ++i) r.a[i] = a.a[i] + b.a[i];
  return r;
}

template <std::size_t N>
void add_outer(SqMat<N>& m, const Vec<N>& v) {
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) m(i, j) += v[i] * v[j];
}

template <std::size_t N>
double dot(const Vec<N>& a, const Vec<N>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < N; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace vfb
