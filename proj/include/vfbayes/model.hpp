#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "distributions.hpp"
#include "linalg.hpp"

namespace vfb {

enum class ModelVariant : int { Model1 = 1, Model2 = 2, Model3 = 3 };

inline ModelVariant model_variant_from_int(int v) {
  if (v < 1 || v > 3) throw std::invalid_argument("model variant must be 1, 2 or 3");
  return static_cast<ModelVariant>(v);
}

inline bool has_visit_effect(ModelVariant v) { return v != ModelVariant::Model1; }
inline bool has_variance_link(ModelVariant v) { return v == ModelVariant::Model3; }

/// Left-censoring at the instrument floor of 0 dB.
inline double censor(double y) { return y >= 0.0 ? y : 0.0; }

// ---------------------------------------------------------------------------
// Domain types

/// One sensitivity measurement. Indices are 1-based; `years` is time since
/// the individual's first visit.
struct Observation {
  int individual = 0;
  int eye = 1;        // 1..2
  int hemifield = 1;  // 1..2
  int location = 1;   // 1..26 within the hemifield
  int visit = 1;      // 1..T, per eye
  double years = 0.0;
  double observed_db = 0.0;
  bool censored = false;

  void validate() const {
    if (eye < 1 || eye > 2) throw std::invalid_argument("observation: eye out of range");
    if (hemifield < 1 || hemifield > 2) throw std::invalid_argument("observation: hemifield out of range");
    if (location < 1 || location > 26) throw std::invalid_argument("observation: location out of range");
    if (years < 0.0) throw std::invalid_argument("observation: negative years");
    if (censored && observed_db != 0.0) throw std::invalid_argument("observation: censored value must be 0");
    if (!censored && observed_db < 0.0) throw std::invalid_argument("observation: negative uncensored value");
  }
};

struct IndividualData {
  std::string individual_id;
  std::vector<Observation> observations;
  std::array<std::vector<double>, 2> visit_times;  // per eye, distinct years, sorted

  std::size_t size() const { return observations.size(); }
};

struct FixedEffects {
  double beta0 = 0.0;
  double beta1 = 0.0;
};

struct VarianceParams {
  double beta_star0 = 0.0;  // intercept of log residual SD (Model 3)
  double beta_star1 = 0.0;  // slope of log residual SD per dB (Model 3)
  double sigma2 = 1.0;      // homoscedastic residual variance (Models 1-2)
};

struct GveScale {
  double sigma2_phi = 1.0;
};

/// 2x2 SPD covariance carried together with its lower Cholesky factor.
struct CovarianceSpec {
  Mat2 matrix;
  Mat2 chol;

  static CovarianceSpec from_matrix(const Mat2& m) {
    CovarianceSpec c;
    c.matrix = m;
    c.chol = cholesky2(m);
    return c;
  }

  static CovarianceSpec from_chol(const Mat2& L) {
    if (L(0, 0) <= 0.0 || L(1, 1) <= 0.0) throw FactorizationError("CovarianceSpec: nonpositive Cholesky diagonal");
    CovarianceSpec c;
    c.chol = L;
    c.chol(0, 1) = 0.0;
    c.matrix = matmul_lt(L);
    return c;
  }

  static CovarianceSpec from_chol_elements(const Vec3& v) {
    Mat2 L;
    L(0, 0) = v[0];
    L(1, 0) = v[1];
    L(1, 1) = v[2];
    return from_chol(L);
  }

  Vec3 chol_elements() const { return {chol(0, 0), chol(1, 0), chol(1, 1)}; }
};

// ---------------------------------------------------------------------------
// Random-effect storage for one individual
//
// Blocks are stored densely; an EffectIndex built from the data maps
// (eye, hemifield, location, visit) to slots. Missing cells simply have no
// slot and contribute no likelihood terms.

struct EffectIndex {
  static constexpr int kMaxLoc = 26;

  int n_gamma = 0;
  int n_eta = 0;
  int n_lambda = 0;
  int n_phi = 0;
  std::array<int, 2> gamma_slot{-1, -1};                 // by eye-1
  std::array<std::array<int, 2>, 2> eta_slot{};          // [eye-1][hemi-1]
  std::vector<int> lambda_slot;                          // [((eye-1)*2+hemi-1)*kMaxLoc + loc-1]
  std::array<std::vector<int>, 2> phi_slot;              // per eye, by visit-1

  EffectIndex() {
    for (auto& r : eta_slot) r.fill(-1);
    lambda_slot.assign(2 * 2 * kMaxLoc, -1);
  }

  explicit EffectIndex(const IndividualData& data) : EffectIndex() {
    for (int e = 0; e < 2; ++e) phi_slot[e].assign(data.visit_times[e].size(), -1);
    for (const auto& o : data.observations) {
      const int e = o.eye - 1, h = o.hemifield - 1, l = o.location - 1;
      if (gamma_slot[e] < 0) gamma_slot[e] = n_gamma++;
      if (eta_slot[e][h] < 0) eta_slot[e][h] = n_eta++;
      int& ls = lambda_slot[(e * 2 + h) * kMaxLoc + l];
      if (ls < 0) ls = n_lambda++;
      if (o.visit < 1 || o.visit > static_cast<int>(phi_slot[e].size()))
        throw std::invalid_argument("EffectIndex: visit index outside visit_times");
      int& ps = phi_slot[e][o.visit - 1];
      if (ps < 0) ps = n_phi++;
    }
  }

  int lambda(int eye, int hemi, int loc) const { return lambda_slot[((eye - 1) * 2 + hemi - 1) * kMaxLoc + loc - 1]; }
  int phi(int eye, int visit) const {
    const auto& slots = phi_slot[eye - 1];
    if (visit < 1 || visit > static_cast<int>(slots.size())) return -1;
    return slots[visit - 1];
  }
};

/// Observation with its effect slots resolved once up front.
struct ObsSlots {
  int gamma = -1;
  int eta = -1;
  int lambda = -1;
  int phi = -1;
  double years = 0.0;
  double observed_db = 0.0;
  bool censored = false;
};

inline ObsSlots resolve_slots(const Observation& o, const EffectIndex& idx) {
  ObsSlots s;
  s.gamma = idx.gamma_slot[o.eye - 1];
  s.eta = idx.eta_slot[o.eye - 1][o.hemifield - 1];
  s.lambda = idx.lambda(o.eye, o.hemifield, o.location);
  s.phi = idx.phi(o.eye, o.visit);
  if (s.gamma < 0 || s.eta < 0 || s.lambda < 0 || s.phi < 0)
    throw std::invalid_argument("resolve_slots: effect slot missing for observation");
  s.years = o.years;
  s.observed_db = o.observed_db;
  s.censored = o.censored;
  return s;
}

struct RandomEffects {
  Vec2 alpha{0.0, 0.0};
  std::vector<Vec2> gamma;
  std::vector<Vec2> eta;
  std::vector<Vec2> lambda;
  std::vector<double> phi;

  static RandomEffects zeros(const EffectIndex& idx) {
    RandomEffects re;
    re.gamma.assign(idx.n_gamma, Vec2{0.0, 0.0});
    re.eta.assign(idx.n_eta, Vec2{0.0, 0.0});
    re.lambda.assign(idx.n_lambda, Vec2{0.0, 0.0});
    re.phi.assign(idx.n_phi, 0.0);
    return re;
  }
};

// ---------------------------------------------------------------------------
// Model functions

inline double linear_predictor(const FixedEffects& fixed, const RandomEffects& re, const ObsSlots& s,
                               double years, ModelVariant variant) {
  const double intercept = fixed.beta0 + re.alpha[0] + re.gamma[s.gamma][0] + re.eta[s.eta][0] + re.lambda[s.lambda][0];
  const double slope = fixed.beta1 + re.alpha[1] + re.gamma[s.gamma][1] + re.eta[s.eta][1] + re.lambda[s.lambda][1];
  double mu = intercept + slope * years;
  if (has_visit_effect(variant)) mu += re.phi[s.phi];
  return mu;
}

inline double residual_sd(double mu, const VarianceParams& vp, ModelVariant variant) {
  if (has_variance_link(variant)) return std::exp(vp.beta_star0 + vp.beta_star1 * mu);
  return std::sqrt(vp.sigma2);
}

/// Censored points contribute log Phi((0 - mu)/sd), the probability mass
/// below the instrument floor.
inline double loglik_observation(double observed_db, bool censored, double mu, double sd) {
  if (!(sd > 0.0)) throw std::invalid_argument("loglik_observation: sd must be positive");
  if (censored) return log_norm_cdf((0.0 - mu) / sd);
  return logpdf_normal(observed_db, mu, sd);
}

inline double loglik_observation(const Observation& o, double mu, double sd) {
  return loglik_observation(o.observed_db, o.censored, mu, sd);
}

inline double loglik_individual(const IndividualData& data, const FixedEffects& fixed, const RandomEffects& re,
                                const VarianceParams& vp, ModelVariant variant) {
  const EffectIndex idx(data);
  double ll = 0.0;
  for (const auto& o : data.observations) {
    const ObsSlots s = resolve_slots(o, idx);
    const double mu = linear_predictor(fixed, re, s, o.years, variant);
    ll += loglik_observation(o, mu, residual_sd(mu, vp, variant));
  }
  return ll;
}

}  // namespace vfb
