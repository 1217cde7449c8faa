#pragma once

#include <iostream>
#include <string>
#include <vector>

#include "stage1.hpp"
#include "stage2.hpp"

namespace vfb {

// ---------------------------------------------------------------------------
// Posterior predictive check (Gelman chi-square discrepancy)

/// Mean and variance of the observable max(Y, 0) with Y ~ N(mu, sd^2).
inline std::pair<double, double> censored_normal_moments(double mu, double sd) {
  const double a = mu / sd;
  const double Phi = norm_cdf(a);
  const double phi = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
  const double m = mu * Phi + sd * phi;
  const double m2 = (mu * mu + sd * sd) * Phi + mu * sd * phi;
  return {m, std::max(m2 - m * m, 0.0)};
}

/// Chi-square discrepancy of a value vector against per-observation
/// predictive moments. Slots observed at the censoring floor are compared
/// on the censored scale.
inline double gelman_discrepancy(const std::vector<double>& values, const std::vector<bool>& censored_slot,
                                 const std::vector<double>& mu, const std::vector<double>& sd) {
  double d = 0.0;
  for (std::size_t j = 0; j < values.size(); ++j) {
    double e, v;
    if (censored_slot[j]) {
      std::tie(e, v) = censored_normal_moments(mu[j], sd[j]);
    } else {
      e = mu[j];
      v = sd[j] * sd[j];
    }
    if (!(v > 0.0)) throw std::invalid_argument("gelman_discrepancy: zero predictive variance");
    d += (values[j] - e) * (values[j] - e) / v;
  }
  return d;
}

inline double gelman_discrepancy(const IndividualData& data, const FixedEffects& fixed, const RandomEffects& re,
                                 const VarianceParams& vp, ModelVariant variant) {
  const EffectIndex idx(data);
  std::vector<double> values, mu, sd;
  std::vector<bool> cens;
  for (const auto& o : data.observations) {
    const double m = linear_predictor(fixed, re, resolve_slots(o, idx), o.years, variant);
    values.push_back(o.observed_db);
    cens.push_back(o.censored);
    mu.push_back(m);
    sd.push_back(residual_sd(m, vp, variant));
  }
  return gelman_discrepancy(values, cens, mu, sd);
}

/// Posterior predictive P-value for one individual over its stage-1 chain.
/// The pool must retain the per-draw random effects.
inline double ppc_individual(const IndividualData& data, const SamplePool& pool, RngStream& rng) {
  if (pool.draws.empty()) throw std::invalid_argument("ppc_individual: empty chain");
  if (pool.effects.size() != pool.draws.size())
    throw std::invalid_argument("ppc_individual: chain lacks retained random effects");
  const EffectIndex idx(data);
  std::vector<ObsSlots> slots;
  for (const auto& o : data.observations) slots.push_back(resolve_slots(o, idx));
  const std::size_t n = slots.size();
  std::vector<double> mu(n), sd(n), obs_vals(n), rep_vals(n);
  std::vector<bool> cens(n);
  for (std::size_t j = 0; j < n; ++j) {
    obs_vals[j] = slots[j].observed_db;
    cens[j] = slots[j].censored;
  }
  long count = 0;
  for (std::size_t k = 0; k < pool.draws.size(); ++k) {
    const SamplePoolDraw& d = pool.draws[k];
    RandomEffects re = pool.effects[k];
    re.alpha = d.alpha;
    VarianceParams vp{d.beta_star[0], d.beta_star[1], d.sigma2};
    for (std::size_t j = 0; j < n; ++j) {
      mu[j] = linear_predictor(FixedEffects{0.0, 0.0}, re, slots[j], slots[j].years, pool.model);
      sd[j] = residual_sd(mu[j], vp, pool.model);
      rep_vals[j] = censor(mu[j] + sd[j] * rng.normal());
    }
    const double d_obs = gelman_discrepancy(obs_vals, cens, mu, sd);
    const double d_rep = gelman_discrepancy(rep_vals, cens, mu, sd);
    if (d_rep <= d_obs) ++count;
  }
  return static_cast<double>(count) / pool.draws.size();
}

struct PppReport {
  std::vector<std::pair<std::string, double>> per_individual;  // sorted ascending by p
  double mean_ppp = 0.0;
  std::vector<std::string> flagged;  // p < 0.05 or p > 0.95

  void finalize() {
    std::sort(per_individual.begin(), per_individual.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    mean_ppp = 0.0;
    flagged.clear();
    for (const auto& [id, p] : per_individual) {
      mean_ppp += p / per_individual.size();
      if (p < 0.05 || p > 0.95) flagged.push_back(id);
    }
  }
};

inline void write_ppp_csv(const std::string& path, const PppReport& rep) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "individual,p_d\n";
  for (const auto& [id, p] : rep.per_individual) out << id << ',' << format_double(p) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Method-of-Composition recovery of the random effects

struct RecoveryConfig {
  int draws = 1000;          // stage-2 draws used, evenly strided
  int inner_iterations = 500;
  int adapt_iterations = 250;
  double ridge = 1e-3;
};

struct RecoveredEffects {
  std::string individual_id;
  std::vector<int> draw_indices;
  std::vector<RandomEffects> draws;
  int skipped = 0;
};

namespace detail3 {

/// Blockwise random-walk sampler for L_i = (gamma, eta, lambda, phi) given
/// one stage-2 draw of theta_i; uses the exact censored likelihood.
class RecoverySampler {
 public:
  RecoverySampler(const IndividualData& data, const SamplePoolDraw& theta, ModelVariant model, RngStream& rng)
      : model_(model), rng_(rng), idx_(data), theta_(theta) {
    for (const auto& o : data.observations) obs_.push_back(resolve_slots(o, idx_));
    n_ = obs_.size();
    gamma_obs_.resize(idx_.n_gamma);
    eta_obs_.resize(idx_.n_eta);
    lambda_obs_.resize(idx_.n_lambda);
    phi_obs_.resize(idx_.n_phi);
    for (std::size_t j = 0; j < n_; ++j) {
      gamma_obs_[obs_[j].gamma].push_back(j);
      eta_obs_[obs_[j].eta].push_back(j);
      lambda_obs_[obs_[j].lambda].push_back(j);
      phi_obs_[obs_[j].phi].push_back(j);
    }
    sigma_gamma_ = matmul_lt(CovarianceSpec::from_chol_elements(theta.c_gamma).chol);
    sigma_eta_ = matmul_lt(CovarianceSpec::from_chol_elements(theta.c_eta).chol);
    sigma_lambda_ = matmul_lt(CovarianceSpec::from_chol_elements(theta.c_lambda).chol);
    vp_ = VarianceParams{theta.beta_star[0], theta.beta_star[1], theta.sigma2};
    re_ = RandomEffects::zeros(idx_);
    re_.alpha = theta.alpha;
    steps_ = {0.1, 0.1, 0.3, 0.3};  // gamma, eta, lambda, phi
    refresh_mu();
  }

  /// Ridge-regularized per-block least squares on (working) residuals.
  void initialize_least_squares(double ridge) {
    auto fit_pairs = [&](std::vector<Vec2>& blocks, const std::vector<std::vector<std::size_t>>& rows) {
      for (std::size_t g = 0; g < blocks.size(); ++g) {
        Mat2 P = Mat2::diagonal(ridge);
        Vec2 b{0.0, 0.0};
        for (std::size_t j : rows[g]) {
          const double t = obs_[j].years;
          const double r = obs_[j].observed_db - mu_[j] + blocks[g][0] + blocks[g][1] * t;
          P(0, 0) += 1.0;
          P(0, 1) += t;
          P(1, 0) += t;
          P(1, 1) += t * t;
          b[0] += r;
          b[1] += r * t;
        }
        set_pair(blocks[g], chol_solve(cholesky(P), b), rows[g]);
      }
    };
    fit_pairs(re_.gamma, gamma_obs_);
    fit_pairs(re_.eta, eta_obs_);
    fit_pairs(re_.lambda, lambda_obs_);
    if (has_visit_effect(model_)) {
      for (int p = 0; p < idx_.n_phi; ++p) {
        double s = 0.0;
        for (std::size_t j : phi_obs_[p]) s += obs_[j].observed_db - mu_[j] + re_.phi[p];
        const double val = s / (phi_obs_[p].size() + ridge);
        for (std::size_t j : phi_obs_[p]) mu_[j] += val - re_.phi[p];
        re_.phi[p] = val;
      }
    }
  }

  void sweep(bool adapt) {
    mh_pairs(re_.gamma, gamma_obs_, sigma_gamma_, 0);
    mh_pairs(re_.eta, eta_obs_, sigma_eta_, 1);
    mh_pairs(re_.lambda, lambda_obs_, sigma_lambda_, 2);
    if (has_visit_effect(model_)) mh_phis();
    if (adapt) adapt_steps();
  }

  const RandomEffects& effects() const { return re_; }
  const EffectIndex& index() const { return idx_; }

 private:
  void refresh_mu() {
    mu_.assign(n_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      const ObsSlots& s = obs_[j];
      mu_[j] = re_.alpha[0] + re_.gamma[s.gamma][0] + re_.eta[s.eta][0] + re_.lambda[s.lambda][0] +
               (re_.alpha[1] + re_.gamma[s.gamma][1] + re_.eta[s.eta][1] + re_.lambda[s.lambda][1]) * s.years;
      if (has_visit_effect(model_)) mu_[j] += re_.phi[s.phi];
    }
  }

  double block_loglik(const std::vector<std::size_t>& rows, double d0, double d1, double dphi) const {
    double ll = 0.0;
    for (std::size_t j : rows) {
      const double m = mu_[j] + d0 + d1 * obs_[j].years + dphi;
      ll += loglik_observation(obs_[j].observed_db, obs_[j].censored, m, residual_sd(m, vp_, model_));
    }
    if (!std::isfinite(ll)) throw NumericalError("recovery: non-finite log posterior");
    return ll;
  }

  void set_pair(Vec2& b, const Vec2& v, const std::vector<std::size_t>& rows) {
    const double d0 = v[0] - b[0], d1 = v[1] - b[1];
    for (std::size_t j : rows) mu_[j] += d0 + d1 * obs_[j].years;
    b = v;
  }

  void mh_pairs(std::vector<Vec2>& blocks, const std::vector<std::vector<std::size_t>>& rows, const Mat2& prior,
                int step_idx) {
    const Mat2 L = cholesky(prior);
    const double step = steps_[step_idx];
    for (std::size_t g = 0; g < blocks.size(); ++g) {
      Vec2& b = blocks[g];
      const Vec2 bp{b[0] + step * rng_.normal(), b[1] + 0.1 * step * rng_.normal()};
      double lr = block_loglik(rows[g], bp[0] - b[0], bp[1] - b[1], 0.0) - block_loglik(rows[g], 0.0, 0.0, 0.0);
      lr += logpdf_mvn<2>(bp, {0.0, 0.0}, L) - logpdf_mvn<2>(b, {0.0, 0.0}, L);
      ++prop_[step_idx];
      if (std::log(rng_.uniform()) < lr) {
        ++acc_[step_idx];
        set_pair(b, bp, rows[g]);
      }
    }
  }

  void mh_phis() {
    const double sphi = std::sqrt(theta_.sigma2_phi);
    const double step = steps_[3];
    for (int p = 0; p < idx_.n_phi; ++p) {
      const double phi = re_.phi[p];
      const double phip = phi + step * rng_.normal();
      double lr = block_loglik(phi_obs_[p], 0.0, 0.0, phip - phi) - block_loglik(phi_obs_[p], 0.0, 0.0, 0.0);
      lr += logpdf_t3(phip, 0.0, sphi) - logpdf_t3(phi, 0.0, sphi);
      ++prop_[3];
      if (std::log(rng_.uniform()) < lr) {
        ++acc_[3];
        for (std::size_t j : phi_obs_[p]) mu_[j] += phip - phi;
        re_.phi[p] = phip;
      }
    }
  }

  void adapt_steps() {
    for (int k = 0; k < 4; ++k) {
      if (prop_[k] < 50) continue;
      const double rate = static_cast<double>(acc_[k]) / prop_[k];
      if (rate < 0.23)
        steps_[k] *= 0.8;
      else if (rate > 0.44)
        steps_[k] *= 1.25;
      prop_[k] = acc_[k] = 0;
    }
  }

  ModelVariant model_;
  RngStream& rng_;
  EffectIndex idx_;
  SamplePoolDraw theta_;
  VarianceParams vp_;
  Mat2 sigma_gamma_, sigma_eta_, sigma_lambda_;
  std::size_t n_ = 0;
  std::vector<ObsSlots> obs_;
  std::vector<double> mu_;
  std::vector<std::vector<std::size_t>> gamma_obs_, eta_obs_, lambda_obs_, phi_obs_;
  RandomEffects re_;
  std::array<double, 4> steps_;
  std::array<long, 4> prop_{}, acc_{};
};

}  // namespace detail3

/// Recovers L_i for one individual: for each selected stage-2 draw, condition
/// on that draw, initialize by least squares, run an inner blockwise
/// random-walk chain and keep its final state.
inline RecoveredEffects recover_random_effects(const IndividualData& data,
                                               const std::vector<SamplePoolDraw>& theta_chain, ModelVariant model,
                                               const RecoveryConfig& cfg, RngStream& rng) {
  if (theta_chain.empty()) throw std::invalid_argument("recover_random_effects: empty stage-2 chain");
  RecoveredEffects out;
  out.individual_id = data.individual_id;
  const int k_use = std::min<int>(cfg.draws, theta_chain.size());
  for (int k = 0; k < k_use; ++k) {
    const int draw_idx = static_cast<int>((static_cast<long>(k) * theta_chain.size()) / k_use);
    try {
      detail3::RecoverySampler s(data, theta_chain[draw_idx], model, rng);
      s.initialize_least_squares(cfg.ridge);
      for (int it = 0; it < cfg.inner_iterations; ++it) s.sweep(it < cfg.adapt_iterations);
      out.draw_indices.push_back(draw_idx);
      out.draws.push_back(s.effects());
    } catch (const NumericalError& e) {
      std::cerr << "warning: skipping recovery draw " << draw_idx << " for " << data.individual_id << ": " << e.what()
                << "\n";
      ++out.skipped;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deviance Information Criterion

struct DicReport {
  double dbar = 0.0;  // posterior mean deviance
  double dhat = 0.0;  // deviance at posterior means
  double p_d = 0.0;
  double dic = 0.0;
};

inline double deviance(const std::vector<IndividualData>& data, const std::vector<SamplePoolDraw>& thetas,
                       const std::vector<RandomEffects>& effects, ModelVariant model) {
  double d = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    RandomEffects re = effects[i];
    re.alpha = thetas[i].alpha;
    const VarianceParams vp{thetas[i].beta_star[0], thetas[i].beta_star[1], thetas[i].sigma2};
    d += -2.0 * loglik_individual(data[i], FixedEffects{0.0, 0.0}, re, vp, model);
  }
  return d;
}

/// DIC over K matched draws of (theta_i, L_i) per individual.
/// theta_draws[k][i] must correspond to recovered[i].draws[k].
inline DicReport compute_dic(const std::vector<IndividualData>& data,
                             const std::vector<std::vector<SamplePoolDraw>>& theta_draws,
                             const std::vector<RecoveredEffects>& recovered, ModelVariant model) {
  const std::size_t K = theta_draws.size();
  if (K == 0) throw std::invalid_argument("compute_dic: no draws");
  for (std::size_t i = 0; i < data.size(); ++i)
    if (recovered[i].draws.size() != K) throw std::invalid_argument("compute_dic: mismatched draw indices");

  DicReport rep;
  std::vector<SamplePoolDraw> mean_theta(data.size());
  std::vector<RandomEffects> mean_effects;
  std::vector<RandomEffects> eff_k(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) mean_effects.push_back(RandomEffects::zeros(EffectIndex(data[i])));

  auto acc_vec2 = [](Vec2& a, const Vec2& b, double w) {
    a[0] += w * b[0];
    a[1] += w * b[1];
  };
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < data.size(); ++i) eff_k[i] = recovered[i].draws[k];
    rep.dbar += deviance(data, theta_draws[k], eff_k, model) / K;
    const double w = 1.0 / K;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const SamplePoolDraw& t = theta_draws[k][i];
      acc_vec2(mean_theta[i].alpha, t.alpha, w);
      acc_vec2(mean_theta[i].beta_star, t.beta_star, w);
      for (int r = 0; r < 3; ++r) {
        mean_theta[i].c_gamma[r] += w * t.c_gamma[r];
        mean_theta[i].c_eta[r] += w * t.c_eta[r];
        mean_theta[i].c_lambda[r] += w * t.c_lambda[r];
      }
      mean_theta[i].sigma2 += w * t.sigma2;
      mean_theta[i].sigma2_phi += w * t.sigma2_phi;
      const RandomEffects& re = recovered[i].draws[k];
      RandomEffects& m = mean_effects[i];
      for (std::size_t g = 0; g < m.gamma.size(); ++g) acc_vec2(m.gamma[g], re.gamma[g], w);
      for (std::size_t g = 0; g < m.eta.size(); ++g) acc_vec2(m.eta[g], re.eta[g], w);
      for (std::size_t g = 0; g < m.lambda.size(); ++g) acc_vec2(m.lambda[g], re.lambda[g], w);
      for (std::size_t g = 0; g < m.phi.size(); ++g) m.phi[g] += w * re.phi[g];
    }
  }
  // mean Cholesky factors must stay valid covariances
  for (auto& t : mean_theta)
    for (Vec3* c : {&t.c_gamma, &t.c_eta, &t.c_lambda}) {
      (*c)[0] = std::max((*c)[0], 1e-8);
      (*c)[2] = std::max((*c)[2], 1e-8);
    }
  rep.dhat = deviance(data, mean_theta, mean_effects, model);
  rep.p_d = rep.dbar - rep.dhat;
  rep.dic = rep.dbar + rep.p_d;
  return rep;
}

inline void write_dic_csv(const std::string& path, const DicReport& rep) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "dbar,dhat,p_d,dic\n"
      << format_double(rep.dbar) << ',' << format_double(rep.dhat) << ',' << format_double(rep.p_d) << ','
      << format_double(rep.dic) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace vfb
