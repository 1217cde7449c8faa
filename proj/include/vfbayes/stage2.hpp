#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stage1.hpp"

namespace vfb {

/// Inflation applied to the data-driven starting covariances of a chain; see
/// initialize_population.
inline constexpr double kInitCovInflate = 25.0;

/// Population-level state: means and covariances of the individual-level
/// parameters. Individual variances are modeled on the log scale, so the
/// reported sigma2 / sigma2_phi are population medians exp(m).
struct PopulationState {
  ModelVariant model = ModelVariant::Model1;
  Vec2 beta{0.0, 0.0};  // mean of alpha_i
  Mat2 sigma_alpha = Mat2::identity();
  Vec2 beta_star{0.0, 0.0};  // Model 3
  Mat2 sigma_beta_star = Mat2::identity();
  Vec3 cbar_gamma{}, cbar_eta{}, cbar_lambda{};
  Mat3 sigma_c_gamma = Mat3::identity(), sigma_c_eta = Mat3::identity(), sigma_c_lambda = Mat3::identity();
  double m_log_sigma2_phi = 0.0, v_log_sigma2_phi = 1.0;  // Models 2-3
  double m_log_sigma2 = 0.0, v_log_sigma2 = 1.0;          // Models 1-2
};

enum class InitRule { Min, Mean, Max };

struct Stage2Config {
  int iterations = 5000;
  int burn_in = 2500;
  int thin = 1;
  int chains = 3;
  // pool proposals are cheap but rarely accepted when individuals are
  // homogeneous, so the kernel is applied several times per sweep
  int mh_attempts = 10;
  std::vector<InitRule> init_rule{InitRule::Min, InitRule::Mean, InitRule::Max};

  int retained() const { return (iterations - burn_in + thin - 1) / thin; }

  void validate() const {
    if (burn_in >= iterations) throw std::invalid_argument("stage2: burn_in must be below iterations");
    if (chains < 2) throw std::invalid_argument("stage2: at least 2 chains required for diagnostics");
    if (thin < 1) throw std::invalid_argument("stage2: thin must be >= 1");
    if (mh_attempts < 1) throw std::invalid_argument("stage2: mh_attempts must be >= 1");
  }
};

struct IndividualTheta {
  int pool_index = -1;  // -1 while holding a synthetic initial value
  SamplePoolDraw value;
};

// ---------------------------------------------------------------------------
// Flattened theta coordinates
//
// theta_i = (alpha, [beta*], C_gamma, C_eta, C_lambda, [log sigma2_phi],
// [log sigma2]); variances enter in log coordinates throughout so the
// population model never places mass on negative variances.

namespace detail2 {

template <std::size_t N>
Vec<N> draw_mean_conditional(const std::vector<Vec<N>>& xs, const SqMat<N>& cov, RngStream& rng) {
  const SqMat<N> prec = inverse_spd(cov);
  SqMat<N> P = SqMat<N>::diagonal(1.0 / kVaguePriorVar);
  Vec<N> b{};
  for (const auto& x : xs) {
    const Vec<N> px = matvec(prec, x);
    for (std::size_t i = 0; i < N; ++i) b[i] += px[i];
  }
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) P(i, j) += xs.size() * prec(i, j);
  const SqMat<N> L = cholesky(P);
  const Vec<N> mean = chol_solve(L, b);
  return sample_mvn_chol(mean, cholesky(chol_inverse(L)), rng);
}

template <std::size_t N>
SqMat<N> draw_cov_conditional(const std::vector<Vec<N>>& xs, const Vec<N>& mean, RngStream& rng) {
  SqMat<N> scale = SqMat<N>::diagonal(kIwScaleDiag);
  for (const auto& x : xs) add_outer(scale, x - mean);
  return sample_inverse_wishart<N>(static_cast<double>(N) + xs.size(), scale, rng);
}

inline double draw_scalar_mean(const std::vector<double>& xs, double var, RngStream& rng) {
  double prec = 1.0 / kVaguePriorVar, num = 0.0;
  for (double x : xs) {
    prec += 1.0 / var;
    num += x / var;
  }
  return num / prec + rng.normal() / std::sqrt(prec);
}

inline double draw_scalar_var(const std::vector<double>& xs, double mean, RngStream& rng) {
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return rng.inverse_gamma(kInvGammaShape + 0.5 * xs.size(), kInvGammaRate + 0.5 * s);
}

}  // namespace detail2

/// Closed-form Gibbs draw of all population mean blocks.
inline void update_population_means(PopulationState& st, const std::vector<SamplePoolDraw>& thetas, RngStream& rng) {
  std::vector<Vec2> alphas, bstars;
  std::vector<Vec3> cg, ce, cl;
  std::vector<double> lphi, ls2;
  for (const auto& t : thetas) {
    alphas.push_back(t.alpha);
    cg.push_back(t.c_gamma);
    ce.push_back(t.c_eta);
    cl.push_back(t.c_lambda);
    if (has_variance_link(st.model)) bstars.push_back(t.beta_star);
    if (has_visit_effect(st.model)) lphi.push_back(std::log(t.sigma2_phi));
    if (!has_variance_link(st.model)) ls2.push_back(std::log(t.sigma2));
  }
  st.beta = detail2::draw_mean_conditional<2>(alphas, st.sigma_alpha, rng);
  st.cbar_gamma = detail2::draw_mean_conditional<3>(cg, st.sigma_c_gamma, rng);
  st.cbar_eta = detail2::draw_mean_conditional<3>(ce, st.sigma_c_eta, rng);
  st.cbar_lambda = detail2::draw_mean_conditional<3>(cl, st.sigma_c_lambda, rng);
  if (has_variance_link(st.model)) st.beta_star = detail2::draw_mean_conditional<2>(bstars, st.sigma_beta_star, rng);
  if (has_visit_effect(st.model)) st.m_log_sigma2_phi = detail2::draw_scalar_mean(lphi, st.v_log_sigma2_phi, rng);
  if (!has_variance_link(st.model)) st.m_log_sigma2 = detail2::draw_scalar_mean(ls2, st.v_log_sigma2, rng);
}

/// Closed-form Gibbs draw of all population covariance blocks.
inline void update_population_covariances(PopulationState& st, const std::vector<SamplePoolDraw>& thetas, RngStream& rng) {
  std::vector<Vec2> alphas, bstars;
  std::vector<Vec3> cg, ce, cl;
  std::vector<double> lphi, ls2;
  for (const auto& t : thetas) {
    alphas.push_back(t.alpha);
    cg.push_back(t.c_gamma);
    ce.push_back(t.c_eta);
    cl.push_back(t.c_lambda);
    if (has_variance_link(st.model)) bstars.push_back(t.beta_star);
    if (has_visit_effect(st.model)) lphi.push_back(std::log(t.sigma2_phi));
    if (!has_variance_link(st.model)) ls2.push_back(std::log(t.sigma2));
  }
  st.sigma_alpha = detail2::draw_cov_conditional<2>(alphas, st.beta, rng);
  st.sigma_c_gamma = detail2::draw_cov_conditional<3>(cg, st.cbar_gamma, rng);
  st.sigma_c_eta = detail2::draw_cov_conditional<3>(ce, st.cbar_eta, rng);
  st.sigma_c_lambda = detail2::draw_cov_conditional<3>(cl, st.cbar_lambda, rng);
  if (has_variance_link(st.model)) st.sigma_beta_star = detail2::draw_cov_conditional<2>(bstars, st.beta_star, rng);
  if (has_visit_effect(st.model)) st.v_log_sigma2_phi = detail2::draw_scalar_var(lphi, st.m_log_sigma2_phi, rng);
  if (!has_variance_link(st.model)) st.v_log_sigma2 = detail2::draw_scalar_var(ls2, st.m_log_sigma2, rng);
}

// ---------------------------------------------------------------------------
// Metropolis-Hastings resampling from the stage-1 pools

/// Density of theta_i under the current population model.
inline double log_population_density(const PopulationState& st, const SamplePoolDraw& t) {
  double lp = logpdf_mvn2(t.alpha, st.beta, st.sigma_alpha);
  lp += logpdf_mvn<3>(t.c_gamma, st.cbar_gamma, cholesky(st.sigma_c_gamma));
  lp += logpdf_mvn<3>(t.c_eta, st.cbar_eta, cholesky(st.sigma_c_eta));
  lp += logpdf_mvn<3>(t.c_lambda, st.cbar_lambda, cholesky(st.sigma_c_lambda));
  if (has_variance_link(st.model)) lp += logpdf_mvn2(t.beta_star, st.beta_star, st.sigma_beta_star);
  if (has_visit_effect(st.model))
    lp += logpdf_normal(std::log(t.sigma2_phi), st.m_log_sigma2_phi, std::sqrt(st.v_log_sigma2_phi));
  if (!has_variance_link(st.model)) lp += logpdf_normal(std::log(t.sigma2), st.m_log_sigma2, std::sqrt(st.v_log_sigma2));
  return lp;
}

/// Jacobian of the 2x2 map L -> L L^T, in log form.
inline double log_chol_jacobian(const Vec3& c) { return std::log(4.0) + 2.0 * std::log(c[0]) + std::log(c[2]); }

/// Stage-1 prior density of theta_i, evaluated in the same coordinates
/// (Cholesky elements; log variances). Part of the simplified
/// target-to-proposal ratio: the likelihood terms cancel because the
/// proposal is the stage-1 posterior.
inline double log_stage1_prior(const SamplePoolDraw& t, ModelVariant model) {
  const double sd = std::sqrt(kVaguePriorVar);
  double lp = logpdf_normal(t.alpha[0], 0.0, sd) + logpdf_normal(t.alpha[1], 0.0, sd);
  if (has_variance_link(model)) lp += logpdf_normal(t.beta_star[0], 0.0, sd) + logpdf_normal(t.beta_star[1], 0.0, sd);
  const Mat2 iw_scale = Mat2::diagonal(kIwScaleDiag);
  for (const Vec3* c : {&t.c_gamma, &t.c_eta, &t.c_lambda}) {
    const Mat2 sig = matmul_lt(CovarianceSpec::from_chol_elements(*c).chol);
    lp += logpdf_inverse_wishart<2>(sig, kIwDf, iw_scale) + log_chol_jacobian(*c);
  }
  if (has_visit_effect(model))
    lp += logpdf_inverse_gamma(t.sigma2_phi, kInvGammaShape, kInvGammaRate) + std::log(t.sigma2_phi);
  if (!has_variance_link(model))
    lp += logpdf_inverse_gamma(t.sigma2, kInvGammaShape, kInvGammaRate) + std::log(t.sigma2);
  return lp;
}

/// Independence-sampler MH step: proposes a uniformly random pool row.
/// Returns true when the proposal was accepted. `prior_cache` holds
/// log_stage1_prior per pool row.
inline bool mh_update_individual(IndividualTheta& cur, const SamplePool& pool, const PopulationState& st,
                                 const std::vector<double>& prior_cache, RngStream& rng) {
  if (pool.draws.empty()) throw std::invalid_argument("mh_update_individual: empty pool");
  const int j = static_cast<int>(rng.uniform() * pool.draws.size());
  const SamplePoolDraw& prop = pool.draws[j];
  const double cur_prior =
      cur.pool_index >= 0 ? prior_cache[cur.pool_index] : log_stage1_prior(cur.value, st.model);
  const double lr = (log_population_density(st, prop) - prior_cache[j]) -
                    (log_population_density(st, cur.value) - cur_prior);
  if (std::log(rng.uniform()) < lr) {
    cur.pool_index = j;
    cur.value = prop;
    return true;
  }
  return false;
}

inline bool mh_update_individual(IndividualTheta& cur, const SamplePool& pool, const PopulationState& st, RngStream& rng) {
  std::vector<double> cache(pool.draws.size());
  for (std::size_t j = 0; j < cache.size(); ++j) cache[j] = log_stage1_prior(pool.draws[j], st.model);
  return mh_update_individual(cur, pool, st, cache, rng);
}

// ---------------------------------------------------------------------------
// Driver

inline std::vector<std::string> population_columns(ModelVariant m) {
  std::vector<std::string> c{"beta0", "beta1"};
  if (has_variance_link(m)) {
    c.push_back("beta_star0");
    c.push_back("beta_star1");
  } else {
    c.push_back("sigma2");
  }
  if (has_visit_effect(m)) c.push_back("sigma2_phi");
  for (const char* s : {"Sigma_alpha_11", "Sigma_alpha_21", "Sigma_alpha_22"}) c.push_back(s);
  if (has_variance_link(m))
    for (const char* s : {"Sigma_beta_star_11", "Sigma_beta_star_21", "Sigma_beta_star_22"}) c.push_back(s);
  for (const char* b : {"C_bar_gamma", "C_bar_eta", "C_bar_lambda"})
    for (int r = 1; r <= 3; ++r) c.push_back(std::string(b) + "_" + std::to_string(r));
  for (const char* b : {"Sigma_C_gamma", "Sigma_C_eta", "Sigma_C_lambda"})
    for (const char* ij : {"11", "21", "22", "31", "32", "33"}) c.push_back(std::string(b) + "_" + ij);
  if (has_visit_effect(m)) c.push_back("V_log_sigma2_phi");
  if (!has_variance_link(m)) c.push_back("V_log_sigma2");
  return c;
}

inline std::vector<double> population_row(const PopulationState& st) {
  std::vector<double> v{st.beta[0], st.beta[1]};
  if (has_variance_link(st.model)) {
    v.push_back(st.beta_star[0]);
    v.push_back(st.beta_star[1]);
  } else {
    v.push_back(std::exp(st.m_log_sigma2));
  }
  if (has_visit_effect(st.model)) v.push_back(std::exp(st.m_log_sigma2_phi));
  for (const double x : {st.sigma_alpha(0, 0), st.sigma_alpha(1, 0), st.sigma_alpha(1, 1)}) v.push_back(x);
  if (has_variance_link(st.model))
    for (const double x : {st.sigma_beta_star(0, 0), st.sigma_beta_star(1, 0), st.sigma_beta_star(1, 1)}) v.push_back(x);
  for (const Vec3* c : {&st.cbar_gamma, &st.cbar_eta, &st.cbar_lambda}) v.insert(v.end(), c->begin(), c->end());
  for (const Mat3* s : {&st.sigma_c_gamma, &st.sigma_c_eta, &st.sigma_c_lambda})
    for (const auto [i, j] : {std::pair{0, 0}, {1, 0}, {1, 1}, {2, 0}, {2, 1}, {2, 2}}) v.push_back((*s)(i, j));
  if (has_visit_effect(st.model)) v.push_back(st.v_log_sigma2_phi);
  if (!has_variance_link(st.model)) v.push_back(st.v_log_sigma2);
  return v;
}

struct Stage2Chain {
  std::vector<std::vector<double>> population_draws;
  std::vector<std::vector<SamplePoolDraw>> theta_draws;  // [retained][individual]
  std::vector<double> accept_rate;                       // per individual
};

struct Stage2Result {
  ModelVariant model = ModelVariant::Model1;
  std::vector<std::string> columns;
  std::vector<std::string> ids;
  std::vector<Stage2Chain> chains;
};

inline SamplePoolDraw pool_statistic(const SamplePool& pool, InitRule rule) {
  const auto cols = pool_columns(pool.model);
  std::vector<double> acc(cols.size(), rule == InitRule::Mean ? 0.0 : 0.0);
  bool first = true;
  for (const auto& d : pool.draws) {
    const auto row = pool_row(d, pool.model);
    for (std::size_t i = 0; i < row.size(); ++i) {
      switch (rule) {
        case InitRule::Min:
          acc[i] = first ? row[i] : std::min(acc[i], row[i]);
          break;
        case InitRule::Max:
          acc[i] = first ? row[i] : std::max(acc[i], row[i]);
          break;
        case InitRule::Mean:
          acc[i] += row[i] / pool.draws.size();
          break;
      }
    }
    first = false;
  }
  return pool_draw_from_row(acc, pool.model);
}

/// Index of an actual pool row to start a chain from. Min/Max pick the row
/// with the smallest/largest sum of standardized coordinates, Mean the row
/// closest to the pool mean. Starting from a real row matters: a synthetic
/// coordinate-wise extreme can have an arbitrarily small stage-1 prior
/// density, which gives it a huge importance weight and freezes the
/// independence sampler there.
inline int pool_init_index(const SamplePool& pool, InitRule rule) {
  const std::size_t n = pool.draws.size(), p = pool_columns(pool.model).size();
  std::vector<double> mean(p, 0.0), var(p, 0.0);
  std::vector<std::vector<double>> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i] = pool_row(pool.draws[i], pool.model);
    for (std::size_t j = 0; j < p; ++j) mean[j] += rows[i][j] / n;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) var[j] += (rows[i][j] - mean[j]) * (rows[i][j] - mean[j]) / n;
  int best = 0;
  double best_score = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double score = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double z = var[j] > 0.0 ? (rows[i][j] - mean[j]) / std::sqrt(var[j]) : 0.0;
      score += rule == InitRule::Mean ? z * z : z;
    }
    const bool better = rule == InitRule::Max ? score > best_score : score < best_score;
    if (i == 0 || better) {
      best = static_cast<int>(i);
      best_score = score;
    }
  }
  return best;
}

namespace detail2 {

template <std::size_t N, class F>
void init_block(Vec<N>& mean_out, SqMat<N>& cov_out, const std::vector<SamplePool>& pools,
                const std::vector<IndividualTheta>& thetas, F&& coord) {
  Vec<N> init_mean{}, grand{};
  for (const auto& t : thetas) init_mean = init_mean + coord(t.value);
  for (std::size_t i = 0; i < N; ++i) init_mean[i] /= thetas.size();
  std::size_t m = 0;
  for (const auto& p : pools)
    for (const auto& d : p.draws) {
      grand = grand + coord(d);
      ++m;
    }
  for (std::size_t i = 0; i < N; ++i) grand[i] /= m;
  SqMat<N> scatter = SqMat<N>::diagonal(kIwScaleDiag);
  for (const auto& p : pools)
    for (const auto& d : p.draws) add_outer(scatter, coord(d) - grand);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < N; ++j) cov_out(i, j) = kInitCovInflate * scatter(i, j) / m;
  mean_out = init_mean;
}

template <class F>
void init_scalar(double& mean_out, double& var_out, const std::vector<SamplePool>& pools,
                 const std::vector<IndividualTheta>& thetas, F&& coord) {
  double init_mean = 0.0, grand = 0.0;
  for (const auto& t : thetas) init_mean += coord(t.value);
  init_mean /= thetas.size();
  std::size_t m = 0;
  for (const auto& p : pools)
    for (const auto& d : p.draws) {
      grand += coord(d);
      ++m;
    }
  grand /= m;
  double ss = kIwScaleDiag;
  for (const auto& p : pools)
    for (const auto& d : p.draws) ss += (coord(d) - grand) * (coord(d) - grand);
  mean_out = init_mean;
  var_out = kInitCovInflate * ss / m;
}

}  // namespace detail2

/// Dispersed data-driven starting state. Block means come from the chain's
/// initial thetas, keeping the min/mean/max overdispersion across chains;
/// covariances come from the total spread of all pool rows, inflated. Without
/// the inflation an extreme joint init can lock the independence sampler:
/// the covariance conditionals shrink around the initial thetas and every
/// pool proposal is rejected before the chain has a chance to move.
inline void initialize_population(PopulationState& st, const std::vector<SamplePool>& pools,
                                  const std::vector<IndividualTheta>& thetas) {
  using detail2::init_block;
  using detail2::init_scalar;
  init_block<2>(st.beta, st.sigma_alpha, pools, thetas, [](const SamplePoolDraw& d) { return d.alpha; });
  init_block<3>(st.cbar_gamma, st.sigma_c_gamma, pools, thetas, [](const SamplePoolDraw& d) { return d.c_gamma; });
  init_block<3>(st.cbar_eta, st.sigma_c_eta, pools, thetas, [](const SamplePoolDraw& d) { return d.c_eta; });
  init_block<3>(st.cbar_lambda, st.sigma_c_lambda, pools, thetas, [](const SamplePoolDraw& d) { return d.c_lambda; });
  if (has_variance_link(st.model))
    init_block<2>(st.beta_star, st.sigma_beta_star, pools, thetas, [](const SamplePoolDraw& d) { return d.beta_star; });
  if (has_visit_effect(st.model))
    init_scalar(st.m_log_sigma2_phi, st.v_log_sigma2_phi, pools, thetas,
                [](const SamplePoolDraw& d) { return std::log(d.sigma2_phi); });
  if (!has_variance_link(st.model))
    init_scalar(st.m_log_sigma2, st.v_log_sigma2, pools, thetas,
                [](const SamplePoolDraw& d) { return std::log(d.sigma2); });
}

inline Stage2Result run_stage2(const std::vector<SamplePool>& pools, const Stage2Config& cfg, std::uint64_t seed) {
  cfg.validate();
  if (pools.empty()) throw std::invalid_argument("stage2: no sample pools");
  const ModelVariant model = pools.front().model;
  const std::size_t n = pools.size();

  std::vector<std::vector<double>> prior_cache(n);
  for (std::size_t i = 0; i < n; ++i) {
    prior_cache[i].resize(pools[i].draws.size());
    for (std::size_t j = 0; j < pools[i].draws.size(); ++j)
      prior_cache[i][j] = log_stage1_prior(pools[i].draws[j], model);
  }

  Stage2Result res;
  res.model = model;
  res.columns = population_columns(model);
  for (const auto& p : pools) res.ids.push_back(p.individual_id);

  for (int c = 0; c < cfg.chains; ++c) {
    const InitRule rule = cfg.init_rule[c % cfg.init_rule.size()];
    RngStream pop_rng(seed, 0x52000000ULL + c);
    std::vector<RngStream> ind_rng;
    for (std::size_t i = 0; i < n; ++i) ind_rng.emplace_back(seed, 0x52100000ULL + c * 0x10000ULL + i);

    PopulationState st;
    st.model = model;
    std::vector<IndividualTheta> thetas(n);
    for (std::size_t i = 0; i < n; ++i) {
      thetas[i].pool_index = pool_init_index(pools[i], rule);
      thetas[i].value = pools[i].draws[thetas[i].pool_index];
    }
    initialize_population(st, pools, thetas);

    // hold the dispersed start fixed for a few sweeps so every individual
    // can step off its (possibly extreme) initial value
    const int escape = std::min(50, cfg.burn_in / 4);

    Stage2Chain chain;
    chain.accept_rate.assign(n, 0.0);
    std::vector<SamplePoolDraw> vals(n);
    for (int it = 0; it < cfg.iterations; ++it) {
      for (std::size_t i = 0; i < n; ++i)
        for (int a = 0; a < cfg.mh_attempts; ++a)
          chain.accept_rate[i] += mh_update_individual(thetas[i], pools[i], st, prior_cache[i], ind_rng[i]) ? 1.0 : 0.0;
      for (std::size_t i = 0; i < n; ++i) vals[i] = thetas[i].value;
      if (it < escape) continue;
      update_population_means(st, vals, pop_rng);
      update_population_covariances(st, vals, pop_rng);
      if (it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
        chain.population_draws.push_back(population_row(st));
        chain.theta_draws.push_back(vals);
      }
    }
    for (auto& a : chain.accept_rate) a /= static_cast<double>(cfg.iterations) * cfg.mh_attempts;
    res.chains.push_back(std::move(chain));
  }
  return res;
}

}  // namespace vfb
