#pragma once

#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "data_io.hpp"
#include "model.hpp"

namespace vfb {

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Vague priors for the first-stage fit: flat normals on the regression
// coefficients, inverse gamma on variances, inverse Wishart on the
// random-effect covariances.
inline constexpr double kVaguePriorVar = 1e8;
inline constexpr double kInvGammaShape = 0.001;
inline constexpr double kInvGammaRate = 0.001;
inline constexpr double kIwDf = 2.0;
inline constexpr double kIwScaleDiag = 0.01;

struct Stage1Config {
  int iterations = 20000;
  int burn_in = 10000;
  int thin = 10;
  ModelVariant model = ModelVariant::Model1;
  double adapt_burnin_fraction = 0.5;
  std::map<std::string, double> rw_step_sizes;  // Model 3 proposal scales by block type
  bool keep_random_effects = true;

  int retained() const { return (iterations - burn_in) / thin; }

  void validate() const {
    if (burn_in >= iterations) throw std::invalid_argument("stage1: burn_in must be below iterations");
    if (thin < 1) throw std::invalid_argument("stage1: thin must be >= 1");
    if (retained() < 100) throw std::invalid_argument("stage1: fewer than 100 retained draws");
    if (adapt_burnin_fraction < 0.0 || adapt_burnin_fraction > 1.0)
      throw std::invalid_argument("stage1: adapt_burnin_fraction outside [0,1]");
  }

  static Stage1Config desk(ModelVariant m) {
    Stage1Config c;
    c.model = m;
    return c;
  }

  static Stage1Config paper(ModelVariant m) {
    Stage1Config c;
    c.iterations = 200000;
    c.burn_in = 150000;
    c.thin = 10;
    c.model = m;
    return c;
  }
};

/// One retained first-stage draw of the parameters carried to stage 2.
struct SamplePoolDraw {
  Vec2 alpha{0.0, 0.0};
  Vec2 beta_star{0.0, 0.0};  // Model 3 only
  Vec3 c_gamma{0.0, 0.0, 0.0};
  Vec3 c_eta{0.0, 0.0, 0.0};
  Vec3 c_lambda{0.0, 0.0, 0.0};
  double sigma2_phi = 0.0;  // Models 2-3
  double sigma2 = 0.0;      // Models 1-2
};

struct SamplePool {
  std::string individual_id;
  ModelVariant model = ModelVariant::Model1;
  std::vector<SamplePoolDraw> draws;
  std::vector<RandomEffects> effects;  // parallel to draws when retained

  std::size_t retained_count() const { return draws.size(); }
};

// ---------------------------------------------------------------------------
// Conjugate bivariate update for an (intercept, slope) pair

struct PairConditional {
  Vec2 mean;
  Mat2 cov;
};

/// Full conditional of a random-effect pair b under y_j = b0 + b1 t_j + e_j
/// with per-observation precision and N2(0, prior_cov) prior.
inline PairConditional pair_full_conditional(const std::vector<double>& years, const std::vector<double>& resid,
                                             const std::vector<double>& prec, const Mat2& prior_prec) {
  Mat2 P = prior_prec;
  Vec2 b{0.0, 0.0};
  for (std::size_t j = 0; j < years.size(); ++j) {
    const double w = prec[j], t = years[j];
    P(0, 0) += w;
    P(0, 1) += w * t;
    P(1, 0) += w * t;
    P(1, 1) += w * t * t;
    b[0] += w * resid[j];
    b[1] += w * t * resid[j];
  }
  const Mat2 L = cholesky(P);  // throws on singular precision
  PairConditional c;
  c.mean = chol_solve(L, b);
  c.cov = chol_inverse(L);
  return c;
}

inline Vec2 gibbs_update_random_effect_pair(const PairConditional& cond, RngStream& rng) {
  return sample_mvn<2>(cond.mean, cond.cov, rng);
}

// ---------------------------------------------------------------------------
// First-stage sampler
//
// Sweep order: (a) latent censored values, (b) alpha (+ beta* under Model 3),
// (c) gamma/eta/lambda pairs, (d) mixing weights and visit effects,
// (e) covariances and variances. Models 1-2 use conjugate draws throughout;
// Model 3 replaces (b)-(d) regression blocks with adaptive random-walk MH
// because the residual SD depends on the linear predictor.

class Stage1Sampler {
 public:
  Stage1Sampler(const IndividualData& data, const Stage1Config& cfg, RngStream& rng)
      : cfg_(cfg), rng_(rng), idx_(data) {
    const std::size_t visits = std::max(data.visit_times[0].size(), data.visit_times[1].size());
    if (data.observations.empty()) throw std::invalid_argument("stage1: no observations");
    if (visits < 2) throw std::invalid_argument("stage1: individual has fewer than 2 visits, slope unidentifiable");
    id_ = data.individual_id;
    for (const auto& o : data.observations) {
      obs_.push_back(resolve_slots(o, idx_));
      y_.push_back(o.observed_db);
    }
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

    re_ = RandomEffects::zeros(idx_);
    double ymean = 0.0;
    for (std::size_t j = 0; j < n_; ++j) ymean += y_[j];
    re_.alpha = {ymean / n_, 0.0};
    var_.sigma2 = 10.0;
    var_.beta_star0 = std::log(3.0);
    var_.beta_star1 = 0.0;
    sigma2_phi_ = 1.0;
    mix_u_.assign(idx_.n_phi, 1.0);
    sigma_gamma_ = sigma_eta_ = sigma_lambda_ = Mat2::identity();
    steps_ = {{"alpha_beta_star", 0.05}, {"gamma", 0.1}, {"eta", 0.1}, {"lambda", 0.2}, {"phi", 0.3}};
    for (const auto& [k, v] : cfg.rw_step_sizes) steps_[k] = v;
    refresh_mu();
  }

  void sweep(int iteration) {
    update_latent();
    if (has_variance_link(cfg_.model)) {
      mh_update_alpha_beta_star();
      mh_update_pairs();
    } else {
      update_alpha();
      update_pairs();
    }
    if (has_visit_effect(cfg_.model)) update_visit_effects();
    update_variances();
    if (has_variance_link(cfg_.model)) maybe_adapt(iteration);
  }

  /// (a) latent values for censored observations, truncated to (-inf, 0)
  void update_latent() {
    for (std::size_t j = 0; j < n_; ++j)
      if (obs_[j].censored) y_[j] = sample_truncated_normal(mu_[j], obs_sd(j), 0.0, rng_);
  }

  /// (b) conjugate alpha draw, Models 1-2 (flat prior)
  void update_alpha() {
    std::vector<double> t(n_), r(n_), w(n_, 1.0 / var_.sigma2);
    for (std::size_t j = 0; j < n_; ++j) {
      t[j] = obs_[j].years;
      r[j] = y_[j] - mu_[j] + re_.alpha[0] + re_.alpha[1] * obs_[j].years;
    }
    const Vec2 draw = gibbs_update_random_effect_pair(pair_full_conditional(t, r, w, Mat2::diagonal(1.0 / kVaguePriorVar)), rng_);
    shift_block(re_.alpha, draw, nullptr);
  }

  /// (c) conjugate gamma/eta/lambda draws, Models 1-2
  void update_pairs() {
    const Mat2 pg = inverse_spd(sigma_gamma_), pe = inverse_spd(sigma_eta_), pl = inverse_spd(sigma_lambda_);
    for (int g = 0; g < idx_.n_gamma; ++g) conjugate_pair(re_.gamma[g], gamma_obs_[g], pg);
    for (int g = 0; g < idx_.n_eta; ++g) conjugate_pair(re_.eta[g], eta_obs_[g], pe);
    for (int g = 0; g < idx_.n_lambda; ++g) conjugate_pair(re_.lambda[g], lambda_obs_[g], pl);
  }

  /// (d) auxiliary mixing weights, then visit effects
  void update_visit_effects() {
    for (int p = 0; p < idx_.n_phi; ++p) {
      const double phi = re_.phi[p];
      mix_u_[p] = rng_.gamma(0.5 * (kGveDf + 1.0), 2.0 / (kGveDf + phi * phi / sigma2_phi_));
      if (has_variance_link(cfg_.model)) {
        mh_update_phi(p);
      } else {
        double prec = mix_u_[p] / sigma2_phi_, mean_num = 0.0;
        const double w = 1.0 / var_.sigma2;
        for (std::size_t j : phi_obs_[p]) {
          prec += w;
          mean_num += w * (y_[j] - mu_[j] + phi);
        }
        const double draw = mean_num / prec + rng_.normal() / std::sqrt(prec);
        for (std::size_t j : phi_obs_[p]) mu_[j] += draw - phi;
        re_.phi[p] = draw;
      }
    }
  }

  /// (e) covariances and variances, all conjugate
  void update_variances() {
    sigma_gamma_ = scatter_iw(re_.gamma);
    sigma_eta_ = scatter_iw(re_.eta);
    sigma_lambda_ = scatter_iw(re_.lambda);
    if (has_visit_effect(cfg_.model)) {
      double s = 0.0;
      for (int p = 0; p < idx_.n_phi; ++p) s += mix_u_[p] * re_.phi[p] * re_.phi[p];
      sigma2_phi_ = rng_.inverse_gamma(kInvGammaShape + 0.5 * idx_.n_phi, kInvGammaRate + 0.5 * s);
    }
    if (!has_variance_link(cfg_.model)) {
      double s = 0.0;
      for (std::size_t j = 0; j < n_; ++j) {
        const double d = y_[j] - mu_[j];
        s += d * d;
      }
      var_.sigma2 = rng_.inverse_gamma(kInvGammaShape + 0.5 * n_, kInvGammaRate + 0.5 * s);
    }
  }

  SamplePoolDraw snapshot() const {
    SamplePoolDraw d;
    d.alpha = re_.alpha;
    d.beta_star = {var_.beta_star0, var_.beta_star1};
    d.c_gamma = CovarianceSpec::from_matrix(sigma_gamma_).chol_elements();
    d.c_eta = CovarianceSpec::from_matrix(sigma_eta_).chol_elements();
    d.c_lambda = CovarianceSpec::from_matrix(sigma_lambda_).chol_elements();
    d.sigma2_phi = sigma2_phi_;
    d.sigma2 = var_.sigma2;
    return d;
  }

  // state access (also used by oracle cross-check tests)
  const EffectIndex& index() const { return idx_; }
  RandomEffects& effects() { return re_; }
  VarianceParams& var_params() { return var_; }
  double& sigma2_phi() { return sigma2_phi_; }
  Mat2& sigma_gamma() { return sigma_gamma_; }
  Mat2& sigma_eta() { return sigma_eta_; }
  Mat2& sigma_lambda() { return sigma_lambda_; }
  const std::vector<double>& latent() const { return y_; }
  void refresh_mu() {
    mu_.assign(n_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      const ObsSlots& s = obs_[j];
      double m = re_.alpha[0] + re_.gamma[s.gamma][0] + re_.eta[s.eta][0] + re_.lambda[s.lambda][0] +
                 (re_.alpha[1] + re_.gamma[s.gamma][1] + re_.eta[s.eta][1] + re_.lambda[s.lambda][1]) * s.years;
      if (has_visit_effect(cfg_.model)) m += re_.phi[s.phi];
      mu_[j] = m;
    }
  }

 private:
  double obs_sd(std::size_t j) const {
    return has_variance_link(cfg_.model) ? std::exp(var_.beta_star0 + var_.beta_star1 * mu_[j]) : std::sqrt(var_.sigma2);
  }

  double block_loglik(const std::vector<std::size_t>& rows, double d0, double d1, double dphi) const {
    double ll = 0.0;
    for (std::size_t j : rows) {
      const double m = mu_[j] + d0 + d1 * obs_[j].years + dphi;
      const double sd = has_variance_link(cfg_.model) ? std::exp(var_.beta_star0 + var_.beta_star1 * m) : std::sqrt(var_.sigma2);
      const double z = (y_[j] - m) / sd;
      ll += -0.5 * z * z - std::log(sd);
    }
    if (!std::isfinite(ll)) throw NumericalError("stage1: non-finite likelihood for individual " + id_);
    return ll;
  }

  void shift_block(Vec2& cur, const Vec2& draw, const std::vector<std::size_t>* rows) {
    const double d0 = draw[0] - cur[0], d1 = draw[1] - cur[1];
    if (rows) {
      for (std::size_t j : *rows) mu_[j] += d0 + d1 * obs_[j].years;
    } else {
      for (std::size_t j = 0; j < n_; ++j) mu_[j] += d0 + d1 * obs_[j].years;
    }
    cur = draw;
  }

  void conjugate_pair(Vec2& b, const std::vector<std::size_t>& rows, const Mat2& prior_prec) {
    std::vector<double> t(rows.size()), r(rows.size()), w(rows.size(), 1.0 / var_.sigma2);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const std::size_t j = rows[k];
      t[k] = obs_[j].years;
      r[k] = y_[j] - mu_[j] + b[0] + b[1] * obs_[j].years;
    }
    shift_block(b, gibbs_update_random_effect_pair(pair_full_conditional(t, r, w, prior_prec), rng_), &rows);
  }

  Mat2 scatter_iw(const std::vector<Vec2>& blocks) {
    Mat2 scale = Mat2::diagonal(kIwScaleDiag);
    for (const auto& b : blocks) add_outer(scale, b);
    return sample_inverse_wishart2(kIwDf + blocks.size(), scale, rng_);
  }

  // --- Model 3 random-walk moves -------------------------------------------

  void mh_update_alpha_beta_star() {
    const double step = steps_["alpha_beta_star"];
    Vec2 a = re_.alpha;
    const double b0 = var_.beta_star0, b1 = var_.beta_star1;
    const Vec2 ap{a[0] + step * rng_.normal(), a[1] + 0.1 * step * rng_.normal()};
    const double b0p = b0 + 0.2 * step * rng_.normal();
    const double b1p = b1 + 0.02 * step * rng_.normal();

    auto logpost = [&](const Vec2& av, double b0v, double b1v) {
      double ll = 0.0;
      for (std::size_t j = 0; j < n_; ++j) {
        const double m = mu_[j] + (av[0] - a[0]) + (av[1] - a[1]) * obs_[j].years;
        const double sd = std::exp(b0v + b1v * m);
        const double z = (y_[j] - m) / sd;
        ll += -0.5 * z * z - std::log(sd);
      }
      if (!std::isfinite(ll)) throw NumericalError("stage1: non-finite likelihood for individual " + id_);
      ll -= 0.5 * (av[0] * av[0] + av[1] * av[1] + b0v * b0v + b1v * b1v) / kVaguePriorVar;
      return ll;
    };
    const double lr = logpost(ap, b0p, b1p) - logpost(a, b0, b1);
    ++prop_["alpha_beta_star"];
    if (std::log(rng_.uniform()) < lr) {
      ++acc_["alpha_beta_star"];
      shift_block(re_.alpha, ap, nullptr);
      var_.beta_star0 = b0p;
      var_.beta_star1 = b1p;
    }
  }

  void mh_pair_block(Vec2& b, const std::vector<std::size_t>& rows, const Mat2& prior_cov, const std::string& key) {
    const double step = steps_[key];
    const Vec2 bp{b[0] + step * rng_.normal(), b[1] + 0.1 * step * rng_.normal()};
    const Mat2 L = cholesky(prior_cov);
    double lr = block_loglik(rows, bp[0] - b[0], bp[1] - b[1], 0.0) - block_loglik(rows, 0.0, 0.0, 0.0);
    lr += logpdf_mvn<2>(bp, {0.0, 0.0}, L) - logpdf_mvn<2>(b, {0.0, 0.0}, L);
    ++prop_[key];
    if (std::log(rng_.uniform()) < lr) {
      ++acc_[key];
      shift_block(b, bp, &rows);
    }
  }

  void mh_update_pairs() {
    for (int g = 0; g < idx_.n_gamma; ++g) mh_pair_block(re_.gamma[g], gamma_obs_[g], sigma_gamma_, "gamma");
    for (int g = 0; g < idx_.n_eta; ++g) mh_pair_block(re_.eta[g], eta_obs_[g], sigma_eta_, "eta");
    for (int g = 0; g < idx_.n_lambda; ++g) mh_pair_block(re_.lambda[g], lambda_obs_[g], sigma_lambda_, "lambda");
  }

  void mh_update_phi(int p) {
    const double step = steps_["phi"];
    const double phi = re_.phi[p];
    const double phip = phi + step * rng_.normal();
    const double prior_var = sigma2_phi_ / mix_u_[p];
    double lr = block_loglik(phi_obs_[p], 0.0, 0.0, phip - phi) - block_loglik(phi_obs_[p], 0.0, 0.0, 0.0);
    lr += -0.5 * (phip * phip - phi * phi) / prior_var;
    ++prop_["phi"];
    if (std::log(rng_.uniform()) < lr) {
      ++acc_["phi"];
      for (std::size_t j : phi_obs_[p]) mu_[j] += phip - phi;
      re_.phi[p] = phip;
    }
  }

  void maybe_adapt(int iteration) {
    const int window = 100;
    const int adapt_until = static_cast<int>(cfg_.adapt_burnin_fraction * cfg_.burn_in);
    if (iteration >= adapt_until || iteration % window != window - 1) return;
    for (auto& [key, step] : steps_) {
      const long np = prop_[key];
      if (np == 0) continue;
      const double rate = static_cast<double>(acc_[key]) / np;
      if (rate < 0.23)
        step *= 0.8;
      else if (rate > 0.44)
        step *= 1.25;
      prop_[key] = acc_[key] = 0;
    }
  }

  Stage1Config cfg_;
  RngStream& rng_;
  EffectIndex idx_;
  std::string id_;
  std::size_t n_ = 0;
  std::vector<ObsSlots> obs_;
  std::vector<double> y_;   // working response, latent for censored entries
  std::vector<double> mu_;  // current linear predictor per observation
  std::vector<std::vector<std::size_t>> gamma_obs_, eta_obs_, lambda_obs_, phi_obs_;

  RandomEffects re_;
  VarianceParams var_;
  double sigma2_phi_ = 1.0;
  std::vector<double> mix_u_;
  Mat2 sigma_gamma_, sigma_eta_, sigma_lambda_;

  std::map<std::string, double> steps_;
  std::map<std::string, long> prop_, acc_;
};

inline SamplePool fit_individual(const IndividualData& data, const Stage1Config& cfg, RngStream& rng) {
  cfg.validate();
  Stage1Sampler s(data, cfg, rng);
  SamplePool pool;
  pool.individual_id = data.individual_id;
  pool.model = cfg.model;
  pool.draws.reserve(cfg.retained());
  for (int it = 0; it < cfg.iterations; ++it) {
    s.sweep(it);
    if (it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) {
      pool.draws.push_back(s.snapshot());
      if (cfg.keep_random_effects) pool.effects.push_back(s.effects());
    }
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Pool persistence: plain CSV, one row per retained draw

inline std::vector<std::string> pool_columns(ModelVariant m) {
  std::vector<std::string> c{"alpha0", "alpha1"};
  if (has_variance_link(m)) {
    c.push_back("beta_star0");
    c.push_back("beta_star1");
  }
  for (const char* b : {"C_gamma", "C_eta", "C_lambda"})
    for (int r = 1; r <= 3; ++r) c.push_back(std::string(b) + "_" + std::to_string(r));
  if (has_visit_effect(m)) c.push_back("sigma2_phi");
  if (!has_variance_link(m)) c.push_back("sigma2");
  return c;
}

inline std::vector<double> pool_row(const SamplePoolDraw& d, ModelVariant m) {
  std::vector<double> v{d.alpha[0], d.alpha[1]};
  if (has_variance_link(m)) {
    v.push_back(d.beta_star[0]);
    v.push_back(d.beta_star[1]);
  }
  for (const Vec3* c : {&d.c_gamma, &d.c_eta, &d.c_lambda}) v.insert(v.end(), c->begin(), c->end());
  if (has_visit_effect(m)) v.push_back(d.sigma2_phi);
  if (!has_variance_link(m)) v.push_back(d.sigma2);
  return v;
}

inline SamplePoolDraw pool_draw_from_row(const std::vector<double>& v, ModelVariant m) {
  SamplePoolDraw d;
  std::size_t k = 0;
  d.alpha = {v.at(k), v.at(k + 1)};
  k += 2;
  if (has_variance_link(m)) {
    d.beta_star = {v.at(k), v.at(k + 1)};
    k += 2;
  }
  for (Vec3* c : {&d.c_gamma, &d.c_eta, &d.c_lambda}) {
    (*c) = {v.at(k), v.at(k + 1), v.at(k + 2)};
    k += 3;
  }
  if (has_visit_effect(m)) d.sigma2_phi = v.at(k++);
  if (!has_variance_link(m)) d.sigma2 = v.at(k++);
  return d;
}

inline void write_pool(const std::string& path, const SamplePool& pool) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  const auto cols = pool_columns(pool.model);
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  for (const auto& d : pool.draws) {
    const auto row = pool_row(d, pool.model);
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

inline SamplePool read_pool(const std::string& path, const std::string& individual_id, ModelVariant m) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty pool");
  SamplePool pool;
  pool.individual_id = individual_id;
  pool.model = m;
  const auto expect = pool_columns(m);
  const auto header = detail::split_csv(line);
  if (std::vector<std::string>(header) != expect) throw IoError(path + ": pool header does not match model variant");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    std::vector<double> v(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) v[i] = std::stod(f[i]);
    pool.draws.push_back(pool_draw_from_row(v, m));
  }
  return pool;
}

// ---------------------------------------------------------------------------
// Retained random effects (needed by the posterior predictive check)

inline std::vector<std::string> effect_columns(const EffectIndex& idx) {
  std::vector<std::string> cols;
  for (int e = 1; e <= 2; ++e) {
    if (idx.gamma_slot[e - 1] < 0) continue;
    for (int c = 0; c < 2; ++c) cols.push_back("gamma" + std::to_string(c) + ".e" + std::to_string(e));
  }
  for (int e = 1; e <= 2; ++e)
    for (int h = 1; h <= 2; ++h) {
      if (idx.eta_slot[e - 1][h - 1] < 0) continue;
      for (int c = 0; c < 2; ++c)
        cols.push_back("eta" + std::to_string(c) + ".e" + std::to_string(e) + ".h" + std::to_string(h));
    }
  for (int e = 1; e <= 2; ++e)
    for (int h = 1; h <= 2; ++h)
      for (int l = 1; l <= EffectIndex::kMaxLoc; ++l) {
        if (idx.lambda(e, h, l) < 0) continue;
        for (int c = 0; c < 2; ++c)
          cols.push_back("lambda" + std::to_string(c) + ".e" + std::to_string(e) + ".h" + std::to_string(h) + ".l" +
                         std::to_string(l));
      }
  for (int e = 1; e <= 2; ++e)
    for (std::size_t t = 1; t <= idx.phi_slot[e - 1].size(); ++t) {
      if (idx.phi_slot[e - 1][t - 1] < 0) continue;
      cols.push_back("phi.e" + std::to_string(e) + ".t" + std::to_string(t));
    }
  return cols;
}

inline std::vector<double> effect_row(const EffectIndex& idx, const RandomEffects& re) {
  std::vector<double> v;
  for (int e = 1; e <= 2; ++e)
    if (idx.gamma_slot[e - 1] >= 0)
      for (int c = 0; c < 2; ++c) v.push_back(re.gamma[idx.gamma_slot[e - 1]][c]);
  for (int e = 1; e <= 2; ++e)
    for (int h = 1; h <= 2; ++h)
      if (idx.eta_slot[e - 1][h - 1] >= 0)
        for (int c = 0; c < 2; ++c) v.push_back(re.eta[idx.eta_slot[e - 1][h - 1]][c]);
  for (int e = 1; e <= 2; ++e)
    for (int h = 1; h <= 2; ++h)
      for (int l = 1; l <= EffectIndex::kMaxLoc; ++l)
        if (idx.lambda(e, h, l) >= 0)
          for (int c = 0; c < 2; ++c) v.push_back(re.lambda[idx.lambda(e, h, l)][c]);
  for (int e = 1; e <= 2; ++e)
    for (std::size_t t = 1; t <= idx.phi_slot[e - 1].size(); ++t)
      if (idx.phi_slot[e - 1][t - 1] >= 0) v.push_back(re.phi[idx.phi_slot[e - 1][t - 1]]);
  return v;
}

inline RandomEffects effects_from_row(const EffectIndex& idx, const std::vector<double>& v) {
  RandomEffects re = RandomEffects::zeros(idx);
  std::size_t k = 0;
  for (int e = 1; e <= 2; ++e)
    if (idx.gamma_slot[e - 1] >= 0)
      for (int c = 0; c < 2; ++c) re.gamma[idx.gamma_slot[e - 1]][c] = v.at(k++);
  for (int e = 1; e <= 2; ++e)
    for (int h = 1; h <= 2; ++h)
      if (idx.eta_slot[e - 1][h - 1] >= 0)
        for (int c = 0; c < 2; ++c) re.eta[idx.eta_slot[e - 1][h - 1]][c] = v.at(k++);
  for (int e = 1; e <= 2; ++e)
    for (int h = 1; h <= 2; ++h)
      for (int l = 1; l <= EffectIndex::kMaxLoc; ++l)
        if (idx.lambda(e, h, l) >= 0)
          for (int c = 0; c < 2; ++c) re.lambda[idx.lambda(e, h, l)][c] = v.at(k++);
  for (int e = 1; e <= 2; ++e)
    for (std::size_t t = 1; t <= idx.phi_slot[e - 1].size(); ++t)
      if (idx.phi_slot[e - 1][t - 1] >= 0) re.phi[idx.phi_slot[e - 1][t - 1]] = v.at(k++);
  return re;
}

inline void write_pool_effects(const std::string& path, const EffectIndex& idx, const SamplePool& pool) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  const auto cols = effect_columns(idx);
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  char buf[32];
  for (const auto& re : pool.effects) {
    const auto row = effect_row(idx, re);
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.9g", row[i]);
      out << (i ? "," : "") << buf;
    }
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

inline std::vector<RandomEffects> read_pool_effects(const std::string& path, const EffectIndex& idx) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty effects file");
  if (detail::split_csv(line) != effect_columns(idx)) throw IoError(path + ": effects header does not match data");
  std::vector<RandomEffects> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    std::vector<double> v(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) v[i] = std::stod(f[i]);
    out.push_back(effects_from_row(idx, v));
  }
  return out;
}

}  // namespace vfb
