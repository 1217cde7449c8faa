#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "vfbayes/stage1.hpp"

using namespace vfb;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

IndividualData single_location(const std::vector<double>& times, const std::vector<double>& raw_values) {
  IndividualData d;
  d.individual_id = "S";
  d.visit_times[0] = times;
  for (std::size_t t = 0; t < times.size(); ++t) {
    Observation o;
    o.eye = 1;
    o.hemifield = 1;
    o.location = 1;
    o.visit = static_cast<int>(t) + 1;
    o.years = times[t];
    o.censored = raw_values[t] <= 0.0;
    o.observed_db = o.censored ? 0.0 : raw_values[t];
    d.observations.push_back(o);
  }
  return d;
}

}  // namespace

TEST_CASE("pair full conditional matches hand-computed normal posterior") {
  // two points, unit weights, flat-ish prior: posterior precision and mean
  // assembled by explicit 2x2 algebra
  const std::vector<double> t{0.0, 2.0}, r{1.0, 3.0}, w{1.0, 1.0};
  Mat2 prior_prec = Mat2::diagonal(0.5);
  const PairConditional c = pair_full_conditional(t, r, w, prior_prec);
  // P = [[2.5, 2], [2, 4.5]], b = [4, 6]
  const double det = 2.5 * 4.5 - 4.0;
  const double m0 = (4.5 * 4.0 - 2.0 * 6.0) / det;
  const double m1 = (-2.0 * 4.0 + 2.5 * 6.0) / det;
  CHECK(c.mean[0] == doctest::Approx(m0).epsilon(1e-14));
  CHECK(c.mean[1] == doctest::Approx(m1).epsilon(1e-14));
  CHECK(c.cov(0, 0) == doctest::Approx(4.5 / det).epsilon(1e-14));
  CHECK(c.cov(0, 1) == doctest::Approx(-2.0 / det).epsilon(1e-14));
  CHECK(c.cov(1, 1) == doctest::Approx(2.5 / det).epsilon(1e-14));

  // degenerate design (single time point, flat prior) must throw
  const std::vector<double> t1{1.0}, r1{0.5}, w1{1.0};
  CHECK_THROWS_AS(pair_full_conditional(t1, r1, w1, Mat2{}), FactorizationError);
}

TEST_CASE("gibbs pair draw follows the conditional moments") {
  const std::vector<double> t{0.0, 1.0, 2.0, 3.0}, r{1.0, 0.5, 0.2, -0.4}, w{2.0, 2.0, 2.0, 2.0};
  const PairConditional c = pair_full_conditional(t, r, w, Mat2::diagonal(1.0));
  RngStream rng(1, 0);
  const std::size_t n = 400000;
  double m0 = 0.0, m1 = 0.0, v00 = 0.0, v01 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 d = gibbs_update_random_effect_pair(c, rng);
    m0 += d[0];
    m1 += d[1];
    v00 += d[0] * d[0];
    v01 += d[0] * d[1];
  }
  m0 /= n;
  m1 /= n;
  CHECK(m0 == doctest::Approx(c.mean[0]).epsilon(0.01));
  CHECK(m1 == doctest::Approx(c.mean[1]).epsilon(0.01));
  CHECK(v00 / n - m0 * m0 == doctest::Approx(c.cov(0, 0)).epsilon(0.02));
  CHECK(v01 / n - m0 * m1 == doctest::Approx(c.cov(0, 1)).epsilon(0.05));
}

TEST_CASE("config validation") {
  Stage1Config c = Stage1Config::desk(ModelVariant::Model1);
  CHECK_NOTHROW(c.validate());
  CHECK(c.retained() == 1000);
  c.burn_in = c.iterations;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = Stage1Config::desk(ModelVariant::Model1);
  c.thin = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = Stage1Config::desk(ModelVariant::Model1);
  c.iterations = 1100;
  c.burn_in = 1000;
  c.thin = 10;  // 10 retained
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(Stage1Config::paper(ModelVariant::Model3).retained() == 5000);
}

TEST_CASE("sampler refuses unidentifiable inputs") {
  Stage1Config cfg = Stage1Config::desk(ModelVariant::Model1);
  RngStream rng(0, 0);
  IndividualData empty;
  empty.individual_id = "E";
  CHECK_THROWS_AS(Stage1Sampler(empty, cfg, rng), std::invalid_argument);
  const IndividualData one = single_location({0.0}, {20.0});
  CHECK_THROWS_AS(Stage1Sampler(one, cfg, rng), std::invalid_argument);
}

TEST_CASE("augmented gibbs matches exact-likelihood quadrature for the intercept pair") {
  // freeze every block except (latent, alpha); the invariant law of alpha
  // must agree with 2-d quadrature under the exact Phi likelihood
  const std::vector<double> times{0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5};
  const std::vector<double> values{5.1, 3.2, 2.8, 1.9, -1.0, 0.7, -1.0, -1.0};
  const IndividualData data = single_location(times, values);
  const double sigma2 = 4.0;

  Stage1Config cfg = Stage1Config::desk(ModelVariant::Model1);
  RngStream rng(99, 0);
  Stage1Sampler s(data, cfg, rng);
  s.var_params().sigma2 = sigma2;
  s.refresh_mu();
  double sm0 = 0.0, sm1 = 0.0, sq0 = 0.0, sq1 = 0.0;
  const int burn = 2000, keep = 60000;
  for (int it = 0; it < burn + keep; ++it) {
    s.update_latent();
    s.update_alpha();
    if (it < burn) continue;
    const Vec2 a = s.effects().alpha;
    sm0 += a[0];
    sm1 += a[1];
    sq0 += a[0] * a[0];
    sq1 += a[1] * a[1];
  }
  const double gm0 = sm0 / keep, gm1 = sm1 / keep;
  const double gs0 = std::sqrt(sq0 / keep - gm0 * gm0), gs1 = std::sqrt(sq1 / keep - gm1 * gm1);

  // quadrature over the exact posterior
  auto logpost = [&](double a0, double a1) {
    double lp = -0.5 * (a0 * a0 + a1 * a1) / kVaguePriorVar;
    for (std::size_t j = 0; j < times.size(); ++j) {
      const double mu = a0 + a1 * times[j];
      lp += loglik_observation(data.observations[j].observed_db, data.observations[j].censored, mu, std::sqrt(sigma2));
    }
    return lp;
  };
  const int g = 400;
  double z = 0.0, qm0 = 0.0, qm1 = 0.0, qv0 = 0.0, qv1 = 0.0;
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j) {
      const double a0 = -4.0 + 14.0 * i / (g - 1);
      const double a1 = -6.0 + 9.0 * j / (g - 1);
      const double w = std::exp(logpost(a0, a1));
      z += w;
      qm0 += w * a0;
      qm1 += w * a1;
      qv0 += w * a0 * a0;
      qv1 += w * a1 * a1;
    }
  qm0 /= z;
  qm1 /= z;
  const double qs0 = std::sqrt(qv0 / z - qm0 * qm0), qs1 = std::sqrt(qv1 / z - qm1 * qm1);

  CHECK(std::abs(gm0 - qm0) < 0.05);
  CHECK(std::abs(gm1 - qm1) < 0.05);
  CHECK(gs0 == doctest::Approx(qs0).epsilon(0.05));
  CHECK(gs1 == doctest::Approx(qs1).epsilon(0.05));
}

TEST_CASE("model 1 fit recovers the individual intercept and slope") {
  SimulateConfig sim;
  sim.n_individuals = 1;
  sim.visits_per_eye = 8;
  sim.locations_per_hemifield = 6;
  sim.truth.model = ModelVariant::Model1;
  sim.truth.var.sigma2 = 9.0;
  RngStream gen_rng(314, 0);
  const auto [recs, gt] = simulate(sim, gen_rng);
  const auto data = ingest(recs);
  REQUIRE(data.size() == 1);

  Stage1Config cfg = Stage1Config::desk(ModelVariant::Model1);
  cfg.iterations = 3000;
  cfg.burn_in = 1000;
  cfg.thin = 10;
  RngStream fit_rng(7, 1);
  const SamplePool pool = fit_individual(data[0], cfg, fit_rng);
  REQUIRE(pool.draws.size() == 200);
  REQUIRE(pool.effects.size() == 200);

  std::vector<double> a0, a1, s2;
  for (const auto& d : pool.draws) {
    a0.push_back(d.alpha[0]);
    a1.push_back(d.alpha[1]);
    s2.push_back(d.sigma2);
    CHECK(d.sigma2 > 0.0);
    CHECK(d.c_gamma[0] > 0.0);
    CHECK(d.c_gamma[2] > 0.0);
  }
  auto mean_sd = [](const std::vector<double>& v) {
    double m = 0.0, q = 0.0;
    for (double x : v) m += x / v.size();
    for (double x : v) q += (x - m) * (x - m) / (v.size() - 1);
    return std::pair<double, double>{m, std::sqrt(q)};
  };
  const auto [m0, sd0] = mean_sd(a0);
  const auto [m1, sd1] = mean_sd(a1);
  const auto [ms, sds] = mean_sd(s2);
  // the individual-level intercept absorbs the population intercept
  const double true0 = gt.truth.fixed.beta0 + gt.effects[0].alpha[0];
  const double true1 = gt.truth.fixed.beta1 + gt.effects[0].alpha[1];
  CHECK(std::abs(m0 - true0) < 2.0);
  CHECK(std::abs(m1 - true1) < 1.0);
  CHECK(ms == doctest::Approx(9.0).epsilon(0.15));

  SUBCASE("stationarity of the retained stream") {
    double h1 = 0.0, h2 = 0.0;
    for (std::size_t i = 0; i < a0.size() / 2; ++i) h1 += a0[i] / (a0.size() / 2);
    for (std::size_t i = a0.size() / 2; i < a0.size(); ++i) h2 += a0[i] / (a0.size() - a0.size() / 2);
    CHECK(std::abs(h1 - h2) < 1.5 * sd0);
  }
  SUBCASE("fits are reproducible for identical seeds") {
    RngStream r2(7, 1);
    const SamplePool again = fit_individual(data[0], cfg, r2);
    REQUIRE(again.draws.size() == pool.draws.size());
    for (std::size_t i = 0; i < pool.draws.size(); ++i) {
      CHECK(again.draws[i].alpha[0] == pool.draws[i].alpha[0]);
      CHECK(again.draws[i].sigma2 == pool.draws[i].sigma2);
      CHECK(again.draws[i].c_lambda[1] == pool.draws[i].c_lambda[1]);
    }
  }
  SUBCASE("pool csv round trip") {
    const std::string path = temp_path("vfb_pool.csv");
    write_pool(path, pool);
    const SamplePool back = read_pool(path, pool.individual_id, pool.model);
    REQUIRE(back.draws.size() == pool.draws.size());
    for (std::size_t i = 0; i < pool.draws.size(); ++i) {
      CHECK(back.draws[i].alpha[0] == pool.draws[i].alpha[0]);
      CHECK(back.draws[i].alpha[1] == pool.draws[i].alpha[1]);
      CHECK(back.draws[i].c_eta[2] == pool.draws[i].c_eta[2]);
      CHECK(back.draws[i].sigma2 == pool.draws[i].sigma2);
    }
    CHECK_THROWS_AS(read_pool(path, pool.individual_id, ModelVariant::Model3), IoError);
    std::remove(path.c_str());
  }
  SUBCASE("effects csv round trip") {
    const std::string path = temp_path("vfb_effects.csv");
    const EffectIndex idx(data[0]);
    write_pool_effects(path, idx, pool);
    const auto back = read_pool_effects(path, idx);
    REQUIRE(back.size() == pool.effects.size());
    for (std::size_t i = 0; i < back.size(); i += 37) {
      for (int gslot = 0; gslot < idx.n_gamma; ++gslot)
        for (int c = 0; c < 2; ++c)
          CHECK(back[i].gamma[gslot][c] == doctest::Approx(pool.effects[i].gamma[gslot][c]).epsilon(1e-8));
      for (int ps = 0; ps < idx.n_phi; ++ps) CHECK(back[i].phi.size() == pool.effects[i].phi.size());
    }
  }
}

TEST_CASE("an all-censored series stays finite and concentrates low") {
  std::vector<double> times, values;
  for (int t = 0; t < 8; ++t) {
    times.push_back(0.5 * t);
    values.push_back(-1.0);
  }
  const IndividualData data = single_location(times, values);
  Stage1Config cfg = Stage1Config::desk(ModelVariant::Model1);
  cfg.iterations = 2000;
  cfg.burn_in = 1000;
  cfg.thin = 10;
  RngStream rng(3, 0);
  const SamplePool pool = fit_individual(data, cfg, rng);
  double m0 = 0.0;
  for (const auto& d : pool.draws) {
    CHECK(std::isfinite(d.alpha[0]));
    CHECK(std::isfinite(d.sigma2));
    m0 += d.alpha[0] / pool.draws.size();
  }
  CHECK(m0 < 1.0);
}

TEST_CASE("model 2 fit keeps visit effects and their scale positive") {
  SimulateConfig sim;
  sim.n_individuals = 1;
  sim.visits_per_eye = 8;
  sim.locations_per_hemifield = 5;
  sim.truth.model = ModelVariant::Model2;
  sim.truth.var.sigma2 = 9.0;
  sim.truth.gve.sigma2_phi = 2.0;
  RngStream gen_rng(21, 0);
  const auto [recs, gt] = simulate(sim, gen_rng);
  const auto data = ingest(recs);

  Stage1Config cfg = Stage1Config::desk(ModelVariant::Model2);
  cfg.iterations = 2000;
  cfg.burn_in = 1000;
  cfg.thin = 10;
  RngStream rng(8, 2);
  const SamplePool pool = fit_individual(data[0], cfg, rng);
  double msp = 0.0;
  for (const auto& d : pool.draws) {
    CHECK(d.sigma2_phi > 0.0);
    msp += d.sigma2_phi / pool.draws.size();
  }
  // very loose: the GVE scale should land within an order of magnitude
  CHECK(msp > 0.2);
  CHECK(msp < 20.0);
  CHECK(pool.effects.front().phi.size() == 16);
}

TEST_CASE("model 3 fit tracks the variance link") {
  SimulateConfig sim;
  sim.truth = SimulateTruth::table2_model3();
  sim.n_individuals = 1;
  sim.visits_per_eye = 10;
  sim.locations_per_hemifield = 8;
  RngStream gen_rng(123, 0);
  const auto [recs, gt] = simulate(sim, gen_rng);
  const auto data = ingest(recs);

  Stage1Config cfg = Stage1Config::desk(ModelVariant::Model3);
  cfg.iterations = 6000;
  cfg.burn_in = 3000;
  cfg.thin = 10;
  RngStream rng(17, 3);
  const SamplePool pool = fit_individual(data[0], cfg, rng);
  REQUIRE(pool.draws.size() == 300);
  double mb0 = 0.0, mb1 = 0.0;
  for (const auto& d : pool.draws) {
    CHECK(std::isfinite(d.beta_star[0]));
    CHECK(std::isfinite(d.beta_star[1]));
    mb0 += d.beta_star[0] / pool.draws.size();
    mb1 += d.beta_star[1] / pool.draws.size();
  }
  // one individual gives noisy estimates; direction and rough scale only
  CHECK(mb1 < 0.0);
  CHECK(mb1 > -0.2);
  CHECK(mb0 > 1.5);
  CHECK(mb0 < 4.0);
}
