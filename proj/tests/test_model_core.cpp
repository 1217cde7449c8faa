#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <random>

#include "vfbayes/model.hpp"

using namespace vfb;

namespace {

// Simpson quadrature of the normal density over (lo, hi); independent check
// of the censored-likelihood Phi formulation.
double normal_mass_quadrature(double mu, double sd, double lo, double hi, int n = 20001) {
  const double h = (hi - lo) / (n - 1);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = lo + i * h;
    const double f = std::exp(-0.5 * (x - mu) * (x - mu) / (sd * sd)) / (sd * std::sqrt(2.0 * M_PI));
    s += f * (i == 0 || i == n - 1 ? 1.0 : (i % 2 ? 4.0 : 2.0));
  }
  return s * h / 3.0;
}

IndividualData one_location_data(const std::vector<double>& times, const std::vector<double>& values) {
  IndividualData d;
  d.individual_id = "T";
  d.visit_times[0] = times;
  for (std::size_t t = 0; t < times.size(); ++t) {
    Observation o;
    o.individual = 1;
    o.eye = 1;
    o.hemifield = 1;
    o.location = 1;
    o.visit = static_cast<int>(t) + 1;
    o.years = times[t];
    o.observed_db = std::max(values[t], 0.0);
    o.censored = values[t] <= 0.0 && values[t] != std::max(values[t], 0.0);
    d.observations.push_back(o);
  }
  return d;
}

}  // namespace

TEST_CASE("censor clamps below zero") {
  CHECK(censor(5.0) == 5.0);
  CHECK(censor(-3.0) == 0.0);
  CHECK(censor(0.0) == 0.0);
}

TEST_CASE("censor is idempotent") {
  std::mt19937 gen(42);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 1000; ++i) {
    const double y = u(gen);
    CHECK(censor(censor(y)) == censor(y));
  }
}

TEST_CASE("linear predictor sums all levels") {
  IndividualData d = one_location_data({0.0, 10.0}, {20.0, 20.0});
  EffectIndex idx(d);
  RandomEffects re = RandomEffects::zeros(idx);
  const ObsSlots s0 = resolve_slots(d.observations[0], idx);

  SUBCASE("all effects zero, years 0") {
    CHECK(linear_predictor({19.89, -0.31}, re, s0, 0.0, ModelVariant::Model1) == doctest::Approx(19.89));
  }
  SUBCASE("slope term") {
    CHECK(linear_predictor({19.89, -0.31}, re, s0, 10.0, ModelVariant::Model1) == doctest::Approx(16.79));
  }
  SUBCASE("visit effect is an additive offset") {
    re.phi[s0.phi] = -4.0;
    CHECK(linear_predictor({20.0, 0.0}, re, s0, 0.0, ModelVariant::Model2) == doctest::Approx(16.0));
    CHECK(linear_predictor({20.0, 0.0}, re, s0, 0.0, ModelVariant::Model1) == doctest::Approx(20.0));
  }
}

TEST_CASE("linear predictor is affine in years") {
  IndividualData d = one_location_data({0.0, 1.0}, {20.0, 20.0});
  EffectIndex idx(d);
  RandomEffects re = RandomEffects::zeros(idx);
  re.alpha = {1.0, -0.2};
  re.gamma[0] = {0.5, 0.1};
  re.eta[0] = {-0.25, 0.05};
  re.lambda[0] = {2.0, -0.15};
  const ObsSlots s = resolve_slots(d.observations[0], idx);
  const FixedEffects fx{19.0, -0.3};
  const double total_slope = fx.beta1 + re.alpha[1] + re.gamma[0][1] + re.eta[0][1] + re.lambda[0][1];
  for (double a : {0.0, 1.5, 7.25})
    for (double b : {0.5, 2.0}) {
      const double diff = linear_predictor(fx, re, s, a + b, ModelVariant::Model1) -
                          linear_predictor(fx, re, s, a, ModelVariant::Model1);
      CHECK(diff == doctest::Approx(b * total_slope).epsilon(1e-12));
    }
}

TEST_CASE("residual sd") {
  VarianceParams vp{2.82, -0.08, 13.42};
  CHECK(residual_sd(0.0, vp, ModelVariant::Model3) == doctest::Approx(std::exp(2.82)));
  CHECK(residual_sd(35.25, vp, ModelVariant::Model3) == doctest::Approx(1.0));
  CHECK(residual_sd(100.0, vp, ModelVariant::Model1) == doctest::Approx(std::sqrt(13.42)));

  // strictly decreasing in mu when the slope is negative
  double prev = residual_sd(-10.0, vp, ModelVariant::Model3);
  for (double mu = -9.0; mu <= 40.0; mu += 1.0) {
    const double cur = residual_sd(mu, vp, ModelVariant::Model3);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("loglik_observation") {
  CHECK(loglik_observation(5.0, false, 5.0, 1.0) == doctest::Approx(-0.5 * std::log(2.0 * M_PI)));
  CHECK(loglik_observation(0.0, true, 0.0, 2.7) == doctest::Approx(std::log(0.5)));
  CHECK(loglik_observation(0.0, true, 2.0, 1.0) == doctest::Approx(std::log(norm_cdf(-2.0))));
  CHECK(loglik_observation(0.0, true, 2.0, 1.0) == doctest::Approx(-3.7831843336820317).epsilon(1e-9));
}

TEST_CASE("censored loglik matches quadrature on a (mu, sigma) grid") {
  // 100-point grid; relative error of the log mass below 1e-6
  for (int i = 0; i < 10; ++i)
    for (int j = 0; j < 10; ++j) {
      const double mu = -6.0 + 2.0 * i;
      const double sd = 0.5 + 1.0 * j;
      const double ll = loglik_observation(0.0, true, mu, sd);
      const double lo = std::min(0.0, mu) - 12.0 * sd;
      const double mass = normal_mass_quadrature(mu, sd, lo, 0.0);
      CHECK(ll == doctest::Approx(std::log(mass)).epsilon(1e-6));
    }
}

TEST_CASE("log_norm_cdf deep tail stays finite and accurate") {
  // against the leading asymptotic bound log phi(x) - log(-x)
  for (double x : {-10.0, -20.0, -37.0, -100.0}) {
    const double v = log_norm_cdf(x);
    CHECK(std::isfinite(v));
    const double lead = -0.5 * x * x - 0.5 * std::log(2.0 * M_PI) - std::log(-x);
    CHECK(v < lead);
    CHECK(v > lead + std::log1p(-1.0 / (x * x)));
  }
  // both branches near the switchover against 40-digit reference values
  CHECK(log_norm_cdf(-7.999999) == doctest::Approx(-35.013429038546930).epsilon(1e-12));
  CHECK(std::abs(log_norm_cdf(-8.000001) - (-35.013445281283155)) < 2e-6);
}

TEST_CASE("loglik_individual sums observations and ignores order") {
  IndividualData d = one_location_data({0.0, 0.5, 1.0}, {20.0, 19.0, 21.0});
  RandomEffects re = RandomEffects::zeros(EffectIndex(d));
  re.alpha = {20.0, 0.0};
  VarianceParams vp{0.0, 0.0, 1.0};

  SUBCASE("empty set gives zero") {
    IndividualData empty;
    empty.individual_id = "E";
    CHECK(loglik_individual(empty, {0.0, 0.0}, re, vp, ModelVariant::Model1) == 0.0);
  }
  SUBCASE("single observation at its mean") {
    IndividualData one = one_location_data({0.0, 1.0}, {20.0, 20.0});
    one.observations.resize(1);
    CHECK(loglik_individual(one, {0.0, 0.0}, re, vp, ModelVariant::Model1) == doctest::Approx(-0.9189385332046727));
  }
  SUBCASE("additivity and permutation invariance") {
    double expect = 0.0;
    for (const auto& o : d.observations) expect += loglik_observation(o, re.alpha[0], 1.0);
    CHECK(loglik_individual(d, {0.0, 0.0}, re, vp, ModelVariant::Model1) == doctest::Approx(expect).epsilon(1e-14));
    std::reverse(d.observations.begin(), d.observations.end());
    CHECK(loglik_individual(d, {0.0, 0.0}, re, vp, ModelVariant::Model1) == doctest::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("covariance spec round trip") {
  Mat2 m;
  m(0, 0) = 4.0;
  m(0, 1) = 2.0;
  m(1, 0) = 2.0;
  m(1, 1) = 5.0;
  const CovarianceSpec c = CovarianceSpec::from_matrix(m);
  CHECK(c.chol(0, 0) == doctest::Approx(2.0));
  CHECK(c.chol(1, 0) == doctest::Approx(1.0));
  CHECK(c.chol(1, 1) == doctest::Approx(2.0));
  const CovarianceSpec back = CovarianceSpec::from_chol_elements(c.chol_elements());
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) CHECK(std::abs(back.matrix(i, j) - m(i, j)) < 1e-12);
  CHECK_THROWS_AS(CovarianceSpec::from_chol_elements({1.0, 0.5, -1.0}), FactorizationError);
}

TEST_CASE("missing effect slot is a structural error") {
  IndividualData d = one_location_data({0.0, 1.0}, {20.0, 20.0});
  EffectIndex idx(d);
  Observation other = d.observations[0];
  other.eye = 2;
  CHECK_THROWS_AS(resolve_slots(other, idx), std::invalid_argument);
}
