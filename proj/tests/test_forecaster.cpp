#include "gnmk/forecaster.hpp"

#include <doctest.h>

using namespace gnmk;
using namespace gnmk::basis_adapt;

namespace {

dynsys::Flow lorenz() { return {dynsys::lorenz84_hours(dynsys::SystemParams{}, 120.0), dynsys::IntegratorConfig{}}; }

pce::PCExpansion standard_prior() { return pce::PCExpansion::linear(Vec::Zero(3), Mat::Identity(3, 3)); }

ForecastConfig small(BasisPolicy p)
{
    ForecastConfig c;
    c.policy = p;
    c.validation_samples = 300;
    c.work_samples = 2000;
    c.seed = 17;
    return c;
}

}  // namespace

TEST_CASE("policy names")
{
    for (auto p : {BasisPolicy::fixed_hermite, BasisPolicy::mgs, BasisPolicy::nmap})
        CHECK(parse_policy(policy_name(p)) == p);
    CHECK_THROWS_AS(parse_policy("legendre"), std::invalid_argument);
}

TEST_CASE("the forecast at the start is the prior")
{
    StateForecaster f(lorenz(), standard_prior(), 0.0, small(BasisPolicy::nmap));
    CHECK(f.forecast(0.0).coeffs() == standard_prior().coeffs());
    CHECK(f.anchors() == std::vector<double>{0.0});
}

TEST_CASE("fixed Hermite accuracy degrades with integration time")
{
    StateForecaster f(lorenz(), standard_prior(), 0.0, small(BasisPolicy::fixed_hermite));
    const double e12 = f.validation_error(12.0);
    const double e96 = f.validation_error(96.0);
    CHECK(e12 < e96);
    CHECK(e12 < 0.05);
}

TEST_CASE("training replay of the fixed Hermite fit")
{
    ForecastConfig c = small(BasisPolicy::fixed_hermite);
    StateForecaster f(lorenz(), standard_prior(), 0.0, c);
    const pce::PCExpansion& x = f.forecast(6.0);
    CHECK(x.germ_dim() == 3);
    const Mat germ = pce::sample_germ(c.train_samples, 3, c.seed);
    const Mat exact = f.training_states(6.0);
    const Mat fit = pce::pce_eval_samples(x, germ);
    CHECK((fit - exact).norm() / exact.norm() <= 1e-2);
}

TEST_CASE("chained forecasts do not depend on request order")
{
    StateForecaster a(lorenz(), standard_prior(), 0.0, small(BasisPolicy::nmap));
    StateForecaster b(lorenz(), standard_prior(), 0.0, small(BasisPolicy::nmap));
    const Mat late = a.forecast(24.0).coeffs();
    const Mat early = a.forecast(12.0).coeffs();
    CHECK(b.forecast(12.0).coeffs() == early);
    CHECK(b.forecast(24.0).coeffs() == late);
    CHECK(a.anchors() == b.anchors());
}

TEST_CASE("chained bases outlast the fixed Hermite fit")
{
    StateForecaster f(lorenz(), standard_prior(), 0.0, small(BasisPolicy::mgs));
    StateForecaster h(lorenz(), standard_prior(), 0.0, small(BasisPolicy::fixed_hermite));
    CHECK(2.0 * f.validation_error(48.0) < h.validation_error(48.0));
    CHECK(f.anchors().size() > 1);
    const AdaptiveBasisState s = f.anchor_state(0);
    CHECK(s.anchor_time == 0.0);
    CHECK(s.kl_tolerance == 0.05);
}
