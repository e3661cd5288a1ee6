#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ssmev/discretize.hpp"

using namespace ssmev;

namespace {

DiscreteDiagSSM one(DiscretizationRule rule, cplx lambda, double step, cplx b = 1.0) {
  const std::vector<cplx> l{lambda};
  const std::vector<double> s{step};
  const CMatrix bt(1, 1, b);
  return rule == DiscretizationRule::kBilinear ? bilinear(l, bt, s) : zoh(l, bt, s);
}

// Bilinear simulation of dx/dt = -x + sin t, x(0) = 0, sampled on t_k = k dt.
// Inputs are averaged over the step endpoints, which is what the bilinear
// rule integrates exactly for a linear input.
double bilinear_sine_error(double dt) {
  const auto d = one(DiscretizationRule::kBilinear, -1.0, dt);
  const cplx lb = d.lambda_bar[0];
  const cplx s = d.b_bar(0, 0);
  // closed form: x(t) = (sin t - cos t + e^{-t}) / 2
  auto exact = [](double t) { return 0.5 * (std::sin(t) - std::cos(t) + std::exp(-t)); };
  const auto steps = static_cast<std::size_t>(std::llround(10.0 / dt));
  cplx x = 0.0;
  double worst = 0.0;
  for (std::size_t k = 1; k <= steps; ++k) {
    const double t0 = (k - 1) * dt, t1 = k * dt;
    x = lb * x + s * 0.5 * (std::sin(t0) + std::sin(t1));
    worst = std::max(worst, std::abs(x.real() - exact(t1)));
  }
  return worst;
}

}  // namespace

TEST_CASE("bilinear examples") {
  const auto d = one(DiscretizationRule::kBilinear, -1.0, 0.1);
  CHECK(d.lambda_bar[0].real() == doctest::Approx(0.95 / 1.05).epsilon(1e-14));
  CHECK(d.b_bar(0, 0).real() == doctest::Approx(0.1 / 1.05).epsilon(1e-14));
  CHECK(d.lambda_bar[0].real() == doctest::Approx(0.9047619).epsilon(1e-7));
  CHECK(d.b_bar(0, 0).real() == doctest::Approx(0.0952381).epsilon(1e-6));

  const auto z = one(DiscretizationRule::kBilinear, 0.0, 0.37, cplx(2, -1));
  CHECK(z.lambda_bar[0] == cplx(1.0));
  CHECK(std::abs(z.b_bar(0, 0) - 0.37 * cplx(2, -1)) < 1e-15);

  const auto c = one(DiscretizationRule::kBilinear, cplx(-0.5, 0.8660254), 0.1);
  const cplx h = 0.05 * cplx(-0.5, 0.8660254);
  const cplx want = (1.0 + h) / (1.0 - h);
  CHECK(std::abs(c.lambda_bar[0] - want) < 1e-15);
  CHECK(c.lambda_bar[0].real() == doctest::Approx(0.94774).epsilon(1e-5));
  CHECK(c.lambda_bar[0].imag() == doctest::Approx(0.08228).epsilon(1e-4));

  // 1 - (dt/2) lambda = 0
  CHECK_THROWS_AS(one(DiscretizationRule::kBilinear, 2.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(one(DiscretizationRule::kBilinear, -1.0, 0.0), std::invalid_argument);
}

TEST_CASE("zoh examples") {
  const auto d = one(DiscretizationRule::kZoh, -1.0, 0.1);
  CHECK(d.lambda_bar[0].real() == doctest::Approx(std::exp(-0.1)).epsilon(1e-15));
  CHECK(d.lambda_bar[0].real() == doctest::Approx(0.9048374).epsilon(1e-7));
  CHECK(d.b_bar(0, 0).real() == doctest::Approx(1.0 - std::exp(-0.1)).epsilon(1e-14));
  CHECK(d.b_bar(0, 0).real() == doctest::Approx(0.0951626).epsilon(1e-6));

  const auto z = one(DiscretizationRule::kZoh, 0.0, 0.25);
  CHECK(z.lambda_bar[0] == cplx(1.0));
  CHECK(std::abs(z.b_bar(0, 0) - 0.25) < 1e-16);

  const cplx lam(-0.3, 2.0);
  const double dt = 1e-6;
  const auto t = one(DiscretizationRule::kZoh, lam, dt);
  CHECK(std::abs(t.lambda_bar[0] - (1.0 + lam * dt)) <= 4.0 * std::norm(lam) * dt * dt);
}

TEST_CASE("expm1_over_z is smooth through zero") {
  CHECK(expm1_over_z(0.0) == cplx(1.0));
  for (double r : {1e-12, 1e-8, 1e-5, 1e-3, 0.1, 2.0}) {
    const cplx z(-r, 0.7 * r);
    // e^z - 1 without cancellation
    const double s = std::sin(0.5 * z.imag());
    const cplx em1(std::expm1(z.real()) * std::cos(z.imag()) - 2.0 * s * s,
                   std::exp(z.real()) * std::sin(z.imag()));
    const cplx want = em1 / z;
    CHECK(std::abs(expm1_over_z(z) - want) <= 1e-14 * std::abs(want) + 1e-15);
  }
}

TEST_CASE("effective_step") {
  const std::vector<double> ld{std::log(0.05)};
  CHECK(effective_step(ld, 1.0)[0] == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(effective_step(ld, 0.5)[0] == doctest::Approx(0.025).epsilon(1e-15));
  const std::vector<double> ld4{std::log(0.04)};
  CHECK(effective_step(ld4, 0.25)[0] == doctest::Approx(0.01).epsilon(1e-15));
  CHECK_THROWS_AS(effective_step(ld, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(effective_step(ld, -1.0), std::invalid_argument);
}

TEST_CASE("rule names") {
  CHECK(parse_rule("bilinear") == DiscretizationRule::kBilinear);
  CHECK(parse_rule("zoh") == DiscretizationRule::kZoh);
  CHECK(rule_name(DiscretizationRule::kZoh) == "zoh");
  CHECK_THROWS_AS(parse_rule("euler"), std::invalid_argument);
}

TEST_CASE("both rules are stable for Re(lambda) < 0") {
  const std::vector<cplx> lams{{-1e-3, 0}, {-0.5, 100}, {-2, -3}, {-50, 1}, {-1e-4, 1e3}};
  for (double dt : {1e-6, 1e-4, 1e-2, 1.0, 10.0}) {
    for (const cplx& l : lams) {
      CHECK(std::abs(one(DiscretizationRule::kBilinear, l, dt).lambda_bar[0]) < 1.0);
      CHECK(std::abs(one(DiscretizationRule::kZoh, l, dt).lambda_bar[0]) < 1.0);
    }
  }
}

TEST_CASE("bilinear and zoh agree to third order in the step") {
  const cplx lam(-0.7, 1.3);
  std::vector<double> logd, loge;
  for (double dt = 0.08; dt > 0.004; dt /= 2) {
    const double e = std::abs(one(DiscretizationRule::kBilinear, lam, dt).lambda_bar[0] -
                              one(DiscretizationRule::kZoh, lam, dt).lambda_bar[0]);
    logd.push_back(std::log(dt));
    loge.push_back(std::log(e));
  }
  // least squares slope
  const double n = static_cast<double>(logd.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < logd.size(); ++i) {
    sx += logd[i];
    sy += loge[i];
    sxx += logd[i] * logd[i];
    sxy += logd[i] * loge[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope == doctest::Approx(3.0).epsilon(0.05));
}

TEST_CASE("bilinear simulation converges at second order") {
  double prev = bilinear_sine_error(0.2);
  for (int i = 0; i < 4; ++i) {
    const double dt = 0.1 / (1 << i);
    const double err = bilinear_sine_error(dt);
    CHECK(prev / err >= 3.5);
    prev = err;
  }
}

TEST_CASE("discretize applies the rate to every state") {
  ContinuousDiagSSM s{{cplx(-1, 2), cplx(-0.5, 0)}, CMatrix(2, 1, cplx(1)), CMatrix(1, 2, cplx(1)),
                      {0.0}, {std::log(0.1), std::log(0.02)}};
  const auto full = discretize(s, 1.0);
  const auto half = discretize(s, 0.5);
  const std::vector<double> steps{0.05, 0.01};
  const auto want = bilinear(s.lambda, s.b_tilde, steps);
  for (std::size_t p = 0; p < 2; ++p) {
    CHECK(std::abs(half.lambda_bar[p] - want.lambda_bar[p]) < 1e-15);
    CHECK(std::abs(full.lambda_bar[p] - want.lambda_bar[p]) > 1e-6);
  }
  CHECK(half.rate == 0.5);
}
