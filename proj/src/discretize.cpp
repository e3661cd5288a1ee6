#include "ssmev/discretize.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace ssmev {

DiscretizationRule parse_rule(std::string_view name) {
  if (name == "bilinear") return DiscretizationRule::kBilinear;
  if (name == "zoh") return DiscretizationRule::kZoh;
  throw std::invalid_argument("unknown discretization rule '" + std::string(name) +
                              "' (expected bilinear or zoh)");
}

std::string_view rule_name(DiscretizationRule rule) {
  return rule == DiscretizationRule::kBilinear ? "bilinear" : "zoh";
}

namespace {

void check_steps(std::span<const cplx> lambda, std::span<const double> step) {
  if (lambda.size() != step.size()) {
    throw std::invalid_argument("discretize: lambda and step lengths differ");
  }
  for (double s : step) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("discretize: step sizes must be finite and > 0");
    }
  }
}

DiscreteDiagSSM scale_rows(DiscreteCoefficients coeffs, const CMatrix& b_tilde) {
  if (b_tilde.rows() != coeffs.lambda_bar.size()) {
    throw std::invalid_argument("discretize: b_tilde must have P rows");
  }
  DiscreteDiagSSM out;
  out.b_bar = b_tilde;
  for (std::size_t p = 0; p < b_tilde.rows(); ++p) {
    for (auto& x : out.b_bar.row(p)) x *= coeffs.input_scale[p];
  }
  out.lambda_bar = std::move(coeffs.lambda_bar);
  return out;
}

}  // namespace

cplx expm1_over_z(cplx z) {
  if (std::abs(z) < 1e-5) {
    return 1.0 + z * (0.5 + z * (1.0 / 6.0 + z / 24.0));
  }
  // expm1(x + iy) without cancellation
  const double x = z.real();
  const double y = z.imag();
  const double s = std::sin(0.5 * y);
  const cplx em1(std::expm1(x) * std::cos(y) - 2.0 * s * s, std::exp(x) * std::sin(y));
  return em1 / z;
}

DiscreteCoefficients bilinear_coefficients(std::span<const cplx> lambda,
                                           std::span<const double> step) {
  check_steps(lambda, step);
  DiscreteCoefficients out;
  out.lambda_bar.resize(lambda.size());
  out.input_scale.resize(lambda.size());
  for (std::size_t p = 0; p < lambda.size(); ++p) {
    const cplx half = 0.5 * step[p] * lambda[p];
    const cplx denom = 1.0 - half;
    if (denom == cplx(0.0, 0.0)) {
      throw std::domain_error("bilinear: 1 - (step/2) lambda vanishes for state " +
                              std::to_string(p));
    }
    const cplx bl = 1.0 / denom;
    out.lambda_bar[p] = bl * (1.0 + half);
    out.input_scale[p] = bl * step[p];
  }
  return out;
}

DiscreteCoefficients zoh_coefficients(std::span<const cplx> lambda,
                                      std::span<const double> step) {
  check_steps(lambda, step);
  DiscreteCoefficients out;
  out.lambda_bar.resize(lambda.size());
  out.input_scale.resize(lambda.size());
  for (std::size_t p = 0; p < lambda.size(); ++p) {
    const cplx z = lambda[p] * step[p];
    out.lambda_bar[p] = std::exp(z);
    // (exp(lambda step) - 1) / lambda == step * (e^z - 1) / z, finite at lambda = 0
    out.input_scale[p] = step[p] * expm1_over_z(z);
  }
  return out;
}

DiscreteDiagSSM bilinear(std::span<const cplx> lambda, const CMatrix& b_tilde,
                         std::span<const double> step) {
  return scale_rows(bilinear_coefficients(lambda, step), b_tilde);
}

DiscreteDiagSSM zoh(std::span<const cplx> lambda, const CMatrix& b_tilde,
                    std::span<const double> step) {
  return scale_rows(zoh_coefficients(lambda, step), b_tilde);
}

std::vector<double> effective_step(std::span<const double> log_delta, double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) {
    throw std::invalid_argument("effective_step: rate must be > 0");
  }
  std::vector<double> out(log_delta.size());
  for (std::size_t p = 0; p < log_delta.size(); ++p) out[p] = rate * std::exp(log_delta[p]);
  return out;
}

DiscreteDiagSSM discretize(const ContinuousDiagSSM& ssm, double rate,
                           DiscretizationRule rule) {
  const auto step = effective_step(ssm.log_delta, rate);
  DiscreteDiagSSM out = rule == DiscretizationRule::kBilinear
                            ? bilinear(ssm.lambda, ssm.b_tilde, step)
                            : zoh(ssm.lambda, ssm.b_tilde, step);
  out.rate = rate;
  return out;
}

}  // namespace ssmev
