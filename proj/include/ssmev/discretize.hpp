#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "ssmev/hippo.hpp"
#include "ssmev/numerics.hpp"

namespace ssmev {

enum class DiscretizationRule { kBilinear, kZoh };

DiscretizationRule parse_rule(std::string_view name);
std::string_view rule_name(DiscretizationRule rule);

// Discrete recurrence x_k = lambda_bar * x_{k-1} + b_bar u_k. The output
// projection (c_tilde, d) stays with the continuous parent.
struct DiscreteDiagSSM {
  std::vector<cplx> lambda_bar;  // P
  CMatrix b_bar;                 // P x H
  double rate = 1.0;
};

// Per-state pair (lambda_bar, s) with b_bar row p = s_p * b_tilde row p.
struct DiscreteCoefficients {
  std::vector<cplx> lambda_bar;
  std::vector<cplx> input_scale;
};

DiscreteCoefficients bilinear_coefficients(std::span<const cplx> lambda,
                                           std::span<const double> step);
DiscreteCoefficients zoh_coefficients(std::span<const cplx> lambda,
                                      std::span<const double> step);

DiscreteDiagSSM bilinear(std::span<const cplx> lambda, const CMatrix& b_tilde,
                         std::span<const double> step);
DiscreteDiagSSM zoh(std::span<const cplx> lambda, const CMatrix& b_tilde,
                    std::span<const double> step);

// step_p = rate * exp(log_delta_p)
std::vector<double> effective_step(std::span<const double> log_delta, double rate);

DiscreteDiagSSM discretize(const ContinuousDiagSSM& ssm, double rate,
                           DiscretizationRule rule = DiscretizationRule::kBilinear);

// (e^z - 1) / z, accurate near z = 0
cplx expm1_over_z(cplx z);

}  // namespace ssmev
