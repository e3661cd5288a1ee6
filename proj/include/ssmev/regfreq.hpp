#pragma once

#include <span>
#include <vector>

#include "ssmev/hippo.hpp"
#include "ssmev/numerics.hpp"

namespace ssmev {

// Settings for the high-frequency energy estimate
//   ||G||^2_{H2(w_min, inf)} = (1/pi) * int_{w_min}^{inf} ||G(jw)||_F^2 dw
// integrated with the trapezoid rule on a logarithmic grid over
// [omega_min, omega_max]. With tail_correction the remainder beyond
// omega_max is closed with the leading asymptote ||C~ B~||_F^2 / omega_max.
struct H2Config {
  double omega_min = 1.0;
  double omega_max = 100.0;
  std::size_t n_points = 4096;
  double weight = 1e-2;
  bool tail_correction = true;
  bool squared_penalty = true;  // penalty = weight * norm^2 (else weight * norm)

  void validate() const;
};

// Defaults derived from the system: omega_min = pi / min_p exp(log_delta_p)
// (the Nyquist frequency of the finest trained step), omega_max =
// 100 * max_p(|Im lambda_p| + |Re lambda_p|), raised to 10 * omega_min if
// that is larger.
H2Config default_h2_config(const ContinuousDiagSSM& ssm);

// G(jw) = C~ diag(1 / (jw - lambda)) B~, an H x H complex matrix. Only the
// first P columns of c_tilde are used.
CMatrix transfer_fn(const ContinuousDiagSSM& ssm, double omega);

double transfer_fro2(const ContinuousDiagSSM& ssm, double omega);

// Trapezoid weights for a sorted grid: sum_i w_i f(x_i) integrates f.
std::vector<double> trapezoid_weights(std::span<const double> grid);

// Square of the tail norm (the integral divided by pi).
double h2_tail_norm_sq(const ContinuousDiagSSM& ssm, const H2Config& cfg);
double h2_tail_norm(const ContinuousDiagSSM& ssm, const H2Config& cfg);

}  // namespace ssmev
