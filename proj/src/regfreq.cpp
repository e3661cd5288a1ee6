#include "ssmev/regfreq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace ssmev {

void H2Config::validate() const {
  if (!(omega_min > 0.0)) throw std::invalid_argument("h2.omega_min must be > 0");
  if (!(omega_max > omega_min)) throw std::invalid_argument("h2.omega_max must exceed omega_min");
  if (n_points < 2) throw std::invalid_argument("h2.n_points must be >= 2");
  if (!(weight >= 0.0)) throw std::invalid_argument("h2.weight must be >= 0");
}

H2Config default_h2_config(const ContinuousDiagSSM& ssm) {
  H2Config cfg;
  double min_step = std::numeric_limits<double>::infinity();
  for (double ld : ssm.log_delta) min_step = std::min(min_step, std::exp(ld));
  double scale = 0.0;
  for (const auto& l : ssm.lambda) scale = std::max(scale, std::abs(l.imag()) + std::abs(l.real()));
  cfg.omega_min = std::numbers::pi / min_step;
  cfg.omega_max = std::max(100.0 * scale, 10.0 * cfg.omega_min);
  return cfg;
}

CMatrix transfer_fn(const ContinuousDiagSSM& ssm, double omega) {
  const std::size_t ps = ssm.states();
  const std::size_t h_in = ssm.b_tilde.cols();
  const std::size_t h_out = ssm.c_tilde.rows();
  std::vector<cplx> resolvent(ps);
  for (std::size_t p = 0; p < ps; ++p) {
    const cplx denom = cplx(0.0, omega) - ssm.lambda[p];
    if (denom == cplx(0.0, 0.0)) {
      throw std::domain_error("transfer_fn: j*omega coincides with an eigenvalue");
    }
    resolvent[p] = 1.0 / denom;
  }
  CMatrix g(h_out, h_in);
  for (std::size_t o = 0; o < h_out; ++o) {
    for (std::size_t p = 0; p < ps; ++p) {
      const cplx cr = ssm.c_tilde(o, p) * resolvent[p];
      if (cr == cplx(0.0, 0.0)) continue;
      const auto brow = ssm.b_tilde.row(p);
      for (std::size_t i = 0; i < h_in; ++i) g(o, i) += cr * brow[i];
    }
  }
  return g;
}

double transfer_fro2(const ContinuousDiagSSM& ssm, double omega) {
  const CMatrix g = transfer_fn(ssm, omega);
  double s = 0.0;
  for (const auto& x : g.data()) s += std::norm(x);
  return s;
}

std::vector<double> trapezoid_weights(std::span<const double> grid) {
  std::vector<double> w(grid.size(), 0.0);
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double half = 0.5 * (grid[i + 1] - grid[i]);
    w[i] += half;
    w[i + 1] += half;
  }
  return w;
}

namespace {

// Pairwise summation keeps the reduction order fixed and the error O(log n).
double pairwise_sum(const double* x, std::size_t n) {
  if (n <= 16) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

}  // namespace

double h2_tail_norm_sq(const ContinuousDiagSSM& ssm, const H2Config& cfg) {
  cfg.validate();
  const auto grid = log_grid(cfg.omega_min, cfg.omega_max, cfg.n_points);
  const auto weights = trapezoid_weights(grid);
  std::vector<double> terms(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) terms[i] = weights[i] * transfer_fro2(ssm, grid[i]);
  double integral = pairwise_sum(terms.data(), terms.size());
  if (cfg.tail_correction) {
    double cb = 0.0;
    const std::size_t ps = ssm.states();
    for (std::size_t o = 0; o < ssm.c_tilde.rows(); ++o) {
      for (std::size_t i = 0; i < ssm.b_tilde.cols(); ++i) {
        cplx acc = 0.0;
        for (std::size_t p = 0; p < ps; ++p) acc += ssm.c_tilde(o, p) * ssm.b_tilde(p, i);
        cb += std::norm(acc);
      }
    }
    integral += cb / cfg.omega_max;
  }
  return integral / std::numbers::pi;
}

double h2_tail_norm(const ContinuousDiagSSM& ssm, const H2Config& cfg) {
  return std::sqrt(std::max(0.0, h2_tail_norm_sq(ssm, cfg)));
}

}  // namespace ssmev
