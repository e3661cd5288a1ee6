#pragma once

#include <cstdint>
#include <vector>

#include "ssmev/numerics.hpp"

namespace ssmev {

// HiPPO-LegS state matrix and its SISO input vector.
struct HippoLegS {
  RMatrix a;              // lower triangular, a(n, n) = -(n + 1)
  std::vector<double> b;  // b[n] = sqrt(2n + 1)
};

// Normal part of the LegS matrix and the rank-one correction vector, so that
// legs.a == normal.a_normal - p p^T.
struct HippoNormal {
  RMatrix a_normal;       // -1/2 I + skew-symmetric
  std::vector<double> p;  // p[n] = sqrt(n + 1/2)
};

struct NormalEigen {
  std::vector<cplx> lambda;  // Re = -1/2
  CMatrix v;                 // unitary, a_normal = V diag(lambda) V^*
};

// Diagonal continuous-time system dx/dt = diag(lambda) x + B u,
// y = Re(C x) + d * u, with per-state timescales exp(log_delta).
struct ContinuousDiagSSM {
  std::vector<cplx> lambda;       // P
  CMatrix b_tilde;                // P x H
  CMatrix c_tilde;                // H x P (H x 2P for bidirectional layers)
  std::vector<double> d;          // H
  std::vector<double> log_delta;  // P

  std::size_t states() const { return lambda.size(); }
  std::size_t width() const { return d.size(); }

  // Throws std::invalid_argument when shapes disagree.
  void validate(bool bidirectional = false) const;
};

struct SsmInitOptions {
  std::size_t states = 32;  // P
  std::size_t width = 16;   // H
  std::size_t blocks = 1;   // J
  std::uint64_t seed = 0;
  double delta_min = 0.001;
  double delta_max = 0.1;
  bool bidirectional = false;
};

HippoLegS legs_matrix(std::size_t n);
HippoNormal legs_normal(std::size_t n);
NormalEigen diagonalize_normal(const HippoNormal& h);

// Block-diagonal HiPPO-N initialization. Sampling order (all from
// CounterRng(seed)): B (P x H, row-major), C (H x P' row-major, P' = P or 2P),
// d (H), log_delta (P). B and C entries are N(0, 1/sqrt(P)) in standard
// deviation, d entries N(0, 1), log_delta uniform on [log dmin, log dmax).
ContinuousDiagSSM init_ssm(const SsmInitOptions& opts);

}  // namespace ssmev
