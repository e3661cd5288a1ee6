#include "ssmev/hippo.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "ssmev/rng.hpp"

namespace ssmev {

void ContinuousDiagSSM::validate(bool bidirectional) const {
  const std::size_t p = lambda.size();
  const std::size_t h = d.size();
  if (p == 0 || h == 0) throw std::invalid_argument("ssm: empty state or width");
  if (log_delta.size() != p) {
    throw std::invalid_argument("ssm: log_delta has " + std::to_string(log_delta.size()) +
                                " entries, expected " + std::to_string(p));
  }
  if (b_tilde.rows() != p || b_tilde.cols() != h) {
    throw std::invalid_argument("ssm: b_tilde must be P x H");
  }
  const std::size_t cols = bidirectional ? 2 * p : p;
  if (c_tilde.rows() != h || c_tilde.cols() != cols) {
    throw std::invalid_argument(bidirectional ? "ssm: c_tilde must be H x 2P"
                                              : "ssm: c_tilde must be H x P");
  }
}

HippoLegS legs_matrix(std::size_t n) {
  if (n == 0) throw std::invalid_argument("legs_matrix: N must be >= 1");
  HippoLegS out{RMatrix(n, n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const double ri = std::sqrt(2.0 * static_cast<double>(i) + 1.0);
    out.b[i] = ri;
    for (std::size_t k = 0; k < i; ++k) {
      out.a(i, k) = -ri * std::sqrt(2.0 * static_cast<double>(k) + 1.0);
    }
    out.a(i, i) = -(static_cast<double>(i) + 1.0);
  }
  return out;
}

HippoNormal legs_normal(std::size_t n) {
  if (n == 0) throw std::invalid_argument("legs_normal: N must be >= 1");
  HippoNormal out{RMatrix(n, n), std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) out.p[i] = std::sqrt(static_cast<double>(i) + 0.5);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double m = out.p[i] * out.p[k];
      if (i > k) {
        out.a_normal(i, k) = -m;
      } else if (i < k) {
        out.a_normal(i, k) = m;
      } else {
        out.a_normal(i, k) = -0.5;
      }
    }
  }
  return out;
}

NormalEigen diagonalize_normal(const HippoNormal& h) {
  const std::size_t n = h.a_normal.rows();
  if (n == 0 || h.a_normal.cols() != n) {
    throw std::invalid_argument("diagonalize_normal: matrix must be square");
  }
  // a_normal = -1/2 I + S with S skew-symmetric; -i S is Hermitian with real
  // spectrum mu, so a_normal = V diag(-1/2 + i mu) V^*.
  CMatrix herm(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double skew = i == k ? 0.0 : 0.5 * (h.a_normal(i, k) - h.a_normal(k, i));
      herm(i, k) = cplx(0.0, -skew);
    }
  }
  const double diag_mean = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += h.a_normal(i, i);
    return s / static_cast<double>(n);
  }();
  auto eig = hermitian_eig(herm);
  NormalEigen out;
  out.lambda.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.lambda[i] = cplx(diag_mean, eig.eigenvalues[i]);
  out.v = std::move(eig.eigenvectors);
  return out;
}

ContinuousDiagSSM init_ssm(const SsmInitOptions& opts) {
  const std::size_t p = opts.states;
  const std::size_t h = opts.width;
  const std::size_t j = opts.blocks;
  if (p == 0 || h == 0) throw std::invalid_argument("init_ssm: P and H must be >= 1");
  if (j == 0 || p % j != 0) {
    throw std::invalid_argument("init_ssm: P (" + std::to_string(p) +
                                ") must be divisible by J (" + std::to_string(j) + ")");
  }
  if (!(opts.delta_min > 0.0) || !(opts.delta_max > opts.delta_min)) {
    throw std::invalid_argument("init_ssm: need 0 < delta_min < delta_max");
  }
  const std::size_t block = p / j;
  const NormalEigen eig = diagonalize_normal(legs_normal(block));
  const std::size_t c_cols = opts.bidirectional ? 2 * p : p;

  CounterRng rng(opts.seed);
  const double bc_std = 1.0 / std::sqrt(static_cast<double>(p));
  RMatrix b(p, h);
  for (auto& x : b.data()) x = rng.normal(0.0, bc_std);
  RMatrix c(h, c_cols);
  for (auto& x : c.data()) x = rng.normal(0.0, bc_std);

  ContinuousDiagSSM ssm;
  ssm.lambda.resize(p);
  ssm.b_tilde = CMatrix(p, h);
  ssm.c_tilde = CMatrix(h, c_cols);
  ssm.d.resize(h);
  ssm.log_delta.resize(p);
  for (auto& x : ssm.d) x = rng.normal();
  const double lo = std::log(opts.delta_min);
  const double hi = std::log(opts.delta_max);
  for (auto& x : ssm.log_delta) {
    x = rng.uniform(lo, hi);
  }

  for (std::size_t blk = 0; blk < j; ++blk) {
    const std::size_t off = blk * block;
    for (std::size_t r = 0; r < block; ++r) ssm.lambda[off + r] = eig.lambda[r];
    // B~ = V^{-1} B = V^* B on the block rows
    for (std::size_t r = 0; r < block; ++r) {
      for (std::size_t col = 0; col < h; ++col) {
        cplx acc = 0.0;
        for (std::size_t k = 0; k < block; ++k) {
          acc += std::conj(eig.v(k, r)) * b(off + k, col);
        }
        ssm.b_tilde(off + r, col) = acc;
      }
    }
    // C~ = C V on the block columns, for each direction half
    for (std::size_t half = 0; half < c_cols / p; ++half) {
      const std::size_t coff = half * p + off;
      for (std::size_t row = 0; row < h; ++row) {
        for (std::size_t r = 0; r < block; ++r) {
          cplx acc = 0.0;
          for (std::size_t k = 0; k < block; ++k) acc += c(row, coff + k) * eig.v(k, r);
          ssm.c_tilde(row, coff + r) = acc;
        }
      }
    }
  }
  return ssm;
}

}  // namespace ssmev
