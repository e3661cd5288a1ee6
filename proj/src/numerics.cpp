#include "ssmev/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace ssmev {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(),
                     [](double x) { return std::isfinite(x); });
}

bool all_finite(std::span<const cplx> v) {
  return std::all_of(v.begin(), v.end(), [](const cplx& x) {
    return std::isfinite(x.real()) && std::isfinite(x.imag());
  });
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

void fft_inplace(std::vector<cplx>& data, bool inverse) {
  const std::size_t n = data.size();
  if (n == 0 || (n & (n - 1)) != 0) {
    throw std::invalid_argument("fft_inplace: length must be a power of two");
  }

  // bit reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }

  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    // twiddles computed directly per index (no recurrence drift)
    std::vector<cplx> twiddle(half);
    for (std::size_t k = 0; k < half; ++k) {
      twiddle[k] = std::polar(1.0, angle * static_cast<double>(k));
    }
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cplx u = data[i + k];
        const cplx v = data[i + k + half] * twiddle[k];
        data[i + k] = u + v;
        data[i + k + half] = u - v;
      }
    }
  }

  if (inverse) {
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& x : data) x *= scale;
  }
}

namespace {

template <typename T>
void check_conv_inputs(std::span<const T> signal, std::span<const T> kernel) {
  if (signal.size() != kernel.size()) {
    throw std::invalid_argument("fft_convolve: signal and kernel lengths differ");
  }
  if (signal.empty()) {
    throw std::invalid_argument("fft_convolve: empty input");
  }
  if (!all_finite(signal) || !all_finite(kernel)) {
    throw std::invalid_argument("fft_convolve: non-finite input");
  }
}

std::vector<cplx> convolve_padded(std::vector<cplx> a, std::vector<cplx> b,
                                  std::size_t length) {
  const std::size_t n = next_pow2(2 * length - 1);
  a.resize(n);
  b.resize(n);
  fft_inplace(a, false);
  fft_inplace(b, false);
  for (std::size_t i = 0; i < n; ++i) a[i] *= b[i];
  fft_inplace(a, true);
  a.resize(length);
  return a;
}

}  // namespace

std::vector<double> fft_convolve(std::span<const double> signal,
                                 std::span<const double> kernel) {
  check_conv_inputs(signal, kernel);
  const std::size_t length = signal.size();
  const auto full = convolve_padded(std::vector<cplx>(signal.begin(), signal.end()),
                                    std::vector<cplx>(kernel.begin(), kernel.end()), length);
  std::vector<double> out(length);
  for (std::size_t i = 0; i < length; ++i) out[i] = full[i].real();
  return out;
}

std::vector<cplx> fft_convolve(std::span<const cplx> signal,
                               std::span<const cplx> kernel) {
  check_conv_inputs(signal, kernel);
  return convolve_padded({signal.begin(), signal.end()},
                         {kernel.begin(), kernel.end()}, signal.size());
}

HermitianEigResult hermitian_eig(const CMatrix& h, int max_sweeps) {
  const std::size_t n = h.rows();
  if (n == 0 || h.cols() != n) {
    throw std::invalid_argument("hermitian_eig: matrix must be square and non-empty");
  }
  if (!all_finite(std::span<const cplx>(h.data()))) {
    throw std::invalid_argument("hermitian_eig: non-finite input");
  }
  const double scale = std::max(1.0, max_abs(h));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      if (std::abs(h(i, j) - std::conj(h(j, i))) > 1e-12 * scale) {
        throw std::invalid_argument("hermitian_eig: input is not Hermitian");
      }
    }
  }

  CMatrix a = h;
  CMatrix v = CMatrix::identity(n);
  for (std::size_t i = 0; i < n; ++i) a(i, i) = a(i, i).real();

  auto off_norm = [&]() {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) s += std::norm(a(i, j));
      }
    }
    return std::sqrt(s);
  };

  const double frob = [&]() {
    double s = 0.0;
    for (const auto& x : h.data()) s += std::norm(x);
    return std::sqrt(s);
  }();
  const double tol = 1e-14 * std::max(frob, 1e-300);

  bool converged = n == 1;
  for (int sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    if (off_norm() <= tol) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const cplx apq = a(p, q);
        const double m = std::abs(apq);
        if (m <= 1e-300) continue;
        const double app = a(p, p).real();
        const double aqq = a(q, q).real();
        // G = diag(1, e^{-i phi}) * [[c, s], [-s, c]] zeroes a(p, q)
        const cplx phase = apq / m;  // e^{i phi}
        const double zeta = (aqq - app) / (2.0 * m);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        const cplx gpp = c;
        const cplx gpq = s;
        const cplx gqp = -s * std::conj(phase);
        const cplx gqq = c * std::conj(phase);

        // a <- a G (columns p, q)
        for (std::size_t k = 0; k < n; ++k) {
          const cplx akp = a(k, p);
          const cplx akq = a(k, q);
          a(k, p) = akp * gpp + akq * gqp;
          a(k, q) = akp * gpq + akq * gqq;
        }
        // a <- G^H a (rows p, q)
        for (std::size_t k = 0; k < n; ++k) {
          const cplx apk = a(p, k);
          const cplx aqk = a(q, k);
          a(p, k) = std::conj(gpp) * apk + std::conj(gqp) * aqk;
          a(q, k) = std::conj(gpq) * apk + std::conj(gqq) * aqk;
        }
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        a(p, p) = a(p, p).real();
        a(q, q) = a(q, q).real();
        for (std::size_t k = 0; k < n; ++k) {
          const cplx vkp = v(k, p);
          const cplx vkq = v(k, q);
          v(k, p) = vkp * gpp + vkq * gqp;
          v(k, q) = vkp * gpq + vkq * gqq;
        }
      }
    }
  }
  if (!converged) {
    const double residual = off_norm();
    if (residual > 1e-12 * std::max(frob, 1.0)) {
      throw ConvergenceError("hermitian_eig: Jacobi sweeps did not converge (off-diagonal norm " +
                                 std::to_string(residual) + ")",
                             residual);
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a(i, i).real() < a(j, j).real();
  });

  HermitianEigResult result;
  result.eigenvalues.resize(n);
  result.eigenvectors = CMatrix(n, n);
  for (std::size_t col = 0; col < n; ++col) {
    result.eigenvalues[col] = a(order[col], order[col]).real();
    for (std::size_t k = 0; k < n; ++k) {
      result.eigenvectors(k, col) = v(k, order[col]);
    }
  }
  return result;
}

std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0)) throw std::invalid_argument("log_grid: lower bound must be > 0");
  if (!(hi > lo)) throw std::invalid_argument("log_grid: upper bound must exceed lower bound");
  if (n < 2) throw std::invalid_argument("log_grid: need at least 2 points");
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  std::vector<double> out(n);
  const double step = (b - a) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::pow(10.0, a + step * static_cast<double>(i));
  }
  out.front() = lo;
  out.back() = hi;
  return out;
}

CMatrix conj_transpose(const CMatrix& m) {
  CMatrix out(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = std::conj(m(i, j));
  }
  return out;
}

CMatrix matmul(const CMatrix& a, const CMatrix& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  CMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const cplx aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

double max_abs(const CMatrix& m) {
  double r = 0.0;
  for (const auto& x : m.data()) r = std::max(r, std::abs(x));
  return r;
}

double max_abs_diff(const CMatrix& a, const CMatrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("max_abs_diff: shape mismatch");
  }
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    r = std::max(r, std::abs(a.data()[i] - b.data()[i]));
  }
  return r;
}

}  // namespace ssmev
