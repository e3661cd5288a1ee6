#include "ssmev/ssm.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ssmev {

void BandlimitConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("bandlimit.alpha must lie in [0, 1]");
  }
}

std::vector<double> effective_frequency(std::span<const cplx> lambda,
                                        std::span<const double> log_delta, double rate) {
  if (lambda.size() != log_delta.size()) {
    throw std::invalid_argument("effective_frequency: lambda and log_delta lengths differ");
  }
  const auto step = effective_step(log_delta, rate);
  std::vector<double> f(lambda.size());
  for (std::size_t p = 0; p < lambda.size(); ++p) {
    f[p] = (step[p] / rate) * std::abs(lambda[p].imag()) / (2.0 * std::numbers::pi);
  }
  return f;
}

std::vector<double> bandlimit_keep(std::span<const double> freq, double alpha) {
  BandlimitConfig{true, alpha}.validate();
  std::vector<double> keep(freq.size());
  for (std::size_t p = 0; p < freq.size(); ++p) keep[p] = freq[p] <= 0.5 * alpha ? 1.0 : 0.0;
  return keep;
}

CMatrix bandlimit_mask(const CMatrix& c_tilde, std::span<const double> freq, double alpha) {
  if (freq.empty() || c_tilde.cols() % freq.size() != 0) {
    throw std::invalid_argument("bandlimit_mask: c_tilde columns must be a multiple of P");
  }
  const auto keep = bandlimit_keep(freq, alpha);
  CMatrix out = c_tilde;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t c = 0; c < out.cols(); ++c) {
      if (keep[c % keep.size()] == 0.0) out(r, c) = 0.0;
    }
  }
  return out;
}

CMatrix effective_c(const ContinuousDiagSSM& ssm, double rate, const BandlimitConfig& bandlimit) {
  if (!bandlimit.enabled) return ssm.c_tilde;
  bandlimit.validate();
  return bandlimit_mask(ssm.c_tilde, effective_frequency(ssm.lambda, ssm.log_delta, rate),
                        bandlimit.alpha);
}

double retarget(double train_hz, double deploy_hz) {
  if (!(train_hz > 0.0) || !(deploy_hz > 0.0)) {
    throw std::invalid_argument("retarget: frequencies must be > 0");
  }
  return train_hz / deploy_hz;
}

namespace {

void check_input(const ContinuousDiagSSM& ssm, const RMatrix& u) {
  if (u.rows() == 0) throw std::invalid_argument("ssm: input sequence is empty");
  if (u.cols() != ssm.width()) {
    throw std::invalid_argument("ssm: input has " + std::to_string(u.cols()) +
                                " channels, layer width is " + std::to_string(ssm.width()));
  }
  if (!all_finite(std::span<const double>(u.data()))) {
    throw std::invalid_argument("ssm: non-finite input");
  }
}

CMatrix project_inputs(const DiscreteDiagSSM& disc, const RMatrix& u) {
  const std::size_t len = u.rows();
  const std::size_t ps = disc.b_bar.rows();
  const std::size_t h = disc.b_bar.cols();
  CMatrix bu(len, ps);
  for (std::size_t k = 0; k < len; ++k) {
    const auto uk = u.row(k);
    auto out = bu.row(k);
    for (std::size_t p = 0; p < ps; ++p) {
      const auto brow = disc.b_bar.row(p);
      cplx acc = 0.0;
      for (std::size_t c = 0; c < h; ++c) acc += brow[c] * uk[c];
      out[p] = acc;
    }
  }
  return bu;
}

}  // namespace

SsmLayerOutput apply_recurrent(const ContinuousDiagSSM& ssm, const RMatrix& u,
                               std::span<const cplx> prev_state, double rate,
                               const BandlimitConfig& bandlimit, const LayerOptions& opts) {
  ssm.validate(opts.bidirectional);
  check_input(ssm, u);
  if (opts.bidirectional && !prev_state.empty()) {
    throw std::invalid_argument(
        "apply_recurrent: state carry is unavailable in bidirectional mode");
  }
  if (!prev_state.empty() && prev_state.size() != ssm.states()) {
    throw std::invalid_argument("apply_recurrent: prev_state must have P entries");
  }

  const DiscreteDiagSSM disc = discretize(ssm, rate, opts.rule);
  const CMatrix c = effective_c(ssm, rate, bandlimit);
  ScanSequence seq = ScanSequence::time_invariant(disc.lambda_bar, project_inputs(disc, u));

  auto run_scan = [&](bool reverse) {
    return opts.parallel_scan ? scan_parallel(seq, prev_state, reverse, opts.scan)
                              : scan_sequential(seq, prev_state, reverse);
  };
  const CMatrix fwd = run_scan(false);
  CMatrix bwd;
  if (opts.bidirectional) bwd = run_scan(true);

  const std::size_t len = u.rows();
  const std::size_t ps = ssm.states();
  const std::size_t h = ssm.width();
  SsmLayerOutput out{RMatrix(len, h), {}};
  for (std::size_t k = 0; k < len; ++k) {
    const auto xk = fwd.row(k);
    for (std::size_t o = 0; o < h; ++o) {
      const auto crow = c.row(o);
      cplx acc = 0.0;
      for (std::size_t p = 0; p < ps; ++p) acc += crow[p] * xk[p];
      if (opts.bidirectional) {
        const auto zk = bwd.row(k);
        for (std::size_t p = 0; p < ps; ++p) acc += crow[ps + p] * zk[p];
      }
      out.y(k, o) = acc.real() + ssm.d[o] * u(k, o);
    }
  }
  const auto last = fwd.row(len - 1);
  out.final_state.assign(last.begin(), last.end());
  return out;
}

std::vector<CMatrix> state_basis(const ContinuousDiagSSM& ssm, std::size_t length, double rate,
                                 DiscretizationRule rule) {
  if (length == 0) throw std::invalid_argument("state_basis: length must be >= 1");
  const DiscreteDiagSSM disc = discretize(ssm, rate, rule);
  std::vector<CMatrix> basis;
  basis.reserve(length);
  basis.push_back(disc.b_bar);
  for (std::size_t k = 1; k < length; ++k) {
    CMatrix next = basis.back();
    for (std::size_t p = 0; p < next.rows(); ++p) {
      for (auto& x : next.row(p)) x *= disc.lambda_bar[p];
    }
    basis.push_back(std::move(next));
  }
  return basis;
}

SsmKernel materialize_kernel(const ContinuousDiagSSM& ssm, std::size_t length, double rate,
                             const BandlimitConfig& bandlimit, DiscretizationRule rule) {
  ssm.validate(false);
  if (length == 0) throw std::invalid_argument("materialize_kernel: length must be >= 1");
  const DiscreteDiagSSM disc = discretize(ssm, rate, rule);
  const CMatrix c = effective_c(ssm, rate, bandlimit);
  const std::size_t ps = ssm.states();
  const std::size_t h = ssm.width();

  SsmKernel kernel{length, h, h, std::vector<double>(length * h * h)};
  CMatrix power = disc.b_bar;  // lambda_bar^k B_bar, advanced by repeated multiplication
  for (std::size_t k = 0; k < length; ++k) {
    for (std::size_t o = 0; o < h; ++o) {
      const auto crow = c.row(o);
      for (std::size_t i = 0; i < h; ++i) {
        cplx acc = 0.0;
        for (std::size_t p = 0; p < ps; ++p) acc += crow[p] * power(p, i);
        kernel.taps[(k * h + o) * h + i] = acc.real();
      }
    }
    for (std::size_t p = 0; p < ps; ++p) {
      for (auto& x : power.row(p)) x *= disc.lambda_bar[p];
    }
  }
  return kernel;
}

RMatrix apply_convolutional(const ContinuousDiagSSM& ssm, const RMatrix& u, double rate,
                            const BandlimitConfig& bandlimit, DiscretizationRule rule) {
  ssm.validate(false);
  check_input(ssm, u);
  const std::size_t len = u.rows();
  const std::size_t h = ssm.width();
  const SsmKernel kernel = materialize_kernel(ssm, len, rate, bandlimit, rule);

  RMatrix y(len, h);
  std::vector<double> signal(len), taps(len);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t k = 0; k < len; ++k) signal[k] = u(k, i);
    for (std::size_t o = 0; o < h; ++o) {
      for (std::size_t k = 0; k < len; ++k) taps[k] = kernel.at(k, o, i);
      const auto conv = fft_convolve(signal, taps);
      for (std::size_t k = 0; k < len; ++k) y(k, o) += conv[k];
    }
  }
  for (std::size_t k = 0; k < len; ++k) {
    for (std::size_t o = 0; o < h; ++o) y(k, o) += ssm.d[o] * u(k, o);
  }
  return y;
}

}  // namespace ssmev
