#pragma once

#include <span>
#include <vector>

#include "ssmev/discretize.hpp"
#include "ssmev/hippo.hpp"
#include "ssmev/numerics.hpp"
#include "ssmev/scan.hpp"

namespace ssmev {

struct BandlimitConfig {
  bool enabled = false;
  double alpha = 0.5;

  void validate() const;
};

struct LayerOptions {
  DiscretizationRule rule = DiscretizationRule::kBilinear;
  bool bidirectional = false;
  bool parallel_scan = true;
  ScanOptions scan{};
};

struct SsmLayerOutput {
  RMatrix y;                      // L x H
  std::vector<cplx> final_state;  // P, last state of the forward scan
};

// Effective frequency (cycles per sample) of each state's basis function,
// f_p = (step_p / rate) |Im lambda_p| / (2 pi) with step_p the deployed step
// rate * exp(log_delta_p). The deployed step already carries the rate, so f
// is the frequency measured on the training grid.
std::vector<double> effective_frequency(std::span<const cplx> lambda,
                                        std::span<const double> log_delta, double rate);

// 1.0 where f_n <= alpha / 2, else 0.0
std::vector<double> bandlimit_keep(std::span<const double> freq, double alpha);

// Zeroes column n of c_tilde iff f_n > alpha / 2. c_tilde may carry 2P columns
// (bidirectional), in which case column n uses f_{n mod P}.
CMatrix bandlimit_mask(const CMatrix& c_tilde, std::span<const double> freq, double alpha);

// Output matrix actually used at this rate: masked when bandlimiting is on.
CMatrix effective_c(const ContinuousDiagSSM& ssm, double rate, const BandlimitConfig& bandlimit);

// rate multiplier r = train_hz / deploy_hz
double retarget(double train_hz, double deploy_hz);

SsmLayerOutput apply_recurrent(const ContinuousDiagSSM& ssm, const RMatrix& u,
                               std::span<const cplx> prev_state, double rate,
                               const BandlimitConfig& bandlimit, const LayerOptions& opts = {});

// Discrete MIMO kernel taps K_k = Re(C~ lambda_bar^k B_bar), k = 0..L-1,
// stored [lag][out][in].
struct SsmKernel {
  std::size_t length = 0;
  std::size_t outputs = 0;
  std::size_t inputs = 0;
  std::vector<double> taps;

  double at(std::size_t lag, std::size_t out, std::size_t in) const {
    return taps[(lag * outputs + out) * inputs + in];
  }
};

SsmKernel materialize_kernel(const ContinuousDiagSSM& ssm, std::size_t length, double rate,
                             const BandlimitConfig& bandlimit,
                             DiscretizationRule rule = DiscretizationRule::kBilinear);

// Per-state basis lambda_bar_p^k * B_bar_p (one P x H matrix per lag).
std::vector<CMatrix> state_basis(const ContinuousDiagSSM& ssm, std::size_t length, double rate,
                                 DiscretizationRule rule = DiscretizationRule::kBilinear);

// Zero-initial-state output via FFT convolution with the materialized kernel.
RMatrix apply_convolutional(const ContinuousDiagSSM& ssm, const RMatrix& u, double rate,
                            const BandlimitConfig& bandlimit,
                            DiscretizationRule rule = DiscretizationRule::kBilinear);

}  // namespace ssmev
