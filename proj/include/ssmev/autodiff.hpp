#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "ssmev/discretize.hpp"
#include "ssmev/numerics.hpp"
#include "ssmev/regfreq.hpp"
#include "ssmev/scan.hpp"

// Reverse-mode differentiation over the handful of array operations the toy
// trainer needs. Every value is a real or complex rows x cols matrix.
//
// Complex gradients follow the Wirtinger convention for a real loss:
// grad(z) = dL/dRe(z) + i dL/dIm(z). For holomorphic w = f(z) this gives
// grad(z) += conj(f'(z)) * grad(w).
namespace ssmev::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  std::size_t rows() const;
  std::size_t cols() const;
  bool is_complex() const;
  const std::vector<double>& rval() const;
  const std::vector<cplx>& cval() const;
  // Gradients are empty until backward() reaches the node.
  const std::vector<double>& rgrad() const;
  const std::vector<cplx>& cgrad() const;
  double scalar() const;
};

class Tape {
 public:
  struct Node {
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool complex = false;
    bool requires_grad = false;
    std::vector<double> rv;
    std::vector<cplx> cv;
    std::vector<double> rg;
    std::vector<cplx> cg;
    // Pushes this node's gradient into its parents.
    std::function<void(Tape&)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(RMatrix value);
  Var constant(CMatrix value);
  Var parameter(RMatrix value);
  Var parameter(CMatrix value);

  // Seeds d loss = 1 and runs every recorded node's adjoint once, newest
  // first. Creation order is a topological order, so one reverse sweep
  // suffices.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  Node& node(std::size_t id) { return nodes_[id]; }
  const Node& node(std::size_t id) const { return nodes_[id]; }

  // Building blocks for fused operations defined outside this header.
  Var make_real(std::size_t rows, std::size_t cols, std::vector<double> value, bool requires_grad);
  Var make_complex(std::size_t rows, std::size_t cols, std::vector<cplx> value, bool requires_grad);
  std::vector<double>& rgrad(std::size_t id);  // allocated (zero) on first use
  std::vector<cplx>& cgrad(std::size_t id);

 private:
  std::vector<Node> nodes_;
};

RMatrix to_rmatrix(Var v);
CMatrix to_cmatrix(Var v);

// Real elementwise ops. b may match a, be a 1 x cols row (broadcast over
// rows), or a 1 x 1 scalar.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var exp(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var gelu(Var a);  // tanh approximation

// a (n x k) times b (k x m), both real.
Var matmul(Var a, Var b);
Var mean_rows(Var a);  // 1 x cols
Var sum(Var a);        // 1 x 1
Var slice_rows(Var a, std::size_t begin, std::size_t end);
// -log softmax(logits)[label]; logits is 1 x K
Var softmax_xent(Var logits, std::size_t label);

// Complex ops.
Var real_part(Var z);
// out[k, q] = sum_p x[k, p] w[q, p]; x real or complex, w complex
Var matmul_nt(Var x, Var w);
// out[p, :] = s[p] * m[p, :]; s is 1 x P complex, m is P x H complex
Var scale_rows(Var s, Var m);
// Multiplies column c of w by keep[c % keep.size()]; keep is a constant.
Var mask_cols(Var w, std::span<const double> keep);

// Discretization of (lambda 1 x P complex, step 1 x P real).
Var discrete_lambda(Var lambda, Var step, DiscretizationRule rule);
Var discrete_input_scale(Var lambda, Var step, DiscretizationRule rule);

struct ScanAdOptions {
  bool parallel = true;
  ScanOptions scan{};
};

// States of x_k = a * x_{k-1} + bu_k for time-invariant a (1 x P). The
// adjoint is the reverse-time scan s_k = g_k + conj(a) s_{k+1}.
Var scan(Var a, Var bu, std::span<const cplx> prev_state = {}, const ScanAdOptions& opts = {});

// cfg.weight * ||G||^2 (or cfg.weight * ||G|| when !cfg.squared_penalty) for
// the system (lambda 1 x P, b P x H, c H x P), same quadrature as
// h2_tail_norm_sq.
Var h2_penalty(Var lambda, Var b, Var c, const H2Config& cfg);

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t worst = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Central differences of f at every coordinate of params, compared with the
// analytic gradient f writes into *grad. The relative error of a coordinate
// is |a - n| / max(|a|, |n|, abs_floor).
FdReport finite_diff_check(
    const std::function<double(std::span<const double>, std::vector<double>*)>& f,
    std::vector<double> params, double eps = 1e-6, double abs_floor = 1e-6);

}  // namespace ssmev::ad
