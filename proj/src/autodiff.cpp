#include "ssmev/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace ssmev::ad {

std::size_t Var::rows() const { return tape->node(id).rows; }
std::size_t Var::cols() const { return tape->node(id).cols; }
bool Var::is_complex() const { return tape->node(id).complex; }
const std::vector<double>& Var::rval() const { return tape->node(id).rv; }
const std::vector<cplx>& Var::cval() const { return tape->node(id).cv; }
const std::vector<double>& Var::rgrad() const { return tape->node(id).rg; }
const std::vector<cplx>& Var::cgrad() const { return tape->node(id).cg; }

double Var::scalar() const {
  const auto& n = tape->node(id);
  if (n.complex || n.rows * n.cols != 1) throw std::invalid_argument("Var::scalar: not a real 1x1");
  return n.rv[0];
}

Var Tape::make_real(std::size_t rows, std::size_t cols, std::vector<double> value,
                    bool requires_grad) {
  if (value.size() != rows * cols) throw std::invalid_argument("tape: value size mismatch");
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.requires_grad = requires_grad;
  n.rv = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::make_complex(std::size_t rows, std::size_t cols, std::vector<cplx> value,
                       bool requires_grad) {
  if (value.size() != rows * cols) throw std::invalid_argument("tape: value size mismatch");
  Node n;
  n.rows = rows;
  n.cols = cols;
  n.complex = true;
  n.requires_grad = requires_grad;
  n.cv = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::constant(RMatrix value) {
  const auto r = value.rows(), c = value.cols();
  return make_real(r, c, std::move(value.data()), false);
}
Var Tape::constant(CMatrix value) {
  const auto r = value.rows(), c = value.cols();
  return make_complex(r, c, std::move(value.data()), false);
}
Var Tape::parameter(RMatrix value) {
  const auto r = value.rows(), c = value.cols();
  return make_real(r, c, std::move(value.data()), true);
}
Var Tape::parameter(CMatrix value) {
  const auto r = value.rows(), c = value.cols();
  return make_complex(r, c, std::move(value.data()), true);
}

std::vector<double>& Tape::rgrad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.rg.empty()) n.rg.assign(n.rows * n.cols, 0.0);
  return n.rg;
}

std::vector<cplx>& Tape::cgrad(std::size_t id) {
  Node& n = nodes_[id];
  if (n.cg.empty()) n.cg.assign(n.rows * n.cols, cplx(0.0, 0.0));
  return n.cg;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss belongs to another tape");
  Node& root = nodes_[loss.id];
  if (root.complex || root.rows * root.cols != 1) {
    throw std::invalid_argument("backward: loss must be a real scalar");
  }
  if (!root.requires_grad) {
    throw std::invalid_argument("backward: loss does not depend on any parameter");
  }
  rgrad(loss.id)[0] += 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.backward || (n.rg.empty() && n.cg.empty())) continue;
    n.backward(*this);
  }
}

RMatrix to_rmatrix(Var v) {
  if (v.is_complex()) throw std::invalid_argument("to_rmatrix: complex value");
  return RMatrix(v.rows(), v.cols(), v.rval());
}

CMatrix to_cmatrix(Var v) {
  if (!v.is_complex()) throw std::invalid_argument("to_cmatrix: real value");
  return CMatrix(v.rows(), v.cols(), v.cval());
}

namespace {

void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("ad: operands live on different tapes");
}

void require_real(Var a, const char* op) {
  if (a.is_complex()) throw std::invalid_argument(std::string(op) + ": expects a real operand");
}

void require_complex(Var a, const char* op) {
  if (!a.is_complex()) throw std::invalid_argument(std::string(op) + ": expects a complex operand");
}

bool needs(Var v) { return v.tape->node(v.id).requires_grad; }

// Index into b for element i of a under the broadcast rules of add/sub/mul.
struct Broadcast {
  std::size_t cols = 1;
  int mode = 0;  // 0 same shape, 1 row, 2 scalar
  std::size_t operator()(std::size_t i) const {
    return mode == 0 ? i : mode == 1 ? i % cols : 0;
  }
};

Broadcast broadcast(Var a, Var b, const char* op) {
  if (b.rows() == a.rows() && b.cols() == a.cols()) return {a.cols(), 0};
  if (b.rows() == 1 && b.cols() == a.cols()) return {a.cols(), 1};
  if (b.rows() == 1 && b.cols() == 1) return {a.cols(), 2};
  throw std::invalid_argument(std::string(op) + ": shapes " + std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()) + " do not broadcast");
}

Var binary(Var a, Var b, int kind, const char* op) {
  same_tape(a, b);
  require_real(a, op);
  require_real(b, op);
  const Broadcast bc = broadcast(a, b, op);
  const auto& av = a.rval();
  const auto& bv = b.rval();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double y = bv[bc(i)];
    out[i] = kind == 0 ? av[i] + y : kind == 1 ? av[i] - y : av[i] * y;
  }
  Tape& t = *a.tape;
  Var res = t.make_real(a.rows(), a.cols(), std::move(out), needs(a) || needs(b));
  if (!needs(res)) return res;
  t.node(res.id).backward = [a = a.id, b = b.id, r = res.id, bc, kind](Tape& t) {
    const auto g = t.node(r).rg;
    const bool ga = t.node(a).requires_grad;
    const bool gb = t.node(b).requires_grad;
    if (ga) {
      auto& da = t.rgrad(a);
      const auto& bv = t.node(b).rv;
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += kind == 2 ? g[i] * bv[bc(i)] : g[i];
    }
    if (gb) {
      auto& db = t.rgrad(b);
      const auto& av = t.node(a).rv;
      for (std::size_t i = 0; i < g.size(); ++i) {
        db[bc(i)] += kind == 0 ? g[i] : kind == 1 ? -g[i] : g[i] * av[i];
      }
    }
  };
  return res;
}

// y = f(x) elementwise with y' = df(x, y).
template <typename F, typename D>
Var unary(Var a, F f, D df, const char* op) {
  require_real(a, op);
  const auto& av = a.rval();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  Tape& t = *a.tape;
  Var res = t.make_real(a.rows(), a.cols(), std::move(out), needs(a));
  if (!needs(res)) return res;
  t.node(res.id).backward = [a = a.id, r = res.id, df](Tape& t) {
    const auto& n = t.node(r);
    auto& da = t.rgrad(a);
    const auto& x = t.node(a).rv;
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += n.rg[i] * df(x[i], n.rv[i]);
  };
  return res;
}

}  // namespace

Var add(Var a, Var b) { return binary(a, b, 0, "add"); }
Var sub(Var a, Var b) { return binary(a, b, 1, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, 2, "mul"); }

Var scale(Var a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; }, "scale");
}

Var add_scalar(Var a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; },
               "add_scalar");
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; }, "exp");
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; }, "tanh");
}

Var sigmoid(Var a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Var gelu(Var a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  constexpr double c = 0.044715;
  return unary(
      a,
      [](double x) { return 0.5 * x * (1.0 + std::tanh(k * (x + c * x * x * x))); },
      [](double x, double) {
        const double th = std::tanh(k * (x + c * x * x * x));
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * k * (1.0 + 3.0 * c * x * x);
      },
      "gelu");
}

Var matmul(Var a, Var b) {
  same_tape(a, b);
  require_real(a, "matmul");
  require_real(b, "matmul");
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  const auto& av = a.rval();
  const auto& bv = b.rval();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double x = av[i * k + l];
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += x * bv[l * m + j];
    }
  }
  Tape& t = *a.tape;
  Var res = t.make_real(n, m, std::move(out), needs(a) || needs(b));
  if (!needs(res)) return res;
  t.node(res.id).backward = [a = a.id, b = b.id, r = res.id, n, k, m](Tape& t) {
    const auto g = t.node(r).rg;
    if (t.node(a).requires_grad) {
      auto& da = t.rgrad(a);
      const auto& bv = t.node(b).rv;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += g[i * m + j] * bv[l * m + j];
          da[i * k + l] += acc;
        }
      }
    }
    if (t.node(b).requires_grad) {
      auto& db = t.rgrad(b);
      const auto& av = t.node(a).rv;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
          const double x = av[i * k + l];
          for (std::size_t j = 0; j < m; ++j) db[l * m + j] += x * g[i * m + j];
        }
      }
    }
  };
  return res;
}

Var mean_rows(Var a) {
  require_real(a, "mean_rows");
  const std::size_t n = a.rows(), m = a.cols();
  if (n == 0) throw std::invalid_argument("mean_rows: no rows");
  std::vector<double> out(m, 0.0);
  const auto& av = a.rval();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) out[j] += av[i * m + j];
  }
  for (auto& x : out) x /= static_cast<double>(n);
  Tape& t = *a.tape;
  Var res = t.make_real(1, m, std::move(out), needs(a));
  if (!needs(res)) return res;
  t.node(res.id).backward = [a = a.id, r = res.id, n, m](Tape& t) {
    const auto& g = t.node(r).rg;
    auto& da = t.rgrad(a);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) da[i * m + j] += g[j] * inv;
    }
  };
  return res;
}

Var sum(Var a) {
  require_real(a, "sum");
  double s = 0.0;
  for (double x : a.rval()) s += x;
  Tape& t = *a.tape;
  Var res = t.make_real(1, 1, {s}, needs(a));
  if (!needs(res)) return res;
  t.node(res.id).backward = [a = a.id, r = res.id](Tape& t) {
    const double g = t.node(r).rg[0];
    for (auto& x : t.rgrad(a)) x += g;
  };
  return res;
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  if (begin >= end || end > a.rows()) throw std::invalid_argument("slice_rows: bad row range");
  const std::size_t m = a.cols();
  Tape& t = *a.tape;
  Var res;
  if (a.is_complex()) {
    std::vector<cplx> out(a.cval().begin() + begin * m, a.cval().begin() + end * m);
    res = t.make_complex(end - begin, m, std::move(out), needs(a));
  } else {
    std::vector<double> out(a.rval().begin() + begin * m, a.rval().begin() + end * m);
    res = t.make_real(end - begin, m, std::move(out), needs(a));
  }
  if (!needs(res)) return res;
  t.node(res.id).backward = [a = a.id, r = res.id, off = begin * m](Tape& t) {
    if (t.node(a).complex) {
      const auto& g = t.node(r).cg;
      auto& da = t.cgrad(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[off + i] += g[i];
    } else {
      const auto& g = t.node(r).rg;
      auto& da = t.rgrad(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[off + i] += g[i];
    }
  };
  return res;
}

Var softmax_xent(Var logits, std::size_t label) {
  require_real(logits, "softmax_xent");
  if (logits.rows() != 1) throw std::invalid_argument("softmax_xent: logits must be 1 x K");
  const auto& z = logits.rval();
  if (label >= z.size()) throw std::invalid_argument("softmax_xent: label out of range");
  const double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> prob(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += prob[i] = std::exp(z[i] - zmax);
  for (auto& p : prob) p /= total;
  const double loss = -(z[label] - zmax - std::log(total));
  Tape& t = *logits.tape;
  Var res = t.make_real(1, 1, {loss}, needs(logits));
  if (!needs(res)) return res;
  t.node(res.id).backward = [a = logits.id, r = res.id, prob, label](Tape& t) {
    const double g = t.node(r).rg[0];
    auto& da = t.rgrad(a);
    for (std::size_t i = 0; i < prob.size(); ++i) da[i] += g * (prob[i] - (i == label ? 1.0 : 0.0));
  };
  return res;
}

Var real_part(Var z) {
  require_complex(z, "real_part");
  const auto& zv = z.cval();
  std::vector<double> out(zv.size());
  for (std::size_t i = 0; i < zv.size(); ++i) out[i] = zv[i].real();
  Tape& t = *z.tape;
  Var res = t.make_real(z.rows(), z.cols(), std::move(out), needs(z));
  if (!needs(res)) return res;
  t.node(res.id).backward = [a = z.id, r = res.id](Tape& t) {
    const auto& g = t.node(r).rg;
    auto& da = t.cgrad(a);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
  };
  return res;
}

Var matmul_nt(Var x, Var w) {
  same_tape(x, w);
  require_complex(w, "matmul_nt");
  if (x.cols() != w.cols()) throw std::invalid_argument("matmul_nt: inner dimensions differ");
  const std::size_t n = x.rows(), k = x.cols(), m = w.rows();
  const bool xc = x.is_complex();
  const auto& wv = w.cval();
  std::vector<cplx> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t q = 0; q < m; ++q) {
      cplx acc = 0.0;
      const cplx* wr = wv.data() + q * k;
      if (xc) {
        const cplx* xr = x.cval().data() + i * k;
        for (std::size_t p = 0; p < k; ++p) acc += xr[p] * wr[p];
      } else {
        const double* xr = x.rval().data() + i * k;
        for (std::size_t p = 0; p < k; ++p) acc += xr[p] * wr[p];
      }
      out[i * m + q] = acc;
    }
  }
  Tape& t = *x.tape;
  Var res = t.make_complex(n, m, std::move(out), needs(x) || needs(w));
  if (!needs(res)) return res;
  t.node(res.id).backward = [x = x.id, w = w.id, r = res.id, n, k, m, xc](Tape& t) {
    const auto g = t.node(r).cg;
    const auto& wv = t.node(w).cv;
    if (t.node(x).requires_grad) {
      std::vector<cplx> acc(k);
      for (std::size_t i = 0; i < n; ++i) {
        std::fill(acc.begin(), acc.end(), cplx(0.0, 0.0));
        for (std::size_t q = 0; q < m; ++q) {
          const cplx gi = g[i * m + q];
          const cplx* wr = wv.data() + q * k;
          for (std::size_t p = 0; p < k; ++p) acc[p] += std::conj(wr[p]) * gi;
        }
        if (xc) {
          auto& dx = t.cgrad(x);
          for (std::size_t p = 0; p < k; ++p) dx[i * k + p] += acc[p];
        } else {
          auto& dx = t.rgrad(x);
          for (std::size_t p = 0; p < k; ++p) dx[i * k + p] += acc[p].real();
        }
      }
    }
    if (t.node(w).requires_grad) {
      auto& dw = t.cgrad(w);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t q = 0; q < m; ++q) {
          const cplx gi = g[i * m + q];
          cplx* dr = dw.data() + q * k;
          if (xc) {
            const cplx* xr = t.node(x).cv.data() + i * k;
            for (std::size_t p = 0; p < k; ++p) dr[p] += std::conj(xr[p]) * gi;
          } else {
            const double* xr = t.node(x).rv.data() + i * k;
            for (std::size_t p = 0; p < k; ++p) dr[p] += xr[p] * gi;
          }
        }
      }
    }
  };
  return res;
}

Var scale_rows(Var s, Var m) {
  same_tape(s, m);
  require_complex(s, "scale_rows");
  require_complex(m, "scale_rows");
  if (s.rows() * s.cols() != m.rows()) {
    throw std::invalid_argument("scale_rows: need one scale per row");
  }
  const std::size_t rows = m.rows(), cols = m.cols();
  std::vector<cplx> out = m.cval();
  for (std::size_t p = 0; p < rows; ++p) {
    for (std::size_t h = 0; h < cols; ++h) out[p * cols + h] *= s.cval()[p];
  }
  Tape& t = *s.tape;
  Var res = t.make_complex(rows, cols, std::move(out), needs(s) || needs(m));
  if (!needs(res)) return res;
  t.node(res.id).backward = [s = s.id, m = m.id, r = res.id, rows, cols](Tape& t) {
    const auto g = t.node(r).cg;
    if (t.node(s).requires_grad) {
      auto& ds = t.cgrad(s);
      const auto& mv = t.node(m).cv;
      for (std::size_t p = 0; p < rows; ++p) {
        for (std::size_t h = 0; h < cols; ++h) ds[p] += std::conj(mv[p * cols + h]) * g[p * cols + h];
      }
    }
    if (t.node(m).requires_grad) {
      auto& dm = t.cgrad(m);
      const auto& sv = t.node(s).cv;
      for (std::size_t p = 0; p < rows; ++p) {
        for (std::size_t h = 0; h < cols; ++h) dm[p * cols + h] += std::conj(sv[p]) * g[p * cols + h];
      }
    }
  };
  return res;
}

Var mask_cols(Var w, std::span<const double> keep) {
  if (keep.empty() || w.cols() % keep.size() != 0) {
    throw std::invalid_argument("mask_cols: column count must be a multiple of the mask length");
  }
  const std::size_t cols = w.cols();
  std::vector<double> factor(cols);
  for (std::size_t c = 0; c < cols; ++c) factor[c] = keep[c % keep.size()];
  Tape& t = *w.tape;
  Var res;
  if (w.is_complex()) {
    std::vector<cplx> out = w.cval();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i % cols];
    res = t.make_complex(w.rows(), cols, std::move(out), needs(w));
  } else {
    std::vector<double> out = w.rval();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i % cols];
    res = t.make_real(w.rows(), cols, std::move(out), needs(w));
  }
  if (!needs(res)) return res;
  t.node(res.id).backward = [a = w.id, r = res.id, factor, cols](Tape& t) {
    if (t.node(a).complex) {
      const auto& g = t.node(r).cg;
      auto& da = t.cgrad(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += factor[i % cols] * g[i];
    } else {
      const auto& g = t.node(r).rg;
      auto& da = t.rgrad(a);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += factor[i % cols] * g[i];
    }
  };
  return res;
}

namespace {

// d/dz of (e^z - 1) / z
cplx expm1_over_z_prime(cplx z) {
  if (std::abs(z) < 1e-3) {
    return 0.5 + z * (1.0 / 3.0 + z * (1.0 / 8.0 + z * (1.0 / 30.0 + z / 144.0)));
  }
  return (std::exp(z) - expm1_over_z(z)) / z;
}

// Value and partials (d/dlambda holomorphic, d/dstep real) of one
// discretization coefficient.
struct Partial {
  cplx value, d_lambda, d_step;
};

Partial coefficient(cplx lambda, double step, DiscretizationRule rule, bool input_scale) {
  if (rule == DiscretizationRule::kBilinear) {
    const cplx den = 1.0 - 0.5 * step * lambda;
    if (den == cplx(0.0, 0.0)) throw std::domain_error("bilinear: 1 - (step/2) lambda vanishes");
    const cplx inv2 = 1.0 / (den * den);
    if (input_scale) return {step / den, 0.5 * step * step * inv2, inv2};
    return {(1.0 + 0.5 * step * lambda) / den, step * inv2, lambda * inv2};
  }
  const cplx z = lambda * step;
  if (input_scale) {
    const cplx e = expm1_over_z(z);
    const cplx ep = expm1_over_z_prime(z);
    return {step * e, step * step * ep, e + z * ep};
  }
  const cplx lb = std::exp(z);
  return {lb, step * lb, lambda * lb};
}

Var discrete_coefficient(Var lambda, Var step, DiscretizationRule rule, bool input_scale) {
  same_tape(lambda, step);
  require_complex(lambda, "discretize");
  require_real(step, "discretize");
  const std::size_t n = lambda.rows() * lambda.cols();
  if (step.rows() * step.cols() != n) {
    throw std::invalid_argument("discretize: lambda and step lengths differ");
  }
  std::vector<cplx> value(n), dl(n), ds(n);
  for (std::size_t p = 0; p < n; ++p) {
    const double h = step.rval()[p];
    if (!(h > 0.0) || !std::isfinite(h)) {
      throw std::invalid_argument("discretize: step sizes must be finite and > 0");
    }
    const Partial c = coefficient(lambda.cval()[p], h, rule, input_scale);
    value[p] = c.value;
    dl[p] = c.d_lambda;
    ds[p] = c.d_step;
  }
  Tape& t = *lambda.tape;
  Var res = t.make_complex(lambda.rows(), lambda.cols(), std::move(value),
                           needs(lambda) || needs(step));
  if (!needs(res)) return res;
  t.node(res.id).backward = [l = lambda.id, s = step.id, r = res.id, dl, ds](Tape& t) {
    const auto& g = t.node(r).cg;
    if (t.node(l).requires_grad) {
      auto& d = t.cgrad(l);
      for (std::size_t p = 0; p < g.size(); ++p) d[p] += std::conj(dl[p]) * g[p];
    }
    if (t.node(s).requires_grad) {
      auto& d = t.rgrad(s);
      for (std::size_t p = 0; p < g.size(); ++p) d[p] += (std::conj(ds[p]) * g[p]).real();
    }
  };
  return res;
}

}  // namespace

Var discrete_lambda(Var lambda, Var step, DiscretizationRule rule) {
  return discrete_coefficient(lambda, step, rule, false);
}

Var discrete_input_scale(Var lambda, Var step, DiscretizationRule rule) {
  return discrete_coefficient(lambda, step, rule, true);
}

namespace {

CMatrix run_scan(std::span<const cplx> a, CMatrix bu, std::span<const cplx> prev, bool reverse,
                 const ScanAdOptions& opts) {
  const ScanSequence seq = ScanSequence::time_invariant(a, std::move(bu));
  return opts.parallel ? scan_parallel(seq, prev, reverse, opts.scan)
                       : scan_sequential(seq, prev, reverse);
}

}  // namespace

Var scan(Var a, Var bu, std::span<const cplx> prev_state, const ScanAdOptions& opts) {
  same_tape(a, bu);
  require_complex(a, "scan");
  require_complex(bu, "scan");
  const std::size_t len = bu.rows(), ps = bu.cols();
  if (a.rows() * a.cols() != ps) throw std::invalid_argument("scan: a must have P entries");
  CMatrix x = run_scan(a.cval(), to_cmatrix(bu), prev_state, false, opts);
  Tape& t = *a.tape;
  Var res = t.make_complex(len, ps, std::move(x.data()), needs(a) || needs(bu));
  if (!needs(res)) return res;
  std::vector<cplx> prev(prev_state.begin(), prev_state.end());
  t.node(res.id).backward = [a = a.id, bu = bu.id, r = res.id, len, ps, prev, opts](Tape& t) {
    const auto& av = t.node(a).cv;
    std::vector<cplx> ca(ps);
    for (std::size_t p = 0; p < ps; ++p) ca[p] = std::conj(av[p]);
    const CMatrix s = run_scan(ca, CMatrix(len, ps, t.node(r).cg), {}, true, opts);
    if (t.node(bu).requires_grad) {
      auto& d = t.cgrad(bu);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s.data()[i];
    }
    if (t.node(a).requires_grad) {
      const auto& x = t.node(r).cv;
      auto& d = t.cgrad(a);
      for (std::size_t p = 0; p < ps; ++p) {
        cplx acc = prev.empty() ? cplx(0.0, 0.0) : std::conj(prev[p]) * s(0, p);
        for (std::size_t k = 1; k < len; ++k) acc += std::conj(x[(k - 1) * ps + p]) * s(k, p);
        d[p] += acc;
      }
    }
  };
  return res;
}

Var h2_penalty(Var lambda, Var b, Var c, const H2Config& cfg) {
  same_tape(lambda, b);
  same_tape(lambda, c);
  require_complex(lambda, "h2_penalty");
  require_complex(b, "h2_penalty");
  require_complex(c, "h2_penalty");
  cfg.validate();
  const std::size_t ps = lambda.rows() * lambda.cols();
  const std::size_t h_in = b.cols(), h_out = c.rows();
  if (b.rows() != ps || c.cols() != ps) {
    throw std::invalid_argument("h2_penalty: expected b P x H and c H x P");
  }
  const auto& lv = lambda.cval();
  const auto& bv = b.cval();
  const auto& cv = c.cval();

  // W_pq = sum_i w_i conj(r_ip) r_iq with r_ip = 1 / (j w_i - lambda_p)
  const auto grid = log_grid(cfg.omega_min, cfg.omega_max, cfg.n_points);
  const auto weights = trapezoid_weights(grid);
  std::vector<cplx> resolvent(grid.size() * ps);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t p = 0; p < ps; ++p) {
      const cplx den = cplx(0.0, grid[i]) - lv[p];
      if (den == cplx(0.0, 0.0)) throw std::domain_error("h2_penalty: pole on the imaginary axis");
      resolvent[i * ps + p] = 1.0 / den;
    }
  }
  CMatrix w(ps, ps);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const cplx* r = resolvent.data() + i * ps;
    for (std::size_t p = 0; p < ps; ++p) {
      const cplx wr = weights[i] * std::conj(r[p]);
      for (std::size_t q = 0; q < ps; ++q) w(p, q) += wr * r[q];
    }
  }
  if (cfg.tail_correction) {
    for (auto& x : w.data()) x += 1.0 / cfg.omega_max;
  }
  // M_C = C^H C, M_B = B B^H, K_pq = M_C[p,q] M_B[q,p]
  CMatrix mc(ps, ps), mb(ps, ps), k(ps, ps);
  for (std::size_t p = 0; p < ps; ++p) {
    for (std::size_t q = 0; q < ps; ++q) {
      cplx accc = 0.0, accb = 0.0;
      for (std::size_t o = 0; o < h_out; ++o) accc += std::conj(cv[o * ps + p]) * cv[o * ps + q];
      for (std::size_t i = 0; i < h_in; ++i) accb += bv[p * h_in + i] * std::conj(bv[q * h_in + i]);
      mc(p, q) = accc;
      mb(p, q) = accb;
    }
  }
  double total = 0.0;
  for (std::size_t p = 0; p < ps; ++p) {
    for (std::size_t q = 0; q < ps; ++q) {
      k(p, q) = mc(p, q) * mb(q, p);
      total += (w(p, q) * k(p, q)).real();
    }
  }
  const double v = std::max(0.0, total / std::numbers::pi);
  const double penalty = cfg.squared_penalty ? cfg.weight * v : cfg.weight * std::sqrt(v);

  Tape& t = *lambda.tape;
  Var res = t.make_real(1, 1, {penalty}, needs(lambda) || needs(b) || needs(c));
  if (!needs(res)) return res;
  t.node(res.id).backward = [l = lambda.id, bi = b.id, ci = c.id, r = res.id, ps, h_in, h_out, v,
                             cfg, resolvent = std::move(resolvent), weights, w, mc, mb,
                             k](Tape& t) {
    double dv = cfg.weight;
    if (!cfg.squared_penalty) dv = v > 0.0 ? cfg.weight / (2.0 * std::sqrt(v)) : 0.0;
    const double f = t.node(r).rg[0] * dv * 2.0 / std::numbers::pi;
    if (t.node(ci).requires_grad) {
      // grad C[o,p] = f sum_q C[o,q] W[p,q] M_B[q,p]
      const auto& cv = t.node(ci).cv;
      auto& d = t.cgrad(ci);
      for (std::size_t o = 0; o < h_out; ++o) {
        for (std::size_t p = 0; p < ps; ++p) {
          cplx acc = 0.0;
          for (std::size_t q = 0; q < ps; ++q) acc += cv[o * ps + q] * w(p, q) * mb(q, p);
          d[o * ps + p] += f * acc;
        }
      }
    }
    if (t.node(bi).requires_grad) {
      // grad B[p,i] = f sum_q M_C[p,q] W[p,q] B[q,i]
      const auto& bv = t.node(bi).cv;
      auto& d = t.cgrad(bi);
      for (std::size_t p = 0; p < ps; ++p) {
        for (std::size_t q = 0; q < ps; ++q) {
          const cplx s = mc(p, q) * w(p, q);
          for (std::size_t i = 0; i < h_in; ++i) d[p * h_in + i] += f * s * bv[q * h_in + i];
        }
      }
    }
    if (t.node(l).requires_grad) {
      // grad lambda_m = f conj(sum_i w_i r_im^2 sum_p conj(r_ip) K_pm)
      auto& d = t.cgrad(l);
      std::vector<cplx> acc(ps, cplx(0.0, 0.0));
      for (std::size_t i = 0; i < weights.size(); ++i) {
        const cplx* rr = resolvent.data() + i * ps;
        for (std::size_t m = 0; m < ps; ++m) {
          cplx inner = 0.0;
          for (std::size_t p = 0; p < ps; ++p) inner += std::conj(rr[p]) * k(p, m);
          acc[m] += weights[i] * rr[m] * rr[m] * inner;
        }
      }
      for (std::size_t m = 0; m < ps; ++m) d[m] += f * std::conj(acc[m]);
    }
  };
  return res;
}

FdReport finite_diff_check(
    const std::function<double(std::span<const double>, std::vector<double>*)>& f,
    std::vector<double> params, double eps, double abs_floor) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be > 0");
  std::vector<double> grad(params.size(), 0.0);
  f(params, &grad);
  if (grad.size() != params.size()) {
    throw std::invalid_argument("finite_diff_check: gradient size differs from parameter count");
  }
  FdReport report;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + eps;
    const double up = f(params, nullptr);
    params[i] = saved - eps;
    const double down = f(params, nullptr);
    params[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(grad[i]), std::abs(numeric), abs_floor});
    const double rel = std::abs(grad[i] - numeric) / denom;
    if (i == 0 || rel > report.max_rel_error) {
      report = {rel, i, grad[i], numeric};
    }
  }
  return report;
}

}  // namespace ssmev::ad
