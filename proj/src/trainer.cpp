#include "ssmev/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include <json.hpp>

#include "ssmev/hippo.hpp"
#include "ssmev/parallel.hpp"
#include "ssmev/rng.hpp"

namespace ssmev::train {

using json = nlohmann::json;

TaskKind parse_task(std::string_view name) {
  if (name == "duty" || name == "duty-cycle") return TaskKind::kDutyCycle;
  if (name == "regression" || name == "smoothed-regression") return TaskKind::kSmoothedRegression;
  throw std::invalid_argument("unknown task '" + std::string(name) + "' (duty, regression)");
}

std::string_view task_name(TaskKind kind) {
  return kind == TaskKind::kDutyCycle ? "duty" : "regression";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "ssm") return ModelKind::kSsm;
  if (name == "rnn") return ModelKind::kRnn;
  throw std::invalid_argument("unknown model '" + std::string(name) + "' (ssm, rnn)");
}

std::string_view model_kind_name(ModelKind kind) { return kind == ModelKind::kSsm ? "ssm" : "rnn"; }

void ToyTask::validate() const {
  if (!(base_rate_hz > 0.0)) throw std::invalid_argument("task.base_rate_hz must be > 0");
  if (seq_len == 0) throw std::invalid_argument("task.seq_len must be >= 1");
  if (kind == TaskKind::kDutyCycle && n_classes < 2) {
    throw std::invalid_argument("task.n_classes must be >= 2");
  }
  if (!(noise_std >= 0.0)) throw std::invalid_argument("task.noise_std must be >= 0");
  if (n_samples == 0) throw std::invalid_argument("task.n_samples must be >= 1");
  if (!(period_s > 0.0) || !(period_jitter >= 0.0 && period_jitter < 1.0)) {
    throw std::invalid_argument("task.period_s must be > 0 and period_jitter in [0, 1)");
  }
  if (!(edge_width_s > 0.0) || !(smoothing_s > 0.0)) {
    throw std::invalid_argument("task.edge_width_s and task.smoothing_s must be > 0");
  }
}

namespace {

// Streams of the counter RNG used by the generators; one per signal id.
constexpr std::uint64_t kShapeStream = 0x5348415045ULL;
constexpr std::uint64_t kNoiseStream = 0x4e4f495345ULL;

double edge_bumps(double t, double first, double period, double sigma, double horizon) {
  // edges at first + n * period
  const double n_lo = std::ceil((t - 6.0 * sigma - first) / period);
  const double n_hi = std::floor((t + 6.0 * sigma - first) / period);
  double s = 0.0;
  for (double n = std::max(n_lo, -1.0); n <= n_hi; n += 1.0) {
    const double e = first + n * period;
    if (e > horizon) break;
    const double z = (t - e) / sigma;
    s += std::exp(-0.5 * z * z);
  }
  return s;
}

}  // namespace

Dataset make_toy_dataset(const ToyTask& task, double rate_hz) {
  task.validate();
  const double ratio = rate_hz / task.base_rate_hz;
  const double whole = std::round(ratio);
  if (!(rate_hz > 0.0) || whole < 1.0 || std::abs(ratio - whole) > 1e-9 * whole) {
    throw std::invalid_argument("make_toy_dataset: rate " + std::to_string(rate_hz) +
                                " Hz is not an integer multiple of the base rate");
  }
  const std::size_t factor = static_cast<std::size_t>(whole);
  const std::size_t len = task.seq_len * factor;
  const double duration = static_cast<double>(task.seq_len) / task.base_rate_hz;

  Dataset data;
  data.rate_hz = rate_hz;
  data.inputs.reserve(task.n_samples);
  for (std::size_t s = 0; s < task.n_samples; ++s) {
    CounterRng shape(task.seed ^ kShapeStream, s);
    CounterRng noise(task.seed ^ kNoiseStream, s * 64 + factor);
    RMatrix u(len, task.input_dim());
    if (task.kind == TaskKind::kDutyCycle) {
      const std::size_t label = s % task.n_classes;
      const double duty = static_cast<double>(label + 1) / static_cast<double>(task.n_classes + 1);
      const double period = task.period_s * (1.0 + task.period_jitter * shape.uniform(-1.0, 1.0));
      const double rise = shape.uniform(0.0, period);
      const double fall = rise + duty * period;
      for (std::size_t k = 0; k < len; ++k) {
        const double t = static_cast<double>(k) / rate_hz;
        u(k, 0) = edge_bumps(t, rise - period, period, task.edge_width_s, duration + period) +
                  task.noise_std * noise.normal();
        u(k, 1) = edge_bumps(t, fall - 2.0 * period, period, task.edge_width_s, duration + period) +
                  task.noise_std * noise.normal();
      }
      data.labels.push_back(label);
    } else {
      double amp[3], freq[3], phase[3];
      for (int i = 0; i < 3; ++i) {
        amp[i] = shape.uniform(0.3, 1.0);
        freq[i] = shape.uniform(0.5, 3.0);
        phase[i] = shape.uniform(0.0, 2.0 * std::numbers::pi);
      }
      auto signal = [&](double t) {
        double x = 0.0;
        for (int i = 0; i < 3; ++i) x += amp[i] * std::sin(2.0 * std::numbers::pi * freq[i] * t + phase[i]);
        return x;
      };
      for (std::size_t k = 0; k < len; ++k) {
        const double t = static_cast<double>(k) / rate_hz;
        u(k, 0) = signal(t) + task.noise_std * noise.normal();
      }
      // target on a fixed fine grid, independent of rate_hz
      const std::size_t fine = 20000;
      const double dt = duration / static_cast<double>(fine);
      const double decay = std::exp(-dt / task.smoothing_s);
      double smoothed = 0.0, acc = 0.0;
      for (std::size_t k = 0; k < fine; ++k) {
        smoothed = decay * smoothed + (1.0 - decay) * signal(static_cast<double>(k) * dt);
        acc += smoothed * smoothed;
      }
      data.targets.push_back(acc / static_cast<double>(fine));
    }
    data.inputs.push_back(std::move(u));
  }
  return data;
}

RMatrix Param::real_matrix() const {
  if (complex) throw std::invalid_argument("param " + name + " is complex");
  return RMatrix(rows, cols, data);
}

CMatrix Param::complex_matrix() const {
  if (!complex) throw std::invalid_argument("param " + name + " is real");
  CMatrix m(rows, cols);
  for (std::size_t i = 0; i < count(); ++i) m.data()[i] = cplx(data[2 * i], data[2 * i + 1]);
  return m;
}

void Param::assign(const RMatrix& m) {
  rows = m.rows();
  cols = m.cols();
  complex = false;
  data = m.data();
}

void Param::assign(const CMatrix& m) {
  rows = m.rows();
  cols = m.cols();
  complex = true;
  data.resize(2 * m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    data[2 * i] = m.data()[i].real();
    data[2 * i + 1] = m.data()[i].imag();
  }
}

const Param& Model::param(std::string_view name) const {
  for (const auto& p : params) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("model has no parameter '" + std::string(name) + "'");
}

Param& Model::param(std::string_view name) {
  return const_cast<Param&>(static_cast<const Model&>(*this).param(name));
}

std::size_t Model::flat_size() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.data.size();
  return n;
}

std::vector<double> Model::flatten() const {
  std::vector<double> flat;
  flat.reserve(flat_size());
  for (const auto& p : params) flat.insert(flat.end(), p.data.begin(), p.data.end());
  return flat;
}

void Model::unflatten(std::span<const double> flat) {
  if (flat.size() != flat_size()) throw std::invalid_argument("unflatten: size mismatch");
  std::size_t off = 0;
  for (auto& p : params) {
    std::copy(flat.begin() + off, flat.begin() + off + p.data.size(), p.data.begin());
    off += p.data.size();
  }
}

namespace {

std::string layer_name(std::size_t l, const char* field) {
  return "ssm" + std::to_string(l) + "." + field;
}

Param make_param(std::string name, const RMatrix& m) {
  Param p;
  p.name = std::move(name);
  p.assign(m);
  return p;
}

Param make_param(std::string name, const CMatrix& m) {
  Param p;
  p.name = std::move(name);
  p.assign(m);
  return p;
}

RMatrix gaussian(std::size_t rows, std::size_t cols, double sd, std::uint64_t seed,
                 std::uint64_t stream) {
  CounterRng rng(seed, stream);
  RMatrix m(rows, cols);
  for (auto& x : m.data()) x = rng.normal(0.0, sd);
  return m;
}

void validate_model_config(const ModelConfig& cfg) {
  if (cfg.input_dim == 0 || cfg.output_dim == 0 || cfg.width == 0) {
    throw std::invalid_argument("model: input_dim, output_dim and width must be >= 1");
  }
  if (cfg.kind == ModelKind::kSsm && (cfg.states == 0 || cfg.layers == 0)) {
    throw std::invalid_argument("model: states and layers must be >= 1");
  }
  cfg.bandlimit.validate();
}

}  // namespace

Model init_model(const ModelConfig& cfg) {
  validate_model_config(cfg);
  Model model;
  model.config = cfg;
  const std::size_t h = cfg.width;
  const double in_sd = 1.0 / std::sqrt(static_cast<double>(cfg.input_dim));
  const double h_sd = 1.0 / std::sqrt(static_cast<double>(h));
  model.params.push_back(make_param("enc.w", gaussian(cfg.input_dim, h, in_sd, cfg.seed, 1)));
  model.params.push_back(make_param("enc.b", RMatrix(1, h)));
  if (cfg.kind == ModelKind::kSsm) {
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      SsmInitOptions opts;
      opts.states = cfg.states;
      opts.width = h;
      opts.blocks = cfg.blocks;
      opts.seed = CounterRng::mix(cfg.seed + 0x100 + l);
      opts.delta_min = cfg.delta_min;
      opts.delta_max = cfg.delta_max;
      const ContinuousDiagSSM ssm = init_ssm(opts);
      model.params.push_back(make_param(layer_name(l, "lambda"), CMatrix(1, cfg.states, ssm.lambda)));
      model.params.push_back(make_param(layer_name(l, "b"), ssm.b_tilde));
      model.params.push_back(make_param(layer_name(l, "c"), ssm.c_tilde));
      model.params.push_back(make_param(layer_name(l, "d"), RMatrix(1, h, ssm.d)));
      model.params.push_back(
          make_param(layer_name(l, "log_delta"), RMatrix(1, cfg.states, ssm.log_delta)));
    }
  } else {
    model.params.push_back(make_param("rnn.wz", gaussian(h, h, h_sd, cfg.seed, 2)));
    model.params.push_back(make_param("rnn.uz", gaussian(h, h, h_sd, cfg.seed, 3)));
    model.params.push_back(make_param("rnn.bz", RMatrix(1, h)));
    model.params.push_back(make_param("rnn.wc", gaussian(h, h, h_sd, cfg.seed, 4)));
    model.params.push_back(make_param("rnn.uc", gaussian(h, h, h_sd, cfg.seed, 5)));
    model.params.push_back(make_param("rnn.bc", RMatrix(1, h)));
  }
  model.params.push_back(make_param("head.w", gaussian(h, cfg.output_dim, h_sd, cfg.seed, 6)));
  model.params.push_back(make_param("head.b", RMatrix(1, cfg.output_dim)));
  return model;
}

ContinuousDiagSSM layer_ssm(const Model& model, std::size_t layer) {
  if (model.config.kind != ModelKind::kSsm || layer >= model.config.layers) {
    throw std::out_of_range("layer_ssm: no SSM layer " + std::to_string(layer));
  }
  ContinuousDiagSSM ssm;
  ssm.lambda = model.param(layer_name(layer, "lambda")).complex_matrix().data();
  ssm.b_tilde = model.param(layer_name(layer, "b")).complex_matrix();
  ssm.c_tilde = model.param(layer_name(layer, "c")).complex_matrix();
  ssm.d = model.param(layer_name(layer, "d")).data;
  ssm.log_delta = model.param(layer_name(layer, "log_delta")).data;
  return ssm;
}

namespace {

struct CellTrace {
  std::vector<double> z, c, h;  // L x H each, h includes only outputs
};

// One step of the gated cell on row vectors.
void cell_step(const double* x, const double* hprev, const double* wz, const double* uz,
               const double* bz, const double* wc, const double* uc, const double* bc,
               std::size_t hsz, double* z, double* c, double* h) {
  for (std::size_t j = 0; j < hsz; ++j) {
    double az = bz[j], ac = bc[j];
    for (std::size_t i = 0; i < hsz; ++i) {
      az += x[i] * wz[i * hsz + j] + hprev[i] * uz[i * hsz + j];
      ac += x[i] * wc[i * hsz + j] + hprev[i] * uc[i * hsz + j];
    }
    z[j] = 1.0 / (1.0 + std::exp(-az));
    c[j] = std::tanh(ac);
  }
  for (std::size_t j = 0; j < hsz; ++j) h[j] = (1.0 - z[j]) * hprev[j] + z[j] * c[j];
}

}  // namespace

RMatrix rnn_baseline_forward(const RnnParams& p, const RMatrix& u, std::vector<double>& state) {
  const std::size_t hsz = p.wz.rows();
  if (p.wz.cols() != hsz || p.uz.rows() != hsz || p.uz.cols() != hsz || p.wc.rows() != hsz ||
      p.wc.cols() != hsz || p.uc.rows() != hsz || p.uc.cols() != hsz || p.bz.size() != hsz ||
      p.bc.size() != hsz) {
    throw std::invalid_argument("rnn_baseline_forward: parameter shapes disagree");
  }
  if (u.cols() != hsz) throw std::invalid_argument("rnn_baseline_forward: input width differs");
  if (state.empty()) state.assign(hsz, 0.0);
  if (state.size() != hsz) throw std::invalid_argument("rnn_baseline_forward: state width differs");
  RMatrix y(u.rows(), hsz);
  std::vector<double> z(hsz), c(hsz), h(hsz);
  for (std::size_t k = 0; k < u.rows(); ++k) {
    cell_step(u.row(k).data(), state.data(), p.wz.data().data(), p.uz.data().data(), p.bz.data(),
              p.wc.data().data(), p.uc.data().data(), p.bc.data(), hsz, z.data(), c.data(),
              h.data());
    state = h;
    std::copy(h.begin(), h.end(), y.row(k).begin());
  }
  return y;
}

ad::Var gated_recurrence(ad::Var x, ad::Var wz, ad::Var uz, ad::Var bz, ad::Var wc, ad::Var uc,
                         ad::Var bc, std::span<const double> h0) {
  const std::size_t len = x.rows(), hsz = x.cols();
  for (ad::Var w : {wz, uz, wc, uc}) {
    if (w.rows() != hsz || w.cols() != hsz) throw std::invalid_argument("gated_recurrence: W/U must be H x H");
  }
  for (ad::Var b : {bz, bc}) {
    if (b.rows() * b.cols() != hsz) throw std::invalid_argument("gated_recurrence: biases must have H entries");
  }
  if (!h0.empty() && h0.size() != hsz) throw std::invalid_argument("gated_recurrence: h0 must have H entries");
  std::vector<double> init(hsz, 0.0);
  if (!h0.empty()) init.assign(h0.begin(), h0.end());

  CellTrace tr;
  tr.z.resize(len * hsz);
  tr.c.resize(len * hsz);
  tr.h.resize(len * hsz);
  for (std::size_t k = 0; k < len; ++k) {
    const double* hprev = k == 0 ? init.data() : tr.h.data() + (k - 1) * hsz;
    cell_step(x.rval().data() + k * hsz, hprev, wz.rval().data(), uz.rval().data(),
              bz.rval().data(), wc.rval().data(), uc.rval().data(), bc.rval().data(), hsz,
              tr.z.data() + k * hsz, tr.c.data() + k * hsz, tr.h.data() + k * hsz);
  }
  ad::Tape& t = *x.tape;
  bool needs = false;
  for (ad::Var v : {x, wz, uz, bz, wc, uc, bc}) needs = needs || t.node(v.id).requires_grad;
  ad::Var res = t.make_real(len, hsz, tr.h, needs);
  if (!needs) return res;

  t.node(res.id).backward = [ids = std::vector<std::size_t>{x.id, wz.id, uz.id, bz.id, wc.id,
                                                            uc.id, bc.id},
                             r = res.id, len, hsz, init, tr = std::move(tr)](ad::Tape& t) {
    const auto& g = t.node(r).rg;
    const auto& xv = t.node(ids[0]).rv;
    const auto& wz = t.node(ids[1]).rv;
    const auto& uz = t.node(ids[2]).rv;
    const auto& wc = t.node(ids[4]).rv;
    const auto& uc = t.node(ids[5]).rv;
    std::vector<double> dx(len * hsz, 0.0), dwz(hsz * hsz, 0.0), duz(hsz * hsz, 0.0),
        dbz(hsz, 0.0), dwc(hsz * hsz, 0.0), duc(hsz * hsz, 0.0), dbc(hsz, 0.0);
    std::vector<double> dh(hsz, 0.0), next(hsz), daz(hsz), dac(hsz);
    for (std::size_t k = len; k-- > 0;) {
      const double* hprev = k == 0 ? init.data() : tr.h.data() + (k - 1) * hsz;
      const double* z = tr.z.data() + k * hsz;
      const double* c = tr.c.data() + k * hsz;
      const double* xk = xv.data() + k * hsz;
      for (std::size_t j = 0; j < hsz; ++j) {
        const double total = dh[j] + g[k * hsz + j];
        daz[j] = total * (c[j] - hprev[j]) * z[j] * (1.0 - z[j]);
        dac[j] = total * z[j] * (1.0 - c[j] * c[j]);
        next[j] = total * (1.0 - z[j]);
      }
      for (std::size_t i = 0; i < hsz; ++i) {
        double accx = 0.0, acch = 0.0;
        for (std::size_t j = 0; j < hsz; ++j) {
          accx += daz[j] * wz[i * hsz + j] + dac[j] * wc[i * hsz + j];
          acch += daz[j] * uz[i * hsz + j] + dac[j] * uc[i * hsz + j];
          dwz[i * hsz + j] += xk[i] * daz[j];
          dwc[i * hsz + j] += xk[i] * dac[j];
          duz[i * hsz + j] += hprev[i] * daz[j];
          duc[i * hsz + j] += hprev[i] * dac[j];
        }
        dx[k * hsz + i] = accx;
        next[i] += acch;
      }
      for (std::size_t j = 0; j < hsz; ++j) {
        dbz[j] += daz[j];
        dbc[j] += dac[j];
      }
      dh.swap(next);
    }
    const std::vector<double>* parts[] = {&dx, &dwz, &duz, &dbz, &dwc, &duc, &dbc};
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (!t.node(ids[i]).requires_grad) continue;
      auto& d = t.rgrad(ids[i]);
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += (*parts[i])[j];
    }
  };
  return res;
}

const ad::Var& ParamVars::operator()(const Model& model, std::string_view name) const {
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    if (model.params[i].name == name) return vars[i];
  }
  throw std::out_of_range("model has no parameter '" + std::string(name) + "'");
}

ParamVars bind_params(ad::Tape& tape, const Model& model, bool trainable) {
  ParamVars out;
  out.vars.reserve(model.params.size());
  for (const auto& p : model.params) {
    if (p.complex) {
      out.vars.push_back(trainable ? tape.parameter(p.complex_matrix())
                                   : tape.constant(p.complex_matrix()));
    } else {
      out.vars.push_back(trainable ? tape.parameter(p.real_matrix()) : tape.constant(p.real_matrix()));
    }
  }
  return out;
}

ForwardResult forward(ad::Tape& tape, const Model& model, const ParamVars& vars, const RMatrix& u,
                      const Carry& carry_in, const ForwardOptions& opts) {
  const ModelConfig& cfg = model.config;
  if (u.cols() != cfg.input_dim) {
    throw std::invalid_argument("forward: input has " + std::to_string(u.cols()) +
                                " channels, model expects " + std::to_string(cfg.input_dim));
  }
  if (u.rows() == 0) throw std::invalid_argument("forward: empty sequence");
  ForwardResult result;
  ad::Var x = ad::add(ad::matmul(tape.constant(u), vars(model, "enc.w")), vars(model, "enc.b"));

  if (cfg.kind == ModelKind::kSsm) {
    if (!carry_in.ssm.empty() && carry_in.ssm.size() != cfg.layers) {
      throw std::invalid_argument("forward: carried state count differs from layer count");
    }
    ad::ScanAdOptions scan_opts;
    scan_opts.parallel = opts.parallel_scan;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const ad::Var lambda = vars(model, layer_name(l, "lambda"));
      const ad::Var log_delta = vars(model, layer_name(l, "log_delta"));
      const ad::Var step = ad::scale(ad::exp(log_delta), opts.rate);
      const ad::Var lbar = ad::discrete_lambda(lambda, step, cfg.rule);
      const ad::Var bbar =
          ad::scale_rows(ad::discrete_input_scale(lambda, step, cfg.rule), vars(model, layer_name(l, "b")));
      const ad::Var bu = ad::matmul_nt(x, bbar);
      std::span<const cplx> prev;
      if (!carry_in.ssm.empty()) prev = carry_in.ssm[l];
      const ad::Var states = ad::scan(lbar, bu, prev, scan_opts);
      ad::Var c = vars(model, layer_name(l, "c"));
      if (cfg.bandlimit.enabled) {
        // the mask is a constant of this step
        const auto freq = effective_frequency(lambda.cval(), log_delta.rval(), opts.rate);
        const auto keep = bandlimit_keep(freq, cfg.bandlimit.alpha);
        c = ad::mask_cols(c, keep);
      }
      ad::Var y = ad::real_part(ad::matmul_nt(states, c));
      y = ad::add(y, ad::mul(x, vars(model, layer_name(l, "d"))));
      x = ad::add(x, ad::gelu(y));
      const std::size_t ps = cfg.states;
      const auto& sv = states.cval();
      result.carry.ssm.emplace_back(sv.end() - static_cast<std::ptrdiff_t>(ps), sv.end());
    }
  } else {
    x = gated_recurrence(x, vars(model, "rnn.wz"), vars(model, "rnn.uz"), vars(model, "rnn.bz"),
                         vars(model, "rnn.wc"), vars(model, "rnn.uc"), vars(model, "rnn.bc"),
                         carry_in.rnn);
    const auto& hv = x.rval();
    result.carry.rnn.assign(hv.end() - static_cast<std::ptrdiff_t>(cfg.width), hv.end());
  }
  const ad::Var pooled = ad::mean_rows(x);
  result.output = ad::add(ad::matmul(pooled, vars(model, "head.w")), vars(model, "head.b"));
  return result;
}

void TrainConfig::validate() const {
  if (batch == 0) throw std::invalid_argument("train.batch must be >= 1");
  if (!(mixed_fraction >= 0.0 && mixed_fraction <= 1.0)) {
    throw std::invalid_argument("train.mixed_fraction must lie in [0, 1]");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("train.lr must be > 0");
  if (tbptt_chunks == 0) throw std::invalid_argument("train.tbptt_chunks must be >= 1");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("train.grad_clip must be >= 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw std::invalid_argument("train.warmup_fraction must lie in [0, 1)");
  }
  if (h2) h2->validate();
}

std::pair<std::size_t, std::size_t> TrainConfig::split() const {
  const auto full = static_cast<std::size_t>(std::llround(mixed_fraction * static_cast<double>(batch)));
  return {full, batch - full};
}

namespace {

ad::Var sample_loss(const Model& model, ad::Var output, std::size_t label, double target) {
  if (model.task == TaskKind::kDutyCycle) return ad::softmax_xent(output, label);
  ad::Tape& t = *output.tape;
  const ad::Var diff = ad::sub(output, t.constant(RMatrix(1, 1, target)));
  return ad::mul(diff, diff);
}

void collect_grad(const Model& model, const ParamVars& vars, double weight, std::vector<double>& out) {
  std::size_t off = 0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const Param& p = model.params[i];
    const ad::Var v = vars.vars[i];
    if (p.complex) {
      const auto& g = v.cgrad();
      if (!g.empty()) {
        for (std::size_t j = 0; j < p.count(); ++j) {
          out[off + 2 * j] += weight * g[j].real();
          out[off + 2 * j + 1] += weight * g[j].imag();
        }
      }
    } else {
      const auto& g = v.rgrad();
      if (!g.empty()) {
        for (std::size_t j = 0; j < p.count(); ++j) out[off + j] += weight * g[j];
      }
    }
    off += p.data.size();
  }
}

RMatrix rows_of(const RMatrix& u, std::size_t begin, std::size_t end) {
  RMatrix out(end - begin, u.cols());
  std::copy(u.data().begin() + static_cast<std::ptrdiff_t>(begin * u.cols()),
            u.data().begin() + static_cast<std::ptrdiff_t>(end * u.cols()), out.data().begin());
  return out;
}

// Fixed-shape pairwise reduction of per-sample gradients.
std::vector<double> pairwise_reduce(std::vector<std::vector<double>>& parts, std::size_t lo,
                                    std::size_t hi) {
  if (hi - lo == 1) return std::move(parts[lo]);
  const std::size_t mid = lo + (hi - lo) / 2;
  std::vector<double> a = pairwise_reduce(parts, lo, mid);
  const std::vector<double> b = pairwise_reduce(parts, mid, hi);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  return a;
}

}  // namespace

SampleGradient sample_gradient(const Model& model, const RMatrix& u, std::size_t label,
                               double target, bool truncated, std::size_t chunks) {
  SampleGradient out;
  out.grad.assign(model.flat_size(), 0.0);
  const std::size_t len = u.rows();
  const std::size_t chunk_len = truncated ? std::max<std::size_t>(1, len / std::max<std::size_t>(1, chunks)) : len;
  const std::size_t n_chunks = (len + chunk_len - 1) / chunk_len;
  Carry carry;
  for (std::size_t ci = 0; ci < n_chunks; ++ci) {
    const std::size_t begin = ci * chunk_len;
    const std::size_t end = std::min(len, begin + chunk_len);
    ad::Tape tape;
    const ParamVars vars = bind_params(tape, model, true);
    ForwardResult fwd = forward(tape, model, vars, n_chunks == 1 ? u : rows_of(u, begin, end), carry);
    const ad::Var loss = sample_loss(model, fwd.output, label, target);
    tape.backward(loss);
    const double w = 1.0 / static_cast<double>(n_chunks);
    out.loss += w * loss.scalar();
    collect_grad(model, vars, w, out.grad);
    carry = std::move(fwd.carry);  // detached: values only
  }
  return out;
}

TrainResult train(const ModelConfig& model_cfg, const ToyTask& task, const Dataset& data,
                  const TrainConfig& cfg) {
  cfg.validate();
  task.validate();
  if (data.inputs.empty()) throw std::invalid_argument("train: empty dataset");
  ModelConfig mc = model_cfg;
  mc.input_dim = task.input_dim();
  mc.output_dim = task.output_dim();
  TrainResult result{init_model(mc), {}};
  Model& model = result.model;
  model.task = task.kind;
  model.train_rate_hz = data.rate_hz;

  const auto [n_full, n_trunc] = cfg.split();
  const std::size_t n = model.flat_size();
  std::vector<double> m1(n, 0.0), m2(n, 0.0);
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  const auto warmup = static_cast<std::size_t>(cfg.warmup_fraction * static_cast<double>(cfg.steps));

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    CounterRng pick(cfg.seed, 0x7261696eULL + step);
    std::vector<std::size_t> batch(cfg.batch);
    for (auto& b : batch) b = pick.below(data.inputs.size());

    std::vector<SampleGradient> per(cfg.batch);
    parallel::parallel_for(
        cfg.batch, 1,
        [&](std::size_t lo, std::size_t hi) {
          for (std::size_t i = lo; i < hi; ++i) {
            const std::size_t s = batch[i];
            per[i] = sample_gradient(model, data.inputs[s],
                                     data.labels.empty() ? 0 : data.labels[s],
                                     data.targets.empty() ? 0.0 : data.targets[s], i >= n_full,
                                     cfg.tbptt_chunks);
          }
        },
        cfg.threads);

    std::vector<std::vector<double>> grads(cfg.batch);
    double loss = 0.0;
    for (std::size_t i = 0; i < cfg.batch; ++i) {
      loss += per[i].loss;
      grads[i] = std::move(per[i].grad);
    }
    std::vector<double> grad = pairwise_reduce(grads, 0, cfg.batch);
    const double inv = 1.0 / static_cast<double>(cfg.batch);
    loss *= inv;
    for (auto& g : grad) g *= inv;

    if (cfg.h2 && cfg.h2->weight > 0.0 && mc.kind == ModelKind::kSsm) {
      ad::Tape tape;
      const ParamVars vars = bind_params(tape, model, true);
      ad::Var total = tape.constant(RMatrix(1, 1, 0.0));
      for (std::size_t l = 0; l < mc.layers; ++l) {
        total = ad::add(total, ad::h2_penalty(vars(model, layer_name(l, "lambda")),
                                              vars(model, layer_name(l, "b")),
                                              vars(model, layer_name(l, "c")), *cfg.h2));
      }
      tape.backward(total);
      loss += total.scalar();
      collect_grad(model, vars, 1.0, grad);
    }

    double norm2 = 0.0;
    for (double g : grad) norm2 += g * g;
    if (!std::isfinite(loss) || !std::isfinite(norm2)) {
      throw TrainingDiverged("training diverged at step " + std::to_string(step) + " (loss " +
                                 std::to_string(loss) + ", gradient norm^2 " +
                                 std::to_string(norm2) + "); lower train.lr or enable grad_clip",
                             step);
    }
    if (cfg.grad_clip > 0.0 && norm2 > cfg.grad_clip * cfg.grad_clip) {
      const double s = cfg.grad_clip / std::sqrt(norm2);
      for (auto& g : grad) g *= s;
    }

    double lr = cfg.lr;
    if (step < warmup) {
      lr *= static_cast<double>(step + 1) / static_cast<double>(warmup);
    } else {
      lr *= static_cast<double>(cfg.steps - step) / static_cast<double>(cfg.steps - warmup);
    }
    std::vector<double> flat = model.flatten();
    const double t = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(kBeta1, t), c2 = 1.0 - std::pow(kBeta2, t);
    for (std::size_t i = 0; i < n; ++i) {
      m1[i] = kBeta1 * m1[i] + (1.0 - kBeta1) * grad[i];
      m2[i] = kBeta2 * m2[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      flat[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + kEps);
    }
    model.unflatten(flat);
    if (mc.kind == ModelKind::kSsm) {
      // keep every pole strictly stable
      for (std::size_t l = 0; l < mc.layers; ++l) {
        auto& lam = model.param(layer_name(l, "lambda")).data;
        for (std::size_t p = 0; p < lam.size(); p += 2) lam[p] = std::min(lam[p], -1e-4);
      }
    }
    result.loss_curve.push_back(loss);
  }
  return result;
}

std::vector<double> predict(const Model& model, const RMatrix& u, double data_rate_hz) {
  if (!(data_rate_hz > 0.0)) throw std::invalid_argument("predict: rate must be > 0");
  ad::Tape tape;
  const ParamVars vars = bind_params(tape, model, false);
  ForwardOptions opts;
  opts.rate = model.config.kind == ModelKind::kSsm ? retarget(model.train_rate_hz, data_rate_hz) : 1.0;
  return forward(tape, model, vars, u, {}, opts).output.rval();
}

double evaluate(const Model& model, const Dataset& data, std::size_t threads) {
  if (data.inputs.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const std::size_t n = data.inputs.size();
  std::vector<double> score(n);
  parallel::parallel_for(
      n, 4,
      [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) {
          const auto out = predict(model, data.inputs[i], data.rate_hz);
          if (model.task == TaskKind::kDutyCycle) {
            const auto best = static_cast<std::size_t>(std::max_element(out.begin(), out.end()) - out.begin());
            score[i] = best == data.labels[i] ? 1.0 : 0.0;
          } else {
            score[i] = (out[0] - data.targets[i]) * (out[0] - data.targets[i]);
          }
        }
      },
      threads);
  double total = 0.0;
  for (double s : score) total += s;
  if (model.task == TaskKind::kDutyCycle) return total / static_cast<double>(n);
  double mean = 0.0, var = 0.0;
  for (double t : data.targets) mean += t;
  mean /= static_cast<double>(n);
  for (double t : data.targets) var += (t - mean) * (t - mean);
  return var > 0.0 ? 1.0 - total / var : -total / static_cast<double>(n);
}

std::string FrequencySweepReport::to_csv() const {
  std::string out = "deploy_hz,rate,metric\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6g,%.6g,%.6f\n", r.deploy_hz, r.rate, r.metric);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "# performance_drop,%.6f\n", performance_drop);
  out += buf;
  return out;
}

FrequencySweepReport eval_frequency_sweep(const Model& model, const ToyTask& task,
                                          std::span<const double> deploy_hz, std::size_t threads) {
  std::vector<double> rates(deploy_hz.begin(), deploy_hz.end());
  if (std::find(rates.begin(), rates.end(), task.base_rate_hz) == rates.end()) {
    rates.insert(rates.begin(), task.base_rate_hz);
  }
  FrequencySweepReport report;
  double base_metric = 0.0;
  for (double hz : rates) {
    const Dataset data = make_toy_dataset(task, hz);
    SweepRow row;
    row.deploy_hz = hz;
    row.rate = model.config.kind == ModelKind::kSsm ? retarget(model.train_rate_hz, hz) : 1.0;
    row.metric = evaluate(model, data, threads);
    if (hz == task.base_rate_hz) base_metric = row.metric;
    report.rows.push_back(row);
  }
  std::size_t others = 0;
  for (const auto& r : report.rows) {
    if (r.deploy_hz == task.base_rate_hz) continue;
    report.performance_drop += base_metric - r.metric;
    ++others;
  }
  if (others > 0) report.performance_drop /= static_cast<double>(others);
  return report;
}

std::vector<double> model_h2_norms(const Model& model, const H2Config& cfg) {
  std::vector<double> out;
  if (model.config.kind != ModelKind::kSsm) return out;
  for (std::size_t l = 0; l < model.config.layers; ++l) out.push_back(h2_tail_norm(layer_ssm(model, l), cfg));
  return out;
}

namespace {

constexpr char kModelMagic[8] = {'S', 'S', 'M', 'E', 'V', 'M', 'D', 'L'};

void put_u64(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const unsigned char* p, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::string serialize_model(const Model& model) {
  const ModelConfig& c = model.config;
  json meta = {
      {"task", task_name(model.task)},
      {"train_rate_hz", model.train_rate_hz},
      {"config",
       {{"kind", model_kind_name(c.kind)},
        {"input_dim", c.input_dim},
        {"output_dim", c.output_dim},
        {"width", c.width},
        {"states", c.states},
        {"layers", c.layers},
        {"blocks", c.blocks},
        {"rule", rule_name(c.rule)},
        {"delta_min", c.delta_min},
        {"delta_max", c.delta_max},
        {"bandlimit", {{"enabled", c.bandlimit.enabled}, {"alpha", c.bandlimit.alpha}}},
        {"seed", c.seed}}},
      {"params", json::array()}};
  for (const auto& p : model.params) {
    meta["params"].push_back({{"name", p.name}, {"rows", p.rows}, {"cols", p.cols}, {"complex", p.complex}});
  }
  const std::string text = meta.dump();
  std::string out(kModelMagic, sizeof(kModelMagic));
  put_u64(out, 1, 4);
  put_u64(out, text.size(), 8);
  out += text;
  for (const auto& p : model.params) {
    for (double v : p.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      put_u64(out, bits, 8);
    }
  }
  return out;
}

Model parse_model(std::string_view bytes) {
  constexpr std::size_t header = sizeof(kModelMagic) + 4 + 8;
  if (bytes.size() < header || bytes.substr(0, sizeof(kModelMagic)) != std::string_view(kModelMagic, 8)) {
    throw std::invalid_argument("not a model file (bad magic)");
  }
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  if (get_u64(raw + 8, 4) != 1) throw std::invalid_argument("unsupported model file version");
  const std::uint64_t meta_len = get_u64(raw + 12, 8);
  if (bytes.size() < header + meta_len) throw std::invalid_argument("model file truncated in metadata");
  Model model;
  try {
    const json meta = json::parse(bytes.substr(header, meta_len));
    model.task = parse_task(meta.at("task").get<std::string>());
    model.train_rate_hz = meta.at("train_rate_hz").get<double>();
    const json& c = meta.at("config");
    ModelConfig& mc = model.config;
    mc.kind = parse_model_kind(c.at("kind").get<std::string>());
    mc.input_dim = c.at("input_dim").get<std::size_t>();
    mc.output_dim = c.at("output_dim").get<std::size_t>();
    mc.width = c.at("width").get<std::size_t>();
    mc.states = c.at("states").get<std::size_t>();
    mc.layers = c.at("layers").get<std::size_t>();
    mc.blocks = c.at("blocks").get<std::size_t>();
    mc.rule = parse_rule(c.at("rule").get<std::string>());
    mc.delta_min = c.at("delta_min").get<double>();
    mc.delta_max = c.at("delta_max").get<double>();
    mc.bandlimit.enabled = c.at("bandlimit").at("enabled").get<bool>();
    mc.bandlimit.alpha = c.at("bandlimit").at("alpha").get<double>();
    mc.seed = c.at("seed").get<std::uint64_t>();
    for (const auto& p : meta.at("params")) {
      Param param;
      param.name = p.at("name").get<std::string>();
      param.rows = p.at("rows").get<std::size_t>();
      param.cols = p.at("cols").get<std::size_t>();
      param.complex = p.at("complex").get<bool>();
      param.data.resize(param.count() * (param.complex ? 2 : 1));
      model.params.push_back(std::move(param));
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("model metadata: ") + e.what());
  }
  std::size_t off = header + meta_len;
  if (bytes.size() != off + 8 * model.flat_size()) {
    throw std::invalid_argument("model file payload size does not match its parameter table");
  }
  for (auto& p : model.params) {
    for (double& v : p.data) {
      const std::uint64_t bits = get_u64(raw + off, 8);
      std::memcpy(&v, &bits, sizeof(v));
      off += 8;
    }
  }
  return model;
}

}  // namespace ssmev::train
