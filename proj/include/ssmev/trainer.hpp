#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ssmev/autodiff.hpp"
#include "ssmev/discretize.hpp"
#include "ssmev/numerics.hpp"
#include "ssmev/regfreq.hpp"
#include "ssmev/ssm.hpp"

namespace ssmev::train {

enum class TaskKind { kDutyCycle, kSmoothedRegression };

TaskKind parse_task(std::string_view name);
std::string_view task_name(TaskKind kind);

// Synthetic sequence tasks defined in continuous time, so that sampling the
// same signal at a higher rate changes only the grid.
//
// duty: a light blinks with a fixed period (small per-signal jitter) and a
//   duty cycle of (c + 1) / (n_classes + 1) for class c. The input is what an
//   event sensor reports: channel 0 carries a Gaussian bump at every rising
//   edge, channel 1 at every falling edge, plus white noise. The class is
//   only recoverable from the time between edges.
// regression: the input is a sum of three random sinusoids; the target is
//   the time average of the square of its exponentially smoothed version
//   (time constant `smoothing_s`).
struct ToyTask {
  TaskKind kind = TaskKind::kDutyCycle;
  double base_rate_hz = 100.0;
  std::size_t seq_len = 256;  // at base_rate_hz
  std::size_t n_classes = 3;
  double noise_std = 0.05;
  std::uint64_t seed = 0;
  std::size_t n_samples = 192;
  double period_s = 0.32;
  double period_jitter = 0.1;  // relative, uniform
  double edge_width_s = 0.02;  // Gaussian sigma of an edge bump
  double smoothing_s = 0.2;

  std::size_t input_dim() const { return kind == TaskKind::kDutyCycle ? 2 : 1; }
  std::size_t output_dim() const { return kind == TaskKind::kDutyCycle ? n_classes : 1; }
  void validate() const;
};

struct Dataset {
  std::vector<RMatrix> inputs;   // L x input_dim each
  std::vector<std::size_t> labels;  // duty task
  std::vector<double> targets;      // regression task
  double rate_hz = 0.0;
};

// rate_hz must be an integer multiple of task.base_rate_hz; L scales with it.
Dataset make_toy_dataset(const ToyTask& task, double rate_hz);

enum class ModelKind { kSsm, kRnn };

ModelKind parse_model_kind(std::string_view name);
std::string_view model_kind_name(ModelKind kind);

struct ModelConfig {
  ModelKind kind = ModelKind::kSsm;
  std::size_t input_dim = 2;
  std::size_t output_dim = 3;
  std::size_t width = 16;   // H
  std::size_t states = 32;  // P
  std::size_t layers = 2;   // SSM layers (the RNN baseline has one cell)
  std::size_t blocks = 1;   // J
  DiscretizationRule rule = DiscretizationRule::kBilinear;
  double delta_min = 0.001;
  double delta_max = 0.1;
  BandlimitConfig bandlimit{};
  std::uint64_t seed = 0;
};

// Named parameter block. Complex values are stored interleaved (re, im).
struct Param {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool complex = false;
  std::vector<double> data;

  std::size_t count() const { return rows * cols; }
  RMatrix real_matrix() const;
  CMatrix complex_matrix() const;
  void assign(const RMatrix& m);
  void assign(const CMatrix& m);
};

struct Model {
  ModelConfig config;
  TaskKind task = TaskKind::kDutyCycle;
  double train_rate_hz = 100.0;
  std::vector<Param> params;

  const Param& param(std::string_view name) const;
  Param& param(std::string_view name);
  std::size_t flat_size() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
};

// SSM stack: input affine -> layers x (SSM + GELU + residual) -> mean over
// time -> affine head. RNN baseline: input affine -> gated recurrent cell ->
// mean over time -> affine head.
Model init_model(const ModelConfig& cfg);

// SSM parameters of layer l as a ContinuousDiagSSM.
ContinuousDiagSSM layer_ssm(const Model& model, std::size_t layer);

// Gated recurrent cell
//   z_k = sigmoid(x_k Wz + h_{k-1} Uz + bz)
//   c_k = tanh(x_k Wc + h_{k-1} Uc + bc)
//   h_k = (1 - z_k) h_{k-1} + z_k c_k
// over x (L x H); returns all states (L x H). Parameters are Vars on the
// same tape (W, U: H x H, b: 1 x H); h0 is a constant.
ad::Var gated_recurrence(ad::Var x, ad::Var wz, ad::Var uz, ad::Var bz, ad::Var wc, ad::Var uc,
                         ad::Var bc, std::span<const double> h0 = {});

struct RnnParams {
  RMatrix wz, uz, wc, uc;        // H x H
  std::vector<double> bz, bc;    // H
};

// Plain forward pass of the cell (no tape); state is updated in place.
RMatrix rnn_baseline_forward(const RnnParams& params, const RMatrix& u,
                             std::vector<double>& state);

// Per-sample forward pass recorded on a tape. `rate` is the SSM step
// multiplier (ignored by the RNN). state_in holds one carried state per
// recurrent layer (empty = zero); the final states are written to state_out.
struct Carry {
  std::vector<std::vector<cplx>> ssm;  // per layer, P
  std::vector<double> rnn;             // H
};

struct ForwardResult {
  ad::Var output;  // 1 x output_dim (logits or regression value)
  Carry carry;
};

struct ParamVars {
  std::vector<ad::Var> vars;  // parallel to Model::params
  const ad::Var& operator()(const Model& model, std::string_view name) const;
};

ParamVars bind_params(ad::Tape& tape, const Model& model, bool trainable);

struct ForwardOptions {
  double rate = 1.0;
  bool parallel_scan = false;
};

ForwardResult forward(ad::Tape& tape, const Model& model, const ParamVars& vars,
                      const RMatrix& u, const Carry& carry_in, const ForwardOptions& opts = {});

struct TrainConfig {
  std::size_t batch = 8;
  double mixed_fraction = 0.5;  // share of each batch trained with full BPTT
  double lr = 3.5e-4;
  std::size_t steps = 500;
  std::optional<H2Config> h2;
  std::uint64_t seed = 0;
  std::size_t tbptt_chunks = 4;  // TBPTT chunk length = L / tbptt_chunks
  double grad_clip = 1.0;        // global norm; 0 disables
  double warmup_fraction = 0.0;  // linear warm-up before the linear decay
  std::size_t threads = 0;

  void validate() const;
  // Split of one batch: {BPTT samples, TBPTT samples}.
  std::pair<std::size_t, std::size_t> split() const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::size_t step)
      : std::runtime_error(what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainResult {
  Model model;
  std::vector<double> loss_curve;  // mean batch loss per step
};

TrainResult train(const ModelConfig& model_cfg, const ToyTask& task, const Dataset& data,
                  const TrainConfig& cfg);

// One optimisation signal for a single sample: loss and flat gradient.
struct SampleGradient {
  double loss = 0.0;
  std::vector<double> grad;
};

SampleGradient sample_gradient(const Model& model, const RMatrix& u, std::size_t label,
                               double target, bool truncated, std::size_t chunks);

// Accuracy (duty) or 1 - MSE / Var(target) (regression) at a deploy rate.
double evaluate(const Model& model, const Dataset& data, std::size_t threads = 0);

// Output of the model on one sequence at the rate implied by data_rate_hz.
std::vector<double> predict(const Model& model, const RMatrix& u, double data_rate_hz);

struct SweepRow {
  double deploy_hz = 0.0;
  double rate = 1.0;  // r applied to the SSM steps (1 for the RNN)
  double metric = 0.0;
};

struct FrequencySweepReport {
  std::vector<SweepRow> rows;
  double performance_drop = 0.0;  // mean over non-base rows of (base - metric)

  std::string to_csv() const;
};

// Evaluates at every deploy rate (the base rate is added if missing).
FrequencySweepReport eval_frequency_sweep(const Model& model, const ToyTask& task,
                                          std::span<const double> deploy_hz,
                                          std::size_t threads = 0);

// Tail norm of every SSM layer of the model (empty for the RNN).
std::vector<double> model_h2_norms(const Model& model, const H2Config& cfg);

// Flat model container: magic "SSMEVMDL", u32 version (1), u64 metadata
// length, metadata JSON (config + parameter table), then for each parameter
// in table order rows * cols (* 2 when complex) f64 little-endian values.
std::string serialize_model(const Model& model);
Model parse_model(std::string_view bytes);

}  // namespace ssmev::train
