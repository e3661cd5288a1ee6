// ssmev command-line interface. Exit codes: 0 success, 1 usage error,
// 2 runtime error.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssmev/config.hpp"
#include "ssmev/events.hpp"
#include "ssmev/hippo.hpp"
#include "ssmev/parallel.hpp"
#include "ssmev/regfreq.hpp"
#include "ssmev/rng.hpp"
#include "ssmev/scan.hpp"
#include "ssmev/selftest.hpp"
#include "ssmev/ssm.hpp"
#include "ssmev/trainer.hpp"

namespace {

using namespace ssmev;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

// Writes to `path`, or stdout when path is empty.
void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
  } else {
    write_file(path, text);
  }
}

std::string num(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

events::EventFormat format_for(const std::string& explicit_format, const std::string& path) {
  if (!explicit_format.empty()) return events::parse_format(explicit_format);
  const bool csv = path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0;
  return csv ? events::EventFormat::kCsv : events::EventFormat::kBinary;
}

Config config_or_default(const std::string& path) { return path.empty() ? Config{} : load_config(path); }

int cmd_hippo_dump(std::size_t n, const std::string& what, const std::string& out) {
  std::string text;
  if (what == "legs" || what == "normal") {
    const RMatrix a = what == "legs" ? legs_matrix(n).a : legs_normal(n).a_normal;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) text += (j ? "," : "") + num(a(i, j));
      text += '\n';
    }
  } else if (what == "p") {
    for (double p : legs_normal(n).p) text += num(p) + '\n';
  } else {
    text = "re,im\n";
    for (const cplx& l : diagonalize_normal(legs_normal(n)).lambda) {
      text += num(l.real()) + "," + num(l.imag()) + '\n';
    }
  }
  emit(out, text);
  return 0;
}

int cmd_kernel(const std::string& config_path, std::size_t len, double rate, const std::string& out) {
  const Config cfg = load_config(config_path);
  const ContinuousDiagSSM ssm = cfg.build_ssm();
  const SsmKernel k = materialize_kernel(ssm, len, rate, cfg.bandlimit, cfg.rule);
  std::string text = "lag";
  for (std::size_t o = 0; o < k.outputs; ++o) {
    for (std::size_t i = 0; i < k.inputs; ++i) text += ",y" + std::to_string(o) + "_u" + std::to_string(i);
  }
  text += '\n';
  for (std::size_t lag = 0; lag < k.length; ++lag) {
    text += std::to_string(lag);
    for (std::size_t o = 0; o < k.outputs; ++o) {
      for (std::size_t i = 0; i < k.inputs; ++i) text += "," + num(k.at(lag, o, i));
    }
    text += '\n';
  }
  emit(out, text);
  return 0;
}

int cmd_scan_bench(std::size_t len, std::size_t states, std::size_t threads, std::size_t reps,
                   std::uint64_t seed) {
  CounterRng rng(seed);
  ScanSequence seq{CMatrix(len, states), CMatrix(len, states)};
  for (auto& a : seq.a.data()) a = std::polar(rng.uniform(0.9, 0.999), rng.uniform(-1.0, 1.0));
  for (auto& b : seq.bu.data()) b = cplx(rng.normal(), rng.normal());
  using clock = std::chrono::steady_clock;
  double best_seq = 1e300, best_par = 1e300;
  CMatrix s, p;
  for (std::size_t r = 0; r < reps; ++r) {
    auto t0 = clock::now();
    s = scan_sequential(seq);
    auto t1 = clock::now();
    p = scan_parallel(seq, {}, false, {threads, 4096});
    auto t2 = clock::now();
    best_seq = std::min(best_seq, std::chrono::duration<double>(t1 - t0).count());
    best_par = std::min(best_par, std::chrono::duration<double>(t2 - t1).count());
  }
  std::printf("len=%zu states=%zu threads=%zu\n", len, states, threads);
  std::printf("sequential_s=%.6f parallel_s=%.6f speedup=%.3f\n", best_seq, best_par, best_seq / best_par);
  std::printf("max_rel_diff=%.3g\n", max_abs_diff(s, p) / std::max(1.0, max_abs(s)));
  return 0;
}

int cmd_h2(const std::string& config_path, double omega_min, double omega_max, std::size_t n,
           bool no_tail, const std::string& out) {
  const Config cfg = load_config(config_path);
  const ContinuousDiagSSM ssm = cfg.build_ssm();
  H2Config h2 = cfg.h2 ? *cfg.h2 : default_h2_config(ssm);
  if (omega_min > 0.0) h2.omega_min = omega_min;
  if (omega_max > 0.0) h2.omega_max = omega_max;
  if (n > 0) h2.n_points = n;
  if (no_tail) h2.tail_correction = false;
  std::printf("%.10g\n", h2_tail_norm(ssm, h2));
  if (!out.empty()) {
    std::string text = "omega,fro2\n";
    for (double w : log_grid(h2.omega_min, h2.omega_max, h2.n_points)) {
      text += num(w) + "," + num(transfer_fro2(ssm, w)) + '\n';
    }
    write_file(out, text);
  }
  return 0;
}

struct SynthArgs {
  std::string out, format;
  events::SceneOptions scene;
};

int cmd_events_synth(const SynthArgs& a) {
  const auto stream = events::synthesize_scene(a.scene);
  write_file(a.out, events::serialize_events(stream, format_for(a.format, a.out)));
  std::printf("events=%zu\n", stream.events.size());
  return 0;
}

struct BinArgs {
  std::string in, out, format;
  std::uint64_t window_us = 50000;
  std::size_t bins = 10;
  events::ParseOptions parse;
};

int cmd_events_bin(const BinArgs& a) {
  const auto stream = events::parse_events(read_file(a.in), format_for(a.format, a.in), a.parse);
  const auto windows = events::bin_events(stream, a.window_us, a.bins);
  write_file(a.out, events::serialize_tensors(windows));
  std::uint64_t total = 0;
  for (const auto& w : windows) total += w.total();
  std::printf("events=%zu windows=%zu counted=%llu\n", stream.events.size(), windows.size(),
              static_cast<unsigned long long>(total));
  return 0;
}

int cmd_events_filter(const std::string& in, const std::string& out, const std::string& profile,
                      double min_side, double min_diag) {
  events::FilterProfile prof = events::FilterProfile::named(profile);
  if (min_side >= 0.0) prof.min_side = min_side;
  if (min_diag >= 0.0) prof.min_diag = min_diag;
  const auto boxes = events::parse_bboxes(read_file(in));
  const auto kept = events::filter_bboxes(boxes, prof);
  emit(out, events::serialize_bboxes(kept));
  std::fprintf(stderr, "kept %zu of %zu boxes\n", kept.size(), boxes.size());
  return 0;
}

struct TrainArgs {
  std::string config, out, task, model, loss_csv;
  std::int64_t seed = -1;
  std::int64_t steps = -1;
};

int cmd_train(const TrainArgs& a) {
  Config cfg = config_or_default(a.config);
  if (!a.task.empty()) cfg.task.kind = train::parse_task(a.task);
  if (!a.model.empty()) cfg.model.kind = train::parse_model_kind(a.model);
  if (a.seed >= 0) {
    cfg.model.seed = static_cast<std::uint64_t>(a.seed);
    cfg.train.seed = static_cast<std::uint64_t>(a.seed);
  }
  if (a.steps >= 0) cfg.train.steps = static_cast<std::size_t>(a.steps);
  const train::Dataset data = train::make_toy_dataset(cfg.task, cfg.task.base_rate_hz);
  const train::TrainResult res = train::train(cfg.model, cfg.task, data, cfg.train);
  write_file(a.out, train::serialize_model(res.model));
  if (!a.loss_csv.empty()) {
    std::string text = "step,loss\n";
    for (std::size_t i = 0; i < res.loss_curve.size(); ++i) {
      text += std::to_string(i) + "," + num(res.loss_curve[i]) + '\n';
    }
    write_file(a.loss_csv, text);
  }
  std::printf("final_loss=%.6f train_metric=%.4f\n",
              res.loss_curve.empty() ? 0.0 : res.loss_curve.back(), train::evaluate(res.model, data));
  return 0;
}

int cmd_eval_sweep(const std::string& model_path, const std::vector<double>& multipliers,
                   const std::string& config, std::int64_t eval_seed, const std::string& out) {
  const train::Model model = train::parse_model(read_file(model_path));
  Config cfg = config_or_default(config);
  train::ToyTask task = cfg.task;
  task.kind = model.task;
  task.base_rate_hz = model.train_rate_hz;
  // held-out signals unless a seed is given
  task.seed = eval_seed >= 0 ? static_cast<std::uint64_t>(eval_seed) : task.seed + 1;
  std::vector<double> rates;
  for (double m : multipliers) rates.push_back(m * task.base_rate_hz);
  const auto report = train::eval_frequency_sweep(model, task, rates);
  emit(out, report.to_csv());
  if (!out.empty()) std::printf("performance_drop=%.6f\n", report.performance_drop);
  return 0;
}

int cmd_selftest() {
  bool ok = true;
  for (const auto& r : run_selftest()) {
    std::printf("%s %-18s %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    ok = ok && r.passed;
  }
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-time diagonal state-space layers: tools and toy experiments"};
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Cap on worker threads (default: available cores)");

  int code = 0;
  std::function<int()> action;

  auto* hippo = app.add_subcommand("hippo", "HiPPO matrices");
  hippo->require_subcommand(1);
  auto* dump = hippo->add_subcommand("dump", "Print a HiPPO matrix or its spectrum as CSV");
  std::size_t hippo_n = 8;
  std::string hippo_what = "legs", hippo_out;
  dump->add_option("--n", hippo_n, "State size N")->check(CLI::PositiveNumber);
  dump->add_option("--what", hippo_what, "legs | normal | p | eig")
      ->check(CLI::IsMember({"legs", "normal", "p", "eig"}));
  dump->add_option("--out", hippo_out, "Output CSV (default stdout)");
  dump->callback([&] { action = [&] { return cmd_hippo_dump(hippo_n, hippo_what, hippo_out); }; });

  auto* kernel = app.add_subcommand("kernel", "Materialize the discrete kernel of a configured SSM");
  std::string kernel_cfg, kernel_out;
  std::size_t kernel_len = 64;
  double kernel_rate = 1.0;
  kernel->add_option("--config", kernel_cfg, "JSON config")->required();
  kernel->add_option("--len", kernel_len, "Kernel length L")->check(CLI::PositiveNumber);
  kernel->add_option("--rate", kernel_rate, "Rate multiplier r")->check(CLI::PositiveNumber);
  kernel->add_option("--out", kernel_out, "Output CSV (default stdout); row = lag");
  kernel->callback([&] { action = [&] { return cmd_kernel(kernel_cfg, kernel_len, kernel_rate, kernel_out); }; });

  auto* scan = app.add_subcommand("scan", "Associative scan utilities");
  scan->require_subcommand(1);
  auto* bench = scan->add_subcommand("bench", "Time sequential vs parallel scan");
  std::size_t bench_len = 1 << 16, bench_states = 32, bench_threads = 8, bench_reps = 3;
  std::uint64_t bench_seed = 0;
  bench->add_option("--len", bench_len, "Sequence length L")->check(CLI::PositiveNumber);
  bench->add_option("--states", bench_states, "States P")->check(CLI::PositiveNumber);
  bench->add_option("--scan-threads", bench_threads, "Threads for the parallel scan")->check(CLI::PositiveNumber);
  bench->add_option("--reps", bench_reps, "Repetitions (best time is reported)")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bench_seed, "Random seed");
  bench->callback([&] {
    action = [&] { return cmd_scan_bench(bench_len, bench_states, bench_threads, bench_reps, bench_seed); };
  });

  auto* h2 = app.add_subcommand("h2", "H2 tail norm of a configured SSM");
  std::string h2_cfg, h2_out;
  double h2_min = 0.0, h2_max = 0.0;
  std::size_t h2_n = 0;
  bool h2_no_tail = false;
  h2->add_option("--config", h2_cfg, "JSON config")->required();
  h2->add_option("--omega-min", h2_min, "Lower frequency (rad/s)")->check(CLI::PositiveNumber);
  h2->add_option("--omega-max", h2_max, "Upper grid frequency (rad/s)")->check(CLI::PositiveNumber);
  h2->add_option("--n", h2_n, "Grid points")->check(CLI::Range(std::size_t{2}, std::size_t{100000000}));
  h2->add_flag("--no-tail", h2_no_tail, "Drop the analytic remainder beyond omega-max");
  h2->add_option("--out", h2_out, "CSV of ||G(jw)||_F^2 on the grid");
  h2->callback([&] { action = [&] { return cmd_h2(h2_cfg, h2_min, h2_max, h2_n, h2_no_tail, h2_out); }; });

  auto* ev = app.add_subcommand("events", "Event-camera streams");
  ev->require_subcommand(1);
  auto* synth = ev->add_subcommand("synth", "Synthesize events from a built-in scene");
  SynthArgs sa;
  synth->add_option("--scene", sa.scene.name, "ramp | blink | moving-bar")
      ->check(CLI::IsMember({"ramp", "blink", "moving-bar"}));
  synth->add_option("--out", sa.out, "Output file (.csv for CSV, else binary)")->required();
  synth->add_option("--format", sa.format, "csv | binary (overrides the extension)");
  synth->add_option("--width", sa.scene.width, "Sensor width");
  synth->add_option("--height", sa.scene.height, "Sensor height");
  synth->add_option("--steps", sa.scene.steps, "Grid steps");
  synth->add_option("--step-us", sa.scene.step_us, "Grid spacing in microseconds");
  synth->add_option("--threshold", sa.scene.threshold, "Contrast threshold C")->check(CLI::PositiveNumber);
  synth->add_option("--slope", sa.scene.slope, "Ramp slope per step");
  synth->add_option("--period", sa.scene.period, "Blink period in steps");
  synth->callback([&] { action = [&] { return cmd_events_synth(sa); }; });

  auto* bin = ev->add_subcommand("bin", "Stacked-histogram binning into an EVHT tensor file");
  BinArgs ba;
  bin->add_option("--in", ba.in, "Event file")->required();
  bin->add_option("--out", ba.out, "Tensor file")->required();
  bin->add_option("--format", ba.format, "csv | binary (overrides the extension)");
  bin->add_option("--window-us", ba.window_us, "Window length in microseconds")->check(CLI::PositiveNumber);
  bin->add_option("--bins", ba.bins, "Time bins per window")->check(CLI::PositiveNumber);
  bin->add_option("--width", ba.parse.width, "Sensor width");
  bin->add_option("--height", ba.parse.height, "Sensor height");
  bin->add_flag("--polarity-zero-one", ba.parse.polarity_zero_one, "Read polarity 0 as -1");
  bin->callback([&] { action = [&] { return cmd_events_bin(ba); }; });

  auto* filter = ev->add_subcommand("filter", "Drop boxes below the dataset size rules");
  std::string f_in, f_out, f_profile = "gen1";
  double f_side = -1.0, f_diag = -1.0;
  filter->add_option("--in", f_in, "Box CSV x,y,w,h,class")->required();
  filter->add_option("--out", f_out, "Output CSV (default stdout)");
  filter->add_option("--profile", f_profile, "gen1 | mpx1")->check(CLI::IsMember({"gen1", "mpx1"}));
  filter->add_option("--min-side", f_side, "Override minimum side (px)");
  filter->add_option("--min-diag", f_diag, "Override minimum diagonal (px)");
  filter->callback([&] { action = [&] { return cmd_events_filter(f_in, f_out, f_profile, f_side, f_diag); }; });

  auto* tr = app.add_subcommand("train", "Train a toy model");
  TrainArgs ta;
  tr->add_option("--task", ta.task, "duty | regression")->check(CLI::IsMember({"duty", "regression"}));
  tr->add_option("--model", ta.model, "ssm | rnn")->check(CLI::IsMember({"ssm", "rnn"}));
  tr->add_option("--config", ta.config, "JSON config (task, model, train, bandlimit, h2)");
  tr->add_option("--out", ta.out, "Model file")->required();
  tr->add_option("--seed", ta.seed, "Overrides model.seed and train.seed");
  tr->add_option("--steps", ta.steps, "Overrides train.steps");
  tr->add_option("--loss-csv", ta.loss_csv, "Write the loss curve");
  tr->callback([&] { action = [&] { return cmd_train(ta); }; });

  auto* ev2 = app.add_subcommand("eval", "Evaluate trained models");
  ev2->require_subcommand(1);
  auto* sweep = ev2->add_subcommand("sweep", "Accuracy across deploy rates");
  std::string s_model, s_cfg, s_out;
  std::vector<double> s_rates{1, 2, 4};
  std::int64_t s_seed = -1;
  sweep->add_option("--model", s_model, "Model file")->required();
  sweep->add_option("--rates", s_rates, "Deploy rates as multiples of the training rate")
      ->delimiter(',')
      ->check(CLI::PositiveNumber);
  sweep->add_option("--config", s_cfg, "JSON config for the task definition");
  sweep->add_option("--eval-seed", s_seed, "Seed of the evaluation signals (default task.seed + 1)");
  sweep->add_option("--out", s_out, "Report CSV (default stdout)");
  sweep->callback([&] { action = [&] { return cmd_eval_sweep(s_model, s_rates, s_cfg, s_seed, s_out); }; });

  auto* self = app.add_subcommand("selftest", "Run the built-in oracle suites");
  self->callback([&] { action = [&] { return cmd_selftest(); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << "\n" << app.help();
    return 1;
  }

  try {
    if (threads > 0) parallel::set_default_threads(threads);
    code = action ? action() : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return code;
}
