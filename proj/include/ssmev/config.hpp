#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ssmev/discretize.hpp"
#include "ssmev/hippo.hpp"
#include "ssmev/regfreq.hpp"
#include "ssmev/ssm.hpp"
#include "ssmev/trainer.hpp"

namespace ssmev {

// Raised for invalid configuration; path() names the offending field, e.g.
// "ssm.delta_min".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Every section is optional; unknown fields are rejected.
//
//   {
//     "ssm":       {"states", "width", "blocks", "seed", "delta_min", "delta_max",
//                   "rule", "bidirectional",
//                   "system": {"lambda", "b_tilde", "c_tilde", "d", "log_delta"}},
//     "bandlimit": {"enabled", "alpha"},
//     "h2":        {"omega_min", "omega_max", "n_points", "weight",
//                   "tail_correction", "squared_penalty"},
//     "task":      {"kind", "base_rate_hz", "seq_len", "n_classes", "noise_std",
//                   "seed", "n_samples", "period_s", "period_jitter",
//                   "edge_width_s", "smoothing_s"},
//     "model":     {"kind", "width", "states", "layers", "blocks", "rule",
//                   "delta_min", "delta_max", "seed"},
//     "train":     {"batch", "mixed_fraction", "lr", "steps", "seed",
//                   "tbptt_chunks", "grad_clip", "warmup_fraction"}
//   }
//
// Complex numbers in "system" are [re, im] pairs or plain reals; b_tilde is
// P rows of H entries, c_tilde H rows of P (or 2P) entries.
struct Config {
  SsmInitOptions ssm_init{};
  DiscretizationRule rule = DiscretizationRule::kBilinear;
  std::optional<ContinuousDiagSSM> system;
  BandlimitConfig bandlimit{};
  std::optional<H2Config> h2;
  train::ToyTask task{};
  train::ModelConfig model{};
  train::TrainConfig train{};

  // The explicit system when given, else the HiPPO-N initialization.
  ContinuousDiagSSM build_ssm() const;
};

Config parse_config(std::string_view json_text);
Config load_config(const std::string& path);

}  // namespace ssmev
