#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <string>

#include "ssmev/config.hpp"

using namespace ssmev;

namespace {

// Path reported by a rejected config.
std::string error_path(const std::string& json) {
  try {
    parse_config(json);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<accepted>";
}

}  // namespace

TEST_CASE("empty config gives the defaults") {
  const Config c = parse_config("{}");
  CHECK(c.ssm_init.states == 32);
  CHECK(c.ssm_init.width == 16);
  CHECK(c.rule == DiscretizationRule::kBilinear);
  CHECK_FALSE(c.bandlimit.enabled);
  CHECK_FALSE(c.h2.has_value());
  CHECK_FALSE(c.system.has_value());
  CHECK(c.train.mixed_fraction == 0.5);
  CHECK(c.build_ssm().states() == 32);
}

TEST_CASE("sections are read and propagated") {
  const Config c = parse_config(R"({
    "ssm": {"states": 8, "width": 2, "blocks": 2, "seed": 4, "rule": "zoh"},
    "bandlimit": {"enabled": true, "alpha": 0.25},
    "h2": {"omega_min": 2, "omega_max": 30, "n_points": 64, "weight": 0.5, "squared_penalty": false},
    "task": {"kind": "regression", "seq_len": 50, "seed": 9},
    "model": {"kind": "rnn", "width": 5, "layers": 1},
    "train": {"batch": 6, "mixed_fraction": 0.25, "lr": 0.001, "steps": 7}
  })");
  CHECK(c.ssm_init.states == 8);
  CHECK(c.ssm_init.blocks == 2);
  CHECK(c.rule == DiscretizationRule::kZoh);
  CHECK(c.bandlimit.alpha == 0.25);
  REQUIRE(c.h2.has_value());
  CHECK(c.h2->n_points == 64);
  CHECK_FALSE(c.h2->squared_penalty);
  CHECK(c.task.kind == train::TaskKind::kSmoothedRegression);
  CHECK(c.task.seq_len == 50);
  CHECK(c.model.kind == train::ModelKind::kRnn);
  CHECK(c.model.bandlimit.enabled);
  CHECK(c.train.h2.has_value());
  CHECK(c.train.split() == std::pair<std::size_t, std::size_t>{2, 4});
  CHECK(c.build_ssm().states() == 8);
}

TEST_CASE("explicit systems") {
  const Config c = parse_config(R"({"ssm": {"system": {
    "lambda": [[-1, 2], -0.5], "b_tilde": [[1], [[0, 1]]], "c_tilde": [[1, [2, -1]]],
    "d": [0.5], "log_delta": [0, -1]}}})");
  REQUIRE(c.system.has_value());
  const auto s = c.build_ssm();
  CHECK(s.lambda[0] == cplx(-1, 2));
  CHECK(s.lambda[1] == cplx(-0.5, 0));
  CHECK(s.b_tilde(1, 0) == cplx(0, 1));
  CHECK(s.c_tilde(0, 1) == cplx(2, -1));
  CHECK(s.d[0] == 0.5);

  CHECK(error_path(R"({"ssm": {"system": {"lambda": [-1], "b_tilde": [[1]], "c_tilde": [[1]], "d": [0]}}})") ==
        "ssm.system.log_delta");
  CHECK(error_path(R"({"ssm": {"system": {"lambda": [-1, -2], "b_tilde": [[1]], "c_tilde": [[1]],
    "d": [0], "log_delta": [0]}}})") == "ssm.system");
  CHECK(error_path(R"({"ssm": {"system": {"lambda": [[1, 2, 3]], "b_tilde": [[1]], "c_tilde": [[1]],
    "d": [0], "log_delta": [0]}}})") == "ssm.system.lambda[0]");
}

TEST_CASE("invalid fields are reported by path") {
  CHECK(error_path(R"({"ssm": {"states": 0}})") == "ssm.states");
  CHECK(error_path(R"({"ssm": {"statez": 4}})") == "ssm.statez");
  CHECK(error_path(R"({"ssm": {"states": 6, "blocks": 4}})") == "ssm.blocks");
  CHECK(error_path(R"({"ssm": {"delta_min": -1}})") == "ssm.delta_min");
  CHECK(error_path(R"({"ssm": {"rule": "euler"}})") == "ssm.rule");
  CHECK(error_path(R"({"bandlimit": {"alpha": 2}})") == "bandlimit.alpha");
  CHECK(error_path(R"({"bandlimit": {"enabled": "yes"}})") == "bandlimit.enabled");
  CHECK(error_path(R"({"h2": {"omega_min": 5, "omega_max": 1}})") == "h2.omega_max");
  CHECK(error_path(R"({"h2": {"n_points": 1}})") == "h2.n_points");
  CHECK(error_path(R"({"task": {"kind": "detection"}})") == "task.kind");
  CHECK(error_path(R"({"task": {"n_classes": 1}})") == "task.n_classes");
  CHECK(error_path(R"({"model": {"seed": -3}})") == "model.seed");
  CHECK(error_path(R"({"train": {"mixed_fraction": 1.5}})") == "train.mixed_fraction");
  CHECK(error_path(R"({"train": {"lr": 0}})") == "train");
  CHECK(error_path(R"({"optimizer": {}})") == "optimizer");
  CHECK(error_path(R"({"ssm": [1, 2]})") == "ssm");
  CHECK(error_path("{not json") == "<config>");
}

TEST_CASE("load_config") {
  CHECK_THROWS_AS(load_config("/nonexistent/ssmev.json"), std::runtime_error);
  const Config c = load_config(SSMEV_SOURCE_DIR "/configs/scalar_pole.json");
  REQUIRE(c.system.has_value());
  CHECK(c.system->lambda[0] == cplx(-1.0));
}
