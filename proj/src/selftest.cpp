#include "ssmev/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <functional>

#include "ssmev/events.hpp"
#include "ssmev/hippo.hpp"
#include "ssmev/regfreq.hpp"
#include "ssmev/rng.hpp"
#include "ssmev/scan.hpp"
#include "ssmev/ssm.hpp"

namespace ssmev {

namespace {

std::string fmt(const char* f, double v) {
  char buf[96];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

SuiteResult run(const std::string& name, const std::function<SuiteResult()>& body) {
  try {
    SuiteResult r = body();
    r.name = name;
    return r;
  } catch (const std::exception& e) {
    return {name, false, std::string("exception: ") + e.what()};
  }
}

SuiteResult nplr() {
  double worst = 0.0;
  for (std::size_t n = 1; n <= 64; ++n) {
    const HippoLegS legs = legs_matrix(n);
    const HippoNormal hn = legs_normal(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        worst = std::max(worst, std::abs(legs.a(i, j) - (hn.a_normal(i, j) - hn.p[i] * hn.p[j])));
      }
    }
  }
  return {"", worst <= 1e-12, fmt("max residual %.3g (N = 1..64)", worst)};
}

SuiteResult spectrum() {
  double worst = 0.0;
  for (std::size_t n : {2, 4, 8, 16, 64}) {
    for (const cplx& l : diagonalize_normal(legs_normal(n)).lambda) {
      worst = std::max(worst, std::abs(l.real() + 0.5));
    }
  }
  return {"", worst <= 1e-9, fmt("max |Re(lambda) + 1/2| %.3g", worst)};
}

SuiteResult scan_suite() {
  CounterRng rng(7);
  double worst = 0.0;
  for (std::size_t len : {1, 2, 3, 17, 256, 1025}) {
    const std::size_t ps = 8;
    ScanSequence seq{CMatrix(len, ps), CMatrix(len, ps)};
    for (auto& a : seq.a.data()) a = std::polar(rng.uniform(0.5, 0.99), rng.uniform(-3.0, 3.0));
    for (auto& b : seq.bu.data()) b = cplx(rng.normal(), rng.normal());
    std::vector<cplx> prev(ps);
    for (auto& p : prev) p = cplx(rng.normal(), rng.normal());
    for (bool rev : {false, true}) {
      const CMatrix s = scan_sequential(seq, prev, rev);
      const CMatrix p = scan_parallel(seq, prev, rev, {2, 1});
      worst = std::max(worst, max_abs_diff(s, p) / std::max(1.0, max_abs(s)));
    }
  }
  return {"", worst <= 1e-12, fmt("max rel. difference %.3g", worst)};
}

SuiteResult duality() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SsmInitOptions opts;
    opts.states = 16;
    opts.width = 4;
    opts.seed = seed;
    const ContinuousDiagSSM ssm = init_ssm(opts);
    CounterRng rng(seed, 99);
    RMatrix u(256, 4);
    for (auto& x : u.data()) x = rng.normal();
    const RMatrix conv = apply_convolutional(ssm, u, 1.0, {});
    const RMatrix rec = apply_recurrent(ssm, u, {}, 1.0, {}).y;
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < conv.size(); ++i) {
      num = std::max(num, std::abs(conv.data()[i] - rec.data()[i]));
      den = std::max(den, std::abs(rec.data()[i]));
    }
    worst = std::max(worst, num / den);
  }
  return {"", worst <= 1e-8, fmt("max rel. difference %.3g", worst)};
}

SuiteResult h2_closed_form() {
  ContinuousDiagSSM ssm{{cplx(-1.0, 0.0)}, CMatrix(1, 1, cplx(1.0)), CMatrix(1, 1, cplx(1.0)), {0.0}, {0.0}};
  H2Config cfg;
  cfg.omega_min = 1.0;
  const double tail = h2_tail_norm(ssm, cfg);
  cfg.omega_min = 1e-6;
  const double full = h2_tail_norm(ssm, cfg);
  // (1/pi) (pi/2 - atan w_min)
  const double want_tail = 0.5;
  const double want_full = std::sqrt((0.5 * std::numbers::pi - std::atan(1e-6)) / std::numbers::pi);
  const double err = std::max(std::abs(tail - want_tail) / want_tail, std::abs(full - want_full) / want_full);
  return {"", err <= 1e-3, fmt("max rel. error %.3g vs arctan closed form", err)};
}

SuiteResult event_ramp() {
  events::SceneOptions scene;
  scene.width = 1;
  scene.height = 1;
  const auto stream = events::synthesize_scene(scene);
  bool ok = stream.events.size() == 3;
  for (std::size_t i = 0; ok && i < 3; ++i) {
    ok = stream.events[i].t == (i + 1) * 3 * scene.step_us && stream.events[i].p == 1;
  }
  return {"", ok, std::to_string(stream.events.size()) + " events (want t = 3, 6, 9 steps)"};
}

}  // namespace

std::vector<SuiteResult> run_selftest() {
  return {run("nplr", nplr),         run("hippo-n-spectrum", spectrum),
          run("scan", scan_suite),    run("duality", duality),
          run("h2-closed-form", h2_closed_form), run("events-ramp", event_ramp)};
}

}  // namespace ssmev
