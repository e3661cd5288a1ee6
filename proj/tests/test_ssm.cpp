#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "ssmev/rng.hpp"
#include "ssmev/ssm.hpp"

using namespace ssmev;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// lambda_bar = 0.5 and B_bar = 1 under the bilinear rule at step 1
ContinuousDiagSSM half_decay() {
  return {{cplx(-2.0 / 3.0)}, CMatrix(1, 1, cplx(4.0 / 3.0)), CMatrix(1, 1, cplx(1.0)), {0.0}, {0.0}};
}

ContinuousDiagSSM random_system(std::size_t ps, std::size_t h, std::uint64_t seed) {
  SsmInitOptions o;
  o.states = ps;
  o.width = h;
  o.seed = seed;
  o.delta_min = 0.01;
  o.delta_max = 0.5;
  return init_ssm(o);
}

RMatrix random_input(std::size_t len, std::size_t h, std::uint64_t seed) {
  CounterRng rng(seed, 5);
  RMatrix u(len, h);
  for (auto& v : u.data()) v = rng.normal();
  return u;
}

double rel_err(const RMatrix& a, const RMatrix& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num = std::max(num, std::abs(a.data()[i] - b.data()[i]));
    den = std::max(den, std::abs(b.data()[i]));
  }
  return num / std::max(den, 1e-300);
}

// States x_k of the discretized system (L x P), from the scan directly.
CMatrix states_of(const ContinuousDiagSSM& s, const RMatrix& u) {
  const auto d = discretize(s, 1.0);
  CMatrix bu(u.rows(), s.states());
  for (std::size_t k = 0; k < u.rows(); ++k) {
    for (std::size_t p = 0; p < s.states(); ++p) {
      for (std::size_t i = 0; i < u.cols(); ++i) bu(k, p) += d.b_bar(p, i) * u(k, i);
    }
  }
  return scan_sequential(ScanSequence::time_invariant(d.lambda_bar, bu));
}

ContinuousDiagSSM subsystem(const ContinuousDiagSSM& s, std::size_t begin, std::size_t end) {
  const std::size_t n = end - begin, h = s.width();
  ContinuousDiagSSM sub{{}, CMatrix(n, h), CMatrix(h, n), std::vector<double>(h, 0.0), {}};
  for (std::size_t p = begin; p < end; ++p) {
    sub.lambda.push_back(s.lambda[p]);
    sub.log_delta.push_back(s.log_delta[p]);
    for (std::size_t i = 0; i < h; ++i) {
      sub.b_tilde(p - begin, i) = s.b_tilde(p, i);
      sub.c_tilde(i, p - begin) = s.c_tilde(i, p);
    }
  }
  return sub;
}

}  // namespace

TEST_CASE("apply_recurrent examples") {
  RMatrix u(3, 1);
  u(0, 0) = 1.0;
  const auto out = apply_recurrent(half_decay(), u, {}, 1.0, {});
  CHECK(out.y(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(out.y(1, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(out.y(2, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(std::abs(out.final_state[0] - 0.25) < 1e-14);

  SUBCASE("pure feedthrough") {
    auto s = random_system(4, 3, 1);
    s.c_tilde = CMatrix(3, 4);
    s.d = {1.0, 1.0, 1.0};
    const RMatrix v = random_input(20, 3, 2);
    CHECK(apply_recurrent(s, v, {}, 1.0, {}).y == v);
  }
  SUBCASE("free response from a carried state") {
    const auto s = random_system(6, 2, 3);
    const RMatrix zero(12, 2);
    std::vector<cplx> x0(6);
    CounterRng rng(4);
    for (auto& v : x0) v = cplx(rng.normal(), rng.normal());
    const auto y = apply_recurrent(s, zero, x0, 1.0, {}).y;
    const auto d = discretize(s, 1.0);
    for (std::size_t k = 0; k < 12; ++k) {
      for (std::size_t o = 0; o < 2; ++o) {
        cplx acc = 0.0;
        for (std::size_t p = 0; p < 6; ++p) {
          acc += s.c_tilde(o, p) * std::pow(d.lambda_bar[p], static_cast<double>(k + 1)) * x0[p];
        }
        CHECK(y(k, o) == doctest::Approx(acc.real()).epsilon(1e-12).scale(1.0));
      }
    }
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(apply_recurrent(half_decay(), u, {}, 0.0, {}), std::invalid_argument);
    CHECK_THROWS_AS(apply_recurrent(half_decay(), RMatrix(3, 2), {}, 1.0, {}), std::invalid_argument);
    LayerOptions bi;
    bi.bidirectional = true;
    SsmInitOptions o;
    o.states = 4;
    o.width = 1;
    o.bidirectional = true;
    const auto b = init_ssm(o);
    const std::vector<cplx> carry(4);
    CHECK_NOTHROW(apply_recurrent(b, u, {}, 1.0, {}, bi));
    CHECK_THROWS_AS(apply_recurrent(b, u, carry, 1.0, {}, bi), std::invalid_argument);
  }
}

TEST_CASE("bidirectional output adds the reverse-time states") {
  SsmInitOptions o;
  o.states = 3;
  o.width = 2;
  o.seed = 6;
  o.bidirectional = true;
  const auto b = init_ssm(o);
  const RMatrix u = random_input(15, 2, 7);
  LayerOptions bi;
  bi.bidirectional = true;
  const auto y = apply_recurrent(b, u, {}, 1.0, {}, bi).y;

  ContinuousDiagSSM fwd = b, bwd = b;
  fwd.c_tilde = CMatrix(2, 3);
  bwd.c_tilde = CMatrix(2, 3);
  for (std::size_t o2 = 0; o2 < 2; ++o2) {
    for (std::size_t p = 0; p < 3; ++p) {
      fwd.c_tilde(o2, p) = b.c_tilde(o2, p);
      bwd.c_tilde(o2, p) = b.c_tilde(o2, 3 + p);
    }
  }
  bwd.d = {0.0, 0.0};
  RMatrix ur(15, 2);
  for (std::size_t k = 0; k < 15; ++k) {
    for (std::size_t i = 0; i < 2; ++i) ur(k, i) = u(14 - k, i);
  }
  const auto yf = apply_recurrent(fwd, u, {}, 1.0, {}).y;
  const auto yb = apply_recurrent(bwd, ur, {}, 1.0, {}).y;
  for (std::size_t k = 0; k < 15; ++k) {
    for (std::size_t i = 0; i < 2; ++i) {
      CHECK(y(k, i) == doctest::Approx(yf(k, i) + yb(14 - k, i)).epsilon(1e-12));
    }
  }
}

TEST_CASE("materialize_kernel") {
  const auto k = materialize_kernel(half_decay(), 6, 1.0, {});
  for (std::size_t lag = 0; lag < 6; ++lag) {
    CHECK(k.at(lag, 0, 0) == doctest::Approx(std::pow(0.5, lag)).epsilon(1e-14));
  }
  auto z = random_system(5, 2, 2);
  z.c_tilde = CMatrix(2, 5);
  for (double v : materialize_kernel(z, 10, 1.0, {}).taps) CHECK(v == 0.0);
  CHECK_THROWS(materialize_kernel(z, 0, 1.0, {}));

  SUBCASE("state basis sums to the kernel") {
    const auto s = random_system(4, 2, 9);
    const auto basis = state_basis(s, 8, 1.0);
    const auto ker = materialize_kernel(s, 8, 1.0, {});
    for (std::size_t lag = 0; lag < 8; ++lag) {
      for (std::size_t o = 0; o < 2; ++o) {
        for (std::size_t i = 0; i < 2; ++i) {
          cplx acc = 0.0;
          for (std::size_t p = 0; p < 4; ++p) acc += s.c_tilde(o, p) * basis[lag](p, i);
          CHECK(ker.at(lag, o, i) == doctest::Approx(acc.real()).epsilon(1e-12).scale(1.0));
        }
      }
    }
  }
}

TEST_CASE("convolution and recurrence agree") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t ps = 4 + 3 * seed, h = 1 + seed % 8;
    const auto s = random_system(ps, h, seed);
    const RMatrix u = random_input(256, h, seed);
    for (bool masked : {false, true}) {
      const BandlimitConfig bl{masked, 0.5};
      const auto rec = apply_recurrent(s, u, {}, 0.7, bl).y;
      const auto conv = apply_convolutional(s, u, 0.7, bl);
      CHECK(rel_err(conv, rec) <= 1e-8);
    }
  }
}

TEST_CASE("MIMO state is the sum of the SISO states") {
  const auto s = random_system(8, 4, 21);
  const RMatrix u = random_input(64, 4, 22);
  const CMatrix mimo = states_of(s, u);
  CMatrix total(64, 8);
  for (std::size_t h = 0; h < 4; ++h) {
    ContinuousDiagSSM siso{s.lambda, CMatrix(8, 1), CMatrix(1, 8), {0.0}, s.log_delta};
    RMatrix uh(64, 1);
    for (std::size_t p = 0; p < 8; ++p) siso.b_tilde(p, 0) = s.b_tilde(p, h);
    for (std::size_t k = 0; k < 64; ++k) uh(k, 0) = u(k, h);
    const CMatrix x = states_of(siso, uh);
    for (std::size_t i = 0; i < total.size(); ++i) total.data()[i] += x.data()[i];
  }
  CHECK(max_abs_diff(mimo, total) <= 1e-10 * std::max(1.0, max_abs(mimo)));

  // y_k = Re(C sum_h x_k^(h)) + d u_k
  const auto y = apply_recurrent(s, u, {}, 1.0, {}).y;
  for (std::size_t k = 0; k < 64; ++k) {
    for (std::size_t o = 0; o < 4; ++o) {
      cplx acc = 0.0;
      for (std::size_t p = 0; p < 8; ++p) acc += s.c_tilde(o, p) * total(k, p);
      CHECK(std::abs(y(k, o) - acc.real() - s.d[o] * u(k, o)) <= 1e-10);
    }
  }
}

TEST_CASE("block-diagonal system is the sum of its subsystems") {
  SsmInitOptions o;
  o.states = 12;
  o.width = 3;
  o.blocks = 3;
  o.seed = 31;
  const auto s = init_ssm(o);
  const RMatrix u = random_input(100, 3, 32);
  const auto y = apply_recurrent(s, u, {}, 1.0, {}).y;
  RMatrix sum(100, 3);
  for (std::size_t k = 0; k < 100; ++k) {
    for (std::size_t i = 0; i < 3; ++i) sum(k, i) = s.d[i] * u(k, i);
  }
  for (std::size_t j = 0; j < 3; ++j) {
    const auto part = apply_recurrent(subsystem(s, 4 * j, 4 * j + 4), u, {}, 1.0, {}).y;
    for (std::size_t i = 0; i < sum.size(); ++i) sum.data()[i] += part.data()[i];
  }
  for (std::size_t i = 0; i < sum.size(); ++i) CHECK(std::abs(sum.data()[i] - y.data()[i]) <= 1e-10);
}

TEST_CASE("halving the rate on a doubled grid converges at second order") {
  // Input sample k summarizes the interval ending at t_k; it is taken at the
  // interval midpoint so the comparison isolates the discretization error.
  ContinuousDiagSSM s{{cplx(-1.0, 3.0), cplx(-0.4, 0.0)}, CMatrix(2, 1, cplx(1.0)),
                      CMatrix(1, 2, cplx(1.0)), {0.0}, {0.0, 0.0}};
  auto mismatch = [&](double dt) {
    s.log_delta = {std::log(dt), std::log(dt)};
    const auto n = static_cast<std::size_t>(std::llround(4.0 / dt));
    RMatrix coarse(n, 1), fine(2 * n, 1);
    for (std::size_t k = 0; k < n; ++k) coarse(k, 0) = std::sin((k + 0.5) * dt);
    for (std::size_t k = 0; k < 2 * n; ++k) fine(k, 0) = std::sin((k + 0.5) * dt / 2);
    const auto yc = apply_recurrent(s, coarse, {}, 1.0, {}).y;
    const auto yf = apply_recurrent(s, fine, {}, 0.5, {}).y;
    double worst = 0.0;
    for (std::size_t k = 0; k < n; ++k) worst = std::max(worst, std::abs(yc(k, 0) - yf(2 * k + 1, 0)));
    return worst;
  };
  double prev = mismatch(0.1);
  for (double dt : {0.05, 0.025, 0.0125}) {
    const double err = mismatch(dt);
    CHECK(prev / err >= 3.5);
    prev = err;
  }
  CHECK(prev < 1e-4);
}

TEST_CASE("state carry across chunks") {
  const auto s = random_system(16, 3, 41);
  const RMatrix u = random_input(90, 3, 42);
  const auto whole = apply_recurrent(s, u, {}, 1.0, {});
  RMatrix a(50, 3), b(40, 3);
  for (std::size_t k = 0; k < 90; ++k) {
    for (std::size_t i = 0; i < 3; ++i) (k < 50 ? a(k, i) : b(k - 50, i)) = u(k, i);
  }
  const auto first = apply_recurrent(s, a, {}, 1.0, {});
  const auto second = apply_recurrent(s, b, first.final_state, 1.0, {});
  for (std::size_t k = 0; k < 90; ++k) {
    for (std::size_t i = 0; i < 3; ++i) {
      const double got = k < 50 ? first.y(k, i) : second.y(k - 50, i);
      CHECK(std::abs(got - whole.y(k, i)) <= 1e-12);
    }
  }
  for (std::size_t p = 0; p < 16; ++p) {
    CHECK(std::abs(second.final_state[p] - whole.final_state[p]) <= 1e-12);
  }
}

TEST_CASE("sequential and parallel scans give the same layer output") {
  const auto s = random_system(8, 2, 51);
  const RMatrix u = random_input(300, 2, 52);
  LayerOptions seq, par;
  seq.parallel_scan = false;
  par.scan = {4, 16};
  const auto a = apply_recurrent(s, u, {}, 1.0, {}, seq).y;
  const auto b = apply_recurrent(s, u, {}, 1.0, {}, par).y;
  CHECK(rel_err(a, b) <= 1e-12);
}

TEST_CASE("effective_frequency") {
  const std::vector<cplx> lam{cplx(-0.5, kTwoPi), cplx(-0.5, -3 * kTwoPi), cplx(-1.0, 0.0)};
  const std::vector<double> ld{0.0, std::log(0.1), std::log(0.3)};
  const auto f = effective_frequency(lam, ld, 1.0);
  CHECK(f[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(f[1] == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(f[2] == 0.0);
  // measured on the training grid, so independent of the deploy rate
  const auto g = effective_frequency(lam, ld, 0.25);
  for (std::size_t p = 0; p < 3; ++p) CHECK(g[p] == doctest::Approx(f[p]).epsilon(1e-14));
  CHECK_THROWS(effective_frequency(lam, ld, 0.0));
}

TEST_CASE("bandlimit_mask") {
  CMatrix c(2, 2, cplx(1.0, 1.0));
  const std::vector<double> f{0.2, 0.3};
  const auto m = bandlimit_mask(c, f, 0.5);
  for (std::size_t o = 0; o < 2; ++o) {
    CHECK(m(o, 0) == c(o, 0));
    CHECK(m(o, 1) == cplx(0.0));
  }
  const std::vector<double> f1{0.3};
  CHECK(bandlimit_mask(CMatrix(1, 1, cplx(2.0)), f1, 1.0)(0, 0) == cplx(2.0));

  const std::vector<double> f0{0.0, 1e-9, 0.1};
  const auto z = bandlimit_mask(CMatrix(1, 3, cplx(1.0)), f0, 0.0);
  CHECK(z(0, 0) == cplx(1.0));
  CHECK(z(0, 1) == cplx(0.0));
  CHECK(z(0, 2) == cplx(0.0));

  // boundary f = alpha / 2 is kept
  const std::vector<double> edge{0.25};
  CHECK(bandlimit_mask(CMatrix(1, 1, cplx(1.0)), edge, 0.5)(0, 0) == cplx(1.0));
  CHECK(bandlimit_keep(edge, 0.5)[0] == 1.0);

  // 2P columns use f_{n mod P}
  const auto bi = bandlimit_mask(CMatrix(1, 4, cplx(1.0)), f, 0.5);
  CHECK(bi(0, 2) == cplx(1.0));
  CHECK(bi(0, 3) == cplx(0.0));
  CHECK_THROWS(bandlimit_mask(CMatrix(1, 3, cplx(1.0)), f, 0.5));
  CHECK_THROWS((BandlimitConfig{true, 1.5}).validate());
}

TEST_CASE("masking is idempotent and removes fast basis terms from the kernel") {
  const auto s = random_system(32, 2, 61);
  const auto f = effective_frequency(s.lambda, s.log_delta, 1.0);
  const auto once = bandlimit_mask(s.c_tilde, f, 0.5);
  CHECK(bandlimit_mask(once, f, 0.5) == once);

  ContinuousDiagSSM kept = s;
  std::size_t dropped = 0;
  for (std::size_t p = 0; p < 32; ++p) {
    if (f[p] > 0.25) {
      ++dropped;
      for (std::size_t o = 0; o < 2; ++o) kept.c_tilde(o, p) = 0.0;
    }
  }
  CHECK(dropped > 0);
  const auto masked = materialize_kernel(s, 64, 1.0, {true, 0.5});
  const auto manual = materialize_kernel(kept, 64, 1.0, {});
  CHECK(masked.taps == manual.taps);
  CHECK(effective_c(s, 1.0, {true, 0.5}) == once);
  CHECK(effective_c(s, 1.0, {false, 0.5}) == s.c_tilde);
}

TEST_CASE("retarget") {
  CHECK(retarget(20, 40) == 0.5);
  CHECK(retarget(20, 20) == 1.0);
  CHECK(retarget(20, 200) == doctest::Approx(0.1).epsilon(1e-15));
  CHECK_THROWS_AS(retarget(0, 20), std::invalid_argument);
  CHECK_THROWS_AS(retarget(20, -1), std::invalid_argument);
}
