#include "ssmev/scan.hpp"

#include <algorithm>
#include <stdexcept>

#include "ssmev/parallel.hpp"

namespace ssmev {

ScanSequence ScanSequence::time_invariant(std::span<const cplx> a, CMatrix bu) {
  if (bu.cols() != a.size()) {
    throw std::invalid_argument("ScanSequence: bu must have one column per state");
  }
  CMatrix tiled(bu.rows(), a.size());
  for (std::size_t k = 0; k < bu.rows(); ++k) {
    std::copy(a.begin(), a.end(), tiled.row(k).begin());
  }
  return {std::move(tiled), std::move(bu)};
}

ScanElement combine(const ScanElement& earlier, const ScanElement& later) {
  if (earlier.a.size() != later.a.size() || earlier.bu.size() != later.bu.size() ||
      earlier.a.size() != earlier.bu.size()) {
    throw std::invalid_argument("combine: element shapes differ");
  }
  ScanElement out;
  out.a.resize(earlier.a.size());
  out.bu.resize(earlier.bu.size());
  for (std::size_t p = 0; p < out.a.size(); ++p) {
    out.a[p] = later.a[p] * earlier.a[p];
    out.bu[p] = later.a[p] * earlier.bu[p] + later.bu[p];
  }
  return out;
}

namespace {

void check_sequence(const ScanSequence& elems, std::span<const cplx> prev_state) {
  if (elems.length() == 0) throw std::invalid_argument("scan: sequence must be non-empty");
  if (elems.a.rows() != elems.bu.rows() || elems.a.cols() != elems.bu.cols()) {
    throw std::invalid_argument("scan: a and bu shapes differ");
  }
  if (!prev_state.empty() && prev_state.size() != elems.states()) {
    throw std::invalid_argument("scan: prev_state must have P entries");
  }
}

// Elements in scan order with prev_state folded into the first forced term:
// bu_1 <- a_1 * prev + bu_1.
ScanSequence ordered(const ScanSequence& elems, std::span<const cplx> prev_state,
                     bool reverse) {
  ScanSequence seq = elems;
  if (reverse) {
    const std::size_t len = elems.length();
    for (std::size_t k = 0; k < len; ++k) {
      std::copy(elems.a.row(len - 1 - k).begin(), elems.a.row(len - 1 - k).end(),
                seq.a.row(k).begin());
      std::copy(elems.bu.row(len - 1 - k).begin(), elems.bu.row(len - 1 - k).end(),
                seq.bu.row(k).begin());
    }
  }
  if (!prev_state.empty()) {
    auto a0 = seq.a.row(0);
    auto b0 = seq.bu.row(0);
    for (std::size_t p = 0; p < prev_state.size(); ++p) b0[p] += a0[p] * prev_state[p];
  }
  return seq;
}

CMatrix restore_order(CMatrix states, bool reverse) {
  if (!reverse) return states;
  const std::size_t len = states.rows();
  for (std::size_t k = 0; k < len / 2; ++k) {
    std::swap_ranges(states.row(k).begin(), states.row(k).end(),
                     states.row(len - 1 - k).begin());
  }
  return states;
}

struct ScanContext {
  std::size_t states;
  std::size_t grain_rows;
  std::size_t threads;

  template <typename F>
  void for_rows(std::size_t rows, F&& body) const {
    if (rows <= grain_rows || threads <= 1) {
      for (std::size_t i = 0; i < rows; ++i) body(i);
      return;
    }
    parallel::parallel_for(
        rows, grain_rows,
        [&](std::size_t begin, std::size_t end) {
          for (std::size_t i = begin; i < end; ++i) body(i);
        },
        threads);
  }
};

inline void combine_rows(const cplx* ai, const cplx* bi, const cplx* aj, const cplx* bj,
                         cplx* out_a, cplx* out_b, std::size_t states) {
  for (std::size_t p = 0; p < states; ++p) {
    const cplx a_later = aj[p];
    out_a[p] = a_later * ai[p];
    out_b[p] = a_later * bi[p] + bj[p];
  }
}

// Odd/even recursion: reduce adjacent pairs, scan the reduced sequence, then
// fill the even positions from the scanned odd ones.
void scan_recursive(const cplx* a, const cplx* b, std::size_t n, cplx* out_a, cplx* out_b,
                    const ScanContext& ctx) {
  const std::size_t ps = ctx.states;
  if (n < 2) {
    std::copy(a, a + n * ps, out_a);
    std::copy(b, b + n * ps, out_b);
    return;
  }
  const std::size_t m = n / 2;
  std::vector<cplx> reduced_a(m * ps), reduced_b(m * ps);
  ctx.for_rows(m, [&](std::size_t i) {
    combine_rows(a + 2 * i * ps, b + 2 * i * ps, a + (2 * i + 1) * ps, b + (2 * i + 1) * ps,
                 reduced_a.data() + i * ps, reduced_b.data() + i * ps, ps);
  });

  std::vector<cplx> odd_a(m * ps), odd_b(m * ps);
  scan_recursive(reduced_a.data(), reduced_b.data(), m, odd_a.data(), odd_b.data(), ctx);

  // odd positions 2i + 1 come straight from the reduced scan
  ctx.for_rows(m, [&](std::size_t i) {
    std::copy(odd_a.data() + i * ps, odd_a.data() + (i + 1) * ps, out_a + (2 * i + 1) * ps);
    std::copy(odd_b.data() + i * ps, odd_b.data() + (i + 1) * ps, out_b + (2 * i + 1) * ps);
  });
  // position 0 is the first element; position 2i combines odd[i - 1] with elem 2i
  std::copy(a, a + ps, out_a);
  std::copy(b, b + ps, out_b);
  const std::size_t evens = (n + 1) / 2;
  ctx.for_rows(evens - 1, [&](std::size_t k) {
    const std::size_t i = k + 1;
    combine_rows(odd_a.data() + (i - 1) * ps, odd_b.data() + (i - 1) * ps, a + 2 * i * ps,
                 b + 2 * i * ps, out_a + 2 * i * ps, out_b + 2 * i * ps, ps);
  });
}

}  // namespace

CMatrix scan_sequential(const ScanSequence& elems, std::span<const cplx> prev_state,
                        bool reverse) {
  check_sequence(elems, prev_state);
  const std::size_t len = elems.length();
  const std::size_t ps = elems.states();
  CMatrix states(len, ps);
  std::vector<cplx> x(ps, cplx(0.0, 0.0));
  if (!prev_state.empty()) std::copy(prev_state.begin(), prev_state.end(), x.begin());
  for (std::size_t step = 0; step < len; ++step) {
    const std::size_t k = reverse ? len - 1 - step : step;
    const auto a = elems.a.row(k);
    const auto bu = elems.bu.row(k);
    auto out = states.row(k);
    for (std::size_t p = 0; p < ps; ++p) {
      x[p] = a[p] * x[p] + bu[p];
      out[p] = x[p];
    }
  }
  return states;
}

CMatrix scan_parallel(const ScanSequence& elems, std::span<const cplx> prev_state,
                      bool reverse, const ScanOptions& opts) {
  check_sequence(elems, prev_state);
  const ScanSequence seq = ordered(elems, prev_state, reverse);
  const std::size_t len = seq.length();
  const std::size_t ps = seq.states();
  ScanContext ctx{ps, std::max<std::size_t>(1, opts.parallel_threshold / std::max<std::size_t>(ps, 1)),
                  opts.threads == 0 ? parallel::default_threads() : opts.threads};
  CMatrix out_a(len, ps);
  CMatrix out_b(len, ps);
  scan_recursive(seq.a.data().data(), seq.bu.data().data(), len, out_a.data().data(),
                 out_b.data().data(), ctx);
  return restore_order(std::move(out_b), reverse);
}

}  // namespace ssmev
