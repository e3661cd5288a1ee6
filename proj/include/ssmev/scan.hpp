#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ssmev/numerics.hpp"

namespace ssmev {

// Scan tuple (a, bu) for the diagonal recurrence x_k = a_k * x_{k-1} + bu_k.
struct ScanElement {
  std::vector<cplx> a;
  std::vector<cplx> bu;
};

// L elements of P states each, stored time-major (row k = element k).
struct ScanSequence {
  CMatrix a;
  CMatrix bu;

  std::size_t length() const { return a.rows(); }
  std::size_t states() const { return a.cols(); }

  // a broadcast over time
  static ScanSequence time_invariant(std::span<const cplx> a, CMatrix bu);
};

struct ScanOptions {
  std::size_t threads = 0;            // 0 = parallel::default_threads()
  std::size_t parallel_threshold = 4096;  // L * P work items below which a level runs inline
};

// combine(q_i, q_j) = (a_j * a_i, a_j * bu_i + bu_j): q_i precedes q_j.
ScanElement combine(const ScanElement& earlier, const ScanElement& later);

// Returns the L x P states. prev_state may be empty (zero state).
CMatrix scan_sequential(const ScanSequence& elems, std::span<const cplx> prev_state = {},
                        bool reverse = false);

// Recursive odd/even associative scan. The combine tree depends only on L, so
// results are bit-identical for every thread count.
CMatrix scan_parallel(const ScanSequence& elems, std::span<const cplx> prev_state = {},
                      bool reverse = false, const ScanOptions& opts = {});

}  // namespace ssmev
