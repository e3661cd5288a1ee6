#pragma once

#include <string>
#include <vector>

namespace ssmev {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Quick oracle suites for a built binary: NPLR identity, HiPPO-N spectrum,
// scan equivalence, convolution/recurrence duality, H2 closed forms and the
// event ramp. Each suite catches its own exceptions.
std::vector<SuiteResult> run_selftest();

}  // namespace ssmev
