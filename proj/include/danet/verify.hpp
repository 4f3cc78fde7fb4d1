// SPDX-License-Identifier: Apache-2.0
//
// Self-check suite behind the `verify` command: invariants, forward oracles
// and finite-difference checks of every backward rule, in double precision.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace danet {

struct PropertyResult {
  std::string name;
  bool passed = false;
  double worst = 0;       // largest error seen
  double tolerance = 0;
  std::string detail;     // failures: the op kinds involved or the exception text
  std::vector<std::string> ops;     // op kinds on the checked graph (gradient checks)
  std::vector<std::string> covers;  // op kinds the check isolates
};

/// Op kinds present in every failing gradient check and not isolated by a
/// passing one: the backward rules most likely at fault.
std::vector<std::string> suspect_ops(const std::vector<PropertyResult>& results);

/// Runs every property with `trials` random cases each.
std::vector<PropertyResult> run_verification(std::uint64_t seed = 0, int trials = 8);

}  // namespace danet
