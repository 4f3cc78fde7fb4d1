// SPDX-License-Identifier: Apache-2.0
//
// The `danet` command line: train, ablate, eval, visualize, verify, gen-data.
//
// Exit codes: 0 success, 1 a verification property failed, 2 usage or
// configuration error, 3 training diverged.
#pragma once

#include <ostream>

namespace danet {

inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailed = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitDiverged = 3;

/// Output directory used when neither --out-dir nor run.out_dir is set.
inline constexpr const char* kOutDirEnv = "DANET_OUT_DIR";
inline constexpr const char* kDefaultOutDir = "danet_out";

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace danet
