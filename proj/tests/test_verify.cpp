// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "danet/gradcheck.hpp"
#include "danet/tensor.hpp"
#include "danet/verify.hpp"

using namespace danet;

namespace {

struct FaultGuard {
  explicit FaultGuard(const std::string& op) { debug::inject_backward_fault(op); }
  ~FaultGuard() { debug::clear_backward_fault(); }
};

}  // namespace

TEST(Verify, AllPropertiesPassOnCleanBuild) {
  const auto results = run_verification(0, 4);
  EXPECT_GE(results.size(), 12u);
  std::set<std::string> names;
  for (const auto& r : results) {
    EXPECT_TRUE(r.passed) << r.name << " worst " << r.worst << " " << r.detail;
    EXPECT_TRUE(names.insert(r.name).second) << "duplicate " << r.name;
  }
}

TEST(Verify, NoSuspectsWhenEverythingPasses) { EXPECT_TRUE(suspect_ops(run_verification(3, 1)).empty()); }

TEST(Verify, DifferentSeedsAlsoPass) {
  for (const auto& r : run_verification(12345, 2)) EXPECT_TRUE(r.passed) << r.name << " " << r.detail;
}

class VerifyFault : public ::testing::TestWithParam<std::string> {};

TEST_P(VerifyFault, InjectedBackwardFaultIsReportedWithItsOp) {
  const FaultGuard guard(GetParam());
  bool any_failed = false;
  const auto results = run_verification(0, 2);
  EXPECT_EQ(suspect_ops(results), std::vector<std::string>{GetParam()});
  for (const auto& r : results) {
    if (r.passed) continue;
    any_failed = true;
    EXPECT_NE(r.detail.find(GetParam()), std::string::npos) << r.name << ": " << r.detail;
  }
  EXPECT_TRUE(any_failed);
}

INSTANTIATE_TEST_SUITE_P(OpKinds, VerifyFault,
                         ::testing::Values("matmul", "transpose2d", "softmax_rows", "reshape", "add", "sub", "mul",
                                           "scale", "scale_by", "relu", "sum", "mean", "select_channel", "conv2d",
                                           "batch_norm", "batch_norm_eval", "upsample_bilinear", "cross_entropy"));

TEST(RelativeError, HandCases) {
  const std::vector<double> a{3, 4}, b{3, 4.5}, tiny_a{1e-9, 0}, tiny_b{2e-9, 0};
  EXPECT_DOUBLE_EQ(relative_error<double>(a, a), 0.0);
  EXPECT_DOUBLE_EQ(relative_error<double>(a, b), 0.5 / std::sqrt(9 + 20.25));
  // Below the 1e-6 floor the difference is scaled by the floor.
  EXPECT_NEAR(relative_error<double>(tiny_a, tiny_b), 1e-3, 1e-15);
}
