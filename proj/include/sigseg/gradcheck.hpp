#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sigseg {

struct GradCheckResult {
  std::string op;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckOptions {
  std::uint64_t seed = 1;
  float h = 1e-3f;          // central-difference step
  double tolerance = 1e-2;  // max elementwise relative error
  // Self-test hook: corrupts the named case's analytic gradient so the
  // suite can prove it actually detects broken backward passes.
  std::string inject_error_for;
};

// Central finite-difference comparison for every differentiable operator on
// small seed-fixed tensors. Relative error uses
// |ga - gfd| / max(|ga|, |gfd|, 0.1); the floor absorbs float32
// finite-difference noise on near-zero gradients.
std::vector<GradCheckResult> run_gradient_checks(const GradCheckOptions& opts = {});

}  // namespace sigseg
