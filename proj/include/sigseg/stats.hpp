#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sigseg/metrics.hpp"

namespace sigseg::stats {

struct StatResult {
  std::string test;       // "shapiro-wilk" or "mann-whitney"
  double statistic = 0.0; // W for Shapiro-Wilk, U (of x) for Mann-Whitney
  double rank_sum_w = 0.0;  // Mann-Whitney only: rank sum of x
  double p_value = 1.0;
  double alpha = 0.05;
  bool reject_null = false;
  int n = 0;
  int m = 0;              // second sample size (Mann-Whitney)
  std::string method;     // "royston", "exact" or "normal-approx"
};

// Royston's approximation of the Shapiro-Wilk W test, valid for
// 3 <= n <= 50 (larger samples are rejected rather than silently
// approximated). Throws ConfigError on a constant sample.
StatResult shapiro_wilk(std::span<const double> x);

// Two-sided Wilcoxon-Mann-Whitney rank-sum test with midranks for ties.
// Tie-free samples with n*m <= 400 get an exact p-value from the full U
// distribution with p = min(1, 2 * min(P(U <= u), P(U >= u))); everything
// else uses the normal approximation with tie and continuity corrections.
StatResult mann_whitney(std::span<const double> x, std::span<const double> y);

double normal_cdf(double z);
double normal_quantile(double p);

struct MetricComparison {
  std::optional<StatResult> shapiro_a;
  std::optional<StatResult> shapiro_b;
  std::string shapiro_a_error;  // set when the test is not applicable
  std::string shapiro_b_error;
  StatResult mw;
};

struct ModelComparison {
  int k = 30;
  double alpha = 0.05;
  MetricComparison dsc, ssim, sift;
};

// The comparison protocol: per metric, draw k per-sample values from each
// report (seeded subsampling when a report holds more), test each side for
// normality, then compare the two samples with Mann-Whitney.
ModelComparison compare_models(const metrics::MetricReport& a,
                               const metrics::MetricReport& b, int k = 30);

void write_comparison_json(const std::filesystem::path& path,
                           const ModelComparison& cmp);

}  // namespace sigseg::stats
