#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "sigseg/common.hpp"
#include "sigseg/stats.hpp"
#include "support/stat_oracles.hpp"

using namespace sigseg;
using namespace sigseg::stats;
using sigseg_test_oracles::brute_force_mw_p;
using sigseg_test_oracles::shapiro_cases;

TEST_CASE("normal quantile and cdf roundtrip") {
  for (double p : {0.001, 0.025, 0.2, 0.5, 0.8, 0.975, 0.999}) {
    CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-10));
  }
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK_THROWS_AS(normal_quantile(0.0), ContractError);
}

TEST_CASE("shapiro-wilk matches the reference oracle within 0.01") {
  for (std::size_t i = 0; i < shapiro_cases().size(); i++) {
    const auto& c = shapiro_cases()[i];
    const StatResult r = shapiro_wilk(c.x);
    INFO("case " << i << " n=" << c.x.size() << " want W=" << c.w
                 << " p=" << c.p << " got W=" << r.statistic << " p=" << r.p_value);
    CHECK(std::fabs(r.statistic - c.w) < 0.01);
    CHECK(std::fabs(r.p_value - c.p) <= 0.01);
  }
}

TEST_CASE("shapiro-wilk qualitative behaviour") {
  // near-uniform data: W stays high
  std::vector<double> linear(30);
  for (int i = 0; i < 30; i++) linear[i] = i + 1.0;
  const StatResult lin = shapiro_wilk(linear);
  CHECK(lin.statistic > 0.95);

  // heavily skewed data: clearly rejected
  std::vector<double> skewed;
  Rng rng(99);
  for (int i = 0; i < 30; i++) skewed.push_back(std::exp(rng.normal()));
  const StatResult sk = shapiro_wilk(skewed);
  CHECK(sk.p_value < 0.05);
  CHECK(sk.reject_null);

  // errors: constant sample, out-of-range n
  std::vector<double> constant(10, 3.3);
  CHECK_THROWS_AS(shapiro_wilk(constant), ConfigError);
  std::vector<double> two = {1.0, 2.0};
  CHECK_THROWS_AS(shapiro_wilk(two), ConfigError);
  std::vector<double> many(51);
  for (int i = 0; i < 51; i++) many[i] = i * 0.37;
  CHECK_THROWS_AS(shapiro_wilk(many), ConfigError);
}

TEST_CASE("shapiro-wilk is invariant under positive affine transforms") {
  Rng rng(7);
  std::vector<double> x(20);
  for (auto& v : x) v = rng.normal();
  const StatResult base = shapiro_wilk(x);
  std::vector<double> shifted(x);
  for (auto& v : shifted) v = 3.0 + 2.5 * v;
  const StatResult moved = shapiro_wilk(shifted);
  CHECK(base.statistic == doctest::Approx(moved.statistic).epsilon(1e-9));
  CHECK(base.p_value == doctest::Approx(moved.p_value).epsilon(1e-9));
}

TEST_CASE("mann-whitney hand cases") {
  // full separation of 3 vs 3: U = 0, exact two-sided p = 2/20
  const std::vector<double> x = {1, 2, 3};
  const std::vector<double> y = {4, 5, 6};
  const StatResult r = mann_whitney(x, y);
  CHECK(r.statistic == 0.0);
  CHECK(r.method == "exact");
  CHECK(r.p_value == doctest::Approx(0.1));
  CHECK(!r.reject_null);

  // identical samples: maximal p
  const std::vector<double> z = {1.5, 2.5, 3.5, 4.5};
  const StatResult same = mann_whitney(z, z);
  CHECK(same.p_value == 1.0);
  CHECK(!same.reject_null);

  CHECK_THROWS_AS(mann_whitney({}, z), ConfigError);
}

TEST_CASE("mann-whitney exact branch equals brute-force enumeration") {
  Rng rng(31);
  for (int n = 1; n <= 5; n++)
    for (int m = 1; m <= 5; m++) {
      // tie-free integer-ish samples
      std::vector<double> pool;
      for (int i = 0; i < n + m; i++) pool.push_back(i + 1.0);
      for (int i = n + m - 1; i > 0; i--)
        std::swap(pool[i], pool[rng.below(static_cast<std::uint32_t>(i + 1))]);
      std::vector<double> x(pool.begin(), pool.begin() + n);
      std::vector<double> y(pool.begin() + n, pool.end());

      const StatResult r = mann_whitney(x, y);
      REQUIRE(r.method == "exact");
      const double want = brute_force_mw_p(x, y);
      INFO("n=" << n << " m=" << m << " U=" << r.statistic);
      CHECK(r.p_value == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("mann-whitney properties") {
  Rng rng(17);
  std::vector<double> x(10), y(10);
  for (auto& v : x) v = rng.normal();
  for (auto& v : y) v = rng.normal() + 0.4;

  // symmetry of the two-sided p
  const StatResult xy = mann_whitney(x, y);
  const StatResult yx = mann_whitney(y, x);
  CHECK(xy.p_value == doctest::Approx(yx.p_value).epsilon(1e-12));

  // rank invariance: adding a constant to both samples changes nothing
  std::vector<double> xs(x), ys(y);
  for (auto& v : xs) v += 100.0;
  for (auto& v : ys) v += 100.0;
  const StatResult moved = mann_whitney(xs, ys);
  CHECK(moved.statistic == xy.statistic);
  CHECK(moved.p_value == doctest::Approx(xy.p_value).epsilon(1e-12));

  // exact vs normal approximation agree for 10 vs 10
  std::vector<double> big_x(x), big_y(y);
  const StatResult exact = mann_whitney(big_x, big_y);
  REQUIRE(exact.method == "exact");
  // force the approximation by inflating n*m past the exact cutoff: compare
  // against a direct recomputation with the same ranks via duplicated data
  // is not rank-preserving, so instead check the approximate formula by hand
  const double mu = 50.0;
  const double sigma = std::sqrt(10.0 * 10.0 * 21.0 / 12.0);
  const double z = std::max(0.0, (std::fabs(exact.statistic - mu) - 0.5) / sigma);
  const double p_approx = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
  CHECK(std::fabs(exact.p_value - p_approx) <= 0.02);
}

TEST_CASE("compare_models protocol") {
  // two identical reports: no rejection anywhere
  std::vector<metrics::SampleMetrics> rows;
  Rng rng(5);
  for (int i = 0; i < 40; i++) {
    metrics::SampleMetrics s;
    s.id = std::to_string(i);
    s.dsc = 0.7 + 0.2 * rng.unit_d();
    s.ssim = 0.8 + 0.15 * rng.unit_d();
    s.sift_rate = 0.6 + 0.3 * rng.unit_d();
    rows.push_back(s);
  }
  const metrics::MetricReport a = metrics::aggregate_report("test", rows);
  const ModelComparison same = compare_models(a, a, 30);
  CHECK(!same.dsc.mw.reject_null);
  CHECK(!same.ssim.mw.reject_null);
  CHECK(!same.sift.mw.reject_null);
  CHECK(same.dsc.mw.p_value == 1.0);
  CHECK(same.dsc.shapiro_a.has_value());
  CHECK(same.dsc.mw.n == 30);

  // constructed separation: strong rejection on dsc
  std::vector<metrics::SampleMetrics> weak_rows;
  for (int i = 0; i < 40; i++) {
    metrics::SampleMetrics s = rows[i];
    s.dsc = 0.05 + 0.1 * rng.unit_d();
    weak_rows.push_back(s);
  }
  const metrics::MetricReport b = metrics::aggregate_report("test", weak_rows);
  const ModelComparison split = compare_models(a, b, 30);
  CHECK(split.dsc.mw.reject_null);
  CHECK(split.dsc.mw.p_value < 1e-6);

  // degenerate side (constant values) still yields a comparison
  std::vector<metrics::SampleMetrics> const_rows;
  for (int i = 0; i < 35; i++) {
    metrics::SampleMetrics s = rows[i];
    s.dsc = 1.0;
    const_rows.push_back(s);
  }
  const metrics::MetricReport c = metrics::aggregate_report("test", const_rows);
  const ModelComparison degen = compare_models(c, b, 30);
  CHECK(!degen.dsc.shapiro_a.has_value());
  CHECK(!degen.dsc.shapiro_a_error.empty());
  CHECK(degen.dsc.mw.reject_null);

  CHECK_THROWS_AS(compare_models(a, b, 2), ConfigError);
}
