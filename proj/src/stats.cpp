#include "sigseg/stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "sigseg/common.hpp"

namespace sigseg::stats {

using nlohmann::json;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double normal_quantile(double p) {
  if (p <= 0.0 || p >= 1.0)
    throw ContractError("normal_quantile: p must lie strictly inside (0, 1)");
  // Acklam's rational approximation refined with one Halley step
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

StatResult shapiro_wilk(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  if (n < 3 || n > 50)
    throw ConfigError("shapiro_wilk: supported sample sizes are 3..50, got " +
                      std::to_string(n));
  std::vector<double> sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  if (sorted.front() == sorted.back())
    throw ConfigError("shapiro_wilk: sample has zero variance");

  // expected normal order statistics (Blom scores)
  std::vector<double> m(n);
  for (int i = 0; i < n; i++)
    m[i] = normal_quantile((i + 1 - 0.375) / (n + 0.25));
  double m2 = 0.0;
  for (double v : m) m2 += v * v;

  // Royston's polynomial-corrected weights
  std::vector<double> a(n);
  if (n == 3) {
    a[0] = -std::sqrt(0.5);
    a[1] = 0.0;
    a[2] = std::sqrt(0.5);
  } else {
    const double u = 1.0 / std::sqrt(static_cast<double>(n));
    const double cn = m[n - 1] / std::sqrt(m2);
    const double an = cn + 0.221157 * u - 0.147981 * u * u -
                      2.071190 * u * u * u + 4.434685 * u * u * u * u -
                      2.706056 * u * u * u * u * u;
    if (n > 5) {
      const double cn1 = m[n - 2] / std::sqrt(m2);
      const double an1 = cn1 + 0.042981 * u - 0.293762 * u * u -
                         1.752461 * u * u * u + 5.682633 * u * u * u * u -
                         3.582633 * u * u * u * u * u;
      const double phi = (m2 - 2.0 * m[n - 1] * m[n - 1] - 2.0 * m[n - 2] * m[n - 2]) /
                         (1.0 - 2.0 * an * an - 2.0 * an1 * an1);
      const double rphi = std::sqrt(phi);
      for (int i = 2; i < n - 2; i++) a[i] = m[i] / rphi;
      a[n - 1] = an;
      a[n - 2] = an1;
      a[0] = -an;
      a[1] = -an1;
    } else {
      const double phi = (m2 - 2.0 * m[n - 1] * m[n - 1]) / (1.0 - 2.0 * an * an);
      const double rphi = std::sqrt(phi);
      for (int i = 1; i < n - 1; i++) a[i] = m[i] / rphi;
      a[n - 1] = an;
      a[0] = -an;
    }
  }

  double mean = 0.0;
  for (double v : sorted) mean += v;
  mean /= n;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < n; i++) {
    num += a[i] * sorted[i];
    den += (sorted[i] - mean) * (sorted[i] - mean);
  }
  double w = num * num / den;
  if (w > 1.0) w = 1.0;

  double p;
  if (n == 3) {
    const double pi6 = 6.0 / 3.14159265358979323846;
    const double stqr = std::asin(std::sqrt(0.75));
    p = pi6 * (std::asin(std::sqrt(w)) - stqr);
    p = std::min(1.0, std::max(0.0, p));
  } else if (n <= 11) {
    const double g = -std::log((0.459 * n - 2.273) - std::log(1.0 - w));
    const double mu = 0.5440 - 0.39978 * n + 0.025054 * n * n - 0.0006714 * n * n * n;
    const double sigma = std::exp(1.3822 - 0.77857 * n + 0.062767 * n * n -
                                  0.0020322 * n * n * n);
    p = 1.0 - normal_cdf((g - mu) / sigma);
  } else {
    const double ln = std::log(static_cast<double>(n));
    const double g = std::log(1.0 - w);
    const double mu = -1.5861 - 0.31082 * ln - 0.083751 * ln * ln + 0.0038915 * ln * ln * ln;
    const double sigma = std::exp(-0.4803 - 0.082676 * ln + 0.0030302 * ln * ln);
    p = 1.0 - normal_cdf((g - mu) / sigma);
  }

  StatResult r;
  r.test = "shapiro-wilk";
  r.statistic = w;
  r.p_value = p;
  r.reject_null = p < r.alpha;
  r.n = n;
  r.method = "royston";
  return r;
}

namespace {

// midranks of the combined sample; also reports the tie-correction term
// sum(t^3 - t) over tie groups
struct Ranked {
  std::vector<double> ranks_x;
  double tie_term = 0.0;
  bool has_ties = false;
};

Ranked rank_combined(std::span<const double> x, std::span<const double> y) {
  const int n = static_cast<int>(x.size());
  const int total = n + static_cast<int>(y.size());
  std::vector<std::pair<double, int>> all;  // value, origin index (<n is x)
  all.reserve(total);
  for (int i = 0; i < n; i++) all.emplace_back(x[i], i);
  for (std::size_t j = 0; j < y.size(); j++)
    all.emplace_back(y[j], n + static_cast<int>(j));
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  Ranked out;
  out.ranks_x.resize(n);
  int i = 0;
  while (i < total) {
    int j = i;
    while (j + 1 < total && all[j + 1].first == all[i].first) j++;
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    const int t = j - i + 1;
    if (t > 1) {
      out.has_ties = true;
      out.tie_term += static_cast<double>(t) * t * t - t;
    }
    for (int q = i; q <= j; q++)
      if (all[q].second < n) out.ranks_x[all[q].second] = rank;
    i = j + 1;
  }
  return out;
}

// full distribution of the U statistic for tie-free samples: f(i, j, u)
// counts rank arrangements, f(i,j,u) = f(i-1,j,u-j) + f(i,j-1,u).
// Counts stay below 2^53 for n*m <= 400, so doubles hold them exactly.
std::vector<double> u_distribution(int n, int m) {
  std::vector<std::vector<std::vector<double>>> f(
      static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; i++) {
    f[i].resize(static_cast<std::size_t>(m) + 1);
    for (int j = 0; j <= m; j++) {
      f[i][j].assign(static_cast<std::size_t>(i) * j + 1, 0.0);
      if (i == 0 || j == 0) {
        f[i][j][0] = 1.0;
        continue;
      }
      for (int u = 0; u <= i * j; u++) {
        double v = 0.0;
        if (u - j >= 0 && u - j <= (i - 1) * j) v += f[i - 1][j][u - j];
        if (u <= i * (j - 1)) v += f[i][j - 1][u];
        f[i][j][u] = v;
      }
    }
  }
  return f[n][m];
}

}  // namespace

StatResult mann_whitney(std::span<const double> x, std::span<const double> y) {
  const int n = static_cast<int>(x.size());
  const int m = static_cast<int>(y.size());
  if (n < 1 || m < 1) throw ConfigError("mann_whitney: samples must be non-empty");

  const Ranked ranked = rank_combined(x, y);
  double r1 = 0.0;
  for (double r : ranked.ranks_x) r1 += r;
  const double u1 = r1 - static_cast<double>(n) * (n + 1) / 2.0;

  StatResult res;
  res.test = "mann-whitney";
  res.statistic = u1;
  res.rank_sum_w = r1;
  res.n = n;
  res.m = m;

  const double nm = static_cast<double>(n) * m;
  if (!ranked.has_ties && nm <= 400.0) {
    const auto dist = u_distribution(n, m);
    double total = 0.0;
    for (double c : dist) total += c;
    const int u_obs = static_cast<int>(std::lround(u1));
    double p_le = 0.0, p_ge = 0.0;
    for (int u = 0; u < static_cast<int>(dist.size()); u++) {
      if (u <= u_obs) p_le += dist[u];
      if (u >= u_obs) p_ge += dist[u];
    }
    p_le /= total;
    p_ge /= total;
    res.p_value = std::min(1.0, 2.0 * std::min(p_le, p_ge));
    res.method = "exact";
  } else {
    const double total = n + m;
    const double mu = nm / 2.0;
    const double tie_adj = ranked.tie_term / (total * (total - 1.0));
    const double var = nm / 12.0 * ((total + 1.0) - tie_adj);
    if (var <= 0.0) {
      res.p_value = 1.0;  // every observation identical
    } else {
      const double z = std::max(0.0, (std::fabs(u1 - mu) - 0.5) / std::sqrt(var));
      res.p_value = std::min(1.0, 2.0 * (1.0 - normal_cdf(z)));
    }
    res.method = "normal-approx";
  }
  res.reject_null = res.p_value < res.alpha;
  return res;
}

namespace {

std::vector<double> draw_k(const std::vector<double>& values, int k) {
  if (static_cast<int>(values.size()) <= k) return values;
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(0x434F4D50ull /* "COMP" */, values.size(), k));
  for (int i = static_cast<int>(idx.size()) - 1; i > 0; i--)
    std::swap(idx[i], idx[rng.below(static_cast<std::uint32_t>(i + 1))]);
  std::vector<double> out(k);
  for (int i = 0; i < k; i++) out[i] = values[idx[i]];
  return out;
}

MetricComparison compare_metric(const std::vector<double>& a,
                                const std::vector<double>& b, int k) {
  MetricComparison cmp;
  const std::vector<double> xa = draw_k(a, k);
  const std::vector<double> xb = draw_k(b, k);
  try {
    cmp.shapiro_a = shapiro_wilk(xa);
  } catch (const Error& e) {
    cmp.shapiro_a_error = e.what();
  }
  try {
    cmp.shapiro_b = shapiro_wilk(xb);
  } catch (const Error& e) {
    cmp.shapiro_b_error = e.what();
  }
  cmp.mw = mann_whitney(xa, xb);
  return cmp;
}

json stat_to_json(const StatResult& r) {
  json j{{"test", r.test},         {"statistic", r.statistic},
         {"p_value", r.p_value},   {"alpha", r.alpha},
         {"reject_null", r.reject_null}, {"n", r.n},
         {"method", r.method}};
  if (r.test == "mann-whitney") {
    j["m"] = r.m;
    j["rank_sum_w"] = r.rank_sum_w;
  }
  return j;
}

json comparison_to_json(const MetricComparison& c) {
  json j;
  j["shapiro_a"] = c.shapiro_a ? stat_to_json(*c.shapiro_a)
                               : json{{"error", c.shapiro_a_error}};
  j["shapiro_b"] = c.shapiro_b ? stat_to_json(*c.shapiro_b)
                               : json{{"error", c.shapiro_b_error}};
  j["mann_whitney"] = stat_to_json(c.mw);
  return j;
}

}  // namespace

ModelComparison compare_models(const metrics::MetricReport& a,
                               const metrics::MetricReport& b, int k) {
  if (k < 3) throw ConfigError("compare_models: k must be at least 3");
  auto column = [](const metrics::MetricReport& r, auto getter) {
    std::vector<double> out;
    out.reserve(r.per_sample.size());
    for (const auto& s : r.per_sample) out.push_back(getter(s));
    return out;
  };
  ModelComparison cmp;
  cmp.k = k;
  cmp.dsc = compare_metric(
      column(a, [](const auto& s) { return s.dsc; }),
      column(b, [](const auto& s) { return s.dsc; }), k);
  cmp.ssim = compare_metric(
      column(a, [](const auto& s) { return s.ssim; }),
      column(b, [](const auto& s) { return s.ssim; }), k);
  cmp.sift = compare_metric(
      column(a, [](const auto& s) { return s.sift_rate; }),
      column(b, [](const auto& s) { return s.sift_rate; }), k);
  return cmp;
}

void write_comparison_json(const std::filesystem::path& path,
                           const ModelComparison& cmp) {
  const json doc{{"k", cmp.k},
                 {"alpha", cmp.alpha},
                 {"metrics",
                  {{"dsc", comparison_to_json(cmp.dsc)},
                   {"ssim", comparison_to_json(cmp.ssim)},
                   {"sift", comparison_to_json(cmp.sift)}}}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("stats: cannot write " + path.string());
  f << doc.dump(2) << "\n";
}

}  // namespace sigseg::stats
