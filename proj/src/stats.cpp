// SPDX-License-Identifier: Apache-2.0
#include "denscal/stats.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>

#include "denscal/error.hpp"
#include "denscal/rng.hpp"

namespace denscal {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
double normal_sf(double x) { return 0.5 * std::erfc(x / std::sqrt(2.0)); }

double chi2_sf(double x, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("chi2_sf: df must be positive");
  if (x <= 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  return boost::math::gamma_q(df / 2.0, x / 2.0);
}

double t_sf(double x, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("t_sf: df must be positive");
  if (std::isinf(x)) return x > 0 ? 0.0 : 1.0;
  // P(T > |x|) = I_{df/(df+x^2)}(df/2, 1/2) / 2
  const double tail = 0.5 * boost::math::ibeta(df / 2.0, 0.5, df / (df + x * x));
  return x >= 0.0 ? tail : 1.0 - tail;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> resample_indices(std::size_t n_items, std::uint64_t seed, std::size_t replicate) {
  std::vector<std::size_t> idx(n_items);
  if (n_items == 0) return idx;
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(replicate)}));
  std::uniform_int_distribution<std::size_t> pick(0, n_items - 1);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

double empirical_quantile(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DataError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

namespace {

double sample_sd(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

double sample_mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

BootstrapCI interval_base(double point, std::span<const double> replicates, double alpha) {
  if (replicates.empty()) throw DataError("bootstrap interval needs at least one replicate");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DataError("bootstrap alpha must lie in (0, 1)");
  BootstrapCI ci;
  ci.point = point;
  ci.alpha = alpha;
  ci.n_resamples = replicates.size();
  ci.se = sample_sd(replicates);
  return ci;
}

}  // namespace

BootstrapCI pivotal_interval(double point, std::span<const double> replicates, double alpha) {
  BootstrapCI ci = interval_base(point, replicates, alpha);
  std::vector<double> sorted(replicates.begin(), replicates.end());
  std::sort(sorted.begin(), sorted.end());
  ci.lower = 2.0 * point - empirical_quantile(sorted, 1.0 - alpha / 2.0);
  ci.upper = 2.0 * point - empirical_quantile(sorted, alpha / 2.0);
  return ci;
}

BootstrapCI percentile_interval(double point, std::span<const double> replicates, double alpha) {
  BootstrapCI ci = interval_base(point, replicates, alpha);
  std::vector<double> sorted(replicates.begin(), replicates.end());
  std::sort(sorted.begin(), sorted.end());
  ci.lower = empirical_quantile(sorted, alpha / 2.0);
  ci.upper = empirical_quantile(sorted, 1.0 - alpha / 2.0);
  return ci;
}

namespace {

// values[s * R + r] holds statistic s on replicate r.
std::vector<std::optional<double>> run_replicates(std::size_t n_items, std::size_t n_stats,
                                                  const MultiStatistic& statistic, const BootstrapConfig& cfg) {
  const std::size_t R = cfg.n_resamples;
  std::vector<std::optional<double>> values(n_stats * R);
  auto one = [&](std::size_t r) {
    const auto idx = resample_indices(n_items, cfg.seed, r);
    std::vector<std::optional<double>> out(n_stats);
    statistic(idx, out);
    for (std::size_t s = 0; s < n_stats; ++s) values[s * R + r] = out[s];
  };
  if (cfg.exec == Execution::Serial) {
    for (std::size_t r = 0; r < R; ++r) one(r);
    return values;
  }
  std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 64) num_threads(thread_count())
  for (std::size_t r = 0; r < R; ++r) {
    try {
      one(r);
    } catch (...) {
#pragma omp critical(denscal_bootstrap_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return values;
}

struct Collected {
  std::optional<BootstrapResult> result;
  std::string failure;
};

Collected collect(std::optional<double> point, std::span<const std::optional<double>> values,
                  const BootstrapConfig& cfg) {
  if (!point) return {std::nullopt, "statistic undefined on the original sample"};
  std::vector<double> defined;
  defined.reserve(values.size());
  for (const auto& v : values)
    if (v) defined.push_back(*v);
  const std::size_t dropped = values.size() - defined.size();
  if (static_cast<double>(dropped) > cfg.max_undefined_fraction * static_cast<double>(values.size()))
    return {std::nullopt, std::to_string(dropped) + " of " + std::to_string(values.size()) +
                              " bootstrap replicates were undefined"};
  BootstrapResult res;
  res.ci = pivotal_interval(*point, defined, cfg.alpha);
  res.ci.n_resamples = values.size();
  res.ci.n_dropped = dropped;
  res.ci.seed = cfg.seed;
  res.replicates = std::move(defined);
  return {std::move(res), {}};
}

void check_config(std::size_t n_items, const BootstrapConfig& cfg) {
  if (n_items == 0) throw DataError("bootstrap over an empty item list");
  if (cfg.n_resamples == 0) throw DataError("bootstrap needs at least one resample");
}

std::vector<std::size_t> identity_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

BootstrapResult pivotal_bootstrap(std::size_t n_items, const Statistic& statistic, const BootstrapConfig& cfg) {
  check_config(n_items, cfg);
  MultiStatistic multi = [&statistic](std::span<const std::size_t> idx, std::span<std::optional<double>> out) {
    out[0] = statistic(idx);
  };
  const auto point = statistic(identity_indices(n_items));
  const auto values = run_replicates(n_items, 1, multi, cfg);
  Collected c = collect(point, values, cfg);
  if (!c.result) throw DataError("bootstrap: " + c.failure);
  return std::move(*c.result);
}

std::vector<std::optional<BootstrapResult>> pivotal_bootstrap_multi(std::size_t n_items, std::size_t n_statistics,
                                                                    const MultiStatistic& statistic,
                                                                    const BootstrapConfig& cfg) {
  check_config(n_items, cfg);
  std::vector<std::optional<double>> points(n_statistics);
  statistic(identity_indices(n_items), points);
  const auto values = run_replicates(n_items, n_statistics, statistic, cfg);
  std::vector<std::optional<BootstrapResult>> out;
  out.reserve(n_statistics);
  const std::size_t R = cfg.n_resamples;
  for (std::size_t s = 0; s < n_statistics; ++s)
    out.push_back(collect(points[s], std::span(values).subspan(s * R, R), cfg).result);
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Alternative a) {
  switch (a) {
    case Alternative::TwoSided: return "two-sided";
    case Alternative::Less: return "less";
    case Alternative::Greater: return "greater";
  }
  return "?";
}

double fleiss_kappa_se(const ConfusionMatrix& cm, KappaWeighting weighting) {
  if (!cohen_kappa(cm, weighting)) throw DataError("kappa standard error undefined: degenerate marginals");
  const std::size_t k = cm.size();
  const double n = static_cast<double>(cm.total());
  const auto rows = cm.row_totals();
  const auto cols = cm.col_totals();
  std::vector<double> pr(k), pc(k);
  for (std::size_t i = 0; i < k; ++i) {
    pr[i] = static_cast<double>(rows[i]) / n;
    pc[i] = static_cast<double>(cols[i]) / n;
  }
  auto w = [&](std::size_t i, std::size_t j) { return 1.0 - disagreement_weight(i, j, k, weighting); };

  double po = 0.0, pe = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      po += w(i, j) * static_cast<double>(cm.at(i, j)) / n;
      pe += w(i, j) * pr[i] * pc[j];
    }
  std::vector<double> w_row(k, 0.0), w_col(k, 0.0);  // weighted marginal means
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      w_row[i] += w(i, j) * pc[j];
      w_col[j] += w(i, j) * pr[i];
    }
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double term = w(i, j) * (1.0 - pe) - (w_row[i] + w_col[j]) * (1.0 - po);
      sum += static_cast<double>(cm.at(i, j)) / n * term * term;
    }
  const double correction = po * pe - 2.0 * pe + po;
  const double var = (sum - correction * correction) / (n * std::pow(1.0 - pe, 4));
  return std::sqrt(std::max(var, 0.0));
}

double proportion_se(double p, std::size_t n) {
  if (n == 0) throw DataError("proportion standard error with n = 0");
  return std::sqrt(std::max(p * (1.0 - p), 0.0) / static_cast<double>(n));
}

namespace {

double normal_p(double z, Alternative alt) {
  switch (alt) {
    case Alternative::Less: return normal_cdf(z);
    case Alternative::Greater: return normal_sf(z);
    case Alternative::TwoSided: return std::min(1.0, 2.0 * normal_sf(std::abs(z)));
  }
  return 1.0;
}

}  // namespace

TestResult z_test_difference(double est1, double se1, double est2, double se2, Alternative alt) {
  if (se1 < 0.0 || se2 < 0.0) throw DataError("z-test: standard errors must be non-negative");
  if (se1 == 0.0 && se2 == 0.0) throw DataError("z-test: both standard errors are zero");
  const double z = (est1 - est2) / std::sqrt(se1 * se1 + se2 * se2);
  return TestResult{z, normal_p(z, alt), alt, "z-test (independent estimates)", std::nullopt};
}

TestResult welch_t_test(std::span<const double> a, std::span<const double> b, Alternative alt) {
  if (a.size() < 2 || b.size() < 2) throw DataError("t-test needs at least two values per sample");
  const double ma = sample_mean(a), mb = sample_mean(b);
  const double va = std::pow(sample_sd(a), 2) / static_cast<double>(a.size());
  const double vb = std::pow(sample_sd(b), 2) / static_cast<double>(b.size());
  TestResult r;
  r.alternative = alt;
  r.method = "Welch two-sample t-test";
  const double se2 = va + vb;
  if (se2 == 0.0) {
    r.statistic = ma == mb ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
    r.p_value = ma == mb ? 1.0 : (alt == Alternative::TwoSided ? 0.0 : normal_p(r.statistic, alt));
    return r;
  }
  r.statistic = (ma - mb) / std::sqrt(se2);
  const double df =
      se2 * se2 / (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  r.df = df;
  switch (alt) {
    case Alternative::Less: r.p_value = 1.0 - t_sf(r.statistic, df); break;
    case Alternative::Greater: r.p_value = t_sf(r.statistic, df); break;
    case Alternative::TwoSided: r.p_value = std::min(1.0, 2.0 * t_sf(std::abs(r.statistic), df)); break;
  }
  return r;
}

TestResult kl_ttest(std::span<const double> replicates_1, std::span<const double> replicates_2) {
  TestResult r = welch_t_test(replicates_1, replicates_2, Alternative::TwoSided);
  r.method = "Welch two-sample t-test on bootstrap KL replicates";
  return r;
}

TestResult chi_squared_gof(std::span<const long> observed, std::span<const double> expected) {
  if (observed.size() != expected.size() || observed.size() < 2) throw DataError("chi-squared: bin count mismatch");
  const double n = static_cast<double>(std::accumulate(observed.begin(), observed.end(), 0L));
  if (n <= 0.0) throw DataError("chi-squared: no observations");
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (observed[i] < 0 || expected[i] < 0.0) throw DataError("chi-squared: negative count or proportion");
    if (expected[i] == 0.0) {
      if (observed[i] > 0) throw DataError("chi-squared: observed counts in a bin with zero expected proportion");
      continue;
    }
    const double e = n * expected[i];
    stat += (static_cast<double>(observed[i]) - e) * (static_cast<double>(observed[i]) - e) / e;
  }
  const double df = static_cast<double>(observed.size() - 1);
  return TestResult{stat, chi2_sf(stat, df), Alternative::Greater, "Pearson chi-squared goodness of fit", df};
}

TestResult chi_squared_homogeneity(std::span<const long> c1, std::span<const long> c2) {
  if (c1.size() != c2.size()) throw DataError("chi-squared: bin count mismatch");
  const double n1 = static_cast<double>(std::accumulate(c1.begin(), c1.end(), 0L));
  const double n2 = static_cast<double>(std::accumulate(c2.begin(), c2.end(), 0L));
  if (n1 <= 0.0 || n2 <= 0.0) throw DataError("chi-squared: empty sample");
  const double n = n1 + n2;
  double stat = 0.0;
  std::size_t cols = 0;
  for (std::size_t i = 0; i < c1.size(); ++i) {
    const double col = static_cast<double>(c1[i] + c2[i]);
    if (col == 0.0) continue;
    ++cols;
    const double e1 = n1 * col / n, e2 = n2 * col / n;
    stat += std::pow(static_cast<double>(c1[i]) - e1, 2) / e1 + std::pow(static_cast<double>(c2[i]) - e2, 2) / e2;
  }
  if (cols < 2) return TestResult{0.0, 1.0, Alternative::Greater, "Pearson chi-squared homogeneity", std::nullopt};
  const double df = static_cast<double>(cols - 1);
  return TestResult{stat, chi2_sf(stat, df), Alternative::Greater, "Pearson chi-squared homogeneity", df};
}

WilcoxonResult wilcoxon_signed_rank(std::span<const int> diffs, Alternative alt) {
  if (diffs.empty()) throw DataError("Wilcoxon: no differences");
  WilcoxonResult out;
  out.test.alternative = alt;
  std::vector<int> nz;
  for (int d : diffs)
    if (d != 0) nz.push_back(d);
  out.n_nonzero = nz.size();
  if (nz.empty()) {
    out.all_ties = true;
    out.test = TestResult{0.0, 1.0, alt, "Wilcoxon signed-rank (all differences zero)", std::nullopt};
    return out;
  }

  // Midranks of |d|, doubled so they are integers.
  const std::size_t n = nz.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std::abs(nz[a]) < std::abs(nz[b]); });
  std::vector<long> rank2(n);
  double tie_term = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::abs(nz[order[j]]) == std::abs(nz[order[i]])) ++j;
    const auto r2 = static_cast<long>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) rank2[order[k]] = r2;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  long w2 = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (nz[i] > 0) w2 += rank2[i];
  const double w_plus = 0.5 * static_cast<double>(w2);
  out.test.statistic = w_plus;

  if (n <= kWilcoxonExactMaxN) {
    out.exact = true;
    const long max_sum = std::accumulate(rank2.begin(), rank2.end(), 0L);
    std::vector<double> counts(static_cast<std::size_t>(max_sum) + 1, 0.0);
    counts[0] = 1.0;
    long reach = 0;
    for (long r : rank2) {
      for (long s = reach; s >= 0; --s)
        if (counts[static_cast<std::size_t>(s)] != 0.0) counts[static_cast<std::size_t>(s + r)] += counts[static_cast<std::size_t>(s)];
      reach += r;
    }
    const double total = std::ldexp(1.0, static_cast<int>(n));
    double le = 0.0, ge = 0.0;
    for (long s = 0; s <= max_sum; ++s) {
      if (s <= w2) le += counts[static_cast<std::size_t>(s)];
      if (s >= w2) ge += counts[static_cast<std::size_t>(s)];
    }
    const double p_le = le / total, p_ge = ge / total;
    switch (alt) {
      case Alternative::Less: out.test.p_value = p_le; break;
      case Alternative::Greater: out.test.p_value = p_ge; break;
      case Alternative::TwoSided: out.test.p_value = std::min(1.0, 2.0 * std::min(p_le, p_ge)); break;
    }
    out.test.method = "Wilcoxon signed-rank (exact)";
    return out;
  }

  const double nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  const double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0 - tie_term / 48.0;
  const double sd = std::sqrt(var);
  switch (alt) {
    case Alternative::Less: out.test.p_value = normal_cdf((w_plus - mean + 0.5) / sd); break;
    case Alternative::Greater: out.test.p_value = normal_sf((w_plus - mean - 0.5) / sd); break;
    case Alternative::TwoSided: {
      const double z = std::max(std::abs(w_plus - mean) - 0.5, 0.0) / sd;
      out.test.p_value = std::min(1.0, 2.0 * normal_sf(z));
      break;
    }
  }
  out.test.method = "Wilcoxon signed-rank (normal approximation, tie and continuity corrected)";
  return out;
}

// ---------------------------------------------------------------------------

namespace {

void check_distribution(const Distribution& d, const char* what) {
  double s = 0.0;
  for (double v : d) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw DataError(std::string(what) + " distribution has invalid entries");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw DataError(std::string(what) + " distribution does not sum to 1");
}

constexpr double kKlFloor = 1e-12;

KlDivergence kl_unchecked(const Distribution& ref, const Distribution& model) {
  KlDivergence out;
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    if (ref[i] <= 0.0) continue;
    double m = model[i];
    if (m < kKlFloor) {
      m = kKlFloor;
      out.clamped = true;
    }
    out.value += ref[i] * std::log(ref[i] / m);
  }
  return out;
}

Distribution counts_to_distribution(const std::array<long, kNumCategories>& counts, double n) {
  Distribution d{};
  for (std::size_t c = 0; c < kNumCategories; ++c) d[c] = static_cast<double>(counts[c]) / n;
  return d;
}

}  // namespace

KlDivergence kl_divergence(const Distribution& reference, const Distribution& model) {
  check_distribution(reference, "reference");
  check_distribution(model, "model");
  return kl_unchecked(reference, model);
}

Distribution empirical_distribution(std::span<const Density> labels) {
  if (labels.empty()) throw DataError("empirical distribution of an empty sample");
  std::array<long, kNumCategories> counts{};
  for (Density d : labels) ++counts[static_cast<std::size_t>(code(d))];
  return counts_to_distribution(counts, static_cast<double>(labels.size()));
}

BootstrapResult bootstrap_kl(std::span<const Density> reference, std::span<const Density> model,
                             const BootstrapConfig& cfg) {
  if (reference.size() != model.size()) throw DataError("bootstrap_kl: reference/model length mismatch");
  Statistic stat = [reference, model](std::span<const std::size_t> idx) -> std::optional<double> {
    std::array<long, kNumCategories> rc{}, mc{};
    for (std::size_t i : idx) {
      ++rc[static_cast<std::size_t>(code(reference[i]))];
      ++mc[static_cast<std::size_t>(code(model[i]))];
    }
    const double n = static_cast<double>(idx.size());
    return kl_unchecked(counts_to_distribution(rc, n), counts_to_distribution(mc, n)).value;
  };
  return pivotal_bootstrap(reference.size(), stat, cfg);
}

DistributionComparison compare_distributions(std::span<const Density> reference, std::span<const Density> model,
                                             const BootstrapConfig& cfg, ChiSquaredForm form) {
  if (reference.size() != model.size() || reference.empty())
    throw DataError("distribution comparison needs paired, non-empty labels");
  DistributionComparison out;
  out.reference = empirical_distribution(reference);
  out.model = empirical_distribution(model);
  out.kl = bootstrap_kl(reference, model, cfg);

  std::array<long, kNumCategories> model_counts{}, ref_counts{};
  for (Density d : model) ++model_counts[static_cast<std::size_t>(code(d))];
  for (Density d : reference) ++ref_counts[static_cast<std::size_t>(code(d))];
  out.chi_squared = form == ChiSquaredForm::GoodnessOfFit ? chi_squared_gof(model_counts, out.reference)
                                                          : chi_squared_homogeneity(model_counts, ref_counts);

  std::vector<int> diffs(reference.size());
  for (std::size_t i = 0; i < reference.size(); ++i) diffs[i] = code(model[i]) - code(reference[i]);
  out.wilcoxon = wilcoxon_signed_rank(diffs, Alternative::Less);
  return out;
}

}  // namespace denscal
