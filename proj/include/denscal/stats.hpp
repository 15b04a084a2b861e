// SPDX-License-Identifier: Apache-2.0
//
// Inferential statistics: pivotal bootstrap intervals, large-sample kappa
// standard errors, z/t/chi-squared/Wilcoxon tests and KL divergence.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "denscal/metrics.hpp"
#include "denscal/parallel.hpp"

namespace denscal {

// ---------------------------------------------------------------------------
// Special functions

double normal_cdf(double x);
double normal_sf(double x);
/// Upper tail of the chi-squared distribution.
double chi2_sf(double x, double df);
/// Upper tail of Student's t.
double t_sf(double x, double df);

// ---------------------------------------------------------------------------
// Bootstrap

struct BootstrapConfig {
  std::size_t n_resamples = 8000;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  /// Resamples whose statistic is undefined are dropped; more than this
  /// fraction is an error.
  double max_undefined_fraction = 0.05;
  Execution exec = Execution::Parallel;
};

struct BootstrapCI {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double se = 0.0;  // sample standard deviation of the replicates
  std::size_t n_resamples = 0;
  std::size_t n_dropped = 0;
  double alpha = 0.05;
  std::uint64_t seed = 0;
};

struct BootstrapResult {
  BootstrapCI ci;
  std::vector<double> replicates;  // defined replicates, in replicate order
};

/// Statistic over a resample given as indices into the original items.
using Statistic = std::function<std::optional<double>(std::span<const std::size_t>)>;
/// Several statistics over the same resample, written into `out`.
using MultiStatistic = std::function<void(std::span<const std::size_t>, std::span<std::optional<double>> out)>;

/// Indices of replicate r: n draws with replacement from a stream seeded by
/// (seed, r), so any replicate can be recomputed in isolation.
std::vector<std::size_t> resample_indices(std::size_t n_items, std::uint64_t seed, std::size_t replicate);

/// Linear interpolation between order statistics at h = (n-1) q.
double empirical_quantile(std::span<const double> sorted, double q);

/// Basic (pivotal) interval [2 t - Q(1 - a/2), 2 t - Q(a/2)].
BootstrapCI pivotal_interval(double point, std::span<const double> replicates, double alpha);
/// Percentile interval [Q(a/2), Q(1 - a/2)]; reference for tests.
BootstrapCI percentile_interval(double point, std::span<const double> replicates, double alpha);

/// Non-Studentized pivotal bootstrap over items resampled with replacement.
/// Throws DataError for an empty item list, an undefined point estimate or
/// too many undefined replicates.
BootstrapResult pivotal_bootstrap(std::size_t n_items, const Statistic& statistic, const BootstrapConfig& cfg = {});

/// Same resamples for every statistic. An entry is nullopt when its point
/// estimate is undefined or too many of its replicates are.
std::vector<std::optional<BootstrapResult>> pivotal_bootstrap_multi(std::size_t n_items, std::size_t n_statistics,
                                                                    const MultiStatistic& statistic,
                                                                    const BootstrapConfig& cfg = {});

// ---------------------------------------------------------------------------
// Hypothesis tests

enum class Alternative { TwoSided, Less, Greater };
std::string_view to_string(Alternative a);

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  Alternative alternative = Alternative::TwoSided;
  std::string method;
  std::optional<double> df;
};

/// Large-sample standard error of (weighted) kappa under non-null conditions
/// (Fleiss, Cohen & Everitt). Throws DataError when kappa is undefined.
double fleiss_kappa_se(const ConfusionMatrix& cm, KappaWeighting weighting);

/// Binomial standard error sqrt(p (1 - p) / n).
double proportion_se(double p, std::size_t n);

/// z = (est1 - est2) / sqrt(se1^2 + se2^2), normal p-value.
TestResult z_test_difference(double est1, double se1, double est2, double se2,
                             Alternative alt = Alternative::TwoSided);

/// Welch two-sample t-test (two-sided by default).
TestResult welch_t_test(std::span<const double> a, std::span<const double> b,
                        Alternative alt = Alternative::TwoSided);

/// Compares two sets of bootstrap KL replicates.
TestResult kl_ttest(std::span<const double> replicates_1, std::span<const double> replicates_2);

/// Pearson goodness of fit of observed counts against expected proportions,
/// df = k - 1.
TestResult chi_squared_gof(std::span<const long> observed, std::span<const double> expected_proportions);
/// 2 x k homogeneity test over the columns with a non-zero total.
TestResult chi_squared_homogeneity(std::span<const long> counts_1, std::span<const long> counts_2);

struct WilcoxonResult {
  TestResult test;
  std::size_t n_nonzero = 0;
  bool exact = false;
  bool all_ties = false;  // every difference was zero; p = 1
};

/// Signed-rank test. Zero differences are dropped, tied |d| get midranks.
/// Exact null enumeration for n <= 25, otherwise the normal approximation
/// with tie and continuity corrections. The default alternative Less tests
/// for differences that tend to be negative (model below reference).
WilcoxonResult wilcoxon_signed_rank(std::span<const int> diffs, Alternative alt = Alternative::Less);

inline constexpr std::size_t kWilcoxonExactMaxN = 25;

// ---------------------------------------------------------------------------
// Distribution comparison

struct KlDivergence {
  double value = 0.0;
  bool clamped = false;  // a model bin below 1e-12 was clamped
};

/// KL(reference || model); reference-zero bins contribute nothing.
KlDivergence kl_divergence(const Distribution& reference, const Distribution& model);

Distribution empirical_distribution(std::span<const Density> labels);

/// Pivotal bootstrap of KL(reference || model) over jointly resampled exams.
BootstrapResult bootstrap_kl(std::span<const Density> reference, std::span<const Density> model,
                             const BootstrapConfig& cfg = {});

enum class ChiSquaredForm { GoodnessOfFit, Homogeneity };

struct DistributionComparison {
  Distribution reference{};
  Distribution model{};
  BootstrapResult kl;
  TestResult chi_squared;
  WilcoxonResult wilcoxon;
};

/// KL bootstrap, chi-squared of the model counts against the reference
/// proportions, and the one-sided signed-rank test of model - reference.
DistributionComparison compare_distributions(std::span<const Density> reference, std::span<const Density> model,
                                             const BootstrapConfig& cfg,
                                             ChiSquaredForm form = ChiSquaredForm::GoodnessOfFit);

}  // namespace denscal
