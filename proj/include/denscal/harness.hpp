// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration: evaluation with bootstrap intervals, before/after
// adaptation comparisons, the dataset-size sweep, and report emission.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "denscal/adapt.hpp"
#include "denscal/metrics.hpp"
#include "denscal/parallel.hpp"
#include "denscal/simgen.hpp"
#include "denscal/stats.hpp"

namespace denscal {

enum class Method { None, Vector, Matrix, FineTune };
std::string_view to_string(Method m);
/// Accepts none, vector, matrix, finetune. "scratch" is reserved for
/// externally produced results and rejected here.
Method method_from_string(std::string_view s);

struct AdaptationConfig {
  BfgsConfig bfgs;
  FinetuneConfig finetune;
};

/// Fits one adaptation method on `train` (val drives fine-tuning epoch
/// selection) and returns the resulting predictor.
Predictor fit_method(Method m, const Dataset& train, const Dataset& val, const AdaptationConfig& cfg,
                     std::uint64_t seed);

/// Throws DataError when train shares a patient or image with val or test.
void check_no_leakage(const Dataset& train, const Dataset& val, const Dataset& test);

// ---------------------------------------------------------------------------

/// Keys of EvaluationReport::ci, in bootstrap order.
inline constexpr std::array<std::string_view, 6> kCiMetrics{
    "four_class_accuracy", "linear_kappa", "macro_auc", "binary_accuracy", "binary_auc", "binary_kappa"};

struct EvaluationReport {
  Evaluation evaluation;
  std::map<std::string, std::optional<BootstrapCI>> ci;
  Pipeline pipeline = Pipeline::BaseLogits;
};

/// Point metrics plus exam-level pivotal bootstrap intervals for the six
/// headline metrics (shared resamples).
EvaluationReport run_evaluation(const Predictor& pred, const Dataset& test, std::size_t n_resamples,
                                std::uint64_t seed, Execution exec = Execution::Parallel);

struct ComparisonConfig {
  std::size_t n_resamples = 8000;
  std::uint64_t seed = 0;
  ChiSquaredForm chi_squared = ChiSquaredForm::GoodnessOfFit;
};

struct ComparisonReport {
  EvaluationReport before;
  EvaluationReport after;
  /// four_class_accuracy, linear_kappa, binary_accuracy, binary_kappa;
  /// nullopt when both standard errors vanish or kappa is undefined.
  std::map<std::string, std::optional<TestResult>> z_tests;
  DistributionComparison before_distribution;
  DistributionComparison after_distribution;
  TestResult kl_before_vs_after;
};

ComparisonReport run_comparison(const Predictor& base, const Predictor& adapted, const Dataset& test,
                                const ComparisonConfig& cfg = {});

// ---------------------------------------------------------------------------

enum class SweepMetric { LinearKappa, MacroAuc };
std::string_view to_string(SweepMetric m);
SweepMetric sweep_metric_from_string(std::string_view s);

struct SweepConfig {
  std::vector<std::size_t> sizes{25, 50, 100, 250, 500, 1000, 2000, 4000};
  int realizations = 10;
  std::vector<Method> methods{Method::None, Method::Vector, Method::Matrix, Method::FineTune};
  SweepMetric metric = SweepMetric::LinearKappa;
  std::uint64_t base_seed = 0;
  AdaptationConfig adaptation;

  void validate() const;
};

struct SweepCell {
  Method method = Method::None;
  std::size_t size = 0;
  int realization = 0;
  std::optional<double> value;  // undefined metric (e.g. one predicted class)
};

struct SweepAggregate {
  Method method = Method::None;
  std::size_t size = 0;
  double mean = 0.0;
  double sem = 0.0;  // sd of realizations / sqrt(count)
  std::size_t n_defined = 0;
};

struct SweepResult {
  SweepMetric metric = SweepMetric::LinearKappa;
  std::vector<std::size_t> sizes;
  std::vector<Method> methods;
  int realizations = 0;
  std::vector<SweepCell> cells;  // method-major, then size, then realization
  std::vector<SweepAggregate> aggregates;

  const SweepAggregate& aggregate(Method m, std::size_t size) const;
};

/// Sizes that fit in the pool, in order.
std::vector<std::size_t> clip_sizes(const std::vector<std::size_t>& sizes, std::size_t pool);

/// Seed of the training subsample for (size, realization); shared by all
/// methods so they see the same images.
std::uint64_t sweep_cell_seed(std::uint64_t base_seed, std::size_t size, int realization);

/// One (method, size, realization) cell, computed in isolation.
std::optional<double> run_sweep_cell(const SweepConfig& cfg, Method m, std::size_t size, int realization,
                                     const Dataset& pool, const Dataset& val, const Dataset& test);

SweepResult run_sweep(const SweepConfig& cfg, const Dataset& pool, const Dataset& val, const Dataset& test,
                      Execution exec = Execution::Parallel);

// ---------------------------------------------------------------------------
// Named synthetic scenarios

struct Scenario {
  std::string name;
  GenConfig gen;  // base_head holds the pretrained source head
  SiteProfile profile;
  ShiftSpec shift;
  SplitRatios split;
};

struct ScenarioOverrides {
  std::optional<std::size_t> feature_dim;
  std::optional<std::size_t> n_patients;
};

/// site1-ffdm: unshifted source site. site2-calibrated: second site with a
/// logit-affine shift. composite: feature and texture rotation plus a logit
/// shift, used for the size sweep (50/10/40 split for a larger test set).
Scenario make_scenario(std::string_view name, std::uint64_t seed, const ScenarioOverrides& overrides = {});
std::vector<std::string> scenario_names();

struct ScenarioData {
  GeneratedSite site;
  DatasetSplit split;  // by patient, test restricted to standard exams
};

ScenarioData generate_scenario(const Scenario& sc, std::uint64_t split_seed);

// ---------------------------------------------------------------------------
// Serialization and output

nlohmann::json to_json(const BootstrapCI& ci);
nlohmann::json to_json(const TestResult& t);
nlohmann::json to_json(const WilcoxonResult& w);
nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const ConfusionMatrix& cm);
nlohmann::json to_json(const EvaluationReport& r);
nlohmann::json to_json(const DistributionComparison& d);
nlohmann::json to_json(const ComparisonReport& r);
nlohmann::json to_json(const SweepResult& r);
nlohmann::json to_json(const ConsistencyReport& r);
nlohmann::json to_json(const OptimResult& r);
nlohmann::json to_json(const TrainTrace& t);

std::string confusion_csv(const ConfusionMatrix& cm);
/// Columns method,size,realization,metric,value; one row per cell, then a
/// "mean" and a "sem" row per (method, size).
std::string sweep_csv(const SweepResult& r);
/// Header-only CSV for a sweep that produced no cells.
std::string empty_sweep_csv();

struct RunOutputs {
  nlohmann::json report;
  std::optional<ConfusionMatrix> confusion;
  bool write_sweep = false;
  std::optional<SweepResult> sweep;  // absent with write_sweep -> header only
  nlohmann::json metadata;           // timestamps etc., kept out of report.json
};

/// Writes report.json, confusion.csv, sweep.csv and meta.json as applicable;
/// returns the written paths. Throws DataError with the path on I/O failure.
std::vector<std::filesystem::path> emit_outputs(const RunOutputs& out, const std::filesystem::path& out_dir);

}  // namespace denscal
