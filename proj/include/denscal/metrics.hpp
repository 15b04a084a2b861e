// SPDX-License-Identifier: Apache-2.0
//
// Exam-level aggregation and agreement metrics against a reference reader.
// Metrics that are undefined for the given data (single-class AUC, kappa with
// degenerate marginals) are std::nullopt, never a silent zero.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "denscal/adapt.hpp"
#include "denscal/parallel.hpp"
#include "denscal/records.hpp"

namespace denscal {

/// Arithmetic mean of per-image probability vectors.
ProbVector aggregate_exam(std::span<const ProbVector> probabilities);

/// Index of the maximum; ties go to the lower (less dense) category.
Density argmax_category(const ProbVector& p);

/// k x k counts; rows are the reference reader, columns the model.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t k = kNumCategories) : k_(k), counts_(k * k, 0) {}
  static ConfusionMatrix from_rows(const std::vector<std::vector<long>>& rows);

  std::size_t size() const { return k_; }
  long& at(std::size_t ref, std::size_t model) { return counts_[ref * k_ + model]; }
  long at(std::size_t ref, std::size_t model) const { return counts_[ref * k_ + model]; }
  void add(std::size_t ref, std::size_t model, long n = 1) { at(ref, model) += n; }
  long total() const;
  std::vector<long> row_totals() const;
  std::vector<long> col_totals() const;
  ConfusionMatrix transposed() const;
  ConfusionMatrix scaled(long factor) const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t k_;
  std::vector<long> counts_;
};

/// trace / total; throws DataError for an empty matrix.
double accuracy(const ConfusionMatrix& cm);

enum class KappaWeighting { Unweighted, Linear };
std::string_view to_string(KappaWeighting w);

/// Disagreement weight v_ij: |i-j|/(k-1) (Linear) or [i != j] (Unweighted).
double disagreement_weight(std::size_t i, std::size_t j, std::size_t k, KappaWeighting w);

/// kappa = 1 - sum(v o) / sum(v e), o observed and e chance proportions.
/// Undefined when either marginal has fewer than two non-empty categories.
std::optional<double> cohen_kappa(const ConfusionMatrix& cm, KappaWeighting weighting);

enum class BinaryRule { Threshold, ArgmaxCollapse };
std::string_view to_string(BinaryRule r);

struct BinaryCollapse {
  double p_dense = 0.0;  // p_C + p_D
  bool dense = false;
};

/// Threshold: dense iff p_dense >= 0.5. ArgmaxCollapse: dense iff the
/// four-class argmax is C or D.
BinaryCollapse binary_collapse(const ProbVector& p, BinaryRule rule = BinaryRule::Threshold);

constexpr bool is_dense(Density d) { return d == Density::C || d == Density::D; }

/// Mann-Whitney AUC with midranks for tied scores. labels are 0/1;
/// undefined when only one class is present.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct MacroAuc {
  std::optional<double> macro;
  std::array<std::optional<double>, kNumCategories> per_class;
};

/// One-vs-others AUC per category (class-c probability as score) and their
/// unweighted mean; the mean is undefined unless all four categories occur.
MacroAuc macro_auc(std::span<const ProbVector> probabilities, std::span<const Density> labels);

struct ExamPrediction {
  std::string exam_id;
  Density reference = Density::A;
  ProbVector probs;

  bool operator==(const ExamPrediction&) const = default;
};

/// Per-exam aggregated predictions in dataset order. The parallel kernel
/// writes each exam's slot independently, so both paths agree bitwise.
std::vector<ExamPrediction> predict_exams(const Predictor& pred, const Dataset& ds,
                                          Execution exec = Execution::Parallel);

using Distribution = std::array<double, kNumCategories>;

struct FourClassMetrics {
  double accuracy = 0.0;
  std::optional<double> linear_kappa;
  std::optional<double> macro_auc;
  std::array<std::optional<double>, kNumCategories> per_class_auc;
};

struct BinaryMetrics {
  double accuracy = 0.0;
  std::optional<double> auc;
  std::optional<double> kappa;
};

struct MetricsReport {
  FourClassMetrics four_class;
  BinaryMetrics binary;
  Distribution predicted_distribution{};
  Distribution reference_distribution{};
  std::size_t n_exams = 0;
  BinaryRule binary_rule = BinaryRule::Threshold;
};

struct Evaluation {
  MetricsReport report;
  ConfusionMatrix confusion{kNumCategories};
  ConfusionMatrix binary_confusion{2};
  std::vector<ExamPrediction> exams;
};

/// 4x4 (argmax) and 2x2 (binary rule) confusion matrices of exam predictions.
ConfusionMatrix four_class_confusion(std::span<const ExamPrediction> exams);
ConfusionMatrix binary_confusion(std::span<const ExamPrediction> exams, BinaryRule rule = BinaryRule::Threshold);

/// All report fields from per-exam predictions.
MetricsReport compute_metrics(std::span<const ExamPrediction> exams, BinaryRule rule = BinaryRule::Threshold);

/// Predicts every image, averages per exam and computes the report.
Evaluation evaluate(const Predictor& pred, const Dataset& test, BinaryRule rule = BinaryRule::Threshold);

struct ConsistencyReport {
  double fraction_all_same = 0.0;
  std::map<int, long> distinct_count_histogram;  // keys 1..4
  long non_adjacent_pair_count = 0;              // exams with |i - j| >= 2
  std::size_t n_exams = 0;
};

/// Consistency of image-level argmax categories within each exam.
ConsistencyReport consistency_from_argmaxes(const std::vector<std::vector<Density>>& per_exam);
ConsistencyReport view_consistency(const Predictor& pred, const Dataset& test);

}  // namespace denscal
