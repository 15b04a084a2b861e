// SPDX-License-Identifier: Apache-2.0
#include "denscal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <set>

#include "denscal/error.hpp"

namespace denscal {

ProbVector aggregate_exam(std::span<const ProbVector> probabilities) {
  if (probabilities.empty()) throw DataError("aggregate_exam: no image probabilities");
  ProbVector mean;
  for (const auto& p : probabilities)
    for (std::size_t c = 0; c < kNumCategories; ++c) mean[c] += p[c];
  for (double& v : mean.p) v /= static_cast<double>(probabilities.size());
  return mean;
}

Density argmax_category(const ProbVector& p) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumCategories; ++c)
    if (p[c] > p[best]) best = c;
  return density_from_code(static_cast<int>(best));
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<long>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw DataError("confusion matrix must be square");
    for (std::size_t j = 0; j < rows.size(); ++j) {
      if (rows[i][j] < 0) throw DataError("confusion matrix counts must be non-negative");
      cm.at(i, j) = rows[i][j];
    }
  }
  return cm;
}

long ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), 0L); }

std::vector<long> ConfusionMatrix::row_totals() const {
  std::vector<long> r(k_, 0);
  for (std::size_t i = 0; i < k_; ++i)
    for (std::size_t j = 0; j < k_; ++j) r[i] += at(i, j);
  return r;
}

std::vector<long> ConfusionMatrix::col_totals() const {
  std::vector<long> c(k_, 0);
  for (std::size_t i = 0; i < k_; ++i)
    for (std::size_t j = 0; j < k_; ++j) c[j] += at(i, j);
  return c;
}

ConfusionMatrix ConfusionMatrix::transposed() const {
  ConfusionMatrix t(k_);
  for (std::size_t i = 0; i < k_; ++i)
    for (std::size_t j = 0; j < k_; ++j) t.at(j, i) = at(i, j);
  return t;
}

ConfusionMatrix ConfusionMatrix::scaled(long factor) const {
  ConfusionMatrix s(*this);
  for (long& v : s.counts_) v *= factor;
  return s;
}

double accuracy(const ConfusionMatrix& cm) {
  const long n = cm.total();
  if (n <= 0) throw DataError("accuracy of an empty confusion matrix");
  long diag = 0;
  for (std::size_t i = 0; i < cm.size(); ++i) diag += cm.at(i, i);
  return static_cast<double>(diag) / static_cast<double>(n);
}

std::string_view to_string(KappaWeighting w) { return w == KappaWeighting::Linear ? "linear" : "unweighted"; }

double disagreement_weight(std::size_t i, std::size_t j, std::size_t k, KappaWeighting w) {
  if (i == j) return 0.0;
  if (w == KappaWeighting::Unweighted) return 1.0;
  const double d = i > j ? static_cast<double>(i - j) : static_cast<double>(j - i);
  return d / static_cast<double>(k - 1);
}

std::optional<double> cohen_kappa(const ConfusionMatrix& cm, KappaWeighting weighting) {
  const long n = cm.total();
  if (n <= 0) return std::nullopt;
  const auto rows = cm.row_totals();
  const auto cols = cm.col_totals();
  auto occupied = [](const std::vector<long>& m) { return std::count_if(m.begin(), m.end(), [](long v) { return v > 0; }); };
  if (occupied(rows) < 2 || occupied(cols) < 2) return std::nullopt;

  const std::size_t k = cm.size();
  const double N = static_cast<double>(n);
  double observed = 0.0;
  double expected = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      const double v = disagreement_weight(i, j, k, weighting);
      observed += v * static_cast<double>(cm.at(i, j)) / N;
      expected += v * (static_cast<double>(rows[i]) / N) * (static_cast<double>(cols[j]) / N);
    }
  if (expected <= 0.0) return std::nullopt;
  return 1.0 - observed / expected;
}

std::string_view to_string(BinaryRule r) { return r == BinaryRule::Threshold ? "threshold_0.5" : "argmax_collapse"; }

BinaryCollapse binary_collapse(const ProbVector& p, BinaryRule rule) {
  BinaryCollapse out;
  out.p_dense = p[2] + p[3];
  out.dense = rule == BinaryRule::Threshold ? out.p_dense >= 0.5 : is_dense(argmax_category(p));
  return out;
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DataError("roc_auc: scores/labels length mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (auto l : labels) n_pos += l != 0 ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  double rank_sum = 0.0;  // exact: midranks are multiples of 1/2
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t pos_in_group = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      pos_in_group += labels[order[j]] != 0 ? 1 : 0;
      ++j;
    }
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    rank_sum += midrank * static_cast<double>(pos_in_group);
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

MacroAuc macro_auc(std::span<const ProbVector> probabilities, std::span<const Density> labels) {
  if (probabilities.size() != labels.size()) throw DataError("macro_auc: length mismatch");
  MacroAuc out;
  std::vector<double> scores(probabilities.size());
  std::vector<std::uint8_t> is_class(probabilities.size());
  double sum = 0.0;
  bool all_defined = true;
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    for (std::size_t i = 0; i < probabilities.size(); ++i) {
      scores[i] = probabilities[i][c];
      is_class[i] = static_cast<std::size_t>(code(labels[i])) == c ? 1 : 0;
    }
    out.per_class[c] = roc_auc(scores, is_class);
    if (out.per_class[c]) {
      sum += *out.per_class[c];
    } else {
      all_defined = false;
    }
  }
  if (all_defined) out.macro = sum / kNumCategories;
  return out;
}

std::vector<ExamPrediction> predict_exams(const Predictor& pred, const Dataset& ds, Execution exec) {
  const std::size_t n = ds.exams.size();
  std::vector<ExamPrediction> out(n);
  auto one = [&](std::size_t i) {
    const ExamRecord& e = ds.exams[i];
    std::vector<ProbVector> probs;
    probs.reserve(e.images.size());
    for (const auto& img : e.images) probs.push_back(predict_image(pred, img));
    out[i] = ExamPrediction{e.exam_id, e.label, aggregate_exam(probs)};
  };
  if (exec == Execution::Serial) {
    for (std::size_t i = 0; i < n; ++i) one(i);
    return out;
  }
  // Exceptions cannot cross the OpenMP region; capture the first one.
  std::exception_ptr error;
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (std::size_t i = 0; i < n; ++i) {
    try {
      one(i);
    } catch (...) {
#pragma omp critical(denscal_predict_error)
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
  return out;
}

ConfusionMatrix four_class_confusion(std::span<const ExamPrediction> exams) {
  ConfusionMatrix cm(kNumCategories);
  for (const auto& e : exams)
    cm.add(static_cast<std::size_t>(code(e.reference)), static_cast<std::size_t>(code(argmax_category(e.probs))));
  return cm;
}

ConfusionMatrix binary_confusion(std::span<const ExamPrediction> exams, BinaryRule rule) {
  ConfusionMatrix cm(2);
  for (const auto& e : exams) cm.add(is_dense(e.reference) ? 1 : 0, binary_collapse(e.probs, rule).dense ? 1 : 0);
  return cm;
}

MetricsReport compute_metrics(std::span<const ExamPrediction> exams, BinaryRule rule) {
  if (exams.empty()) throw DataError("cannot compute metrics on an empty test set");
  MetricsReport r;
  r.n_exams = exams.size();
  r.binary_rule = rule;

  const ConfusionMatrix cm = four_class_confusion(exams);
  r.four_class.accuracy = accuracy(cm);
  r.four_class.linear_kappa = cohen_kappa(cm, KappaWeighting::Linear);

  std::vector<ProbVector> probs;
  std::vector<Density> refs;
  std::vector<double> dense_scores;
  std::vector<std::uint8_t> dense_labels;
  for (const auto& e : exams) {
    probs.push_back(e.probs);
    refs.push_back(e.reference);
    dense_scores.push_back(binary_collapse(e.probs, rule).p_dense);
    dense_labels.push_back(is_dense(e.reference) ? 1 : 0);
  }
  const MacroAuc m = macro_auc(probs, refs);
  r.four_class.macro_auc = m.macro;
  r.four_class.per_class_auc = m.per_class;

  const ConfusionMatrix bcm = binary_confusion(exams, rule);
  r.binary.accuracy = accuracy(bcm);
  r.binary.kappa = cohen_kappa(bcm, KappaWeighting::Unweighted);
  r.binary.auc = roc_auc(dense_scores, dense_labels);

  const auto pred_counts = cm.col_totals();
  const auto ref_counts = cm.row_totals();
  const double n = static_cast<double>(cm.total());
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    r.predicted_distribution[c] = static_cast<double>(pred_counts[c]) / n;
    r.reference_distribution[c] = static_cast<double>(ref_counts[c]) / n;
  }
  return r;
}

Evaluation evaluate(const Predictor& pred, const Dataset& test, BinaryRule rule) {
  if (test.empty()) throw DataError("evaluate: empty test set");
  Evaluation ev;
  ev.exams = predict_exams(pred, test);
  ev.report = compute_metrics(ev.exams, rule);
  ev.confusion = four_class_confusion(ev.exams);
  ev.binary_confusion = binary_confusion(ev.exams, rule);
  return ev;
}

ConsistencyReport consistency_from_argmaxes(const std::vector<std::vector<Density>>& per_exam) {
  ConsistencyReport r;
  for (int k = 1; k <= kNumCategories; ++k) r.distinct_count_histogram[k] = 0;
  r.n_exams = per_exam.size();
  long all_same = 0;
  for (const auto& cats : per_exam) {
    if (cats.size() < 2) throw DataError("view consistency needs at least two images per exam");
    const std::set<Density> distinct(cats.begin(), cats.end());
    ++r.distinct_count_histogram[static_cast<int>(distinct.size())];
    if (distinct.size() == 1) ++all_same;
    if (code(*distinct.rbegin()) - code(*distinct.begin()) >= 2) ++r.non_adjacent_pair_count;
  }
  r.fraction_all_same = per_exam.empty() ? 0.0 : static_cast<double>(all_same) / static_cast<double>(per_exam.size());
  return r;
}

ConsistencyReport view_consistency(const Predictor& pred, const Dataset& test) {
  std::vector<std::vector<Density>> per_exam;
  per_exam.reserve(test.exams.size());
  for (const auto& e : test.exams) {
    std::vector<Density> cats;
    for (const auto& img : e.images) cats.push_back(argmax_category(predict_image(pred, img)));
    per_exam.push_back(std::move(cats));
  }
  return consistency_from_argmaxes(per_exam);
}

}  // namespace denscal
