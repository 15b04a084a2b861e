// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "../oracles/oracles.hpp"
#include "denscal/error.hpp"
#include "denscal/metrics.hpp"
#include "support.hpp"

using namespace denscal;

namespace {

std::vector<std::vector<long>> random_counts(std::mt19937_64& rng, std::size_t k, long max) {
  std::uniform_int_distribution<long> d(0, max);
  std::vector<std::vector<long>> m(k, std::vector<long>(k));
  for (auto& r : m)
    for (long& v : r) v = d(rng);
  return m;
}

ProbVector random_prob(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  ProbVector p;
  double s = 0;
  for (double& v : p.p) s += (v = u(rng));
  for (double& v : p.p) v /= s;
  return p;
}

}  // namespace

TEST_CASE("exam aggregation") {
  ProbVector a{{0.1, 0.2, 0.3, 0.4}};
  std::vector<ProbVector> same(4, a);
  CHECK(aggregate_exam(same) == a);
  std::vector<ProbVector> two{ProbVector{{1, 0, 0, 0}}, ProbVector{{0, 1, 0, 0}}};
  CHECK(aggregate_exam(two) == ProbVector{{0.5, 0.5, 0, 0}});
  std::mt19937_64 rng(1);
  for (int t = 0; t < 100; ++t) {
    std::vector<ProbVector> v;
    for (int i = 0; i < 4; ++i) v.push_back(random_prob(rng));
    auto m = aggregate_exam(v);
    for (int c = 0; c < 4; ++c) {
      long double s = 0;
      for (const auto& p : v) s += p[c];
      CHECK(std::abs(m[c] - static_cast<double>(s / 4)) < 1e-12);
    }
  }
  CHECK_THROWS_AS(aggregate_exam(std::vector<ProbVector>{}), DataError);
}

TEST_CASE("argmax tie rule") {
  CHECK(argmax_category({{0.1, 0.6, 0.2, 0.1}}) == Density::B);
  CHECK(argmax_category({{0.25, 0.25, 0.25, 0.25}}) == Density::A);
  CHECK(argmax_category({{0, 0.5, 0.5, 0}}) == Density::B);
}

TEST_CASE("accuracy") {
  auto cm = ConfusionMatrix::from_rows({{50, 10, 0, 0}, {5, 100, 15, 0}, {0, 20, 80, 5}, {0, 0, 5, 10}});
  CHECK(cm.total() == 300);
  CHECK(accuracy(cm) == doctest::Approx(240.0 / 300.0).epsilon(1e-15));
  CHECK(accuracy(ConfusionMatrix::from_rows({{3, 0}, {0, 4}})) == 1.0);
  CHECK(accuracy(ConfusionMatrix::from_rows({{0, 3}, {4, 0}})) == 0.0);
  CHECK_THROWS_AS(accuracy(ConfusionMatrix(4)), DataError);
}

TEST_CASE("kappa special cases") {
  auto diag = ConfusionMatrix::from_rows({{5, 0, 0, 0}, {0, 7, 0, 0}, {0, 0, 2, 0}, {0, 0, 0, 9}});
  CHECK(*cohen_kappa(diag, KappaWeighting::Linear) == doctest::Approx(1.0));
  CHECK(*cohen_kappa(diag, KappaWeighting::Unweighted) == doctest::Approx(1.0));
  // Outer product of marginals (1,2,3,4) x (4,3,2,1).
  std::vector<std::vector<long>> indep(4, std::vector<long>(4));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) indep[i][j] = (i + 1) * (4 - j);
  CHECK(std::abs(*cohen_kappa(ConfusionMatrix::from_rows(indep), KappaWeighting::Linear)) < 1e-14);
  CHECK(std::abs(*cohen_kappa(ConfusionMatrix::from_rows(indep), KappaWeighting::Unweighted)) < 1e-14);
  // One reference category only.
  auto single = ConfusionMatrix::from_rows({{0, 0, 0, 0}, {3, 4, 5, 0}, {0, 0, 0, 0}, {0, 0, 0, 0}});
  CHECK_FALSE(cohen_kappa(single, KappaWeighting::Linear).has_value());
  CHECK_FALSE(cohen_kappa(ConfusionMatrix(4), KappaWeighting::Linear).has_value());
}

TEST_CASE("kappa against the definitional form") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 1000; ++t) {
    auto rows = random_counts(rng, 4, 60);
    auto cm = ConfusionMatrix::from_rows(rows);
    for (bool linear : {true, false}) {
      auto k = cohen_kappa(cm, linear ? KappaWeighting::Linear : KappaWeighting::Unweighted);
      REQUIRE(k.has_value());
      CHECK(std::abs(*k - oracle::kappa_definitional(rows, linear)) < 1e-12);
    }
    CHECK(*cohen_kappa(cm.transposed(), KappaWeighting::Linear) ==
          doctest::Approx(*cohen_kappa(cm, KappaWeighting::Linear)).epsilon(1e-13));
  }
  for (int t = 0; t < 100; ++t) {
    auto cm = ConfusionMatrix::from_rows(random_counts(rng, 2, 50));
    CHECK(*cohen_kappa(cm, KappaWeighting::Linear) ==
          doctest::Approx(*cohen_kappa(cm, KappaWeighting::Unweighted)).epsilon(1e-13));
  }
}

TEST_CASE("binary collapse") {
  auto b = binary_collapse({{0.1, 0.4, 0.3, 0.2}});
  CHECK(b.p_dense == doctest::Approx(0.5));
  CHECK(b.dense);
  CHECK_FALSE(binary_collapse({{1, 0, 0, 0}}).dense);
  CHECK(binary_collapse({{0, 0, 0.5, 0.5}}).p_dense == 1.0);
  // Threshold and argmax-collapse disagree here.
  ProbVector p{{0.05, 0.4, 0.3, 0.25}};
  CHECK(binary_collapse(p, BinaryRule::Threshold).dense);
  CHECK_FALSE(binary_collapse(p, BinaryRule::ArgmaxCollapse).dense);
}

TEST_CASE("roc_auc") {
  std::vector<double> s{0.1, 0.2, 0.8, 0.9};
  std::vector<std::uint8_t> y{0, 0, 1, 1};
  CHECK(*roc_auc(s, y) == 1.0);
  std::vector<double> flat(4, 0.3);
  CHECK(*roc_auc(flat, y) == 0.5);
  CHECK_FALSE(roc_auc(s, std::vector<std::uint8_t>{1, 1, 1, 1}).has_value());

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> n_dist(2, 200), coarse(0, 9), bit(0, 1);
  for (int t = 0; t < 100; ++t) {
    const int n = t == 0 ? 200 : n_dist(rng);
    std::vector<double> sc(n);
    std::vector<std::uint8_t> lb(n);
    for (int i = 0; i < n; ++i) {
      sc[i] = coarse(rng) / 10.0;  // plenty of ties
      lb[i] = static_cast<std::uint8_t>(bit(rng));
    }
    lb[0] = 0;
    lb[1] = 1;
    CHECK(*roc_auc(sc, lb) == oracle::auc_pairs(sc, lb));
    std::vector<double> neg(sc);
    for (double& v : neg) v = -v;
    CHECK(*roc_auc(neg, lb) == doctest::Approx(1.0 - *roc_auc(sc, lb)).epsilon(1e-14));
  }
}

TEST_CASE("macro AUC") {
  std::vector<ProbVector> probs;
  std::vector<Density> labels;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 5; ++i) {
      ProbVector p{{0.1, 0.1, 0.1, 0.1}};
      p[c] = 0.7;
      probs.push_back(p);
      labels.push_back(density_from_code(c));
    }
  CHECK(*macro_auc(probs, labels).macro == 1.0);

  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> cat(0, 3);
  std::vector<ProbVector> rp;
  std::vector<Density> rl;
  for (int i = 0; i < 100; ++i) {
    rp.push_back(random_prob(rng));
    rl.push_back(density_from_code(i < 4 ? i : cat(rng)));
  }
  auto m = macro_auc(rp, rl);
  double sum = 0;
  for (int c = 0; c < 4; ++c) {
    std::vector<double> sc;
    std::vector<std::uint8_t> lb;
    for (int i = 0; i < 100; ++i) {
      sc.push_back(rp[i][c]);
      lb.push_back(code(rl[i]) == c);
    }
    const double want = oracle::auc_pairs(sc, lb);
    CHECK(*m.per_class[c] == want);
    sum += want;
  }
  CHECK(*m.macro == sum / 4);

  std::vector<ProbVector> np;
  std::vector<Density> nl;
  for (int i = 0; i < 10000; ++i) {
    np.push_back(random_prob(rng));
    nl.push_back(density_from_code(cat(rng)));
  }
  CHECK(std::abs(*macro_auc(np, nl).macro - 0.5) < 0.02);
  nl.assign(10000, Density::B);
  CHECK_FALSE(macro_auc(np, nl).macro.has_value());
}

TEST_CASE("metrics of degenerate predictors") {
  auto site = fixture::small_site(300, 31, 8);
  std::vector<ExamPrediction> perfect, uniform;
  for (const auto& e : site.dataset.exams) {
    ProbVector one{};
    one[code(e.label)] = 1.0;
    perfect.push_back({e.exam_id, e.label, one});
    uniform.push_back({e.exam_id, e.label, ProbVector{{0.25, 0.25, 0.25, 0.25}}});
  }
  auto r = compute_metrics(perfect);
  CHECK(r.four_class.accuracy == 1.0);
  CHECK(*r.four_class.linear_kappa == doctest::Approx(1.0));
  CHECK(*r.four_class.macro_auc == 1.0);
  CHECK(r.binary.accuracy == 1.0);

  auto u = compute_metrics(uniform);
  CHECK(u.four_class.accuracy == doctest::Approx(u.reference_distribution[0]));
  CHECK_FALSE(u.four_class.linear_kappa.has_value());
  CHECK(*u.binary.auc == 0.5);
  CHECK(u.predicted_distribution[0] == 1.0);
}

TEST_CASE("metrics report against an independent recount") {
  auto site = fixture::small_site(400, 32, 12);
  Predictor base = Predictor::base();
  auto ev = evaluate(base, site.dataset);
  const auto& exams = ev.exams;
  REQUIRE(exams.size() == site.dataset.exams.size());

  std::vector<std::vector<long>> four(4, std::vector<long>(4, 0)), two(2, std::vector<long>(2, 0));
  std::vector<double> dense_score;
  std::vector<std::uint8_t> dense_label;
  std::vector<std::vector<double>> class_score(4);
  std::vector<std::vector<std::uint8_t>> class_label(4);
  for (std::size_t i = 0; i < exams.size(); ++i) {
    const auto& e = site.dataset.exams[i];
    long double mean[4] = {0, 0, 0, 0};
    for (const auto& img : e.images) {
      auto p = oracle::calibrated_probs(
          {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}}, {0, 0, 0, 0}, img.logits);
      for (int c = 0; c < 4; ++c) mean[c] += p[c] / e.images.size();
    }
    int best = 0;
    for (int c = 1; c < 4; ++c)
      if (mean[c] > mean[best]) best = c;
    const int ref = code(e.label);
    four[ref][best]++;
    const double pd = static_cast<double>(mean[2] + mean[3]);
    two[ref >= 2][pd >= 0.5]++;
    dense_score.push_back(pd);
    dense_label.push_back(ref >= 2);
    for (int c = 0; c < 4; ++c) {
      class_score[c].push_back(static_cast<double>(mean[c]));
      class_label[c].push_back(ref == c);
    }
    CHECK(argmax_category(exams[i].probs) == density_from_code(best));
  }
  CHECK(ev.confusion == ConfusionMatrix::from_rows(four));
  CHECK(ev.binary_confusion == ConfusionMatrix::from_rows(two));
  const auto& r = ev.report;
  CHECK(*r.four_class.linear_kappa == doctest::Approx(oracle::kappa_definitional(four, true)).epsilon(1e-12));
  CHECK(*r.binary.kappa == doctest::Approx(oracle::kappa_definitional(two, false)).epsilon(1e-12));
  CHECK(*r.binary.auc == doctest::Approx(oracle::auc_pairs(dense_score, dense_label)).epsilon(1e-12));
  double macro = 0;
  for (int c = 0; c < 4; ++c) macro += oracle::auc_pairs(class_score[c], class_label[c]) / 4;
  CHECK(*r.four_class.macro_auc == doctest::Approx(macro).epsilon(1e-12));
  CHECK(r.n_exams == exams.size());
}

TEST_CASE("predict_exams serial and parallel agree and ignore image order") {
  auto site = fixture::small_site(200, 33, 12);
  Predictor p{std::nullopt, CalibrationParams{}};
  p.calibration->A[0][1] = 0.3;
  p.calibration->b[2] = -0.2;
  auto a = predict_exams(p, site.dataset, Execution::Serial);
  auto b = predict_exams(p, site.dataset, Execution::Parallel);
  CHECK(a == b);

  Dataset shuffled = site.dataset;
  std::mt19937_64 rng(1);
  for (auto& e : shuffled.exams) std::shuffle(e.images.begin(), e.images.end(), rng);
  auto c = predict_exams(p, shuffled, Execution::Serial);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (int k = 0; k < 4; ++k) CHECK(c[i].probs[k] == doctest::Approx(a[i].probs[k]).epsilon(1e-15));
  CHECK(compute_metrics(c).four_class.accuracy == compute_metrics(a).four_class.accuracy);
}

TEST_CASE("view consistency") {
  auto r = consistency_from_argmaxes({{Density::B, Density::B, Density::B, Density::B},
                                      {Density::A, Density::B, Density::B, Density::B},
                                      {Density::A, Density::C, Density::B, Density::B}});
  CHECK(r.distinct_count_histogram.at(1) == 1);
  CHECK(r.distinct_count_histogram.at(2) == 1);
  CHECK(r.distinct_count_histogram.at(3) == 1);
  CHECK(r.distinct_count_histogram.at(4) == 0);
  CHECK(r.non_adjacent_pair_count == 1);
  CHECK(r.fraction_all_same == doctest::Approx(1.0 / 3));
  CHECK_THROWS_AS(consistency_from_argmaxes({{Density::A}}), DataError);
}
