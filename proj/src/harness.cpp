// SPDX-License-Identifier: Apache-2.0
#include "denscal/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "denscal/error.hpp"
#include "denscal/rng.hpp"

namespace denscal {

namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view to_string(Method m) {
  switch (m) {
    case Method::None: return "none";
    case Method::Vector: return "vector";
    case Method::Matrix: return "matrix";
    case Method::FineTune: return "finetune";
  }
  return "?";
}

Method method_from_string(std::string_view s) {
  if (s == "none") return Method::None;
  if (s == "vector") return Method::Vector;
  if (s == "matrix") return Method::Matrix;
  if (s == "finetune") return Method::FineTune;
  if (s == "scratch") throw DataError("method 'scratch' is reserved for external results");
  throw DataError("unknown method '" + std::string(s) + "'");
}

Predictor fit_method(Method m, const Dataset& train, const Dataset& val, const AdaptationConfig& cfg,
                     std::uint64_t seed) {
  switch (m) {
    case Method::None: return Predictor::base();
    case Method::Vector:
    case Method::Matrix: {
      const auto mode = m == Method::Vector ? CalibrationMode::Vector : CalibrationMode::Matrix;
      return Predictor{std::nullopt, fit_calibration(train, mode, cfg.bfgs).params};
    }
    case Method::FineTune: {
      FinetuneConfig ft = cfg.finetune;
      ft.seed = seed;
      return Predictor{fit_finetune_head(train, val, ft).head, std::nullopt};
    }
  }
  throw DataError("unknown method");
}

void check_no_leakage(const Dataset& train, const Dataset& val, const Dataset& test) {
  std::set<std::string> patients, images;
  for (const Dataset* ds : {&val, &test})
    for (const auto& e : ds->exams) {
      patients.insert(e.patient_id);
      for (const auto& img : e.images) images.insert(img.image_id);
    }
  for (const auto& e : train.exams) {
    if (patients.count(e.patient_id)) throw DataError("leakage: patient " + e.patient_id + " is in val/test");
    for (const auto& img : e.images)
      if (images.count(img.image_id)) throw DataError("leakage: image " + img.image_id + " is in val/test");
  }
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

/// Scores in ascending order with tie groups, for weighted rank statistics.
struct RankedScores {
  std::vector<std::uint32_t> order;
  std::vector<std::uint32_t> group_end;  // per sorted position
  std::vector<std::uint8_t> positive;    // by item

  RankedScores(const std::vector<double>& scores, std::vector<std::uint8_t> labels) : positive(std::move(labels)) {
    const std::size_t n = scores.size();
    order.resize(n);
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
    group_end.resize(n);
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j < n && scores[order[j]] == scores[order[i]]) ++j;
      for (std::size_t k = i; k < j; ++k) group_end[k] = static_cast<std::uint32_t>(j);
      i = j;
    }
  }

  /// Mann-Whitney AUC with item multiplicities; integer arithmetic up to the
  /// final division, so it agrees with roc_auc on the expanded sample.
  std::optional<double> auc(std::span<const std::uint32_t> weight) const {
    long long neg_below = 0, twice_u = 0, n_pos = 0, n_neg = 0;
    const std::size_t n = order.size();
    for (std::size_t i = 0; i < n;) {
      const std::size_t j = group_end[i];
      long long gp = 0, gn = 0;
      for (std::size_t k = i; k < j; ++k) {
        const auto item = order[k];
        (positive[item] ? gp : gn) += weight[item];
      }
      twice_u += gp * (2 * neg_below + gn);
      neg_below += gn;
      n_pos += gp;
      n_neg += gn;
      i = j;
    }
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
  }
};

}  // namespace

EvaluationReport run_evaluation(const Predictor& pred, const Dataset& test, std::size_t n_resamples,
                                std::uint64_t seed, Execution exec) {
  if (test.empty()) throw DataError("run_evaluation: empty test set");
  EvaluationReport out;
  out.pipeline = pred.pipeline();
  Evaluation& ev = out.evaluation;
  ev.exams = predict_exams(pred, test, exec);
  ev.report = compute_metrics(ev.exams);
  ev.confusion = four_class_confusion(ev.exams);
  ev.binary_confusion = binary_confusion(ev.exams);

  const std::size_t n = ev.exams.size();
  const BinaryRule rule = ev.report.binary_rule;
  std::vector<std::uint8_t> ref(n), model(n), bref(n), bmodel(n);
  std::vector<std::vector<double>> class_scores(kNumCategories, std::vector<double>(n));
  std::vector<double> dense_scores(n);
  std::vector<std::vector<std::uint8_t>> class_labels(kNumCategories, std::vector<std::uint8_t>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = ev.exams[i];
    ref[i] = static_cast<std::uint8_t>(code(e.reference));
    model[i] = static_cast<std::uint8_t>(code(argmax_category(e.probs)));
    const BinaryCollapse bc = binary_collapse(e.probs, rule);
    bref[i] = is_dense(e.reference) ? 1 : 0;
    bmodel[i] = bc.dense ? 1 : 0;
    dense_scores[i] = bc.p_dense;
    for (std::size_t c = 0; c < kNumCategories; ++c) {
      class_scores[c][i] = e.probs[c];
      class_labels[c][i] = ref[i] == c ? 1 : 0;
    }
  }
  std::vector<RankedScores> class_ranks;
  for (std::size_t c = 0; c < kNumCategories; ++c) class_ranks.emplace_back(class_scores[c], class_labels[c]);
  const RankedScores dense_ranks(dense_scores, bref);

  MultiStatistic stat = [&](std::span<const std::size_t> idx, std::span<std::optional<double>> res) {
    std::vector<std::uint32_t> weight(n, 0);
    ConfusionMatrix cm(kNumCategories), bcm(2);
    for (std::size_t i : idx) {
      ++weight[i];
      cm.add(ref[i], model[i]);
      bcm.add(bref[i], bmodel[i]);
    }
    res[0] = accuracy(cm);
    res[1] = cohen_kappa(cm, KappaWeighting::Linear);
    double sum = 0.0;
    bool defined = true;
    for (const auto& r : class_ranks) {
      const auto a = r.auc(weight);
      if (!a) {
        defined = false;
        break;
      }
      sum += *a;
    }
    res[2] = defined ? std::optional<double>(sum / kNumCategories) : std::nullopt;
    res[3] = accuracy(bcm);
    res[4] = dense_ranks.auc(weight);
    res[5] = cohen_kappa(bcm, KappaWeighting::Unweighted);
  };
  BootstrapConfig bcfg;
  bcfg.n_resamples = n_resamples;
  bcfg.seed = seed;
  bcfg.exec = exec;
  const auto results = pivotal_bootstrap_multi(n, kCiMetrics.size(), stat, bcfg);
  for (std::size_t s = 0; s < kCiMetrics.size(); ++s) {
    std::optional<BootstrapCI> ci;
    if (results[s]) ci = results[s]->ci;
    out.ci.emplace(std::string(kCiMetrics[s]), ci);
  }
  return out;
}

namespace {

std::optional<TestResult> difference_test(std::optional<double> est1, std::optional<double> se1,
                                          std::optional<double> est2, std::optional<double> se2) {
  if (!est1 || !est2 || !se1 || !se2) return std::nullopt;
  if (*se1 == 0.0 && *se2 == 0.0) {
    if (*est1 != *est2) return std::nullopt;
    return TestResult{0.0, 1.0, Alternative::TwoSided, "z-test", std::nullopt};
  }
  return z_test_difference(*est1, *se1, *est2, *se2, Alternative::TwoSided);
}

std::optional<double> kappa_se(const ConfusionMatrix& cm, KappaWeighting w) {
  if (!cohen_kappa(cm, w)) return std::nullopt;
  return fleiss_kappa_se(cm, w);
}

std::vector<Density> argmaxes(const std::vector<ExamPrediction>& exams) {
  std::vector<Density> out;
  out.reserve(exams.size());
  for (const auto& e : exams) out.push_back(argmax_category(e.probs));
  return out;
}

}  // namespace

ComparisonReport run_comparison(const Predictor& base, const Predictor& adapted, const Dataset& test,
                                const ComparisonConfig& cfg) {
  ComparisonReport out;
  out.before = run_evaluation(base, test, cfg.n_resamples, cfg.seed);
  out.after = run_evaluation(adapted, test, cfg.n_resamples, cfg.seed);

  const auto& rb = out.before.evaluation.report;
  const auto& ra = out.after.evaluation.report;
  const std::size_t n = rb.n_exams;
  const auto& cb = out.before.evaluation.confusion;
  const auto& ca = out.after.evaluation.confusion;
  const auto& bb = out.before.evaluation.binary_confusion;
  const auto& ba = out.after.evaluation.binary_confusion;

  out.z_tests["four_class_accuracy"] =
      difference_test(ra.four_class.accuracy, proportion_se(ra.four_class.accuracy, n), rb.four_class.accuracy,
                      proportion_se(rb.four_class.accuracy, n));
  out.z_tests["linear_kappa"] = difference_test(ra.four_class.linear_kappa, kappa_se(ca, KappaWeighting::Linear),
                                                rb.four_class.linear_kappa, kappa_se(cb, KappaWeighting::Linear));
  out.z_tests["binary_accuracy"] = difference_test(ra.binary.accuracy, proportion_se(ra.binary.accuracy, n),
                                                   rb.binary.accuracy, proportion_se(rb.binary.accuracy, n));
  out.z_tests["binary_kappa"] = difference_test(ra.binary.kappa, kappa_se(ba, KappaWeighting::Unweighted),
                                                rb.binary.kappa, kappa_se(bb, KappaWeighting::Unweighted));

  std::vector<Density> reference;
  for (const auto& e : out.before.evaluation.exams) reference.push_back(e.reference);
  BootstrapConfig bcfg;
  bcfg.n_resamples = cfg.n_resamples;
  bcfg.seed = cfg.seed;
  out.before_distribution =
      compare_distributions(reference, argmaxes(out.before.evaluation.exams), bcfg, cfg.chi_squared);
  out.after_distribution =
      compare_distributions(reference, argmaxes(out.after.evaluation.exams), bcfg, cfg.chi_squared);
  out.kl_before_vs_after = kl_ttest(out.before_distribution.kl.replicates, out.after_distribution.kl.replicates);
  return out;
}

// ---------------------------------------------------------------------------
// Sweep

std::string_view to_string(SweepMetric m) { return m == SweepMetric::LinearKappa ? "kappa" : "macroauc"; }

SweepMetric sweep_metric_from_string(std::string_view s) {
  if (s == "kappa") return SweepMetric::LinearKappa;
  if (s == "macroauc") return SweepMetric::MacroAuc;
  throw DataError("unknown sweep metric '" + std::string(s) + "'");
}

void SweepConfig::validate() const {
  if (sizes.empty()) throw DataError("sweep: no sizes");
  if (sizes.front() == 0) throw DataError("sweep: sizes must be positive");
  for (std::size_t i = 1; i < sizes.size(); ++i)
    if (sizes[i] <= sizes[i - 1]) throw DataError("sweep: sizes must be strictly increasing");
  if (realizations < 1) throw DataError("sweep: realizations must be >= 1");
  if (methods.empty()) throw DataError("sweep: no methods");
  std::set<Method> seen(methods.begin(), methods.end());
  if (seen.size() != methods.size()) throw DataError("sweep: duplicate method");
  adaptation.bfgs.validate();
  adaptation.finetune.adam.validate();
}

const SweepAggregate& SweepResult::aggregate(Method m, std::size_t size) const {
  for (const auto& a : aggregates)
    if (a.method == m && a.size == size) return a;
  throw DataError("sweep: no aggregate for " + std::string(to_string(m)) + " at size " + std::to_string(size));
}

std::vector<std::size_t> clip_sizes(const std::vector<std::size_t>& sizes, std::size_t pool) {
  std::vector<std::size_t> out;
  for (auto s : sizes)
    if (s <= pool) out.push_back(s);
  return out;
}

std::uint64_t sweep_cell_seed(std::uint64_t base_seed, std::size_t size, int realization) {
  return derive_seed({base_seed, size, static_cast<std::uint64_t>(realization)});
}

namespace {

std::optional<double> sweep_metric(const Predictor& pred, const Dataset& test, SweepMetric metric) {
  const auto rep = compute_metrics(predict_exams(pred, test, Execution::Serial));
  return metric == SweepMetric::LinearKappa ? rep.four_class.linear_kappa : rep.four_class.macro_auc;
}

}  // namespace

std::optional<double> run_sweep_cell(const SweepConfig& cfg, Method m, std::size_t size, int realization,
                                     const Dataset& pool, const Dataset& val, const Dataset& test) {
  if (m == Method::None) return sweep_metric(Predictor::base(), test, cfg.metric);
  const std::uint64_t seed = sweep_cell_seed(cfg.base_seed, size, realization);
  const Dataset train = subsample_images(pool, size, seed);
  check_no_leakage(train, val, test);
  const Predictor pred = fit_method(m, train, val, cfg.adaptation, derive_seed({seed, 0x66740000ULL}));
  return sweep_metric(pred, test, cfg.metric);
}

SweepResult run_sweep(const SweepConfig& cfg, const Dataset& pool, const Dataset& val, const Dataset& test,
                      Execution exec) {
  cfg.validate();
  if (test.empty()) throw DataError("sweep: empty test set");
  const std::size_t pool_images = pool.image_count();
  if (cfg.sizes.back() > pool_images)
    throw DataError("sweep: size " + std::to_string(cfg.sizes.back()) + " exceeds the pool of " +
                    std::to_string(pool_images) + " images");
  check_no_leakage(pool, val, test);

  SweepResult out;
  out.metric = cfg.metric;
  out.sizes = cfg.sizes;
  out.methods = cfg.methods;
  out.realizations = cfg.realizations;

  struct Task {
    Method method;
    std::size_t size;
    int realization;
  };
  std::vector<Task> tasks;
  for (Method m : cfg.methods) {
    if (m == Method::None) continue;
    for (auto s : cfg.sizes)
      for (int r = 0; r < cfg.realizations; ++r) tasks.push_back({m, s, r});
  }
  std::vector<std::optional<double>> values(tasks.size());

  const bool need_none =
      std::find(cfg.methods.begin(), cfg.methods.end(), Method::None) != cfg.methods.end();
  std::optional<double> none_value;
  if (need_none) none_value = sweep_metric(Predictor::base(), test, cfg.metric);

  const long n_tasks = static_cast<long>(tasks.size());
  if (exec == Execution::Parallel) {
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 1) num_threads(thread_count())
    for (long t = 0; t < n_tasks; ++t) {
      try {
        const Task& k = tasks[static_cast<std::size_t>(t)];
        values[static_cast<std::size_t>(t)] = run_sweep_cell(cfg, k.method, k.size, k.realization, pool, val, test);
      } catch (...) {
#pragma omp critical(denscal_sweep_error)
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  } else {
    for (long t = 0; t < n_tasks; ++t) {
      const Task& k = tasks[static_cast<std::size_t>(t)];
      values[static_cast<std::size_t>(t)] = run_sweep_cell(cfg, k.method, k.size, k.realization, pool, val, test);
    }
  }

  std::size_t t = 0;
  for (Method m : cfg.methods)
    for (auto s : cfg.sizes) {
      std::vector<double> defined;
      for (int r = 0; r < cfg.realizations; ++r) {
        std::optional<double> v = m == Method::None ? none_value : values[t++];
        out.cells.push_back({m, s, r, v});
        if (v) defined.push_back(*v);
      }
      SweepAggregate agg{m, s, std::nan(""), std::nan(""), defined.size()};
      if (!defined.empty()) {
        const double k = static_cast<double>(defined.size());
        double sum = 0.0;
        for (double v : defined) sum += v;
        agg.mean = sum / k;
        double ss = 0.0;
        for (double v : defined) ss += (v - agg.mean) * (v - agg.mean);
        agg.sem = defined.size() > 1 ? std::sqrt(ss / (k - 1.0)) / std::sqrt(k) : 0.0;
      }
      out.aggregates.push_back(agg);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Scenarios

namespace {

constexpr double kSourceReaderNoise = 0.35;
constexpr std::size_t kSourceImages = 20000;

}  // namespace

std::vector<std::string> scenario_names() { return {"site1-ffdm", "site2-calibrated", "composite"}; }

Scenario make_scenario(std::string_view name, std::uint64_t seed, const ScenarioOverrides& overrides) {
  Scenario sc;
  sc.name = std::string(name);
  sc.gen.seed = seed;
  sc.gen.geometry_seed = derive_seed({seed, 0x67656fULL});
  sc.profile = SiteProfile::site2_sm();
  sc.profile.double_read_fraction = 0.8;
  if (name == "site1-ffdm") {
    sc.gen.feature_dim = 64;
    sc.gen.n_patients = 5000;
    sc.gen.site_id = "site1";
    sc.gen.modality = Modality::FFDM;
    sc.profile = SiteProfile::site1_ffdm();
    sc.profile.reader_noise = kSourceReaderNoise;
  } else if (name == "site2-calibrated") {
    sc.gen.feature_dim = 32;
    sc.gen.n_patients = 15000;
    sc.gen.site_id = "site2";
    sc.profile.reader_noise = 0.4;
  } else if (name == "composite") {
    sc.gen.feature_dim = 512;
    sc.gen.n_patients = 6000;
    sc.gen.site_id = "site3";
    sc.profile.reader_noise = 0.3;
    sc.split = SplitRatios{0.5, 0.1, 0.4};
  } else {
    throw DataError("unknown scenario '" + std::string(name) + "'");
  }
  if (overrides.feature_dim) sc.gen.feature_dim = *overrides.feature_dim;
  if (overrides.n_patients) sc.gen.n_patients = *overrides.n_patients;

  if (name == "site2-calibrated") {
    sc.shift.logit = make_logit_shift(0.8, 0.15, Logits{0.3, 0.2, -0.1, -0.3});
  } else if (name == "composite") {
    const Geometry g = make_geometry(sc.gen.feature_dim, sc.gen.geometry_seed);
    sc.shift.feature = make_feature_rotation(g, 0.8, 0.5, 1.2);
    sc.shift.logit = make_logit_shift(0.7, 0.0, Logits{0.5, 0.3, -0.3, -0.6});
  }
  SiteProfile source = SiteProfile::site1_ffdm();
  source.reader_noise = kSourceReaderNoise;
  sc.gen.base_head = pretrain_source_head(sc.gen, source, kSourceImages, derive_seed({seed, 0x7372630000ULL}));
  return sc;
}

ScenarioData generate_scenario(const Scenario& sc, std::uint64_t split_seed) {
  ScenarioData out{generate_site(sc.gen, sc.profile, sc.shift), {}};
  out.split = split_by_patient(out.site.dataset, sc.split, split_seed);
  out.split.test = filter_standard_exams(out.split.test);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json to_json(const BootstrapCI& ci) {
  return {{"point", ci.point}, {"lower", ci.lower},           {"upper", ci.upper},
          {"se", ci.se},       {"n_resamples", ci.n_resamples}, {"n_dropped", ci.n_dropped},
          {"alpha", ci.alpha}, {"seed", ci.seed},             {"method", "pivotal bootstrap"}};
}

nlohmann::json to_json(const TestResult& t) {
  nlohmann::json j{{"method", t.method},
                   {"statistic", t.statistic},
                   {"p_value", t.p_value},
                   {"alternative", std::string(to_string(t.alternative))}};
  j["df"] = opt(t.df);
  return j;
}

nlohmann::json to_json(const WilcoxonResult& w) {
  nlohmann::json j = to_json(w.test);
  j["n_nonzero"] = w.n_nonzero;
  j["exact"] = w.exact;
  j["all_ties"] = w.all_ties;
  return j;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per_class = nlohmann::json::array();
  for (const auto& a : r.four_class.per_class_auc) per_class.push_back(opt(a));
  return {{"n_exams", r.n_exams},
          {"binary_rule", std::string(to_string(r.binary_rule))},
          {"four_class",
           {{"accuracy", r.four_class.accuracy},
            {"linear_kappa", opt(r.four_class.linear_kappa)},
            {"macro_auc", opt(r.four_class.macro_auc)},
            {"per_class_auc", per_class}}},
          {"binary", {{"accuracy", r.binary.accuracy}, {"auc", opt(r.binary.auc)}, {"kappa", opt(r.binary.kappa)}}},
          {"predicted_distribution", r.predicted_distribution},
          {"reference_distribution", r.reference_distribution}};
}

nlohmann::json to_json(const ConfusionMatrix& cm) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < cm.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < cm.size(); ++j) row.push_back(cm.at(i, j));
    rows.push_back(row);
  }
  return rows;
}

nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json ci = nlohmann::json::object();
  for (const auto& [k, v] : r.ci) ci[k] = v ? to_json(*v) : nlohmann::json(nullptr);
  return {{"pipeline", std::string(to_string(r.pipeline))},
          {"metrics", to_json(r.evaluation.report)},
          {"ci", ci},
          {"confusion", to_json(r.evaluation.confusion)},
          {"binary_confusion", to_json(r.evaluation.binary_confusion)}};
}

nlohmann::json to_json(const DistributionComparison& d) {
  return {{"reference", d.reference},
          {"model", d.model},
          {"kl", to_json(d.kl.ci)},
          {"kl_direction", "reference||model"},
          {"chi_squared", to_json(d.chi_squared)},
          {"wilcoxon", to_json(d.wilcoxon)}};
}

nlohmann::json to_json(const ComparisonReport& r) {
  nlohmann::json z = nlohmann::json::object();
  for (const auto& [k, v] : r.z_tests) z[k] = v ? to_json(*v) : nlohmann::json(nullptr);
  return {{"before", to_json(r.before)},
          {"after", to_json(r.after)},
          {"z_tests", z},
          {"distribution_before", to_json(r.before_distribution)},
          {"distribution_after", to_json(r.after_distribution)},
          {"kl_before_vs_after", to_json(r.kl_before_vs_after)}};
}

nlohmann::json to_json(const SweepResult& r) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : r.cells)
    cells.push_back({{"method", std::string(to_string(c.method))},
                     {"size", c.size},
                     {"realization", c.realization},
                     {"value", opt(c.value)}});
  nlohmann::json aggs = nlohmann::json::array();
  for (const auto& a : r.aggregates) {
    const bool defined = a.n_defined > 0;
    aggs.push_back({{"method", std::string(to_string(a.method))},
                    {"size", a.size},
                    {"mean", defined ? nlohmann::json(a.mean) : nlohmann::json(nullptr)},
                    {"sem", defined ? nlohmann::json(a.sem) : nlohmann::json(nullptr)},
                    {"n_defined", a.n_defined}});
  }
  nlohmann::json methods = nlohmann::json::array();
  for (Method m : r.methods) methods.push_back(std::string(to_string(m)));
  return {{"metric", std::string(to_string(r.metric))},
          {"sizes", r.sizes},
          {"methods", methods},
          {"realizations", r.realizations},
          {"cells", cells},
          {"aggregates", aggs}};
}

nlohmann::json to_json(const ConsistencyReport& r) {
  nlohmann::json hist = nlohmann::json::object();
  for (const auto& [k, v] : r.distinct_count_histogram) hist[std::to_string(k)] = v;
  return {{"fraction_all_same", r.fraction_all_same},
          {"distinct_count_histogram", hist},
          {"non_adjacent_pair_count", r.non_adjacent_pair_count},
          {"n_exams", r.n_exams}};
}

nlohmann::json to_json(const OptimResult& r) {
  return {{"status", std::string(to_string(r.status))},
          {"iterations", r.iterations},
          {"value", r.value},
          {"grad_norm", r.grad_norm}};
}

nlohmann::json to_json(const TrainTrace& t) {
  return {{"train_loss", t.train_loss}, {"val_loss", t.val_loss}, {"selected_epoch", t.selected_epoch}};
}

std::string confusion_csv(const ConfusionMatrix& cm) {
  std::ostringstream os;
  const bool four = cm.size() == kNumCategories;
  auto name = [&](std::size_t i) {
    return four ? std::string(label(density_from_code(static_cast<int>(i)))) : std::to_string(i);
  };
  os << "reference\\model";
  for (std::size_t j = 0; j < cm.size(); ++j) os << ',' << name(j);
  os << '\n';
  for (std::size_t i = 0; i < cm.size(); ++i) {
    os << name(i);
    for (std::size_t j = 0; j < cm.size(); ++j) os << ',' << cm.at(i, j);
    os << '\n';
  }
  return os.str();
}

std::string empty_sweep_csv() { return "method,size,realization,metric,value\n"; }

std::string sweep_csv(const SweepResult& r) {
  std::ostringstream os;
  os << empty_sweep_csv();
  const std::string metric(to_string(r.metric));
  for (const auto& c : r.cells)
    os << to_string(c.method) << ',' << c.size << ',' << c.realization << ',' << metric << ','
       << (c.value ? format_double(*c.value) : "NA") << '\n';
  for (const auto& a : r.aggregates) {
    const bool defined = a.n_defined > 0;
    os << to_string(a.method) << ',' << a.size << ",mean," << metric << ','
       << (defined ? format_double(a.mean) : "NA") << '\n';
    os << to_string(a.method) << ',' << a.size << ",sem," << metric << ','
       << (defined ? format_double(a.sem) : "NA") << '\n';
  }
  return os.str();
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  f << content;
  f.close();
  if (!f) throw DataError("failed writing " + path.string());
}

}  // namespace

std::vector<std::filesystem::path> emit_outputs(const RunOutputs& out, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    const auto path = out_dir / name;
    write_file(path, content);
    written.push_back(path);
  };
  emit("report.json", out.report.dump(2) + "\n");
  if (out.confusion) emit("confusion.csv", confusion_csv(*out.confusion));
  if (out.write_sweep) emit("sweep.csv", out.sweep ? sweep_csv(*out.sweep) : empty_sweep_csv());
  if (!out.metadata.is_null()) emit("meta.json", out.metadata.dump(2) + "\n");
  return written;
}

}  // namespace denscal
