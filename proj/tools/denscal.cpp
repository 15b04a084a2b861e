// SPDX-License-Identifier: Apache-2.0
//
// denscal command-line interface.
//
//   denscal simulate    --scenario NAME --seed N --out DIR
//   denscal ingest      --input FILE... --out DIR
//   denscal calibrate   --train FILE --method vector|matrix --out DIR
//   denscal finetune    --train FILE --val FILE --seed N --out DIR
//   denscal evaluate    --test FILE [--calibration F] [--head F] --out DIR
//   denscal compare     --test FILE [--calibration F] [--head F] --out DIR
//   denscal sweep       --train FILE --val FILE --test FILE --out DIR
//   denscal consistency --test FILE [--calibration F] [--head F] --out DIR
//
// Any option can also come from an INI file given with --config, using one
// section per subcommand; command-line flags take precedence.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include "denscal/error.hpp"
#include "denscal/harness.hpp"
#include "denscal/rng.hpp"

using namespace denscal;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct Common {
  std::uint64_t seed = 0;
  std::string out = "out";
  std::size_t resamples = 8000;
};

struct PredictorFiles {
  std::string calibration;
  std::string head;

  Predictor load() const {
    Predictor p;
    if (!head.empty()) p.head = head_from_json(read_json_file(head));
    if (!calibration.empty()) p.calibration = calibration_from_json(read_json_file(calibration));
    return p;
  }
};

json meta(const std::string& command, const Common& c, int argc, char** argv) {
  json args = json::array();
  for (int i = 1; i < argc; ++i) args.push_back(argv[i]);
  return {{"command", command},
          {"seed", c.seed},
          {"created_utc", utc_timestamp()},
          {"threads", thread_count()},
          {"argv", args}};
}

void add_common(CLI::App* sub, Common& c, bool resamples) {
  sub->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  sub->add_option("--out", c.out, "Output directory")->capture_default_str();
  if (resamples) sub->add_option("--resamples", c.resamples, "Bootstrap resamples")->capture_default_str()
                     ->check(CLI::PositiveNumber);
}

void add_predictor(CLI::App* sub, PredictorFiles& p) {
  sub->add_option("--calibration", p.calibration, "Calibration JSON");
  sub->add_option("--head", p.head, "Retrained head JSON");
}

json dataset_summary(const Dataset& ds) {
  const auto counts = label_counts(ds);
  std::set<std::string> patients;
  for (const auto& e : ds.exams) patients.insert(e.patient_id);
  return {{"exams", ds.exams.size()},
          {"images", ds.image_count()},
          {"patients", patients.size()},
          {"feature_dim", ds.feature_dim},
          {"label_counts", counts}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Breast density classifier adaptation and evaluation toolkit"};
  app.set_config("--config", "", "INI config file (sections per subcommand)");
  app.require_subcommand(1);

  // simulate
  Common sim_c;
  std::string scenario = "site1-ffdm";
  std::size_t sim_patients = 0, sim_dim = 0;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic site and split it by patient");
  add_common(simulate, sim_c, false);
  simulate->add_option("--scenario", scenario, "Scenario name")
      ->check(CLI::IsMember(scenario_names()))
      ->capture_default_str();
  simulate->add_option("--patients", sim_patients, "Override the patient count")->check(CLI::PositiveNumber);
  simulate->add_option("--feature-dim", sim_dim, "Override the feature dimension")->check(CLI::Range(10, 1 << 16));

  // ingest
  Common ing_c;
  std::vector<std::string> ing_inputs;
  bool ing_standard = false;
  auto* ingest = app.add_subcommand("ingest", "Validate JSONL records and summarize them");
  add_common(ingest, ing_c, false);
  ingest->add_option("--input", ing_inputs, "JSONL files")->required();
  ingest->add_flag("--standard-only", ing_standard, "Keep only exams with the four standard views");

  // calibrate
  Common cal_c;
  std::string cal_train, cal_method = "matrix";
  auto* calibrate = app.add_subcommand("calibrate", "Fit vector or matrix calibration on logits");
  add_common(calibrate, cal_c, false);
  calibrate->add_option("--train", cal_train, "Training JSONL")->required();
  calibrate->add_option("--method", cal_method, "vector or matrix")
      ->check(CLI::IsMember({"vector", "matrix"}))
      ->capture_default_str();

  // finetune
  Common ft_c;
  std::string ft_train, ft_val;
  FinetuneConfig ft_cfg;
  auto* finetune = app.add_subcommand("finetune", "Retrain the last linear layer with Adam");
  add_common(finetune, ft_c, false);
  finetune->add_option("--train", ft_train, "Training JSONL")->required();
  finetune->add_option("--val", ft_val, "Validation JSONL")->required();
  finetune->add_option("--epochs", ft_cfg.epochs)->capture_default_str()->check(CLI::PositiveNumber);
  finetune->add_option("--batch-size", ft_cfg.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  finetune->add_option("--lr", ft_cfg.adam.learning_rate)->capture_default_str()->check(CLI::PositiveNumber);
  finetune->add_option("--weight-decay", ft_cfg.adam.weight_decay)->capture_default_str();

  // evaluate
  Common ev_c;
  std::string ev_test;
  PredictorFiles ev_p;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Metrics with bootstrap confidence intervals");
  add_common(evaluate_cmd, ev_c, true);
  evaluate_cmd->add_option("--test", ev_test, "Test JSONL")->required();
  add_predictor(evaluate_cmd, ev_p);

  // compare
  Common cmp_c;
  std::string cmp_test;
  PredictorFiles cmp_p;
  bool cmp_homogeneity = false;
  auto* compare = app.add_subcommand("compare", "Base vs adapted predictor with hypothesis tests");
  add_common(compare, cmp_c, true);
  compare->add_option("--test", cmp_test, "Test JSONL")->required();
  add_predictor(compare, cmp_p);
  compare->add_flag("--homogeneity", cmp_homogeneity, "2 x k chi-squared homogeneity instead of goodness of fit");

  // sweep
  Common sw_c;
  std::string sw_train, sw_val, sw_test, sw_metric = "kappa";
  std::vector<std::string> sw_methods{"none", "vector", "matrix", "finetune"};
  std::vector<std::size_t> sw_sizes;
  int sw_realizations = 10;
  FinetuneConfig sw_ft;
  auto* sweep = app.add_subcommand("sweep", "Metric vs number of site-specific training images");
  add_common(sweep, sw_c, false);
  sweep->add_option("--train", sw_train, "Training pool JSONL")->required();
  sweep->add_option("--val", sw_val, "Validation JSONL")->required();
  sweep->add_option("--test", sw_test, "Test JSONL")->required();
  sweep->add_option("--sizes", sw_sizes, "Comma-separated training sizes")->delimiter(',');
  sweep->add_option("--realizations", sw_realizations)->capture_default_str()->check(CLI::PositiveNumber);
  sweep->add_option("--method,--methods", sw_methods, "Comma-separated methods")
      ->delimiter(',')
      ->check(CLI::IsMember({"none", "vector", "matrix", "finetune", "scratch"}));
  sweep->add_option("--metric", sw_metric)->check(CLI::IsMember({"kappa", "macroauc"}))->capture_default_str();
  sweep->add_option("--epochs", sw_ft.epochs)->capture_default_str()->check(CLI::PositiveNumber);

  // consistency
  Common con_c;
  std::string con_test;
  PredictorFiles con_p;
  auto* consistency = app.add_subcommand("consistency", "Agreement of image-level predictions within exams");
  add_common(consistency, con_c, false);
  consistency->add_option("--test", con_test, "Test JSONL")->required();
  add_predictor(consistency, con_p);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*simulate) {
      ScenarioOverrides ov;
      if (sim_patients) ov.n_patients = sim_patients;
      if (sim_dim) ov.feature_dim = sim_dim;
      const Scenario sc = make_scenario(scenario, sim_c.seed, ov);
      const ScenarioData data = generate_scenario(sc, derive_seed({sim_c.seed, 0x73706cULL}));
      std::filesystem::create_directories(sim_c.out);
      const std::filesystem::path out(sim_c.out);
      save_jsonl(data.split.train, (out / "train.jsonl").string());
      save_jsonl(data.split.val, (out / "val.jsonl").string());
      save_jsonl(data.split.test, (out / "test.jsonl").string());
      std::ofstream gt(out / "ground_truth.json");
      gt << to_json(data.site.truth).dump() << "\n";
      if (!gt) throw DataError("failed writing " + (out / "ground_truth.json").string());
      RunOutputs ro;
      ro.report = {{"scenario", scenario},
                   {"seed", sim_c.seed},
                   {"train", dataset_summary(data.split.train)},
                   {"val", dataset_summary(data.split.val)},
                   {"test", dataset_summary(data.split.test)}};
      ro.metadata = meta("simulate", sim_c, argc, argv);
      emit_outputs(ro, out);
    } else if (*ingest) {
      Dataset all;
      std::vector<ImageRecord> images;
      for (const auto& path : ing_inputs) {
        Dataset ds = load_jsonl(path);
        for (auto& e : ds.exams)
          for (auto& img : e.images) images.push_back(std::move(img));
      }
      all = group_images(std::move(images), "ingest");
      if (ing_standard) all = filter_standard_exams(all);
      RunOutputs ro;
      ro.report = {{"inputs", ing_inputs}, {"standard_only", ing_standard}, {"dataset", dataset_summary(all)}};
      ro.metadata = meta("ingest", ing_c, argc, argv);
      emit_outputs(ro, ing_c.out);
      save_jsonl(all, (std::filesystem::path(ing_c.out) / "dataset.jsonl").string());
    } else if (*calibrate) {
      const Dataset train = load_jsonl(cal_train);
      const auto mode = calibration_mode_from_string(cal_method);
      const CalibrationFit fit = fit_calibration(train, mode);
      if (fit.optim.status == OptimStatus::LineSearchFailed)
        throw NumericError("calibration fit failed: line search could not make progress");
      RunOutputs ro;
      ro.report = {{"method", cal_method},
                   {"optim", to_json(fit.optim)},
                   {"train_cross_entropy_before", image_cross_entropy(Predictor::base(), train)},
                   {"train_cross_entropy_after", image_cross_entropy(Predictor{std::nullopt, fit.params}, train)},
                   {"calibration", to_json(fit.params)}};
      ro.metadata = meta("calibrate", cal_c, argc, argv);
      emit_outputs(ro, cal_c.out);
      std::ofstream f(std::filesystem::path(cal_c.out) / "calibration.json");
      f << to_json(fit.params).dump(2) << "\n";
      if (!f) throw DataError("failed writing calibration.json");
    } else if (*finetune) {
      const Dataset train = load_jsonl(ft_train);
      const Dataset val = load_jsonl(ft_val);
      ft_cfg.seed = ft_c.seed;
      const FinetuneFit fit = fit_finetune_head(train, val, ft_cfg);
      RunOutputs ro;
      ro.report = {{"trace", to_json(fit.trace)},
                   {"epochs", ft_cfg.epochs},
                   {"batch_size", ft_cfg.batch_size},
                   {"learning_rate", ft_cfg.adam.learning_rate},
                   {"weight_decay", ft_cfg.adam.weight_decay}};
      ro.metadata = meta("finetune", ft_c, argc, argv);
      emit_outputs(ro, ft_c.out);
      std::ofstream f(std::filesystem::path(ft_c.out) / "head.json");
      f << to_json(fit.head).dump() << "\n";
      if (!f) throw DataError("failed writing head.json");
    } else if (*evaluate_cmd) {
      const Dataset test = load_jsonl(ev_test);
      const EvaluationReport rep = run_evaluation(ev_p.load(), test, ev_c.resamples, ev_c.seed);
      RunOutputs ro;
      ro.report = to_json(rep);
      ro.confusion = rep.evaluation.confusion;
      ro.metadata = meta("evaluate", ev_c, argc, argv);
      emit_outputs(ro, ev_c.out);
    } else if (*compare) {
      const Dataset test = load_jsonl(cmp_test);
      ComparisonConfig cc;
      cc.n_resamples = cmp_c.resamples;
      cc.seed = cmp_c.seed;
      cc.chi_squared = cmp_homogeneity ? ChiSquaredForm::Homogeneity : ChiSquaredForm::GoodnessOfFit;
      const ComparisonReport rep = run_comparison(Predictor::base(), cmp_p.load(), test, cc);
      RunOutputs ro;
      ro.report = to_json(rep);
      ro.confusion = rep.after.evaluation.confusion;
      ro.metadata = meta("compare", cmp_c, argc, argv);
      emit_outputs(ro, cmp_c.out);
    } else if (*sweep) {
      const Dataset pool = load_jsonl(sw_train);
      const Dataset val = load_jsonl(sw_val);
      const Dataset test = load_jsonl(sw_test);
      SweepConfig cfg;
      cfg.sizes = sw_sizes.empty() ? clip_sizes(cfg.sizes, pool.image_count()) : sw_sizes;
      cfg.realizations = sw_realizations;
      cfg.methods.clear();
      for (const auto& m : sw_methods) cfg.methods.push_back(method_from_string(m));
      cfg.metric = sweep_metric_from_string(sw_metric);
      cfg.base_seed = sw_c.seed;
      cfg.adaptation.finetune.epochs = sw_ft.epochs;
      const SweepResult res = run_sweep(cfg, pool, val, test);
      RunOutputs ro;
      ro.report = to_json(res);
      ro.write_sweep = true;
      ro.sweep = res;
      ro.metadata = meta("sweep", sw_c, argc, argv);
      emit_outputs(ro, sw_c.out);
    } else if (*consistency) {
      const Dataset test = load_jsonl(con_test);
      RunOutputs ro;
      ro.report = to_json(view_consistency(con_p.load(), test));
      ro.metadata = meta("consistency", con_c, argc, argv);
      emit_outputs(ro, con_c.out);
    }
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  }
  return 0;
}
