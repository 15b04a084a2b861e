// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "denscal/error.hpp"
#include "denscal/simgen.hpp"
#include "support.hpp"

using namespace denscal;

namespace {

void check_prior(const SiteProfile& p, std::uint64_t seed) {
  GenConfig g;
  g.feature_dim = 8;
  g.n_patients = 5000;
  g.seed = seed;
  SiteProfile noiseless = p;
  auto site = generate_site(g, noiseless, {});
  auto counts = label_counts(site.dataset);
  const double n = 5000;
  for (int c = 0; c < 4; ++c) {
    const double q = p.density_prior[c];
    CHECK(std::abs(counts[c] - n * q) <= 3 * std::sqrt(n * q * (1 - q)));
  }
}

}  // namespace

TEST_CASE("site priors") {
  check_prior(SiteProfile::site1_ffdm(), 1);
  check_prior(SiteProfile::site2_sm(), 2);
  auto s1 = SiteProfile::site1_ffdm().density_prior;
  CHECK(s1[0] == doctest::Approx(0.093).epsilon(0.02));
  CHECK(s1[1] == doctest::Approx(0.520).epsilon(0.02));
  auto s2 = SiteProfile::site2_sm().density_prior;
  CHECK(s2[0] == doctest::Approx(0.153).epsilon(0.02));
  CHECK(s2[3] == doctest::Approx(0.123).epsilon(0.02));
}

TEST_CASE("noiseless source data is almost perfectly classified") {
  GenConfig g;
  g.feature_dim = 64;
  g.n_patients = 2000;
  g.seed = 5;
  auto site = generate_site(g, SiteProfile::site1_ffdm(), {});
  auto ev = evaluate(Predictor::base(), site.dataset);
  CHECK(ev.report.four_class.accuracy >= 0.99);
}

TEST_CASE("generation is deterministic and schedule independent") {
  GenConfig g;
  g.feature_dim = 12;
  g.n_patients = 300;
  g.exams_per_patient = {0.6, 0.4};
  g.seed = 9;
  ShiftSpec sh;
  sh.logit = make_logit_shift(0.8, 0.1, {0.2, 0, 0, -0.2});
  auto a = generate_site(g, SiteProfile::site2_sm(), sh, Execution::Parallel);
  auto b = generate_site(g, SiteProfile::site2_sm(), sh, Execution::Serial);
  CHECK(a.dataset == b.dataset);
  CHECK(a.truth.true_category == b.truth.true_category);
  g.seed = 10;
  CHECK_FALSE(generate_site(g, SiteProfile::site2_sm(), sh).dataset == a.dataset);
}

TEST_CASE("stored logits follow the head and the logit shift") {
  GenConfig g;
  g.feature_dim = 10;
  g.n_patients = 100;
  auto plain = generate_site(g, SiteProfile::site1_ffdm(), {});
  for (const auto* img : flatten_images(plain.dataset)) CHECK(img->logits == head_forward(plain.truth.base_head, img->features));

  ShiftSpec sh;
  sh.logit = make_logit_shift(0.7, 0.2, {0.5, 0.1, -0.2, -0.4});
  Geometry geo = make_geometry(g.feature_dim, g.geometry_seed);
  sh.feature = make_feature_rotation(geo, 0.5, 0.3, 0.4);
  CHECK(sh.kind() == ShiftKind::Composite);
  auto shifted = generate_site(g, SiteProfile::site1_ffdm(), sh);
  for (const auto* img : flatten_images(shifted.dataset))
    CHECK(img->logits == apply_logit_shift(*sh.logit, head_forward(shifted.truth.base_head, img->features)));
}

TEST_CASE("geometry is orthonormal") {
  Geometry g = make_geometry(16, 3);
  std::vector<const std::vector<double>*> dirs{&g.axis, &g.nuisance};
  for (const auto& d : g.class_dirs) dirs.push_back(&d);
  for (const auto& d : g.spare) dirs.push_back(&d);
  CHECK(g.spare.size() == 4);
  for (std::size_t i = 0; i < dirs.size(); ++i)
    for (std::size_t j = 0; j < dirs.size(); ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < 16; ++k) dot += (*dirs[i])[k] * (*dirs[j])[k];
      CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
    }
  CHECK(make_geometry(8, 3).spare.empty());
  CHECK_THROWS_AS(make_feature_rotation(make_geometry(8, 3), 0.3, 0.0, 0.5), DataError);
}

TEST_CASE("feature rotation is orthogonal") {
  Geometry g = make_geometry(12, 4);
  auto r = make_feature_rotation(g, 0.7, 0.5, 1.1);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t j = 0; j < 12; ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < 12; ++k) dot += r.R[k * 12 + i] * r.R[k * 12 + j];
      CHECK(dot == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-12));
    }
  CHECK(condition_number(r.R, 12) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("shift validation") {
  ShiftSpec sh;
  sh.logit = make_logit_shift(1.0, 0.0, {0, 0, 0, 0});
  sh.logit->M[0][0] = 1e-6;
  CHECK_THROWS_AS(sh.validate(8), DataError);
  ShiftSpec f;
  f.feature = FeatureLinearShift{std::vector<double>(4, 1.0), std::vector<double>(2, 0.0)};
  CHECK_THROWS_AS(f.validate(8), DataError);
  CHECK(ShiftSpec{}.kind() == ShiftKind::None);
}

TEST_CASE("oracle inverse predictor") {
  GenConfig g;
  g.feature_dim = 10;
  g.n_patients = 100;
  ShiftSpec none;
  none.logit = LogitAffineShift{};
  auto id_site = generate_site(g, SiteProfile::site1_ffdm(), none);
  auto id_oracle = oracle_inverse_predictor(id_site.truth);
  for (const auto* img : flatten_images(id_site.dataset)) {
    auto a = predict_image(id_oracle, *img);
    auto b = predict_image(Predictor::base(), *img);
    for (int k = 0; k < 4; ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-12));
  }

  ShiftSpec sh;
  sh.logit = make_logit_shift(0.6, 0.25, {0.7, 0.2, -0.1, -0.9});
  auto site = generate_site(g, SiteProfile::site1_ffdm(), sh);
  auto oracle = oracle_inverse_predictor(site.truth);
  for (const auto* img : flatten_images(site.dataset)) {
    auto undone = predict_image(oracle, *img);
    auto clean = softmax(head_forward(site.truth.base_head, img->features));
    for (int k = 0; k < 4; ++k) CHECK(std::abs(undone[k] - clean[k]) < 1e-9);
  }
  CHECK_THROWS_AS(oracle_inverse_predictor(generate_site(g, SiteProfile::site1_ffdm(), {}).truth), DataError);
}

TEST_CASE("oracle is near-optimal against a fitted calibration") {
  GenConfig g;
  g.feature_dim = 16;
  g.n_patients = 3000;
  g.seed = 14;
  SiteProfile p = SiteProfile::site1_ffdm();
  p.reader_noise = 0.35;
  g.base_head = pretrain_source_head(g, p, 8000, 3);
  ShiftSpec sh;
  sh.logit = make_logit_shift(0.6, 0.3, {0.8, 0.6, -0.4, -1.0});
  auto site = generate_site(g, p, sh);
  auto split = split_by_patient(site.dataset, SplitRatios{0.5, 0.1, 0.4}, 2);
  auto fit = fit_calibration(subsample_images(split.train, 2000, 1), CalibrationMode::Matrix);
  const double fitted = image_cross_entropy(Predictor{std::nullopt, fit.params}, split.test);
  const double oracle = image_cross_entropy(oracle_inverse_predictor(site.truth), split.test);
  CHECK(oracle <= fitted * 1.02);
}

TEST_CASE("reader noise lowers kappa") {
  double previous = 2.0;
  for (double noise : {0.1, 0.4, 0.8}) {
    double sum = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      auto site = fixture::small_site(600, 100 + s, 16, {}, noise);
      sum += *evaluate(Predictor::base(), site.dataset).report.four_class.linear_kappa;
    }
    CHECK(sum / 5 < previous);
    previous = sum / 5;
  }
}

TEST_CASE("config validation") {
  GenConfig g;
  g.feature_dim = 3;
  CHECK_THROWS_AS(g.validate(), DataError);
  SiteProfile p;
  p.density_prior = {0.5, 0.5, 0.5, 0.5};
  CHECK_THROWS_AS(p.validate(), DataError);
}
