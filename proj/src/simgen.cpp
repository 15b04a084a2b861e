// SPDX-License-Identifier: Apache-2.0
#include "denscal/simgen.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>

#include "denscal/error.hpp"
#include "denscal/rng.hpp"

namespace denscal {

using nlohmann::json;

namespace {

Distribution normalized(Distribution d) {
  const double s = std::accumulate(d.begin(), d.end(), 0.0);
  for (double& v : d) v /= s;
  return d;
}

void check_prior(const Distribution& p, const char* what) {
  double s = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw DataError(std::string(what) + " has a negative entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw DataError(std::string(what) + " does not sum to 1");
}

}  // namespace

SiteProfile SiteProfile::site1_ffdm() { return {normalized({9.3, 52.0, 34.6, 4.0}), 0.0, 0.0}; }
SiteProfile SiteProfile::site2_sm() { return {normalized({15.3, 42.2, 30.2, 12.3}), 0.0, 0.0}; }

void SiteProfile::validate() const {
  check_prior(density_prior, "density prior");
  if (!(reader_noise >= 0.0)) throw DataError("reader noise must be non-negative");
  if (!(double_read_fraction >= 0.0 && double_read_fraction <= 1.0))
    throw DataError("double read fraction must lie in [0, 1]");
}

std::string_view to_string(ShiftKind k) {
  switch (k) {
    case ShiftKind::None: return "none";
    case ShiftKind::LogitAffine: return "logit_affine";
    case ShiftKind::FeatureLinear: return "feature_linear";
    case ShiftKind::Composite: return "feature_linear+logit_affine";
  }
  return "?";
}

ShiftKind ShiftSpec::kind() const {
  if (logit && feature) return ShiftKind::Composite;
  if (logit) return ShiftKind::LogitAffine;
  if (feature) return ShiftKind::FeatureLinear;
  return ShiftKind::None;
}

double condition_number(const std::vector<double>& m, std::size_t n) {
  if (m.size() != n * n) throw DataError("condition_number: matrix size mismatch");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> A(m.data(),
                                                                                             static_cast<long>(n),
                                                                                             static_cast<long>(n));
  // Singular values from the eigenvalues of A^T A.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A.transpose() * A, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (lo <= 0.0) return std::numeric_limits<double>::infinity();
  return std::sqrt(hi / lo);
}

namespace {

std::vector<double> flat4(const Mat4& m) {
  std::vector<double> out;
  for (const auto& row : m) out.insert(out.end(), row.begin(), row.end());
  return out;
}

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

void ShiftSpec::validate(std::size_t feature_dim) const {
  if (!(noise_sd >= 0.0)) throw DataError("shift noise_sd must be non-negative");
  if (logit) {
    const auto m = flat4(logit->M);
    if (!all_finite(m)) throw DataError("logit shift M is not finite");
    if (condition_number(m, kNumCategories) > 100.0) throw DataError("logit shift M is ill-conditioned (cond > 100)");
  }
  if (feature) {
    if (feature->R.size() != feature_dim * feature_dim || feature->s.size() != feature_dim)
      throw DataError("feature shift R/s do not match the feature dimension");
    if (!all_finite(feature->R) || !all_finite(feature->s)) throw DataError("feature shift is not finite");
    if (condition_number(feature->R, feature_dim) > 100.0)
      throw DataError("feature shift R is ill-conditioned (cond > 100)");
  }
}

Logits apply_logit_shift(const LogitAffineShift& shift, const Logits& z) {
  Logits out{};
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    double s = shift.d[i];
    for (std::size_t j = 0; j < kNumCategories; ++j) s += shift.M[i][j] * z[j];
    out[i] = s;
  }
  return out;
}

Geometry make_geometry(std::size_t F, std::uint64_t geometry_seed) {
  if (F < kNumCategories + 2) throw DataError("feature dimension must be at least 6 for the class geometry");
  Rng rng(derive_seed({geometry_seed, 0x6e0}));
  std::normal_distribution<double> n01;
  std::vector<std::vector<double>> basis;
  const std::size_t wanted = F >= 2 * kNumCategories + 2 ? 2 * kNumCategories + 2 : kNumCategories + 2;
  while (basis.size() < wanted) {
    std::vector<double> v(F);
    for (double& x : v) x = n01(rng);
    for (const auto& b : basis) {
      const double p = std::inner_product(v.begin(), v.end(), b.begin(), 0.0);
      for (std::size_t i = 0; i < F; ++i) v[i] -= p * b[i];
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-8) continue;
    for (double& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  Geometry g;
  g.axis = basis[0];
  for (std::size_t c = 0; c < kNumCategories; ++c) g.class_dirs[c] = basis[c + 1];
  g.nuisance = basis[kNumCategories + 1];
  for (std::size_t i = kNumCategories + 2; i < basis.size(); ++i) g.spare.push_back(basis[i]);
  return g;
}

void GenConfig::validate() const {
  if (feature_dim < kNumCategories + 2) throw DataError("feature dimension must be at least 6");
  if (!(class_mean_separation > 0.0)) throw DataError("class mean separation must be positive");
  if (!(within_class_sd > 0.0)) throw DataError("within-class sd must be positive");
  if (!(class_offset >= 0.0) || !(exam_spread >= 0.0 && exam_spread <= 1.0))
    throw DataError("class_offset must be >= 0 and exam_spread in [0, 1]");
  if (exams_per_patient.empty() ||
      std::any_of(exams_per_patient.begin(), exams_per_patient.end(), [](double p) { return !(p >= 0.0); }) ||
      std::accumulate(exams_per_patient.begin(), exams_per_patient.end(), 0.0) <= 0.0)
    throw DataError("exams_per_patient must be a non-negative, non-zero distribution");
  check_prior(source_prior, "source prior");
  if (base_head && base_head->feature_dim != feature_dim) throw DataError("base head dimension != feature_dim");
}

namespace {

std::vector<double> class_mean(const Geometry& g, const GenConfig& cfg, double latent, std::size_t category) {
  const std::size_t F = cfg.feature_dim;
  std::vector<double> m(F);
  const double a = cfg.class_mean_separation * (latent - 1.5);
  for (std::size_t i = 0; i < F; ++i) m[i] = a * g.axis[i] + cfg.class_offset * g.class_dirs[category][i];
  return m;
}

}  // namespace

LinearHead make_source_head(const GenConfig& cfg) {
  cfg.validate();
  const Geometry g = make_geometry(cfg.feature_dim, cfg.geometry_seed);
  const double var = cfg.within_class_sd * cfg.within_class_sd;
  LinearHead h;
  h.feature_dim = cfg.feature_dim;
  h.W.resize(kNumCategories * cfg.feature_dim);
  for (std::size_t c = 0; c < kNumCategories; ++c) {
    const auto mu = class_mean(g, cfg, static_cast<double>(c), c);
    double sq = 0.0;
    for (std::size_t i = 0; i < cfg.feature_dim; ++i) {
      h.W[c * cfg.feature_dim + i] = mu[i] / var;
      sq += mu[i] * mu[i];
    }
    h.bias[c] = -sq / (2.0 * var) + std::log(std::max(cfg.source_prior[c], 1e-12));
  }
  return h;
}

LinearHead pretrain_source_head(const GenConfig& cfg, const SiteProfile& source, std::size_t n_images,
                                std::uint64_t seed) {
  GenConfig src = cfg;
  src.base_head.reset();
  src.seed = seed;
  src.exams_per_patient = {1.0};
  src.n_patients = std::max<std::size_t>(1, (n_images + 3) / 4);
  src.site_id = "source";
  const GeneratedSite site = generate_site(src, source, ShiftSpec{});
  const CalibrationFit fit = fit_calibration(site.dataset, CalibrationMode::Matrix);
  if (fit.optim.status == OptimStatus::LineSearchFailed) throw NumericError("source head refit failed");

  const LinearHead& lda = site.truth.base_head;
  const std::size_t F = cfg.feature_dim;
  LinearHead h;
  h.feature_dim = F;
  h.W.assign(kNumCategories * F, 0.0);
  for (std::size_t r = 0; r < kNumCategories; ++r) {
    for (std::size_t k = 0; k < kNumCategories; ++k) {
      const double a = fit.params.A[r][k];
      for (std::size_t i = 0; i < F; ++i) h.W[r * F + i] += a * lda.W[k * F + i];
    }
    h.bias[r] = transform_logits(fit.params, lda.bias)[r];
  }
  return h;
}

namespace {

constexpr std::array<View, 4> kViews{View::LCC, View::RCC, View::LMLO, View::RMLO};

struct PatientDraw {
  std::vector<ExamRecord> exams;
  std::vector<Density> truth;
  std::vector<double> latent;
};

PatientDraw draw_patient(std::size_t p, const GenConfig& cfg, const SiteProfile& profile, const ShiftSpec& shift,
                         const Geometry& g, const LinearHead& head) {
  Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(p)}));
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u01;
  std::discrete_distribution<int> pick_category(profile.density_prior.begin(), profile.density_prior.end());
  std::discrete_distribution<int> pick_exam_count(cfg.exams_per_patient.begin(), cfg.exams_per_patient.end());

  const std::size_t F = cfg.feature_dim;
  const auto category = static_cast<std::size_t>(pick_category(rng));
  const int n_exams = pick_exam_count(rng) + 1;
  const std::string patient_id = cfg.id_prefix + cfg.site_id + "-p" + std::to_string(p);

  PatientDraw out;
  std::vector<double> x(F), shifted(F);
  for (int e = 0; e < n_exams; ++e) {
    const double t = static_cast<double>(category) + cfg.exam_spread * (u01(rng) - 0.5);
    double jitter = profile.reader_noise * n01(rng);
    if (u01(rng) < profile.double_read_fraction) jitter = 0.5 * (jitter + profile.reader_noise * n01(rng));
    const long read = std::clamp(std::lround(t + jitter), 0L, static_cast<long>(kNumCategories - 1));
    const Density label = density_from_code(static_cast<int>(read));

    ExamRecord exam;
    exam.exam_id = patient_id + "-e" + std::to_string(e);
    exam.patient_id = patient_id;
    exam.label = label;
    const auto mean = class_mean(g, cfg, t, category);
    for (View view : kViews) {
      for (std::size_t i = 0; i < F; ++i) x[i] = mean[i] + cfg.within_class_sd * n01(rng);
      if (shift.feature) {
        const auto& R = shift.feature->R;
        for (std::size_t i = 0; i < F; ++i) {
          double s = shift.feature->s[i];
          const double* row = R.data() + i * F;
          for (std::size_t j = 0; j < F; ++j) s += row[j] * x[j];
          shifted[i] = s;
        }
        x.swap(shifted);
      }
      if (shift.noise_sd > 0.0)
        for (double& v : x) v += shift.noise_sd * n01(rng);

      ImageRecord img;
      img.exam_id = exam.exam_id;
      img.patient_id = patient_id;
      img.site_id = cfg.site_id;
      img.modality = cfg.modality;
      img.view = view;
      img.image_id = exam.exam_id + "-" + std::string(to_string(view));
      img.label = label;
      img.features = x;
      img.logits = head_forward(head, img.features);
      if (shift.logit) img.logits = apply_logit_shift(*shift.logit, img.logits);
      exam.images.push_back(std::move(img));
    }
    out.exams.push_back(std::move(exam));
    out.truth.push_back(density_from_code(static_cast<int>(category)));
    out.latent.push_back(t);
  }
  return out;
}

}  // namespace

GeneratedSite generate_site(const GenConfig& cfg, const SiteProfile& profile, const ShiftSpec& shift, Execution exec) {
  cfg.validate();
  profile.validate();
  shift.validate(cfg.feature_dim);

  const Geometry g = make_geometry(cfg.feature_dim, cfg.geometry_seed);
  const LinearHead head = cfg.base_head ? *cfg.base_head : make_source_head(cfg);

  std::vector<PatientDraw> draws(cfg.n_patients);
  if (exec == Execution::Serial) {
    for (std::size_t p = 0; p < cfg.n_patients; ++p) draws[p] = draw_patient(p, cfg, profile, shift, g, head);
  } else {
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic, 16) num_threads(thread_count())
    for (std::size_t p = 0; p < cfg.n_patients; ++p) {
      try {
        draws[p] = draw_patient(p, cfg, profile, shift, g, head);
      } catch (...) {
#pragma omp critical(denscal_simgen_error)
        if (!error) error = std::current_exception();
      }
    }
    if (error) std::rethrow_exception(error);
  }

  GeneratedSite out;
  out.dataset.feature_dim = cfg.feature_dim;
  out.dataset.provenance = "simgen site=" + cfg.site_id + " seed=" + std::to_string(cfg.seed) +
                           " geometry_seed=" + std::to_string(cfg.geometry_seed) +
                           " shift=" + std::string(to_string(shift.kind()));
  out.truth.config = cfg;
  out.truth.profile = profile;
  out.truth.shift = shift;
  out.truth.base_head = head;
  for (auto& d : draws) {
    for (std::size_t e = 0; e < d.exams.size(); ++e) {
      out.truth.true_category[d.exams[e].exam_id] = d.truth[e];
      out.truth.latent[d.exams[e].exam_id] = d.latent[e];
      out.dataset.exams.push_back(std::move(d.exams[e]));
    }
  }
  return out;
}

Predictor oracle_inverse_predictor(const GroundTruth& gt) {
  if (!gt.shift.logit) throw DataError("oracle inverse predictor needs a logit-affine shift");
  Eigen::Matrix4d M;
  Eigen::Vector4d d;
  for (int i = 0; i < 4; ++i) {
    d(i) = gt.shift.logit->d[static_cast<std::size_t>(i)];
    for (int j = 0; j < 4; ++j) M(i, j) = gt.shift.logit->M[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  Eigen::FullPivLU<Eigen::Matrix4d> lu(M);
  if (!lu.isInvertible()) throw NumericError("logit shift matrix is singular");
  const Eigen::Matrix4d Minv = lu.inverse();
  const Eigen::Vector4d b = -Minv * d;
  CalibrationParams cal;
  cal.mode = CalibrationMode::Matrix;
  for (std::size_t i = 0; i < 4; ++i) {
    cal.b[i] = b(static_cast<long>(i));
    for (std::size_t j = 0; j < 4; ++j) cal.A[i][j] = Minv(static_cast<long>(i), static_cast<long>(j));
  }
  Predictor pred;
  pred.calibration = cal;
  return pred;
}

LogitAffineShift make_logit_shift(double scale, double mixing, const Logits& d) {
  LogitAffineShift s;
  s.M = Mat4{};
  for (std::size_t i = 0; i < kNumCategories; ++i) {
    s.M[i][i] = scale;
    if (i + 1 < kNumCategories) s.M[i][i + 1] = scale * mixing;
    if (i > 0) s.M[i][i - 1] = scale * mixing;
  }
  s.d = d;
  return s;
}

namespace {

// Adds the rotation by `angle` in the plane (v, w), taking v toward w:
// (cos - 1)(v v' + w w') + sin (w v' - v w'). Planes must be disjoint.
void add_plane_rotation(std::vector<double>& R, const std::vector<double>& v, const std::vector<double>& w,
                        double angle) {
  const std::size_t F = v.size();
  const double c = std::cos(angle) - 1.0;
  const double sn = std::sin(angle);
  for (std::size_t i = 0; i < F; ++i)
    for (std::size_t j = 0; j < F; ++j)
      R[i * F + j] += c * (v[i] * v[j] + w[i] * w[j]) + sn * (w[i] * v[j] - v[i] * w[j]);
}

}  // namespace

FeatureLinearShift make_feature_rotation(const Geometry& g, double angle, double offset, double texture_angle) {
  const std::size_t F = g.axis.size();
  FeatureLinearShift s;
  s.R.assign(F * F, 0.0);
  for (std::size_t i = 0; i < F; ++i) s.R[i * F + i] = 1.0;
  add_plane_rotation(s.R, g.axis, g.nuisance, angle);
  if (texture_angle != 0.0) {
    if (g.spare.size() < kNumCategories) throw DataError("texture rotation needs feature_dim >= 10");
    for (std::size_t c = 0; c < kNumCategories; ++c) add_plane_rotation(s.R, g.class_dirs[c], g.spare[c], texture_angle);
  }
  s.s.resize(F);
  for (std::size_t i = 0; i < F; ++i) s.s[i] = offset * g.axis[i];
  return s;
}

json to_json(const SiteProfile& p) {
  return json{{"density_prior", p.density_prior},
              {"reader_noise", p.reader_noise},
              {"double_read_fraction", p.double_read_fraction}};
}

json to_json(const ShiftSpec& s) {
  json j{{"kind", to_string(s.kind())}, {"noise_sd", s.noise_sd}};
  if (s.logit) j["logit_affine"] = {{"M", flat4(s.logit->M)}, {"d", s.logit->d}};
  if (s.feature) j["feature_linear"] = {{"R", s.feature->R}, {"s", s.feature->s}};
  return j;
}

json to_json(const GroundTruth& gt) {
  const auto& c = gt.config;
  json cfg{{"feature_dim", c.feature_dim},
           {"n_patients", c.n_patients},
           {"exams_per_patient", c.exams_per_patient},
           {"class_mean_separation", c.class_mean_separation},
           {"class_offset", c.class_offset},
           {"within_class_sd", c.within_class_sd},
           {"exam_spread", c.exam_spread},
           {"source_prior", c.source_prior},
           {"geometry_seed", c.geometry_seed},
           {"seed", c.seed},
           {"site_id", c.site_id},
           {"modality", to_string(c.modality)}};
  json truth = json::object();
  for (const auto& [exam, d] : gt.true_category) truth[exam] = label(d);
  json latent = json::object();
  for (const auto& [exam, t] : gt.latent) latent[exam] = t;
  return json{{"schema_version", kModelSchemaVersion},
              {"config", cfg},
              {"profile", to_json(gt.profile)},
              {"shift", to_json(gt.shift)},
              {"base_head", to_json(gt.base_head)},
              {"true_category", truth},
              {"latent", latent}};
}

}  // namespace denscal
