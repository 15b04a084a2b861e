// SPDX-License-Identifier: Apache-2.0
//
// Synthetic multi-site generator with known ground truth.
//
// Each patient has a true density category c drawn from the site prior. Each
// exam draws a latent position t = c + spread * (U - 1/2) and four views with
//
//   features = separation * (t - 3/2) * axis + class_offset * dir_c + sd * N(0, I)
//
// where axis and dir_0..dir_3 are orthonormal directions fixed by the
// geometry seed. Logits come from a source head (Gaussian discriminant fit to
// the source prior unless one is supplied). A FeatureLinear shift maps
// features to R x + s before the head; a LogitAffine shift maps logits to
// M z + d. The reader labels round(t + jitter), where jitter is reader noise
// or, for double-read exams, the mean of two independent draws.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "denscal/adapt.hpp"
#include "denscal/metrics.hpp"
#include "denscal/parallel.hpp"
#include "denscal/records.hpp"

namespace denscal {

struct SiteProfile {
  Distribution density_prior{0.25, 0.25, 0.25, 0.25};
  double reader_noise = 0.0;          // sd of the reader's jitter, latent units
  double double_read_fraction = 0.0;  // exams labelled from two averaged reads

  /// Test-set label mix of the source FFDM site: 9.3 / 52.0 / 34.6 / 4.0 %.
  static SiteProfile site1_ffdm();
  /// Test-set label mix of the second SM site: 15.3 / 42.2 / 30.2 / 12.3 %.
  static SiteProfile site2_sm();

  void validate() const;
};

struct LogitAffineShift {
  Mat4 M = identity4();
  Logits d{};
};

struct FeatureLinearShift {
  std::vector<double> R;  // F x F row-major
  std::vector<double> s;  // F
};

enum class ShiftKind { None, LogitAffine, FeatureLinear, Composite };
std::string_view to_string(ShiftKind k);

struct ShiftSpec {
  std::optional<LogitAffineShift> logit;
  std::optional<FeatureLinearShift> feature;
  double noise_sd = 0.0;  // extra isotropic feature noise in the shifted domain

  ShiftKind kind() const;
  /// Shapes, finiteness, and condition numbers <= 100; throws DataError.
  void validate(std::size_t feature_dim) const;
};

Logits apply_logit_shift(const LogitAffineShift& shift, const Logits& z);

/// Orthonormal directions of the class structure.
struct Geometry {
  std::vector<double> axis;                                  // latent density axis
  std::array<std::vector<double>, kNumCategories> class_dirs;  // per-category texture
  std::vector<double> nuisance;                              // carries no signal
  std::vector<std::vector<double>> spare;                    // 4 more when feature_dim >= 10
};

Geometry make_geometry(std::size_t feature_dim, std::uint64_t geometry_seed);

struct GenConfig {
  std::size_t feature_dim = 512;
  std::size_t n_patients = 1000;
  /// P(1 exam), P(2 exams), ... per patient.
  std::vector<double> exams_per_patient{1.0};
  double class_mean_separation = 3.0;
  double class_offset = 2.0;
  double within_class_sd = 1.0;
  double exam_spread = 1.0;
  /// Prior the source head was fit to; ignored when base_head is set.
  Distribution source_prior = SiteProfile::site1_ffdm().density_prior;
  std::optional<LinearHead> base_head;
  std::uint64_t geometry_seed = 1;
  std::uint64_t seed = 0;
  std::string site_id = "site";
  Modality modality = Modality::SM;
  std::string id_prefix;  // prepended to patient ids

  void validate() const;
};

/// Gaussian-discriminant head for the configured geometry and source prior.
LinearHead make_source_head(const GenConfig& cfg);

/// The discriminant head refit to the source site's reader: a matrix
/// calibration fit on `n_images` unshifted source images, folded into W and
/// bias. Stands in for a model trained on the source site.
LinearHead pretrain_source_head(const GenConfig& cfg, const SiteProfile& source, std::size_t n_images,
                                std::uint64_t seed);

struct GroundTruth {
  GenConfig config;
  SiteProfile profile;
  ShiftSpec shift;
  LinearHead base_head;
  std::map<std::string, Density> true_category;  // by exam_id
  std::map<std::string, double> latent;          // by exam_id
};

struct GeneratedSite {
  Dataset dataset;
  GroundTruth truth;
};

/// Deterministic given (cfg, profile, shift); each patient draws from its own
/// stream seeded by (seed, patient index), so the parallel and serial paths
/// agree bitwise.
GeneratedSite generate_site(const GenConfig& cfg, const SiteProfile& profile, const ShiftSpec& shift,
                            Execution exec = Execution::Parallel);

/// Calibration that undoes the LogitAffine shift exactly: A = M^-1,
/// b = -M^-1 d. Throws DataError without a logit shift, NumericError when M
/// is singular.
Predictor oracle_inverse_predictor(const GroundTruth& gt);

/// M = scale * (I + mixing * (superdiagonal + subdiagonal)), d as given.
LogitAffineShift make_logit_shift(double scale, double mixing, const Logits& d);

/// Rotates the latent axis toward the nuisance direction by `angle` radians
/// and translates by `offset` along the axis. A non-zero texture_angle also
/// rotates each class direction toward its own spare direction.
FeatureLinearShift make_feature_rotation(const Geometry& g, double angle, double offset, double texture_angle = 0.0);

/// Condition number (2-norm) of a square row-major matrix.
double condition_number(const std::vector<double>& m, std::size_t n);

nlohmann::json to_json(const SiteProfile& p);
nlohmann::json to_json(const ShiftSpec& s);
nlohmann::json to_json(const GroundTruth& gt);

}  // namespace denscal
