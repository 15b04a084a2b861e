// SPDX-License-Identifier: Apache-2.0
//
// Model adaptation: softmax head, vector/matrix calibration of logits,
// last-layer fine-tuning, and the composed image -> probability predictor.
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "denscal/optim.hpp"
#include "denscal/records.hpp"

namespace denscal {

/// Point on the 4-category probability simplex.
struct ProbVector {
  std::array<double, kNumCategories> p{};

  double operator[](std::size_t i) const { return p[i]; }
  double& operator[](std::size_t i) { return p[i]; }
  bool operator==(const ProbVector&) const = default;
};

using Mat4 = std::array<std::array<double, kNumCategories>, kNumCategories>;

Mat4 identity4();

/// Overflow-safe softmax; throws NumericError on non-finite input.
ProbVector softmax(const Logits& z);

enum class CalibrationMode { Vector, Matrix };
std::string_view to_string(CalibrationMode m);
CalibrationMode calibration_mode_from_string(std::string_view s);

/// Affine map on logits, p = softmax(A z + b). Vector mode keeps A diagonal.
struct CalibrationParams {
  Mat4 A = identity4();
  Logits b{};
  CalibrationMode mode = CalibrationMode::Matrix;

  static CalibrationParams identity(CalibrationMode mode);

  /// 8 for Vector (diag A, b), 20 for Matrix (row-major A, b).
  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  static CalibrationParams unflatten(std::span<const double> flat, CalibrationMode mode);

  /// Throws DataError when Vector mode carries off-diagonal entries.
  void validate() const;

  bool operator==(const CalibrationParams&) const = default;
};

std::size_t calibration_parameter_count(CalibrationMode mode);

Logits transform_logits(const CalibrationParams& cal, const Logits& z);
ProbVector apply_calibration(const CalibrationParams& cal, const Logits& z);

struct CalibrationBatch {
  std::vector<Logits> logits;
  std::vector<Density> labels;

  static CalibrationBatch from_dataset(const Dataset& ds);
};

/// Mean cross-entropy of softmax(A z + b) and its gradient with respect to
/// the flattened parameters (see CalibrationParams::flatten).
ObjectiveEval calibration_objective(std::span<const double> flat, const CalibrationBatch& batch,
                                    CalibrationMode mode);

struct CalibrationFit {
  CalibrationParams params;
  OptimResult optim;
};

/// BFGS fit over all images starting from the identity map. A non-converged
/// fit still returns the last iterate; callers inspect optim.status.
CalibrationFit fit_calibration(const Dataset& train, CalibrationMode mode, const BfgsConfig& cfg = {});
CalibrationFit fit_calibration(const CalibrationBatch& batch, CalibrationMode mode, const BfgsConfig& cfg = {});

/// Retrainable last fully-connected layer: logits = W x + bias, W is 4 x F
/// row-major.
struct LinearHead {
  std::size_t feature_dim = 0;
  std::vector<double> W;
  Logits bias{};

  std::size_t parameter_count() const { return kNumCategories * feature_dim + kNumCategories; }
  /// W then bias.
  std::vector<double> flatten() const;
  static LinearHead unflatten(std::span<const double> flat, std::size_t feature_dim);
  void validate() const;

  bool operator==(const LinearHead&) const = default;
};

Logits head_forward(const LinearHead& head, std::span<const double> features);

/// Mean cross-entropy of softmax(head_forward) over a set of images and its
/// gradient with respect to LinearHead::flatten().
ObjectiveEval head_objective(std::span<const double> flat, std::size_t feature_dim,
                             std::span<const ImageRecord* const> images);

struct FinetuneConfig {
  AdamConfig adam{.learning_rate = 1e-4, .weight_decay = 1e-5};
  std::size_t batch_size = 64;
  int epochs = 100;
  std::uint64_t seed = 0;
};

/// Per-epoch losses; selected_epoch is a 0-based index into val_loss.
struct TrainTrace {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int selected_epoch = -1;
};

struct FinetuneFit {
  LinearHead head;
  TrainTrace trace;
};

/// Random-uniform initialisation in [-1/sqrt(F), 1/sqrt(F)].
LinearHead init_head(std::size_t feature_dim, std::uint64_t seed);

/// Adam fine-tuning of a freshly initialised head. Each epoch is one seeded
/// shuffled pass over train (final short batch kept); the returned head is
/// the one from the epoch with the lowest validation cross-entropy.
FinetuneFit fit_finetune_head(const Dataset& train, const Dataset& val, const FinetuneConfig& cfg);

/// Mean image-level cross-entropy of a head on a dataset.
double head_cross_entropy(const LinearHead& head, std::span<const ImageRecord* const> images);

enum class Pipeline { BaseLogits, CalibratedLogits, Head, CalibratedHead };
std::string_view to_string(Pipeline p);

/// Image -> probability composition: optional retrained head (features ->
/// logits, otherwise the stored logits) followed by optional calibration.
struct Predictor {
  std::optional<LinearHead> head;
  std::optional<CalibrationParams> calibration;

  Pipeline pipeline() const;
  static Predictor base() { return {}; }
};

ProbVector predict_image(const Predictor& pred, const ImageRecord& img);

/// Mean image-level cross-entropy of a predictor against the exam labels.
double image_cross_entropy(const Predictor& pred, const Dataset& ds);

inline constexpr int kModelSchemaVersion = 1;

nlohmann::json to_json(const CalibrationParams& cal);
CalibrationParams calibration_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LinearHead& head);
LinearHead head_from_json(const nlohmann::json& j);

}  // namespace denscal
