// SPDX-License-Identifier: Apache-2.0
#include "denscal/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "denscal/error.hpp"
#include "denscal/rng.hpp"

namespace denscal {

using nlohmann::json;

Mat4 identity4() {
  Mat4 m{};
  for (int i = 0; i < kNumCategories; ++i) m[i][i] = 1.0;
  return m;
}

namespace {

constexpr std::size_t K = kNumCategories;

double log_sum_exp(const Logits& z) {
  const double m = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (double v : z) s += std::exp(v - m);
  return m + std::log(s);
}

bool finite(const Logits& z) {
  return std::all_of(z.begin(), z.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace

ProbVector softmax(const Logits& z) {
  if (!finite(z)) throw NumericError("softmax: non-finite logits");
  const double m = *std::max_element(z.begin(), z.end());
  ProbVector out;
  double s = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    out.p[i] = std::exp(z[i] - m);
    s += out.p[i];
  }
  for (double& v : out.p) v /= s;
  return out;
}

std::string_view to_string(CalibrationMode m) { return m == CalibrationMode::Vector ? "vector" : "matrix"; }

CalibrationMode calibration_mode_from_string(std::string_view s) {
  if (s == "vector") return CalibrationMode::Vector;
  if (s == "matrix") return CalibrationMode::Matrix;
  throw DataError("unknown calibration mode \"" + std::string(s) + "\"");
}

std::size_t calibration_parameter_count(CalibrationMode mode) {
  return mode == CalibrationMode::Vector ? 2 * K : K * K + K;
}

CalibrationParams CalibrationParams::identity(CalibrationMode mode) { return {identity4(), Logits{}, mode}; }

std::size_t CalibrationParams::parameter_count() const { return calibration_parameter_count(mode); }

std::vector<double> CalibrationParams::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (std::size_t i = 0; i < K; ++i) {
    if (mode == CalibrationMode::Vector) {
      out.push_back(A[i][i]);
    } else {
      out.insert(out.end(), A[i].begin(), A[i].end());
    }
  }
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

CalibrationParams CalibrationParams::unflatten(std::span<const double> flat, CalibrationMode mode) {
  if (flat.size() != calibration_parameter_count(mode))
    throw DataError("calibration parameter vector has wrong length");
  CalibrationParams c;
  c.mode = mode;
  c.A = Mat4{};
  std::size_t k = 0;
  for (std::size_t i = 0; i < K; ++i) {
    if (mode == CalibrationMode::Vector) {
      c.A[i][i] = flat[k++];
    } else {
      for (std::size_t j = 0; j < K; ++j) c.A[i][j] = flat[k++];
    }
  }
  for (std::size_t i = 0; i < K; ++i) c.b[i] = flat[k++];
  return c;
}

void CalibrationParams::validate() const {
  if (mode == CalibrationMode::Vector)
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t j = 0; j < K; ++j)
        if (i != j && A[i][j] != 0.0) throw DataError("vector calibration requires a diagonal A");
  for (const auto& row : A)
    if (!finite(row)) throw NumericError("calibration matrix is not finite");
  if (!finite(b)) throw NumericError("calibration bias is not finite");
}

Logits transform_logits(const CalibrationParams& cal, const Logits& z) {
  Logits u{};
  for (std::size_t i = 0; i < K; ++i) {
    double s = cal.b[i];
    for (std::size_t j = 0; j < K; ++j) s += cal.A[i][j] * z[j];
    u[i] = s;
  }
  return u;
}

ProbVector apply_calibration(const CalibrationParams& cal, const Logits& z) {
  cal.validate();
  return softmax(transform_logits(cal, z));
}

CalibrationBatch CalibrationBatch::from_dataset(const Dataset& ds) {
  CalibrationBatch batch;
  batch.logits.reserve(ds.image_count());
  batch.labels.reserve(ds.image_count());
  for (const auto& e : ds.exams)
    for (const auto& img : e.images) {
      batch.logits.push_back(img.logits);
      batch.labels.push_back(img.label);
    }
  return batch;
}

ObjectiveEval calibration_objective(std::span<const double> flat, const CalibrationBatch& batch, CalibrationMode mode) {
  const std::size_t n = batch.logits.size();
  if (n == 0) throw DataError("calibration objective: empty batch");
  if (batch.labels.size() != n) throw DataError("calibration objective: logits/labels length mismatch");
  const CalibrationParams cal = CalibrationParams::unflatten(flat, mode);

  ObjectiveEval out;
  out.gradient.assign(flat.size(), 0.0);
  Mat4 gA{};
  Logits gb{};
  double loss = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const int y = code(batch.labels[s]);
    if (y < 0 || y >= kNumCategories) throw DataError("calibration objective: label out of range");
    const Logits& z = batch.logits[s];
    const Logits u = transform_logits(cal, z);
    const double lse = log_sum_exp(u);
    loss += lse - u[static_cast<std::size_t>(y)];
    for (std::size_t i = 0; i < K; ++i) {
      const double r = std::exp(u[i] - lse) - (static_cast<int>(i) == y ? 1.0 : 0.0);
      gb[i] += r;
      for (std::size_t j = 0; j < K; ++j) gA[i][j] += r * z[j];
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  out.value = loss * inv_n;
  std::size_t k = 0;
  for (std::size_t i = 0; i < K; ++i) {
    if (mode == CalibrationMode::Vector) {
      out.gradient[k++] = gA[i][i] * inv_n;
    } else {
      for (std::size_t j = 0; j < K; ++j) out.gradient[k++] = gA[i][j] * inv_n;
    }
  }
  for (std::size_t i = 0; i < K; ++i) out.gradient[k++] = gb[i] * inv_n;
  return out;
}

CalibrationFit fit_calibration(const CalibrationBatch& batch, CalibrationMode mode, const BfgsConfig& cfg) {
  if (batch.logits.empty()) throw DataError("fit_calibration: empty training set");
  Objective f = [&batch, mode](std::span<const double> x) { return calibration_objective(x, batch, mode); };
  OptimResult r = bfgs_minimize(f, CalibrationParams::identity(mode).flatten(), cfg);
  CalibrationParams params = CalibrationParams::unflatten(r.x, mode);
  return {params, std::move(r)};
}

CalibrationFit fit_calibration(const Dataset& train, CalibrationMode mode, const BfgsConfig& cfg) {
  return fit_calibration(CalibrationBatch::from_dataset(train), mode, cfg);
}

std::vector<double> LinearHead::flatten() const {
  std::vector<double> out(W);
  out.insert(out.end(), bias.begin(), bias.end());
  return out;
}

LinearHead LinearHead::unflatten(std::span<const double> flat, std::size_t feature_dim) {
  if (flat.size() != K * feature_dim + K) throw DataError("linear head parameter vector has wrong length");
  LinearHead h;
  h.feature_dim = feature_dim;
  h.W.assign(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(K * feature_dim));
  std::copy(flat.end() - static_cast<std::ptrdiff_t>(K), flat.end(), h.bias.begin());
  return h;
}

void LinearHead::validate() const {
  if (W.size() != K * feature_dim) throw DataError("linear head W has wrong size");
  if (!std::all_of(W.begin(), W.end(), [](double v) { return std::isfinite(v); }) || !finite(bias))
    throw NumericError("linear head is not finite");
}

namespace {

Logits forward_flat(const double* W, const double* bias, std::span<const double> x) {
  const std::size_t F = x.size();
  Logits z{};
  for (std::size_t c = 0; c < K; ++c) {
    const double* row = W + c * F;
    double s = bias[c];
    for (std::size_t j = 0; j < F; ++j) s += row[j] * x[j];
    z[c] = s;
  }
  return z;
}

// Adds the summed per-sample cross-entropy gradient of the images picked by
// `order` to grad; returns the summed loss.
template <typename IndexRange>
double accumulate_head_gradient(std::span<const double> flat, std::size_t F,
                                std::span<const ImageRecord* const> images, const IndexRange& order,
                                std::span<double> grad) {
  const double* W = flat.data();
  const double* bias = flat.data() + K * F;
  double* gW = grad.data();
  double* gb = grad.data() + K * F;
  double loss = 0.0;
  for (std::size_t idx : order) {
    const ImageRecord& img = *images[idx];
    const Logits z = forward_flat(W, bias, img.features);
    const double lse = log_sum_exp(z);
    const auto y = static_cast<std::size_t>(code(img.label));
    loss += lse - z[y];
    for (std::size_t c = 0; c < K; ++c) {
      const double r = std::exp(z[c] - lse) - (c == y ? 1.0 : 0.0);
      gb[c] += r;
      double* row = gW + c * F;
      for (std::size_t j = 0; j < F; ++j) row[j] += r * img.features[j];
    }
  }
  return loss;
}

double flat_cross_entropy(std::span<const double> flat, std::size_t F, std::span<const ImageRecord* const> images) {
  const double* W = flat.data();
  const double* bias = flat.data() + K * F;
  double loss = 0.0;
  for (const ImageRecord* img : images) {
    const Logits z = forward_flat(W, bias, img->features);
    loss += log_sum_exp(z) - z[static_cast<std::size_t>(code(img->label))];
  }
  return loss / static_cast<double>(images.size());
}

}  // namespace

Logits head_forward(const LinearHead& head, std::span<const double> features) {
  if (features.size() != head.feature_dim)
    throw DataError("head_forward: features length " + std::to_string(features.size()) + " != head dimension " +
                    std::to_string(head.feature_dim));
  return forward_flat(head.W.data(), head.bias.data(), features);
}

ObjectiveEval head_objective(std::span<const double> flat, std::size_t feature_dim,
                             std::span<const ImageRecord* const> images) {
  if (images.empty()) throw DataError("head objective: empty batch");
  if (flat.size() != K * feature_dim + K) throw DataError("head objective: parameter length mismatch");
  for (const ImageRecord* img : images)
    if (img->features.size() != feature_dim) throw DataError("head objective: feature dimension mismatch");
  ObjectiveEval out;
  out.gradient.assign(flat.size(), 0.0);
  std::vector<std::size_t> all(images.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  const double inv_n = 1.0 / static_cast<double>(images.size());
  out.value = accumulate_head_gradient(flat, feature_dim, images, all, out.gradient) * inv_n;
  for (double& g : out.gradient) g *= inv_n;
  return out;
}

double head_cross_entropy(const LinearHead& head, std::span<const ImageRecord* const> images) {
  if (images.empty()) throw DataError("head cross-entropy: empty image set");
  std::vector<double> flat = head.flatten();
  return flat_cross_entropy(flat, head.feature_dim, images);
}

LinearHead init_head(std::size_t feature_dim, std::uint64_t seed) {
  if (feature_dim == 0) throw DataError("init_head: feature dimension must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-bound, bound);
  LinearHead h;
  h.feature_dim = feature_dim;
  h.W.resize(K * feature_dim);
  for (double& w : h.W) w = u(rng);
  for (double& b : h.bias) b = u(rng);
  return h;
}

FinetuneFit fit_finetune_head(const Dataset& train, const Dataset& val, const FinetuneConfig& cfg) {
  if (train.empty() || val.empty()) throw DataError("fine-tuning requires non-empty train and val sets");
  if (train.feature_dim != val.feature_dim) throw DataError("fine-tuning: train/val feature dimension mismatch");
  if (cfg.batch_size == 0 || cfg.epochs < 1) throw DataError("fine-tuning: batch_size and epochs must be positive");
  cfg.adam.validate();
  const std::size_t F = train.feature_dim;
  const auto train_images = flatten_images(train);
  const auto val_images = flatten_images(val);

  std::vector<double> params = init_head(F, derive_seed({cfg.seed, 0})).flatten();
  std::vector<double> best = params;
  std::vector<double> grad(params.size());
  AdamState state;
  long step = 0;

  FinetuneFit fit;
  fit.trace.train_loss.reserve(static_cast<std::size_t>(cfg.epochs));
  fit.trace.val_loss.reserve(static_cast<std::size_t>(cfg.epochs));
  double best_val = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_images.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed({cfg.seed, static_cast<std::uint64_t>(epoch) + 1}));
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, order.size());
      std::span<const std::size_t> batch(order.data() + start, stop - start);
      std::fill(grad.begin(), grad.end(), 0.0);
      epoch_loss += accumulate_head_gradient(params, F, train_images, batch, grad);
      const double inv_b = 1.0 / static_cast<double>(batch.size());
      for (double& g : grad) g *= inv_b;
      adam_step(state, params, grad, cfg.adam, ++step);
    }
    fit.trace.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));

    const double v = flat_cross_entropy(params, F, val_images);
    if (!std::isfinite(v)) throw NumericError("fine-tuning diverged (non-finite validation loss)");
    fit.trace.val_loss.push_back(v);
    if (v < best_val) {
      best_val = v;
      best = params;
      fit.trace.selected_epoch = epoch;
    }
  }
  fit.head = LinearHead::unflatten(best, F);
  return fit;
}

std::string_view to_string(Pipeline p) {
  switch (p) {
    case Pipeline::BaseLogits: return "base_logits";
    case Pipeline::CalibratedLogits: return "base_logits+calibration";
    case Pipeline::Head: return "linear_head";
    case Pipeline::CalibratedHead: return "linear_head+calibration";
  }
  return "?";
}

Pipeline Predictor::pipeline() const {
  if (head) return calibration ? Pipeline::CalibratedHead : Pipeline::Head;
  return calibration ? Pipeline::CalibratedLogits : Pipeline::BaseLogits;
}

ProbVector predict_image(const Predictor& pred, const ImageRecord& img) {
  Logits z = img.logits;
  if (pred.head) {
    if (img.features.size() != pred.head->feature_dim)
      throw DataError("image " + img.image_id + ": features missing or of the wrong length for the linear head");
    z = head_forward(*pred.head, img.features);
  }
  if (pred.calibration) return apply_calibration(*pred.calibration, z);
  return softmax(z);
}

double image_cross_entropy(const Predictor& pred, const Dataset& ds) {
  double loss = 0.0;
  std::size_t n = 0;
  for (const auto& e : ds.exams)
    for (const auto& img : e.images) {
      const ProbVector p = predict_image(pred, img);
      loss -= std::log(std::max(p[static_cast<std::size_t>(code(img.label))], 1e-300));
      ++n;
    }
  if (n == 0) throw DataError("cross-entropy of an empty dataset");
  return loss / static_cast<double>(n);
}

json to_json(const CalibrationParams& cal) {
  std::vector<double> a;
  for (const auto& row : cal.A) a.insert(a.end(), row.begin(), row.end());
  return json{{"schema_version", kModelSchemaVersion},
              {"kind", "calibration"},
              {"mode", to_string(cal.mode)},
              {"A", a},
              {"b", cal.b}};
}

namespace {

void check_schema(const json& j, std::string_view kind) {
  if (!j.is_object() || j.value("schema_version", -1) != kModelSchemaVersion)
    throw DataError("unsupported or missing schema_version");
  if (j.contains("kind") && j.at("kind").get<std::string>() != kind)
    throw DataError("expected a " + std::string(kind) + " document");
}

}  // namespace

CalibrationParams calibration_from_json(const json& j) {
  try {
    check_schema(j, "calibration");
    CalibrationParams cal;
    cal.mode = calibration_mode_from_string(j.at("mode").get<std::string>());
    auto a = j.at("A").get<std::vector<double>>();
    auto b = j.at("b").get<std::vector<double>>();
    if (a.size() != K * K || b.size() != K) throw DataError("calibration A must have 16 entries and b 4");
    for (std::size_t i = 0; i < K; ++i)
      for (std::size_t k = 0; k < K; ++k) cal.A[i][k] = a[i * K + k];
    std::copy(b.begin(), b.end(), cal.b.begin());
    cal.validate();
    return cal;
  } catch (const json::exception& e) {
    throw DataError(std::string("calibration JSON: ") + e.what());
  }
}

json to_json(const LinearHead& head) {
  return json{{"schema_version", kModelSchemaVersion},
              {"kind", "linear_head"},
              {"F", head.feature_dim},
              {"W", head.W},
              {"bias", head.bias}};
}

LinearHead head_from_json(const json& j) {
  try {
    check_schema(j, "linear_head");
    LinearHead h;
    h.feature_dim = j.at("F").get<std::size_t>();
    h.W = j.at("W").get<std::vector<double>>();
    auto bias = j.at("bias").get<std::vector<double>>();
    if (bias.size() != K) throw DataError("linear head bias must have 4 entries");
    std::copy(bias.begin(), bias.end(), h.bias.begin());
    h.validate();
    return h;
  } catch (const json::exception& e) {
    throw DataError(std::string("linear head JSON: ") + e.what());
  }
}

}  // namespace denscal
