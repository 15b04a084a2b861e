// SPDX-License-Identifier: Apache-2.0
//
// Image-level classifier-output records: data model, JSONL ingestion,
// patient-level splitting, exam filtering and sampling.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace denscal {

inline constexpr int kNumCategories = 4;

/// BI-RADS density category, ordered A < B < C < D.
enum class Density : std::uint8_t { A = 0, B = 1, C = 2, D = 3 };

constexpr int code(Density d) { return static_cast<int>(d); }
Density density_from_code(int code);
Density density_from_label(std::string_view label);
std::string_view label(Density d);

enum class Modality : std::uint8_t { FFDM, SM };
enum class View : std::uint8_t { LCC, RCC, LMLO, RMLO };

Modality modality_from_string(std::string_view s);
std::string_view to_string(Modality m);
View view_from_string(std::string_view s);
std::string_view to_string(View v);

/// Pre-softmax scores, one per density category.
using Logits = std::array<double, kNumCategories>;

struct ImageRecord {
  std::string image_id;
  std::string exam_id;
  std::string patient_id;
  std::string site_id;
  Modality modality = Modality::FFDM;
  View view = View::LCC;
  std::vector<double> features;
  Logits logits{};
  Density label = Density::A;

  bool operator==(const ImageRecord&) const = default;
};

/// All images of one exam; they share exam_id, patient_id and label.
struct ExamRecord {
  std::string exam_id;
  std::string patient_id;
  std::vector<ImageRecord> images;
  Density label = Density::A;

  bool operator==(const ExamRecord&) const = default;
};

struct Dataset {
  std::vector<ExamRecord> exams;
  std::size_t feature_dim = 0;
  std::string provenance;

  std::size_t image_count() const;
  bool empty() const { return exams.empty(); }
  bool operator==(const Dataset&) const = default;
};

/// Flat image view in exam order; flat indices returned by the samplers
/// refer to this ordering.
std::vector<const ImageRecord*> flatten_images(const Dataset& ds);

/// Checks every Dataset / ExamRecord invariant; throws DataError.
void validate(const Dataset& ds);

/// Builds a dataset from loose images, grouping by exam_id in first-seen
/// order. Throws DataError on inconsistent labels, patients or feature
/// lengths, and on duplicate image ids.
Dataset group_images(std::vector<ImageRecord> images, std::string provenance = {});

/// Parses one JSONL image record; throws DataError.
ImageRecord parse_image_record(std::string_view line);
std::string image_record_to_json(const ImageRecord& img);

/// Reads line-delimited JSON image records. Blank lines are skipped; errors
/// carry the 1-based line number.
Dataset ingest_jsonl(std::istream& in, std::string provenance = {});
Dataset load_jsonl(const std::string& path);
void emit_jsonl(const Dataset& ds, std::ostream& out);
void save_jsonl(const Dataset& ds, const std::string& path);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Patient-level split. Patients are ordered by hash(patient_id, seed), so
/// the assignment does not depend on input order. Bucket sizes are
/// round(train*P), round(val*P) and the remainder.
DatasetSplit split_by_patient(const Dataset& ds, const SplitRatios& ratios, std::uint64_t seed);

/// Keeps exams with exactly one LCC, RCC, LMLO and RMLO image.
Dataset filter_standard_exams(const Dataset& ds);

/// Default sampling weights for training the source model: B and C are
/// drawn four times as often as A and D.
inline constexpr std::array<double, kNumCategories> kDefaultClassWeights{1.0, 4.0, 4.0, 1.0};

/// Class-weighted i.i.d. draws with replacement of flat image indices.
/// P(category c) is proportional to class_weights[c]; images within a
/// category are uniform.
std::vector<std::size_t> balanced_sampler(const Dataset& ds,
                                          const std::array<double, kNumCategories>& class_weights,
                                          std::size_t n_draws, std::uint64_t seed);

/// Uniform n-image subset without replacement. Image order is preserved and
/// exams left without images are dropped.
Dataset subsample_images(const Dataset& ds, std::size_t n, std::uint64_t seed);

/// Exam-level label counts.
std::array<long, kNumCategories> label_counts(const Dataset& ds);

}  // namespace denscal
