// SPDX-License-Identifier: Apache-2.0
#include "denscal/records.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "denscal/error.hpp"
#include "denscal/rng.hpp"

namespace denscal {

using nlohmann::json;

Density density_from_code(int c) {
  if (c < 0 || c >= kNumCategories) throw DataError("density code out of range: " + std::to_string(c));
  return static_cast<Density>(c);
}

Density density_from_label(std::string_view s) {
  if (s == "A") return Density::A;
  if (s == "B") return Density::B;
  if (s == "C") return Density::C;
  if (s == "D") return Density::D;
  throw DataError("unknown density label \"" + std::string(s) + "\"");
}

std::string_view label(Density d) {
  static constexpr std::array<std::string_view, kNumCategories> kLabels{"A", "B", "C", "D"};
  return kLabels[static_cast<std::size_t>(code(d))];
}

Modality modality_from_string(std::string_view s) {
  if (s == "FFDM") return Modality::FFDM;
  if (s == "SM") return Modality::SM;
  throw DataError("unknown modality \"" + std::string(s) + "\"");
}

std::string_view to_string(Modality m) { return m == Modality::FFDM ? "FFDM" : "SM"; }

View view_from_string(std::string_view s) {
  if (s == "LCC") return View::LCC;
  if (s == "RCC") return View::RCC;
  if (s == "LMLO") return View::LMLO;
  if (s == "RMLO") return View::RMLO;
  throw DataError("unknown view \"" + std::string(s) + "\"");
}

std::string_view to_string(View v) {
  switch (v) {
    case View::LCC: return "LCC";
    case View::RCC: return "RCC";
    case View::LMLO: return "LMLO";
    case View::RMLO: return "RMLO";
  }
  return "?";
}

std::size_t Dataset::image_count() const {
  std::size_t n = 0;
  for (const auto& e : exams) n += e.images.size();
  return n;
}

std::vector<const ImageRecord*> flatten_images(const Dataset& ds) {
  std::vector<const ImageRecord*> out;
  out.reserve(ds.image_count());
  for (const auto& e : ds.exams)
    for (const auto& img : e.images) out.push_back(&img);
  return out;
}

namespace {

bool all_finite(const auto& values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

void check_image(const ImageRecord& img, std::size_t feature_dim) {
  if (img.features.size() != feature_dim)
    throw DataError("image " + img.image_id + ": features length " + std::to_string(img.features.size()) +
                    " != " + std::to_string(feature_dim));
  if (!all_finite(img.features) || !all_finite(img.logits))
    throw DataError("image " + img.image_id + ": non-finite value");
}

}  // namespace

void validate(const Dataset& ds) {
  std::unordered_set<std::string> exam_ids;
  std::unordered_set<std::string> image_ids;
  for (const auto& e : ds.exams) {
    if (e.images.empty()) throw DataError("exam " + e.exam_id + " has no images");
    if (!exam_ids.insert(e.exam_id).second) throw DataError("duplicate exam_id " + e.exam_id);
    for (const auto& img : e.images) {
      if (img.exam_id != e.exam_id || img.patient_id != e.patient_id)
        throw DataError("image " + img.image_id + " does not match its exam's identifiers");
      if (img.label != e.label) throw DataError("image " + img.image_id + " label differs from exam label");
      if (!image_ids.insert(img.image_id).second) throw DataError("duplicate image_id " + img.image_id);
      check_image(img, ds.feature_dim);
    }
  }
}

Dataset group_images(std::vector<ImageRecord> images, std::string provenance) {
  Dataset ds;
  ds.provenance = std::move(provenance);
  if (images.empty()) return ds;
  ds.feature_dim = images.front().features.size();

  std::unordered_map<std::string, std::size_t> exam_index;
  std::unordered_set<std::string> image_ids;
  for (auto& img : images) {
    check_image(img, ds.feature_dim);
    if (!image_ids.insert(img.image_id).second) throw DataError("duplicate image_id " + img.image_id);
    auto [it, inserted] = exam_index.try_emplace(img.exam_id, ds.exams.size());
    if (inserted) {
      ds.exams.push_back(ExamRecord{img.exam_id, img.patient_id, {}, img.label});
    }
    auto& exam = ds.exams[it->second];
    if (exam.label != img.label) throw DataError("exam " + exam.exam_id + " has conflicting labels");
    if (exam.patient_id != img.patient_id) throw DataError("exam " + exam.exam_id + " has conflicting patient ids");
    exam.images.push_back(std::move(img));
  }
  return ds;
}

namespace {

std::string required_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw DataError(std::string("missing string field \"") + key + "\"");
  return it->get<std::string>();
}

std::vector<double> required_reals(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_array()) throw DataError(std::string("missing array field \"") + key + "\"");
  std::vector<double> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_number()) throw DataError(std::string("non-numeric entry in \"") + key + "\"");
    out.push_back(v.get<double>());
  }
  return out;
}

}  // namespace

ImageRecord parse_image_record(std::string_view line) {
  json j = json::parse(line.begin(), line.end(), nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw DataError("invalid JSON");
  if (!j.is_object()) throw DataError("record is not a JSON object");

  ImageRecord img;
  img.image_id = required_string(j, "image_id");
  img.exam_id = required_string(j, "exam_id");
  img.patient_id = required_string(j, "patient_id");
  img.site_id = required_string(j, "site_id");
  img.modality = modality_from_string(required_string(j, "modality"));
  img.view = view_from_string(required_string(j, "view"));
  img.label = density_from_label(required_string(j, "label"));
  img.features = required_reals(j, "features");
  auto logits = required_reals(j, "logits");
  if (logits.size() != kNumCategories) throw DataError("logits length != 4");
  std::copy(logits.begin(), logits.end(), img.logits.begin());
  return img;
}

std::string image_record_to_json(const ImageRecord& img) {
  json j;
  j["image_id"] = img.image_id;
  j["exam_id"] = img.exam_id;
  j["patient_id"] = img.patient_id;
  j["site_id"] = img.site_id;
  j["modality"] = to_string(img.modality);
  j["view"] = to_string(img.view);
  j["label"] = label(img.label);
  j["features"] = img.features;
  j["logits"] = img.logits;
  return j.dump();
}

Dataset ingest_jsonl(std::istream& in, std::string provenance) {
  std::vector<ImageRecord> images;
  std::string line;
  std::size_t line_no = 0;
  std::size_t feature_dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      ImageRecord img = parse_image_record(line);
      if (images.empty()) feature_dim = img.features.size();
      check_image(img, feature_dim);
      images.push_back(std::move(img));
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return group_images(std::move(images), std::move(provenance));
}

Dataset load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  try {
    return ingest_jsonl(in, path);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void emit_jsonl(const Dataset& ds, std::ostream& out) {
  for (const auto& e : ds.exams)
    for (const auto& img : e.images) out << image_record_to_json(img) << '\n';
}

void save_jsonl(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  emit_jsonl(ds, out);
  if (!out) throw DataError("write failed: " + path);
}

DatasetSplit split_by_patient(const Dataset& ds, const SplitRatios& r, std::uint64_t seed) {
  if (ds.empty()) throw DataError("cannot split an empty dataset");
  if (r.train <= 0 || r.val <= 0 || r.test <= 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9)
    throw DataError("split ratios must be positive and sum to 1");

  std::vector<std::string> patients;
  {
    std::set<std::string> seen;
    for (const auto& e : ds.exams)
      if (seen.insert(e.patient_id).second) patients.push_back(e.patient_id);
  }
  std::vector<std::pair<std::uint64_t, std::string>> keyed;
  keyed.reserve(patients.size());
  for (auto& p : patients) keyed.emplace_back(hash_string(p, seed), std::move(p));
  std::sort(keyed.begin(), keyed.end());

  const double n = static_cast<double>(keyed.size());
  std::size_t n_train = static_cast<std::size_t>(std::llround(r.train * n));
  std::size_t n_val = static_cast<std::size_t>(std::llround(r.val * n));
  n_train = std::min(n_train, keyed.size());
  n_val = std::min(n_val, keyed.size() - n_train);

  std::unordered_map<std::string, int> bucket;
  for (std::size_t i = 0; i < keyed.size(); ++i)
    bucket[keyed[i].second] = i < n_train ? 0 : (i < n_train + n_val ? 1 : 2);

  DatasetSplit out;
  for (Dataset* d : {&out.train, &out.val, &out.test}) {
    d->feature_dim = ds.feature_dim;
    d->provenance = ds.provenance;
  }
  for (const auto& e : ds.exams) {
    switch (bucket.at(e.patient_id)) {
      case 0: out.train.exams.push_back(e); break;
      case 1: out.val.exams.push_back(e); break;
      default: out.test.exams.push_back(e); break;
    }
  }
  return out;
}

Dataset filter_standard_exams(const Dataset& ds) {
  Dataset out;
  out.feature_dim = ds.feature_dim;
  out.provenance = ds.provenance;
  for (const auto& e : ds.exams) {
    if (e.images.size() != 4) continue;
    std::array<int, 4> seen{};
    for (const auto& img : e.images) ++seen[static_cast<std::size_t>(img.view)];
    if (std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; })) out.exams.push_back(e);
  }
  return out;
}

std::vector<std::size_t> balanced_sampler(const Dataset& ds,
                                          const std::array<double, kNumCategories>& class_weights,
                                          std::size_t n_draws, std::uint64_t seed) {
  std::array<std::vector<std::size_t>, kNumCategories> by_class;
  std::size_t flat = 0;
  for (const auto& e : ds.exams)
    for (std::size_t i = 0; i < e.images.size(); ++i, ++flat)
      by_class[static_cast<std::size_t>(code(e.images[i].label))].push_back(flat);

  double total = 0.0;
  for (int c = 0; c < kNumCategories; ++c) {
    double w = class_weights[static_cast<std::size_t>(c)];
    if (!(w >= 0.0) || !std::isfinite(w)) throw DataError("class weights must be finite and non-negative");
    if (w > 0.0 && by_class[static_cast<std::size_t>(c)].empty())
      throw DataError("class weight > 0 for absent category " + std::string(label(density_from_code(c))));
    total += w;
  }
  if (total <= 0.0) throw DataError("class weights are all zero");

  Rng rng(seed);
  std::discrete_distribution<int> pick_class(class_weights.begin(), class_weights.end());
  std::vector<std::size_t> out;
  out.reserve(n_draws);
  for (std::size_t k = 0; k < n_draws; ++k) {
    const auto& pool = by_class[static_cast<std::size_t>(pick_class(rng))];
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    out.push_back(pool[pick(rng)]);
  }
  return out;
}

Dataset subsample_images(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  const std::size_t pool = ds.image_count();
  if (n > pool)
    throw DataError("subsample size " + std::to_string(n) + " exceeds pool of " + std::to_string(pool) + " images");

  std::vector<std::size_t> all(pool);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> chosen;
  chosen.reserve(n);
  Rng rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(chosen), static_cast<std::ptrdiff_t>(n), rng);

  Dataset out;
  out.feature_dim = ds.feature_dim;
  out.provenance = ds.provenance;
  std::size_t flat = 0;
  auto next = chosen.begin();
  for (const auto& e : ds.exams) {
    ExamRecord kept{e.exam_id, e.patient_id, {}, e.label};
    for (const auto& img : e.images) {
      if (next != chosen.end() && *next == flat) {
        kept.images.push_back(img);
        ++next;
      }
      ++flat;
    }
    if (!kept.images.empty()) out.exams.push_back(std::move(kept));
  }
  return out;
}

std::array<long, kNumCategories> label_counts(const Dataset& ds) {
  std::array<long, kNumCategories> counts{};
  for (const auto& e : ds.exams) ++counts[static_cast<std::size_t>(code(e.label))];
  return counts;
}

}  // namespace denscal
