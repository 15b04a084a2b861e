// SPDX-License-Identifier: Apache-2.0
// Small fixtures shared by the unit tests.
#pragma once

#include <string>
#include <vector>

#include "denscal/records.hpp"
#include "denscal/simgen.hpp"

namespace fixture {

inline denscal::ImageRecord image(const std::string& id, const std::string& exam, const std::string& patient,
                                  denscal::View view, denscal::Density label, std::vector<double> features = {0.0, 0.0},
                                  denscal::Logits logits = {0.0, 0.0, 0.0, 0.0}) {
  denscal::ImageRecord r;
  r.image_id = id;
  r.exam_id = exam;
  r.patient_id = patient;
  r.site_id = "s";
  r.view = view;
  r.features = std::move(features);
  r.logits = logits;
  r.label = label;
  return r;
}

/// One four-view exam.
inline std::vector<denscal::ImageRecord> exam(const std::string& exam_id, const std::string& patient,
                                              denscal::Density label) {
  using denscal::View;
  std::vector<denscal::ImageRecord> out;
  for (View v : {View::LCC, View::RCC, View::LMLO, View::RMLO})
    out.push_back(image(exam_id + "-" + std::string(denscal::to_string(v)), exam_id, patient, v, label));
  return out;
}

/// Small seeded simgen site, unshifted unless a shift is given.
inline denscal::GeneratedSite small_site(std::size_t patients, std::uint64_t seed, std::size_t feature_dim = 16,
                                         const denscal::ShiftSpec& shift = {}, double reader_noise = 0.3) {
  denscal::GenConfig g;
  g.feature_dim = feature_dim;
  g.n_patients = patients;
  g.seed = seed;
  g.geometry_seed = seed + 1;
  denscal::SiteProfile p = denscal::SiteProfile::site1_ffdm();
  p.reader_noise = reader_noise;
  return denscal::generate_site(g, p, shift);
}

}  // namespace fixture
