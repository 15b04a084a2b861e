// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "denscal/error.hpp"
#include "denscal/records.hpp"
#include "support.hpp"

using namespace denscal;

namespace {

std::string line_with_logits(const std::string& logits) {
  return R"({"image_id":"i1","exam_id":"e1","patient_id":"p1","site_id":"s","modality":"FFDM","view":"LCC",)"
         R"("label":"B","features":[0.5,1.0],"logits":)" +
         logits + "}";
}

}  // namespace

TEST_CASE("ingest groups four lines sharing an exam") {
  std::ostringstream os;
  for (const auto& img : fixture::exam("e1", "p1", Density::B)) os << image_record_to_json(img) << "\n";
  std::istringstream in(os.str());
  Dataset ds = ingest_jsonl(in, "mem");
  REQUIRE(ds.exams.size() == 1);
  CHECK(ds.exams[0].images.size() == 4);
  CHECK(ds.exams[0].label == Density::B);
  CHECK(ds.feature_dim == 2);
  CHECK(ds.provenance == "mem");
}

TEST_CASE("malformed records are rejected with the line number") {
  CHECK_THROWS_WITH_AS(parse_image_record(line_with_logits("[1,2,3]")), "logits length != 4", DataError);
  CHECK_NOTHROW(parse_image_record(line_with_logits("[1,2,3,4]")));
  CHECK_THROWS_AS(parse_image_record("{not json"), DataError);
  CHECK_THROWS_AS(parse_image_record(R"({"image_id":"x"})"), DataError);

  std::istringstream in("\n" + line_with_logits("[1,2,3,4]") + "\n" + line_with_logits("[1,2,3]") + "\n");
  try {
    ingest_jsonl(in);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).rfind("line 3:", 0) == 0);
  }
}

TEST_CASE("inconsistent exams are rejected") {
  auto imgs = fixture::exam("e1", "p1", Density::B);
  imgs[2].label = Density::C;
  CHECK_THROWS_AS(group_images(imgs), DataError);
  imgs = fixture::exam("e1", "p1", Density::B);
  imgs[1].image_id = imgs[0].image_id;
  CHECK_THROWS_AS(group_images(imgs), DataError);
  imgs = fixture::exam("e1", "p1", Density::B);
  imgs[3].features = {1.0};
  CHECK_THROWS_AS(group_images(imgs), DataError);
  imgs = fixture::exam("e1", "p1", Density::B);
  imgs[0].logits[1] = std::nan("");
  CHECK_THROWS_AS(group_images(imgs), DataError);
}

TEST_CASE("simgen output round-trips through JSONL") {
  auto site = fixture::small_site(250, 4, 8);
  REQUIRE(site.dataset.image_count() >= 1000);
  std::stringstream buf;
  emit_jsonl(site.dataset, buf);
  Dataset back = ingest_jsonl(buf, site.dataset.provenance);
  CHECK(back == site.dataset);
}

TEST_CASE("patient split sizes, determinism and disjointness") {
  std::vector<ImageRecord> imgs;
  for (int p = 0; p < 10; ++p) {
    auto e = fixture::exam("e" + std::to_string(p), "p" + std::to_string(p), Density::A);
    imgs.insert(imgs.end(), e.begin(), e.end());
  }
  Dataset ds = group_images(imgs);
  for (std::uint64_t seed : {0ULL, 1ULL, 99ULL}) {
    auto s = split_by_patient(ds, SplitRatios{0.8, 0.1, 0.1}, seed);
    CHECK(s.train.exams.size() == 8);
    CHECK(s.val.exams.size() == 1);
    CHECK(s.test.exams.size() == 1);
    auto again = split_by_patient(ds, SplitRatios{0.8, 0.1, 0.1}, seed);
    CHECK(again.train == s.train);
    CHECK(again.test == s.test);
  }
  CHECK_THROWS_AS(split_by_patient(ds, SplitRatios{0.9, 0.1, 0.0}, 1), DataError);
  CHECK_THROWS_AS(split_by_patient(ds, SplitRatios{0.5, 0.1, 0.1}, 1), DataError);

  GenConfig g;
  g.feature_dim = 8;
  g.n_patients = 1000;
  g.exams_per_patient = {0.5, 0.3, 0.2};
  auto site = generate_site(g, SiteProfile::site1_ffdm(), {});
  auto s = split_by_patient(site.dataset, SplitRatios{}, 7);
  std::set<std::string> seen;
  std::size_t patients = 0;
  for (const Dataset* part : {&s.train, &s.val, &s.test}) {
    std::set<std::string> local;
    for (const auto& e : part->exams) local.insert(e.patient_id);
    for (const auto& p : local) CHECK(seen.insert(p).second);
    patients += local.size();
  }
  CHECK(patients == 1000);
}

TEST_CASE("standard exam filter") {
  auto good = fixture::exam("e1", "p1", Density::A);
  auto extra = fixture::exam("e2", "p2", Density::A);
  extra.push_back(fixture::image("e2-x", "e2", "p2", View::LCC, Density::A));
  auto dup = fixture::exam("e3", "p3", Density::A);
  dup[3].view = View::LMLO;
  std::vector<ImageRecord> all = good;
  all.insert(all.end(), extra.begin(), extra.end());
  all.insert(all.end(), dup.begin(), dup.end());
  Dataset ds = group_images(all);
  Dataset f = filter_standard_exams(ds);
  REQUIRE(f.exams.size() == 1);
  CHECK(f.exams[0].exam_id == "e1");
  CHECK(filter_standard_exams(f) == f);
}

TEST_CASE("balanced sampler frequencies") {
  std::vector<ImageRecord> imgs;
  for (int c = 0; c < 4; ++c)
    for (int p = 0; p < 25; ++p) {
      auto e = fixture::exam("e" + std::to_string(c) + "_" + std::to_string(p), "p" + std::to_string(c * 100 + p),
                             density_from_code(c));
      imgs.insert(imgs.end(), e.begin(), e.end());
    }
  Dataset ds = group_images(imgs);
  auto flat = flatten_images(ds);
  const std::size_t n = 10000;
  auto freq = [&](const std::array<double, 4>& w) {
    std::array<double, 4> f{};
    for (auto i : balanced_sampler(ds, w, n, 3)) f[code(flat[i]->label)] += 1;
    return f;
  };
  auto uni = freq({1, 1, 1, 1});
  const double sd = std::sqrt(n * 0.25 * 0.75);
  for (double f : uni) CHECK(std::abs(f - n * 0.25) < 3 * sd);

  auto w = freq(kDefaultClassWeights);
  // p_A = 0.1, p_B = 0.4; delta-method sd of the ratio of counts.
  const double pa = 0.1, pb = 0.4;
  const double ratio_sd = (pb / pa) * std::sqrt((1 - pa) / (n * pa) + (1 - pb) / (n * pb) + 2.0 / n);
  CHECK(std::abs(w[1] / w[0] - 4.0) < 3 * ratio_sd);

  auto only_b = freq({0, 1, 0, 0});
  CHECK(only_b[1] == doctest::Approx(n));

  CHECK(balanced_sampler(ds, kDefaultClassWeights, 50, 9) == balanced_sampler(ds, kDefaultClassWeights, 50, 9));
}

TEST_CASE("subsample_images") {
  auto site = fixture::small_site(3000, 2, 6);
  const std::size_t pool = site.dataset.image_count();
  REQUIRE(pool >= 11873);
  CHECK(subsample_images(site.dataset, pool, 5) == site.dataset);
  CHECK(subsample_images(site.dataset, 0, 5).empty());
  Dataset sub = subsample_images(site.dataset, 500, 5);
  CHECK(sub.image_count() == 500);
  std::set<std::string> ids;
  for (const auto* img : flatten_images(sub)) ids.insert(img->image_id);
  CHECK(ids.size() == 500);
  CHECK_THROWS_AS(subsample_images(site.dataset, pool + 1, 5), DataError);
}

TEST_CASE("label and enum parsing") {
  CHECK(density_from_label("C") == Density::C);
  CHECK(label(Density::D) == "D");
  CHECK_THROWS_AS(density_from_label("E"), DataError);
  CHECK_THROWS_AS(density_from_code(4), DataError);
  CHECK(view_from_string("RMLO") == View::RMLO);
  CHECK(modality_from_string("SM") == Modality::SM);
  CHECK_THROWS_AS(view_from_string("XCC"), DataError);
}
