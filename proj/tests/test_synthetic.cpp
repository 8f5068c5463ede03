#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "semaforge/branches.hpp"
#include "semaforge/errors.hpp"
#include "semaforge/mfss.hpp"
#include "semaforge/synthetic.hpp"
#include "support.hpp"

using namespace semaforge;
using testing_support::TempDir;

namespace {

std::size_t changed_pixels(const Image& a, const Image& b, double tol = 0.0) {
  std::size_t n = 0;
  for (std::size_t p = 0; p < a.pixels(); ++p) {
    bool diff = false;
    for (std::size_t c = 0; c < a.channels; ++c) diff = diff || std::abs(a.data[p * 3 + c] - b.data[p * 3 + c]) > tol;
    n += diff;
  }
  return n;
}

bool inside_ellipse(double x, double y, Point c, double rx, double ry) {
  const double dx = (x - c.x) / rx, dy = (y - c.y) / ry;
  return dx * dx + dy * dy <= 1.0;
}

DatasetSpec tiny_spec() {
  DatasetSpec s;
  s.train_per_class = 8;
  s.val_per_class = 4;
  s.test_per_class = 6;
  s.seed = 3;
  return s;
}

}  // namespace

TEST(Face, DeterministicPerSeed) {
  const RenderedFace a = generate_face(random_face_params(42));
  const RenderedFace b = generate_face(random_face_params(42));
  EXPECT_EQ(a.image.data, b.image.data);
  EXPECT_EQ(a.landmarks, b.landmarks);
}

TEST(Face, SeedsDiffer) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const RenderedFace a = generate_face(random_face_params(s));
    const RenderedFace b = generate_face(random_face_params(s + 1000));
    EXPECT_GE(changed_pixels(a.image, b.image), a.image.pixels() / 100);
  }
}

TEST(Face, ValuesInUnitRange) {
  const RenderedFace f = generate_face(random_face_params(5));
  ASSERT_EQ(f.image.height, kCanvasSize);
  ASSERT_EQ(f.image.channels, 3u);
  for (double v : f.image.data) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Face, MouthLandmarksInsideMouthBox) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const FaceParams fp = random_face_params(s);
    const RenderedFace f = generate_face(fp);
    const double rho = group_landmarks(f.landmarks).rho;
    const double x0 = fp.face_center.x - fp.mouth_rx - rho, x1 = fp.face_center.x + fp.mouth_rx + rho;
    const double y0 = fp.mouth_y - fp.mouth_ry - rho, y1 = fp.mouth_y + fp.mouth_ry + rho;
    for (std::size_t i = 48; i <= 67; ++i) {
      const Point p = f.landmarks.points[i];
      EXPECT_TRUE(p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1) << s << " " << i;
    }
  }
}

TEST(Face, RegionHullsCoverRenderedFeatures) {
  // Every pixel centre inside a drawn eye or mouth ellipse lies in the
  // corresponding MFSS mask.
  for (std::uint64_t s = 0; s < 50; ++s) {
    const FaceParams fp = random_face_params(s);
    const RenderedFace f = generate_face(fp);
    const FragmentMaskSet m = rasterize_masks(group_landmarks(f.landmarks), fp.size, fp.size);
    const Point mouth{fp.face_center.x, fp.mouth_y};
    const Point eyes[2] = {{fp.face_center.x - fp.eye_dx, fp.eye_y}, {fp.face_center.x + fp.eye_dx, fp.eye_y}};
    for (std::size_t y = 0; y < fp.size; ++y) {
      for (std::size_t x = 0; x < fp.size; ++x) {
        const double cx = x + 0.5, cy = y + 0.5;
        if (inside_ellipse(cx, cy, mouth, fp.mouth_rx, fp.mouth_ry)) ASSERT_TRUE(m[Fragment::m].at(y, x));
        for (const Point& e : eyes) {
          if (inside_ellipse(cx, cy, e, fp.eye_rx, fp.eye_ry)) ASSERT_TRUE(m[Fragment::e].at(y, x));
        }
      }
    }
  }
}

TEST(Face, OutOfCanvasGeometryRejected) {
  FaceParams fp = random_face_params(1);
  fp.face_center.x = 10.0;
  EXPECT_THROW(generate_face(fp), ParameterError);
}

TEST(Manipulation, ZeroStrengthLimit) {
  const RenderedFace f = generate_face(random_face_params(7));
  for (Family fam : kFamilies) {
    const Image out = apply_manipulation(f.image, f.landmarks, {fam, 1e-6, 3});
    EXPECT_EQ(changed_pixels(f.image, out, 1.0 / 255.0), 0u) << family_name(fam);
  }
}

TEST(Manipulation, LocalFamiliesStayInsideRegion) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const RenderedFace f = generate_face(random_face_params(s));
    const RegionPolygons r = group_landmarks(f.landmarks);
    const std::pair<Family, const Polygon*> cases[] = {{Family::local_mouth, &r.mouth},
                                                       {Family::local_eyes, &r.eyes}};
    for (const auto& [fam, poly] : cases) {
      const Image out = apply_manipulation(f.image, f.landmarks, {fam, 1.0, s});
      const Mask region = rasterize(*poly, 128, 128);
      std::size_t inside_changes = 0;
      for (std::size_t p = 0; p < out.pixels(); ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
          if (!region.data[p]) {
            ASSERT_EQ(out.data[p * 3 + c], f.image.data[p * 3 + c]) << family_name(fam) << " pixel " << p;
          } else {
            inside_changes += out.data[p * 3 + c] != f.image.data[p * 3 + c];
          }
        }
      }
      EXPECT_GT(inside_changes, 0u);
    }
  }
}

TEST(Manipulation, GlobalFamiliesTouchMostPixels) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const RenderedFace f = generate_face(random_face_params(s));
    const Image warp = apply_manipulation(f.image, f.landmarks, {Family::global_warp, 0.5, s});
    EXPECT_GE(changed_pixels(f.image, warp), f.image.pixels() / 2);
    const Image color = apply_manipulation(f.image, f.landmarks, {Family::global_color, 0.6, s});
    EXPECT_GE(changed_pixels(f.image, color), f.image.pixels() / 2);
    for (double v : warp.data) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
    for (double v : color.data) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(Manipulation, FamilyNames) {
  for (Family f : kFamilies) EXPECT_EQ(parse_family(family_name(f)), f);
  EXPECT_THROW(parse_family("deep-dream"), ContractError);
}

TEST(Dataset, PlanCountsMatchSpec) {
  DatasetSpec spec;
  const DatasetManifest m = plan_dataset(spec);
  EXPECT_EQ(m.count(Split::train, kReal), 500u);
  EXPECT_EQ(m.count(Split::train, kFake), 500u);
  EXPECT_EQ(m.count(Split::val, kReal), 50u);
  EXPECT_EQ(m.count(Split::val, kFake), 50u);
  EXPECT_EQ(m.count(Split::test, kReal), 200u);
  EXPECT_EQ(m.count(Split::test, kFake), 200u);
  EXPECT_EQ(m.count(Split::unseen_test), 0u);
  EXPECT_EQ(m.records.size(), 1500u);
  for (Family f : kFamilies) {
    const auto n = std::count_if(m.records.begin(), m.records.end(), [&](const DatasetRecord& r) {
      return r.split == Split::train && r.family == family_name(f);
    });
    EXPECT_EQ(n, 125);
  }
}

TEST(Dataset, LeaveOutExcludesFamily) {
  for (Family held : kFamilies) {
    DatasetSpec spec;
    spec.leave_out = held;
    const DatasetManifest m = plan_dataset(spec);
    for (const DatasetRecord& r : m.records) {
      if (r.split == Split::unseen_test) {
        EXPECT_TRUE(r.label == kReal || r.family == family_name(held));
      } else {
        EXPECT_NE(r.family, family_name(held));
      }
    }
    EXPECT_EQ(m.count(Split::train, kFake), 500u);
    EXPECT_EQ(m.count(Split::unseen_test, kFake), 200u);
    EXPECT_EQ(m.count(Split::unseen_test, kReal), 200u);
  }
}

TEST(Dataset, GeneratedFilesAndDeterminism) {
  TempDir a("ds"), b("ds");
  DatasetSpec spec = tiny_spec();
  spec.leave_out = Family::global_color;
  const DatasetManifest ma = generate_dataset(spec, a.path(), 2);
  generate_dataset(spec, b.path(), 1);
  EXPECT_EQ(testing_support::slurp(a / "manifest.jsonl"), testing_support::slurp(b / "manifest.jsonl"));
  const DatasetManifest loaded = load_manifest(a.path());
  EXPECT_EQ(manifest_jsonl(loaded), manifest_jsonl(ma));
  EXPECT_EQ(ma.records.size(), 2u * (8 + 4 + 6 + 6));
  for (const DatasetRecord& r : ma.records) {
    EXPECT_TRUE(std::filesystem::exists(a / r.image)) << r.image;
    EXPECT_EQ(testing_support::slurp(a / r.image), testing_support::slurp(b / r.image));
    EXPECT_EQ(load_landmarks(a / r.landmarks), load_landmarks(b / r.landmarks));
  }
  // One JSON object per line with the documented fields.
  std::istringstream lines(testing_support::slurp(a / "manifest.jsonl"));
  std::string line;
  std::size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"image", "landmarks", "label", "family", "split"}) EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_TRUE(j["label"] == "fake" || j["label"] == "real");
    ++n;
  }
  EXPECT_EQ(n, ma.records.size());
  EXPECT_EQ(dataset_spec_from_json(testing_support::slurp(a / "dataset.json")).leave_out, Family::global_color);
}

TEST(Dataset, UnwritableRootReportsPath) {
  TempDir dir("ds");
  testing_support::spit(dir / "blocker", "x");
  try {
    generate_dataset(tiny_spec(), dir / "blocker" / "sub");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("blocker"), std::string::npos) << e.what();
  }
}

TEST(Dataset, MeanIntensityIsNotATell) {
  // Best single threshold on mean intensity, fitted on train, scored on test.
  const DatasetSpec spec;
  const DatasetManifest plan = plan_dataset(spec);
  std::vector<std::pair<double, int>> train, test;
  for (std::size_t i = 0; i < plan.records.size(); ++i) {
    const DatasetRecord& r = plan.records[i];
    if (r.split != Split::train && r.split != Split::test) continue;
    const Image img = render_record(spec, plan, i).image;
    double mean = 0.0;
    for (double v : img.data) mean += v;
    mean /= static_cast<double>(img.data.size());
    (r.split == Split::train ? train : test).push_back({mean, r.label});
  }
  std::sort(train.begin(), train.end());
  double best_acc = 0.0, best_t = 0.0;
  bool best_fake_above = true;
  for (std::size_t k = 0; k <= train.size(); ++k) {
    const double t = k == 0 ? train[0].first - 1.0 : train[k - 1].first;
    for (bool fake_above : {true, false}) {
      std::size_t correct = 0;
      for (const auto& [m, y] : train) correct += ((m > t) == fake_above) == (y == kFake);
      const double acc = static_cast<double>(correct) / train.size();
      if (acc > best_acc) best_acc = acc, best_t = t, best_fake_above = fake_above;
    }
  }
  std::size_t correct = 0;
  for (const auto& [m, y] : test) correct += ((m > best_t) == best_fake_above) == (y == kFake);
  const double test_acc = static_cast<double>(correct) / test.size();
  EXPECT_LT(test_acc, 0.65) << "train " << best_acc;
  EXPECT_LT(best_acc, 0.65);
}
