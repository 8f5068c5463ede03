#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "semaforge/image.hpp"
#include "semaforge/landmarks.hpp"

namespace semaforge {

inline constexpr std::size_t kCanvasSize = 128;

struct Rgb {
  double r = 0.0, g = 0.0, b = 0.0;
};

struct FaceParams {
  std::uint64_t seed = 0;  // drives the noise texture
  std::size_t size = kCanvasSize;
  Point face_center{64.0, 66.0};
  double face_rx = 37.0;  // half width
  double face_ry = 47.0;  // half height
  double eye_dx = 14.0;   // horizontal offset of each eye from the centre line
  double eye_y = 54.0;
  double eye_rx = 7.0;
  double eye_ry = 3.5;
  double iris_r = 2.5;
  double brow_gap = 7.0;  // brow arc height above the eye centre
  double nose_tip_y = 78.0;
  double nose_half_width = 6.0;
  double mouth_y = 93.0;
  double mouth_rx = 12.0;
  double mouth_ry = 4.5;
  Rgb skin{0.80, 0.62, 0.50};
  Rgb background{0.4, 0.5, 0.6};
  Rgb lips{0.70, 0.30, 0.30};
  double shading = 0.08;  // vertical brightness gradient across the face
  double noise = 0.03;    // per-pixel texture amplitude
};

// Random but plausible face geometry and colours for the seed.
FaceParams random_face_params(std::uint64_t seed, std::size_t size = kCanvasSize);

struct RenderedFace {
  Image image;  // size x size x 3 in [0, 1]
  LandmarkSet landmarks;
};

// Throws ParameterError when any landmark or feature would leave the canvas.
RenderedFace generate_face(const FaceParams& params);

enum class Family { local_eyes, local_mouth, global_warp, global_color };
inline constexpr std::array<Family, 4> kFamilies = {Family::local_eyes, Family::local_mouth,
                                                    Family::global_warp, Family::global_color};

std::string_view family_name(Family f);  // "local-eyes", ...
// Throws ContractError for unknown names.
Family parse_family(std::string_view name);

struct Manipulation {
  Family family = Family::local_eyes;
  double strength = 1.0;  // in [0, 1]
  std::uint64_t seed = 0;
};

// Local families only touch pixels inside the region's dilated hull (the
// same polygon MFSS uses); global families change most of the canvas.
Image apply_manipulation(const Image& image, const LandmarkSet& lm, const Manipulation& m);

enum class Split { train, val, test, unseen_test };
std::string_view split_name(Split s);  // "train", "val", "test", "unseen-test"
Split parse_split(std::string_view name);

struct DatasetRecord {
  std::string image;      // relative to the dataset root
  std::string landmarks;  // relative to the dataset root
  int label = 0;          // 0 fake, 1 real
  std::string family;     // family name or "real"
  Split split = Split::train;
  double strength = 0.0;  // 0 for reals
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<DatasetRecord> records;

  std::vector<DatasetRecord> split(Split s) const;
  std::size_t count(Split s, std::optional<int> label = std::nullopt) const;
};

// Images per class for each split. Fakes of a split are spread evenly over
// the included families (earlier families take the remainder).
struct DatasetSpec {
  std::size_t train_per_class = 500;
  std::size_t val_per_class = 50;
  std::size_t test_per_class = 200;
  std::optional<Family> leave_out;  // excluded from train/val/test, forms unseen-test
  double strength_min = 0.6;
  double strength_max = 1.0;
  std::size_t image_size = kCanvasSize;
  std::uint64_t seed = 0;
};

// Record list without rendering anything.
DatasetManifest plan_dataset(const DatasetSpec& spec);

// Writes images/, landmarks/, manifest.jsonl and dataset.json under `root`.
DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root,
                                 std::size_t jobs = 1);

// Renders record `index` of the plan in memory (what generate_dataset writes
// before PNG quantisation).
RenderedFace render_record(const DatasetSpec& spec, const DatasetManifest& plan, std::size_t index);

DatasetManifest load_manifest(const std::filesystem::path& root);
std::string manifest_jsonl(const DatasetManifest& manifest);
std::string to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const std::string& text, const DatasetSpec& base = {});

}  // namespace semaforge
