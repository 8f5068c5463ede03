#include "semaforge/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "json_config.hpp"
#include "semaforge/errors.hpp"
#include "semaforge/geometry.hpp"
#include "semaforge/mfss.hpp"

namespace semaforge {

namespace {

using std::numbers::pi;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Per-image seeds depend only on (dataset seed, image index, stream), so the
// order in which workers render images never matters.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index, std::uint64_t stream) {
  return splitmix(splitmix(seed) ^ splitmix(index * 4 + stream + 1));
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Approximate signed distance to an axis-aligned ellipse (negative inside).
double ellipse_sd(double x, double y, Point c, double rx, double ry) {
  const double dx = x - c.x, dy = y - c.y;
  const double f = std::sqrt((dx / rx) * (dx / rx) + (dy / ry) * (dy / ry));
  if (f < 1e-9) return -std::min(rx, ry);
  const double gx = dx / (rx * rx * f), gy = dy / (ry * ry * f);
  return (f - 1.0) / std::sqrt(gx * gx + gy * gy);
}

double segment_distance(double x, double y, Point a, Point b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((x - a.x) * vx + (y - a.y) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double px = a.x + t * vx - x, py = a.y + t * vy - y;
  return std::sqrt(px * px + py * py);
}

double polyline_distance(double x, double y, const Point* pts, std::size_t n) {
  double d = 1e300;
  for (std::size_t i = 0; i + 1 < n; ++i) d = std::min(d, segment_distance(x, y, pts[i], pts[i + 1]));
  return d;
}

double coverage(double sd) { return std::clamp(0.5 - sd, 0.0, 1.0); }

void blend(Rgb& dst, const Rgb& src, double a) {
  dst.r += a * (src.r - dst.r);
  dst.g += a * (src.g - dst.g);
  dst.b += a * (src.b - dst.b);
}

Rgb scaled(const Rgb& c, double k) { return {c.r * k, c.g * k, c.b * k}; }

Point on_ellipse(Point c, double rx, double ry, double a) {
  return {c.x + rx * std::cos(a), c.y + ry * std::sin(a)};
}

LandmarkSet face_landmarks(const FaceParams& fp) {
  LandmarkSet lm;
  auto& p = lm.points;
  const Point c = fp.face_center;
  for (int k = 0; k <= 16; ++k) p[k] = on_ellipse(c, fp.face_rx, fp.face_ry, pi - k * pi / 16.0);

  const Point eyes[2] = {{c.x - fp.eye_dx, fp.eye_y}, {c.x + fp.eye_dx, fp.eye_y}};
  for (int side = 0; side < 2; ++side) {
    const double x0 = side == 0 ? eyes[0].x - 1.2 * fp.eye_rx : eyes[1].x - 1.0 * fp.eye_rx;
    const double x1 = side == 0 ? eyes[0].x + 1.0 * fp.eye_rx : eyes[1].x + 1.2 * fp.eye_rx;
    for (int k = 0; k < 5; ++k) {
      const double t = k / 4.0;
      p[17 + side * 5 + k] = {x0 + t * (x1 - x0),
                              fp.eye_y - fp.brow_gap - 2.0 * std::sin(pi * t)};
    }
  }
  const double bridge_end = fp.nose_tip_y - 3.0;
  for (int k = 0; k < 4; ++k) p[27 + k] = {c.x, fp.eye_y + k * (bridge_end - fp.eye_y) / 3.0};
  for (int k = 0; k < 5; ++k) {
    const double u = (k - 2) / 2.0;
    p[31 + k] = {c.x + u * fp.nose_half_width, fp.nose_tip_y + 1.5 * (1.0 - std::abs(u))};
  }
  const double eye_angles[6] = {pi, 4 * pi / 3, 5 * pi / 3, 0.0, pi / 3, 2 * pi / 3};
  for (int side = 0; side < 2; ++side) {
    for (int k = 0; k < 6; ++k) {
      p[36 + side * 6 + k] = on_ellipse(eyes[side], fp.eye_rx, fp.eye_ry, eye_angles[k]);
    }
  }
  const Point mouth{c.x, fp.mouth_y};
  for (int k = 0; k < 12; ++k) p[48 + k] = on_ellipse(mouth, fp.mouth_rx, fp.mouth_ry, pi + k * pi / 6);
  for (int k = 0; k < 8; ++k) {
    p[60 + k] = on_ellipse(mouth, 0.75 * fp.mouth_rx, 0.35 * fp.mouth_ry, pi + k * pi / 4);
  }
  for (int k = 0; k < 13; ++k) p[68 + k] = on_ellipse(c, fp.face_rx, fp.face_ry, pi + (k + 1) * pi / 14);
  return lm;
}

}  // namespace

FaceParams random_face_params(std::uint64_t seed, std::size_t size) {
  std::mt19937_64 rng(seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double k = static_cast<double>(size) / kCanvasSize;

  FaceParams fp;
  fp.seed = seed;
  fp.size = size;
  fp.face_center = {k * (64.0 + u(-4, 4)), k * (66.0 + u(-3, 3))};
  fp.face_rx = k * u(33, 39);
  fp.face_ry = k * u(43, 49);
  fp.eye_y = fp.face_center.y - u(0.18, 0.26) * fp.face_ry;
  fp.eye_dx = u(0.36, 0.44) * fp.face_rx;
  fp.eye_rx = k * u(5.5, 7.5);
  fp.eye_ry = k * u(2.8, 4.0);
  fp.iris_r = std::min(k * u(1.8, 2.6), fp.eye_ry - 0.3 * k);
  fp.brow_gap = k * u(6, 9);
  fp.nose_tip_y = fp.face_center.y + u(0.15, 0.25) * fp.face_ry;
  fp.nose_half_width = k * u(4.5, 7);
  fp.mouth_y = fp.face_center.y + u(0.5, 0.6) * fp.face_ry;
  fp.mouth_rx = k * u(9, 14);
  fp.mouth_ry = k * u(3.5, 5.5);
  const double r = u(0.65, 0.92);
  const double g = r * u(0.72, 0.85);
  fp.skin = {r, g, g * u(0.72, 0.9)};
  fp.background = {u(0.15, 0.85), u(0.15, 0.85), u(0.15, 0.85)};
  fp.lips = {u(0.55, 0.8), u(0.2, 0.35), u(0.22, 0.38)};
  fp.shading = u(0.03, 0.1);
  fp.noise = u(0.02, 0.04);
  return fp;
}

RenderedFace generate_face(const FaceParams& fp) {
  const double size = static_cast<double>(fp.size);
  if (fp.size < 16) throw ParameterError("generate_face: canvas size below 16");
  const Point c = fp.face_center;
  if (c.x - fp.face_rx < 0 || c.x + fp.face_rx > size || c.y - fp.face_ry < 0 ||
      c.y + fp.face_ry > size) {
    throw ParameterError("generate_face: face ellipse leaves the canvas");
  }
  RenderedFace out;
  out.landmarks = face_landmarks(fp);
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    const Point q = out.landmarks.points[i];
    if (!(q.x >= 0 && q.x <= size && q.y >= 0 && q.y <= size)) {
      throw ParameterError("generate_face: landmark " + std::to_string(i) + " leaves the canvas");
    }
  }
  const auto& lm = out.landmarks.points;
  const Point eyes[2] = {{c.x - fp.eye_dx, fp.eye_y}, {c.x + fp.eye_dx, fp.eye_y}};
  const Point mouth{c.x, fp.mouth_y};
  const Point nostrils[2] = {{c.x - 0.5 * fp.nose_half_width, fp.nose_tip_y},
                             {c.x + 0.5 * fp.nose_half_width, fp.nose_tip_y}};
  const Rgb sclera{0.93, 0.93, 0.90};
  const Rgb iris = scaled(fp.skin, 0.25);
  const Rgb brow = scaled(fp.skin, 0.35);
  const Rgb nostril = scaled(fp.skin, 0.45);
  const Rgb slit{0.25, 0.08, 0.08};

  std::mt19937_64 rng(fp.seed ^ 0x5eedf00dULL);
  std::normal_distribution<double> noise(0.0, fp.noise);

  out.image = Image(fp.size, fp.size, 3);
  for (std::size_t i = 0; i < fp.size; ++i) {
    for (std::size_t j = 0; j < fp.size; ++j) {
      const double x = j + 0.5, y = i + 0.5;
      Rgb px = fp.background;
      const double shade = 1.0 + fp.shading * (c.y - y) / fp.face_ry;
      blend(px, scaled(fp.skin, shade), coverage(ellipse_sd(x, y, c, fp.face_rx, fp.face_ry)));
      blend(px, brow, coverage(polyline_distance(x, y, &lm[17], 5) - 1.5));
      blend(px, brow, coverage(polyline_distance(x, y, &lm[22], 5) - 1.5));
      for (const Point& e : eyes) {
        blend(px, sclera, coverage(ellipse_sd(x, y, e, fp.eye_rx, fp.eye_ry)));
        blend(px, iris, coverage(ellipse_sd(x, y, e, fp.iris_r, fp.iris_r)));
      }
      blend(px, scaled(fp.skin, shade * 0.85), coverage(polyline_distance(x, y, &lm[27], 4) - 0.8));
      for (const Point& n : nostrils) blend(px, nostril, coverage(ellipse_sd(x, y, n, 1.3, 1.1)));
      blend(px, fp.lips, coverage(ellipse_sd(x, y, mouth, fp.mouth_rx, fp.mouth_ry)));
      blend(px, slit, coverage(ellipse_sd(x, y, mouth, 0.75 * fp.mouth_rx, 0.25 * fp.mouth_ry)));
      out.image.at(i, j, 0) = clamp01(px.r + noise(rng));
      out.image.at(i, j, 1) = clamp01(px.g + noise(rng));
      out.image.at(i, j, 2) = clamp01(px.b + noise(rng));
    }
  }
  return out;
}

std::string_view family_name(Family f) {
  switch (f) {
    case Family::local_eyes: return "local-eyes";
    case Family::local_mouth: return "local-mouth";
    case Family::global_warp: return "global-warp";
    case Family::global_color: return "global-color";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  for (Family f : kFamilies) {
    if (family_name(f) == name) return f;
  }
  throw ContractError("unknown manipulation family '" + std::string(name) +
                      "' (expected local-eyes, local-mouth, global-warp or global-color)");
}

namespace {

Image local_patch(const Image& image, const Polygon& region, const Manipulation& m) {
  std::mt19937_64 rng(m.seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const bool checker = u(0, 1) < 0.5;
  const std::size_t cell = u(0, 1) < 0.5 ? 2 : 3;
  const Rgb a{u(0, 1), u(0, 1), u(0, 1)};
  const Rgb b{u(0, 1), u(0, 1), u(0, 1)};
  const double alpha = m.strength * u(0.7, 0.95);

  const Mask mask = rasterize(region, image.height, image.width);
  Image out = image;
  for (std::size_t i = 0; i < image.height; ++i) {
    for (std::size_t j = 0; j < image.width; ++j) {
      Rgb patch;
      if (checker) {
        patch = ((i / cell + j / cell) % 2 == 0) ? a : b;
      } else {
        patch = {u(0, 1), u(0, 1), u(0, 1)};
      }
      if (!mask.at(i, j)) continue;
      const double src[3] = {patch.r, patch.g, patch.b};
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double& v = out.at(i, j, ch);
        v = clamp01(v + alpha * (src[ch] - v));
      }
    }
  }
  return out;
}

double sample_bilinear(const Image& img, double x, double y, std::size_t ch) {
  // x, y in pixel-centre coordinates; clamp to the border.
  const double fx = std::clamp(x - 0.5, 0.0, static_cast<double>(img.width - 1));
  const double fy = std::clamp(y - 0.5, 0.0, static_cast<double>(img.height - 1));
  const std::size_t x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double tx = fx - x0, ty = fy - y0;
  const double top = img.at(y0, x0, ch) + tx * (img.at(y0, x1, ch) - img.at(y0, x0, ch));
  const double bot = img.at(y1, x0, ch) + tx * (img.at(y1, x1, ch) - img.at(y1, x0, ch));
  return top + ty * (bot - top);
}

Image global_warp(const Image& image, const Manipulation& m) {
  std::mt19937_64 rng(m.seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double amp = 3.0 * m.strength * static_cast<double>(image.width) / kCanvasSize;
  const double lx = u(24, 40), ly = u(24, 40);
  const double px = u(0, 2 * pi), py = u(0, 2 * pi);
  Image out = image;
  for (std::size_t i = 0; i < image.height; ++i) {
    for (std::size_t j = 0; j < image.width; ++j) {
      const double x = j + 0.5, y = i + 0.5;
      const double sx = x + amp * std::sin(2 * pi * y / ly + px);
      const double sy = y + amp * std::sin(2 * pi * x / lx + py);
      for (std::size_t ch = 0; ch < image.channels; ++ch) {
        out.at(i, j, ch) = clamp01(sample_bilinear(image, sx, sy, ch));
      }
    }
  }
  return out;
}

// Rotation of every colour about the grey axis; the channel mean of each
// pixel is preserved up to clamping.
Image global_color(const Image& image, const Manipulation& m) {
  std::mt19937_64 rng(m.seed);
  const double sign = std::uniform_real_distribution<double>(0, 1)(rng) < 0.5 ? -1.0 : 1.0;
  const double theta = sign * m.strength * 0.4 * pi;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double k = 1.0 / std::sqrt(3.0);
  // Rodrigues rotation matrix for axis (1,1,1)/sqrt(3).
  const double a = cs + (1 - cs) / 3.0;
  const double b = (1 - cs) / 3.0 - k * sn;
  const double c = (1 - cs) / 3.0 + k * sn;
  const double rot[3][3] = {{a, b, c}, {c, a, b}, {b, c, a}};
  Image out = image;
  for (std::size_t p = 0; p < image.pixels(); ++p) {
    const double* in = &image.data[p * 3];
    for (std::size_t r = 0; r < 3; ++r) {
      out.data[p * 3 + r] = clamp01(rot[r][0] * in[0] + rot[r][1] * in[1] + rot[r][2] * in[2]);
    }
  }
  return out;
}

}  // namespace

Image apply_manipulation(const Image& image, const LandmarkSet& lm, const Manipulation& m) {
  if (image.channels != 3) throw DimensionError("apply_manipulation: expected a 3-channel image");
  if (!(m.strength >= 0.0 && m.strength <= 1.0)) {
    throw ContractError("apply_manipulation: strength must lie in [0, 1]");
  }
  switch (m.family) {
    case Family::local_eyes: return local_patch(image, group_landmarks(lm).eyes, m);
    case Family::local_mouth: return local_patch(image, group_landmarks(lm).mouth, m);
    case Family::global_warp: return global_warp(image, m);
    case Family::global_color: return global_color(image, m);
  }
  throw ContractError("apply_manipulation: unknown family");
}

// --- datasets ------------------------------------------------------------------

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unseen_test: return "unseen-test";
  }
  return "?";
}

Split parse_split(std::string_view name) {
  for (Split s : {Split::train, Split::val, Split::test, Split::unseen_test}) {
    if (split_name(s) == name) return s;
  }
  throw ParseError("unknown split '" + std::string(name) + "'");
}

std::vector<DatasetRecord> DatasetManifest::split(Split s) const {
  std::vector<DatasetRecord> out;
  for (const DatasetRecord& r : records) {
    if (r.split == s) out.push_back(r);
  }
  return out;
}

std::size_t DatasetManifest::count(Split s, std::optional<int> label) const {
  return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [&](const DatasetRecord& r) {
    return r.split == s && (!label || r.label == *label);
  }));
}

DatasetManifest plan_dataset(const DatasetSpec& spec) {
  if (!(spec.strength_min >= 0 && spec.strength_min <= spec.strength_max && spec.strength_max <= 1)) {
    throw ContractError("dataset: strengths must satisfy 0 <= min <= max <= 1");
  }
  if (spec.train_per_class == 0) {
    throw ContractError("dataset: the training split needs at least one real and one fake image");
  }
  std::vector<Family> seen;
  for (Family f : kFamilies) {
    if (!spec.leave_out || *spec.leave_out != f) seen.push_back(f);
  }

  DatasetManifest m;
  std::size_t index = 0;
  auto add = [&](Split split, int label, std::string family) {
    char stem[64];
    std::snprintf(stem, sizeof stem, "%s_%06zu", std::string(split_name(split)).c_str(), index);
    DatasetRecord r;
    r.image = std::string("images/") + stem + ".png";
    r.landmarks = std::string("landmarks/") + stem + ".txt";
    r.label = label;
    r.family = std::move(family);
    r.split = split;
    if (label == 0) {
      std::mt19937_64 rng(derive_seed(spec.seed, index, 2));
      r.strength = std::uniform_real_distribution<double>(spec.strength_min, spec.strength_max)(rng);
      if (spec.strength_min == spec.strength_max) r.strength = spec.strength_min;
    }
    m.records.push_back(std::move(r));
    ++index;
  };
  auto add_split = [&](Split split, std::size_t per_class, const std::vector<Family>& families) {
    for (std::size_t i = 0; i < per_class; ++i) add(split, 1, "real");
    for (std::size_t k = 0; k < families.size(); ++k) {
      const std::size_t n = per_class / families.size() + (k < per_class % families.size() ? 1 : 0);
      for (std::size_t i = 0; i < n; ++i) add(split, 0, std::string(family_name(families[k])));
    }
  };
  add_split(Split::train, spec.train_per_class, seen);
  add_split(Split::val, spec.val_per_class, seen);
  add_split(Split::test, spec.test_per_class, seen);
  if (spec.leave_out) add_split(Split::unseen_test, spec.test_per_class, {*spec.leave_out});
  return m;
}

RenderedFace render_record(const DatasetSpec& spec, const DatasetManifest& plan, std::size_t index) {
  const DatasetRecord& r = plan.records.at(index);
  RenderedFace face = generate_face(random_face_params(derive_seed(spec.seed, index, 0), spec.image_size));
  if (r.label == 0) {
    Manipulation m{parse_family(r.family), r.strength, derive_seed(spec.seed, index, 1)};
    face.image = apply_manipulation(face.image, face.landmarks, m);
  }
  return face;
}

namespace {

using nlohmann::ordered_json;

ordered_json record_json(const DatasetRecord& r) {
  return ordered_json{{"image", r.image},
                      {"landmarks", r.landmarks},
                      {"label", r.label == 0 ? "fake" : "real"},
                      {"family", r.family},
                      {"split", split_name(r.split)},
                      {"strength", r.strength}};
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename '" + tmp.string() + "': " + ec.message());
}

}  // namespace

std::string manifest_jsonl(const DatasetManifest& manifest) {
  std::string out;
  for (const DatasetRecord& r : manifest.records) out += record_json(r).dump() + "\n";
  return out;
}

std::string to_json(const DatasetSpec& spec) {
  ordered_json j{{"train_per_class", spec.train_per_class},
                 {"val_per_class", spec.val_per_class},
                 {"test_per_class", spec.test_per_class},
                 {"leave_out", nullptr},
                 {"strength_min", spec.strength_min},
                 {"strength_max", spec.strength_max},
                 {"image_size", spec.image_size},
                 {"seed", spec.seed}};
  if (spec.leave_out) j["leave_out"] = family_name(*spec.leave_out);
  return j.dump(2);
}

DatasetSpec dataset_spec_from_json(const std::string& text, const DatasetSpec& base) {
  const nlohmann::json j = detail::parse_json(text, "dataset spec");
  const std::string where = "dataset";
  detail::check_keys(j,
                     {"train_per_class", "val_per_class", "test_per_class", "leave_out",
                      "strength_min", "strength_max", "image_size", "seed"},
                     where);
  DatasetSpec s = base;
  detail::read(j, "train_per_class", s.train_per_class, where);
  detail::read(j, "val_per_class", s.val_per_class, where);
  detail::read(j, "test_per_class", s.test_per_class, where);
  detail::read(j, "strength_min", s.strength_min, where);
  detail::read(j, "strength_max", s.strength_max, where);
  detail::read(j, "image_size", s.image_size, where);
  detail::read(j, "seed", s.seed, where);
  if (j.contains("leave_out")) {
    const auto& v = j.at("leave_out");
    if (v.is_null()) {
      s.leave_out.reset();
    } else if (v.is_string()) {
      s.leave_out = parse_family(v.get<std::string>());
    } else {
      throw ParseError(where + ".leave_out: expected a family name or null");
    }
  }
  return s;
}

DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root,
                                 std::size_t jobs) {
  DatasetManifest plan = plan_dataset(spec);
  plan.root = root;
  std::error_code ec;
  for (const char* sub : {"images", "landmarks"}) {
    std::filesystem::create_directories(root / sub, ec);
    if (ec) throw IoError("cannot create '" + (root / sub).string() + "': " + ec.message());
  }

  const std::size_t n = plan.records.size();
  const std::size_t workers = std::max<std::size_t>(1, std::min(jobs, n));
  std::vector<std::exception_ptr> failures(workers);
  auto work = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < n; i += workers) {
        const RenderedFace face = render_record(spec, plan, i);
        save_png(root / plan.records[i].image, face.image);
        save_landmarks(root / plan.records[i].landmarks, face.landmarks);
      }
    } catch (...) {
      failures[w] = std::current_exception();
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t w = 1; w < workers; ++w) threads.emplace_back(work, w);
  work(0);
  for (std::thread& t : threads) t.join();
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }

  write_file(root / "manifest.jsonl", manifest_jsonl(plan));
  write_file(root / "dataset.json", to_json(spec) + "\n");
  return plan;
}

DatasetManifest load_manifest(const std::filesystem::path& root) {
  const std::filesystem::path path = root / "manifest.jsonl";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  DatasetManifest m;
  m.root = root;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    const nlohmann::json j = detail::parse_json(line, where);
    try {
      DatasetRecord r;
      r.image = j.at("image").get<std::string>();
      r.landmarks = j.at("landmarks").get<std::string>();
      const std::string label = j.at("label").get<std::string>();
      if (label != "fake" && label != "real") throw ParseError(where + ": label must be fake or real");
      r.label = label == "fake" ? 0 : 1;
      r.family = j.at("family").get<std::string>();
      r.split = parse_split(j.at("split").get<std::string>());
      r.strength = j.value("strength", 0.0);
      m.records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + ": " + e.what());
    }
  }
  return m;
}

}  // namespace semaforge
