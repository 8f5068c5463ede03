#include "semaforge/mfss.hpp"

#include <algorithm>
#include <numeric>

#include "semaforge/errors.hpp"

namespace semaforge {

std::string_view fragment_key(Fragment f) {
  static constexpr std::array<std::string_view, kFragmentCount> keys = {"p", "b", "f",
                                                                        "e", "m", "n"};
  return keys[index_of(f)];
}

std::string_view fragment_name(Fragment f) {
  static constexpr std::array<std::string_view, kFragmentCount> names = {
      "picture", "background", "face", "eyes", "mouth", "nose"};
  return names[index_of(f)];
}

std::optional<Fragment> parse_fragment(std::string_view text) {
  for (Fragment f : kFragments) {
    if (text == fragment_key(f) || text == fragment_name(f)) return f;
  }
  return std::nullopt;
}

namespace {

std::vector<std::size_t> index_range(std::size_t first, std::size_t last) {
  std::vector<std::size_t> v(last - first + 1);
  std::iota(v.begin(), v.end(), first);
  return v;
}

Polygon region_hull(const LandmarkSet& lm, const std::vector<std::size_t>& indices,
                    double rho, const char* region) {
  std::vector<Point> pts;
  pts.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= kLandmarkCount) throw ContractError("landmark grouping: index out of range");
    pts.push_back(lm.points[i]);
  }
  try {
    return dilate(convex_hull(pts), rho);
  } catch (const GeometryError& e) {
    throw GeometryError(std::string(region) + " region: " + e.what());
  }
}

}  // namespace

const LandmarkGrouping& default_grouping() {
  static const LandmarkGrouping g = [] {
    LandmarkGrouping out;
    out.eyes = index_range(17, 26);
    const auto eyes = index_range(36, 47);
    out.eyes.insert(out.eyes.end(), eyes.begin(), eyes.end());
    out.nose = index_range(27, 35);
    out.mouth = index_range(48, 67);
    return out;
  }();
  return g;
}

RegionPolygons group_landmarks(const LandmarkSet& lm, double rho_fraction,
                               const LandmarkGrouping& grouping) {
  if (rho_fraction < 0.0) throw ContractError("group_landmarks: negative dilation fraction");
  RegionPolygons r;
  try {
    r.face = convex_hull(lm.points);
  } catch (const GeometryError& e) {
    throw GeometryError(std::string("face region: ") + e.what());
  }
  r.rho = rho_fraction * bounding_box(r.face).diagonal();
  r.eyes = region_hull(lm, grouping.eyes, r.rho, "eyes");
  r.nose = region_hull(lm, grouping.nose, r.rho, "nose");
  r.mouth = region_hull(lm, grouping.mouth, r.rho, "mouth");
  return r;
}

FragmentMaskSet rasterize_masks(const RegionPolygons& regions, std::size_t height,
                                std::size_t width) {
  FragmentMaskSet out;
  auto raster = [&](const Polygon& poly, const char* name) {
    bool clipped = false;
    Mask m = rasterize(poly, height, width, &clipped);
    if (clipped) out.warnings.push_back(std::string(name) + " polygon clipped to the image");
    return m;
  };

  out[Fragment::p] = Mask(height, width, 1);
  out[Fragment::f] = raster(regions.face, "face");
  Mask& face = out[Fragment::f];
  Mask background(height, width);
  for (std::size_t i = 0; i < face.data.size(); ++i) background.data[i] = face.data[i] ? 0 : 1;
  out[Fragment::b] = std::move(background);

  const std::pair<Fragment, const Polygon*> locals[] = {
      {Fragment::e, &regions.eyes}, {Fragment::n, &regions.nose}, {Fragment::m, &regions.mouth}};
  for (const auto& [frag, poly] : locals) {
    Mask m = raster(*poly, std::string(fragment_name(frag)).c_str());
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] &= face.data[i];
    out[frag] = std::move(m);
  }
  return out;
}

FragmentSet extract_fragments(const Image& image, const FragmentMaskSet& masks, std::size_t size) {
  if (size == 0) throw ContractError("extract_fragments: fragment size must be positive");
  if (image.channels != 3) {
    throw DimensionError("extract_fragments: expected an RGB image, got " +
                         std::to_string(image.channels) + " channels");
  }
  FragmentSet out;
  out.size = size;
  for (Fragment f : kFragments) {
    const Mask& mask = masks[f];
    if (mask.height != image.height || mask.width != image.width) {
      throw DimensionError("extract_fragments: " + std::string(fragment_name(f)) + " mask is " +
                           std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                           ", image is " + std::to_string(image.height) + "x" +
                           std::to_string(image.width));
    }
    std::size_t y0 = image.height, y1 = 0, x0 = image.width, x1 = 0;
    for (std::size_t y = 0; y < mask.height; ++y)
      for (std::size_t x = 0; x < mask.width; ++x)
        if (mask.at(y, x)) {
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
    const bool whole_image = f == Fragment::b || f == Fragment::p;
    // An empty background (face filling the frame) is a black crop, not an error.
    if (y0 > y1 && !whole_image) {
      throw GeometryError("degenerate fragment '" + std::string(fragment_name(f)) +
                          "': empty mask");
    }
    if (whole_image) {
      y0 = 0;
      x0 = 0;
      y1 = image.height - 1;
      x1 = image.width - 1;
    }
    Image crop(y1 - y0 + 1, x1 - x0 + 1, 3);
    for (std::size_t y = y0; y <= y1; ++y)
      for (std::size_t x = x0; x <= x1; ++x) {
        if (!mask.at(y, x)) continue;
        for (std::size_t c = 0; c < 3; ++c) crop.at(y - y0, x - x0, c) = image.at(y, x, c);
      }
    out[f] = resize_bilinear(crop, size, size);
  }
  return out;
}

FragmentSet segment(const Image& image, const LandmarkSet& lm, std::size_t size,
                    double rho_fraction) {
  const RegionPolygons regions = group_landmarks(lm, rho_fraction);
  return extract_fragments(image, rasterize_masks(regions, image.height, image.width), size);
}

}  // namespace semaforge
