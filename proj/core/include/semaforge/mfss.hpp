#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "semaforge/geometry.hpp"
#include "semaforge/image.hpp"
#include "semaforge/landmarks.hpp"

namespace semaforge {

// Column order of the possibility and weight matrices.
enum class Fragment : std::size_t { p = 0, b = 1, f = 2, e = 3, m = 4, n = 5 };

inline constexpr std::size_t kFragmentCount = 6;
inline constexpr std::array<Fragment, kFragmentCount> kFragments = {
    Fragment::p, Fragment::b, Fragment::f, Fragment::e, Fragment::m, Fragment::n};

constexpr std::size_t index_of(Fragment f) { return static_cast<std::size_t>(f); }
std::string_view fragment_key(Fragment f);   // "p", "b", ...
std::string_view fragment_name(Fragment f);  // "picture", "background", ...
// Accepts the key or the name.
std::optional<Fragment> parse_fragment(std::string_view text);

// Landmark indices forming each local region.
struct LandmarkGrouping {
  std::vector<std::size_t> eyes;
  std::vector<std::size_t> nose;
  std::vector<std::size_t> mouth;
};
// eyes = brows 17-26 + eyes 36-47, nose = 27-35, mouth = 48-67.
const LandmarkGrouping& default_grouping();

struct RegionPolygons {
  Polygon face;   // hull of all 81 points
  Polygon eyes;   // dilated by rho
  Polygon nose;   // dilated by rho
  Polygon mouth;  // dilated by rho
  double rho = 0.0;
};

// rho = rho_fraction * diagonal of the face hull's bounding box.
RegionPolygons group_landmarks(const LandmarkSet& lm, double rho_fraction = 0.05,
                               const LandmarkGrouping& grouping = default_grouping());

struct FragmentMaskSet {
  std::array<Mask, kFragmentCount> masks;
  std::vector<std::string> warnings;  // clipping notes

  const Mask& operator[](Fragment f) const { return masks[index_of(f)]; }
  Mask& operator[](Fragment f) { return masks[index_of(f)]; }
};

// p = all ones, f = face hull, b = complement of f, and e/n/m = their
// dilated hulls intersected with f.
FragmentMaskSet rasterize_masks(const RegionPolygons& regions, std::size_t height,
                                std::size_t width);

struct FragmentSet {
  std::array<Image, kFragmentCount> crops;  // each size x size x 3, values in [0,1]
  std::size_t size = 0;
  std::string source_id;

  const Image& operator[](Fragment f) const { return crops[index_of(f)]; }
  Image& operator[](Fragment f) { return crops[index_of(f)]; }
};

// Zero pixels outside each mask, crop to the mask's pixel bounding box (the
// whole image for b and p), and resize bilinearly to size x size.
FragmentSet extract_fragments(const Image& image, const FragmentMaskSet& masks, std::size_t size);

// group_landmarks + rasterize_masks + extract_fragments.
FragmentSet segment(const Image& image, const LandmarkSet& lm, std::size_t size,
                    double rho_fraction = 0.05);

}  // namespace semaforge
