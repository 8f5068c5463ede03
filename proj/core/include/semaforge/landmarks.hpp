#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>

#include "semaforge/geometry.hpp"

namespace semaforge {

inline constexpr std::size_t kLandmarkCount = 81;

// 81-point layout: 0-16 jaw, 17-26 brows, 27-35 nose, 36-47 eyes,
// 48-67 mouth, 68-80 forehead.
struct LandmarkSet {
  std::array<Point, kLandmarkCount> points{};

  LandmarkSet translated(double dx, double dy) const;
  bool operator==(const LandmarkSet&) const = default;
};

// Text format: one "x y" pair per line, 81 lines. Blank lines and lines
// starting with '#' are ignored. Values are written with 17 significant
// digits so a save/load round trip is exact.
LandmarkSet parse_landmarks(const std::string& text);
LandmarkSet load_landmarks(const std::filesystem::path& path);
std::string format_landmarks(const LandmarkSet& lm);
void save_landmarks(const std::filesystem::path& path, const LandmarkSet& lm);

// Every point within [-tol, W + tol] x [-tol, H + tol]; throws FormatError
// naming the first offending index otherwise.
void validate_landmarks(const LandmarkSet& lm, std::size_t height, std::size_t width,
                        double tolerance = 2.0);

}  // namespace semaforge
