#include "semaforge/landmarks.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "semaforge/errors.hpp"

namespace semaforge {

LandmarkSet LandmarkSet::translated(double dx, double dy) const {
  LandmarkSet out = *this;
  for (Point& p : out.points) {
    p.x += dx;
    p.y += dy;
  }
  return out;
}

namespace {

bool parse_double(std::string_view token, double& out) {
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

LandmarkSet parse_landmarks(const std::string& text) {
  std::vector<Point> points;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;

    std::istringstream fields(line);
    std::string xs, ys, extra;
    fields >> xs >> ys;
    Point p;
    if (ys.empty() || (fields >> extra) || !parse_double(xs, p.x) || !parse_double(ys, p.y)) {
      throw ParseError("landmarks line " + std::to_string(line_no) +
                       ": expected two numbers \"x y\", got \"" + line + "\"");
    }
    points.push_back(p);
  }
  if (points.size() != kLandmarkCount) {
    throw FormatError("expected 81 landmarks, found " + std::to_string(points.size()));
  }
  LandmarkSet lm;
  std::copy(points.begin(), points.end(), lm.points.begin());
  return lm;
}

LandmarkSet load_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open landmark file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_landmarks(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string format_landmarks(const LandmarkSet& lm) {
  std::string out;
  char buf[64];
  for (const Point& p : lm.points) {
    std::snprintf(buf, sizeof buf, "%.17g %.17g\n", p.x, p.y);
    out += buf;
  }
  return out;
}

void save_landmarks(const std::filesystem::path& path, const LandmarkSet& lm) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << format_landmarks(lm);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void validate_landmarks(const LandmarkSet& lm, std::size_t height, std::size_t width,
                        double tolerance) {
  for (std::size_t i = 0; i < kLandmarkCount; ++i) {
    const Point& p = lm.points[i];
    if (!(p.x >= -tolerance && p.y >= -tolerance && p.x <= static_cast<double>(width) + tolerance &&
          p.y <= static_cast<double>(height) + tolerance)) {
      throw FormatError("landmark " + std::to_string(i) + " at (" + std::to_string(p.x) + ", " +
                        std::to_string(p.y) + ") lies outside the " + std::to_string(width) +
                        "x" + std::to_string(height) + " image");
    }
  }
}

}  // namespace semaforge
