#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "textspot/ingest.hpp"
#include "textspot/model.hpp"
#include "textspot/synth.hpp"

namespace testsupport {

using namespace textspot;

inline ClassTable small_classes() {
  return ClassTable({{1, "door", ClassKind::kThing}, {2, "window", ClassKind::kThing}, {3, "wall", ClassKind::kStuff}});
}

inline Primitive line_prim(int id, double x1, double y1, double x2, double y2, int label = 0, int inst = -1) {
  Primitive p;
  p.id = id;
  p.geometry = Line{x1, y1, x2, y2};
  p.label = label;
  p.instance = inst;
  return p;
}

inline Primitive text_prim(int id, double xmin, double ymin, double xmax, double ymax, std::string content,
                           int annotation) {
  Primitive p;
  p.id = id;
  p.geometry = Text{xmin, ymin, xmax, ymax, std::move(content), 0.0};
  p.label = annotation;
  return p;
}

// Random valid drawing whose reals are already canonical.
inline Drawing random_drawing(std::mt19937_64& rng, int max_prims = 30) {
  std::uniform_real_distribution<double> coord(-50.0, 50.0), pos(0.05, 10.0), ang(0.0, 2 * std::numbers::pi);
  std::uniform_int_distribution<int> count(0, max_prims), kind(0, 4), lab(0, 3), inst(-1, 4);
  auto c = [](double v) { return canonical_real(v); };
  Drawing d;
  d.classes = small_classes();
  d.meta.source = "gen-" + std::to_string(rng() % 1000);
  d.meta.origin = {c(coord(rng)), c(coord(rng))};
  d.meta.tile_size = (rng() % 2) ? 14.0 : 0.0;
  const int n = count(rng);
  const int annotation = d.classes.annotation_label();
  for (int i = 0; i < n; ++i) {
    Primitive p;
    p.id = i;
    switch (kind(rng)) {
      case 0:
        p.geometry = Line{c(coord(rng)), c(coord(rng)), c(coord(rng)), c(coord(rng))};
        break;
      case 1:
        p.geometry = Arc{c(coord(rng)), c(coord(rng)), c(pos(rng)), c(ang(rng)), c(std::max(0.01, ang(rng)))};
        break;
      case 2:
        p.geometry = Circle{c(coord(rng)), c(coord(rng)), c(pos(rng))};
        break;
      case 3: {
        double a = c(pos(rng)), b = c(pos(rng));
        if (a < b) std::swap(a, b);
        p.geometry = Ellipse{c(coord(rng)), c(coord(rng)), a, b, c(ang(rng) / 2)};
        break;
      }
      default: {
        const double x = c(coord(rng)), y = c(coord(rng));
        static const char* words[] = {"DOOR", "Bedroom 12", "wc", "A-101-B", "\"quoted\" \\ text", "caf\xc3\xa9"};
        p.geometry = Text{x, y, c(x + pos(rng)), c(y + pos(rng)), words[rng() % 6], c(ang(rng) / 4)};
        p.label = annotation;
        d.primitives.push_back(p);
        continue;
      }
    }
    p.label = lab(rng);
    if (d.classes.is_thing(p.label)) {
      // instance k always carries label 1 + k % 2 so labels stay consistent
      const int k = inst(rng);
      if (k >= 0 && 1 + k % 2 == p.label) p.instance = k;
    }
    d.primitives.push_back(p);
  }
  return d;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("textspot-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testsupport
