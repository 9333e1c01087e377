#include "textspot/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "json.hpp"
#include "textspot/error.hpp"
#include "textspot/ingest.hpp"
#include "textspot/text_filter.hpp"

namespace textspot {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kDoor = 1, kWindow = 2, kSofa = 3, kTable = 4, kChair = 5, kWall = 6;
constexpr double kWallThickness = 0.2;
constexpr double kCharWidth = 0.3, kTextHeight = 0.3, kTextGap = 0.15;

double q(double v) { return canonical_real(v); }

Line qline(double x1, double y1, double x2, double y2) { return {q(x1), q(y1), q(x2), q(y2)}; }

struct Rect {
  double xmin, ymin, xmax, ymax;
  bool overlaps(const Rect& o, double pad) const {
    return xmin < o.xmax + pad && o.xmin < xmax + pad && ymin < o.ymax + pad && o.ymin < ymax + pad;
  }
};

// Template geometry in a local frame, before rotation and translation.
std::vector<Geometry> template_geometry(int label) {
  std::vector<Geometry> g;
  auto rect = [&](double w, double h) {
    g.push_back(Line{0, 0, w, 0});
    g.push_back(Line{w, 0, w, h});
    g.push_back(Line{w, h, 0, h});
    g.push_back(Line{0, h, 0, 0});
  };
  switch (label) {
    case kDoor:
      g.push_back(Line{0, 0, 0.9, 0});
      g.push_back(Arc{0, 0, 0.9, 0, kPi / 2});
      break;
    case kWindow:
      for (int i = 0; i < 3; ++i) g.push_back(Line{0, 0.1 * i, 1.2, 0.1 * i});
      break;
    case kSofa:
    case kTable:
      // same outline on purpose: only the annotation tells them apart
      rect(1.8, 0.8);
      break;
    case kChair:
      rect(0.5, 0.5);
      g.push_back(Line{0, 0.4, 0.5, 0.4});
      break;
    default:
      throw ConfigError("synth", "no template for label " + std::to_string(label));
  }
  return g;
}

Geometry place(const Geometry& g, double angle, double tx, double ty) {
  Geometry r = rigid_transform(g, angle, 0, 0);
  return std::visit(
      [&](const auto& v) -> Geometry {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Line>) {
          return qline(v.x1 + tx, v.y1 + ty, v.x2 + tx, v.y2 + ty);
        } else if constexpr (std::is_same_v<T, Arc>) {
          double start = std::fmod(v.start, 2 * kPi);
          if (start < 0) start += 2 * kPi;
          return Arc{q(v.cx + tx), q(v.cy + ty), q(v.r), q(start), q(v.sweep)};
        } else if constexpr (std::is_same_v<T, Circle>) {
          return Circle{q(v.cx + tx), q(v.cy + ty), q(v.r)};
        } else if constexpr (std::is_same_v<T, Ellipse>) {
          return Ellipse{q(v.cx + tx), q(v.cy + ty), q(v.a), q(v.b), q(v.rotation)};
        } else {
          return Text{q(v.xmin + tx), q(v.ymin + ty), q(v.xmax + tx), q(v.ymax + ty), v.content, q(v.rotation)};
        }
      },
      r);
}

Rect bounds_of(const std::vector<Geometry>& gs) {
  Rect r{1e300, 1e300, -1e300, -1e300};
  for (const auto& g : gs) {
    const Box b = geometry_bounds(g);
    r = {std::min(r.xmin, b.xmin), std::min(r.ymin, b.ymin), std::max(r.xmax, b.xmax), std::max(r.ymax, b.ymax)};
  }
  return r;
}

std::string noise_token(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(3, 8), letter(0, 25);
  std::string s;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) s.push_back(static_cast<char>('A' + letter(rng)));
  return s;
}

// Splits [a, b] into pieces of 2..5 m.
std::vector<std::pair<double, double>> segments(double a, double b, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> piece(2.0, 5.0);
  std::vector<std::pair<double, double>> out;
  double x = a;
  while (b - x > 5.0) {
    const double nx = x + piece(rng);
    out.push_back({x, nx});
    x = nx;
  }
  out.push_back({x, b});
  return out;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain:
      return "train";
    case Split::kVal:
      return "val";
    case Split::kTest:
      return "test";
  }
  return "?";
}

void SynthConfig::validate() const {
  auto rate = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("synth", std::string(name) + " must lie in [0, 1]");
  };
  rate(text_rate, "text rate");
  rate(informativeness, "informativeness");
  rate(clutter_rate, "clutter rate");
  if (train_tiles < 0 || val_tiles < 0 || test_tiles < 0) throw ConfigError("synth", "tile counts must be >= 0");
  if (min_instances < 0 || max_instances < min_instances) throw ConfigError("synth", "bad instance count range");
  if (partitions_max < 0) throw ConfigError("synth", "partitions_max must be >= 0");
  if (tile_size < 8.0) throw ConfigError("synth", "tile size must be >= 8");
}

ClassTable synth_classes() {
  return ClassTable({{kDoor, "door", ClassKind::kThing},
                     {kWindow, "window", ClassKind::kThing},
                     {kSofa, "sofa", ClassKind::kThing},
                     {kTable, "table", ClassKind::kThing},
                     {kChair, "chair", ClassKind::kThing},
                     {kWall, "wall", ClassKind::kStuff}});
}

std::string class_token(int label) {
  switch (label) {
    case kDoor:
      return "DOOR";
    case kWindow:
      return "WINDOW";
    case kSofa:
      return "SOFA";
    case kTable:
      return "DINING TABLE";
    case kChair:
      return "CHAIR";
    default:
      throw ConfigError("synth", "no token for label " + std::to_string(label));
  }
}

Drawing generate_tile(const SynthConfig& cfg, Split split, int index) {
  cfg.validate();
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index)};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double S = cfg.tile_size;

  Drawing d;
  d.classes = synth_classes();
  d.meta.source = "synth:" + std::to_string(cfg.seed) + ":" + split_name(split) + ":" + std::to_string(index);
  d.meta.tile_size = S;
  const int annotation = d.classes.annotation_label();
  auto push = [&](Geometry g, int label, int instance) {
    Primitive p;
    p.id = static_cast<int>(d.primitives.size());
    p.geometry = std::move(g);
    p.label = label;
    p.instance = instance;
    d.primitives.push_back(std::move(p));
  };

  std::vector<Rect> occupied;
  // walls: parallel line pairs along the border and interior partitions
  auto wall = [&](bool horizontal, double at, double from, double to) {
    for (const auto& [a, b] : segments(from, to, rng)) {
      for (double off : {0.0, kWallThickness}) {
        if (horizontal) push(qline(a, at + off, b, at + off), kWall, kNoInstance);
        else push(qline(at + off, a, at + off, b), kWall, kNoInstance);
      }
    }
    occupied.push_back(horizontal ? Rect{from, at, to, at + kWallThickness} : Rect{at, from, at + kWallThickness, to});
  };
  const double lo = 0.1, hi = S - 0.1 - kWallThickness;
  wall(true, lo, lo, S - 0.1);
  wall(true, hi, lo, S - 0.1);
  wall(false, lo, lo + kWallThickness, hi);
  wall(false, hi, lo + kWallThickness, hi);
  const int partitions = std::uniform_int_distribution<int>(0, cfg.partitions_max)(rng);
  for (int i = 0; i < partitions; ++i) {
    const bool horizontal = unit(rng) < 0.5;
    const double at = 4.0 + unit(rng) * (S - 8.0);
    const double len = 0.4 + 0.4 * unit(rng);
    const double from = unit(rng) < 0.5 ? lo + kWallThickness : S * (1 - len);
    wall(horizontal, at, from, from + S * len - kWallThickness);
  }

  const int count = std::uniform_int_distribution<int>(cfg.min_instances, cfg.max_instances)(rng);
  std::uniform_int_distribution<int> pick_class(kDoor, kChair);
  int instance = 0;
  for (int attempt = 0; attempt < 200 && instance < count; ++attempt) {
    const int label = pick_class(rng);
    const double angle = (kPi / 2) * std::uniform_int_distribution<int>(0, 3)(rng);
    std::vector<Geometry> local;
    for (const auto& g : template_geometry(label)) local.push_back(rigid_transform(g, angle, 0, 0));
    const Rect lb = bounds_of(local);
    const bool with_text = unit(rng) < cfg.text_rate;
    std::string token;
    if (with_text) token = unit(rng) < cfg.informativeness ? class_token(label) : noise_token(rng);
    const double tw = kCharWidth * static_cast<double>(token.size());
    const double w = lb.xmax - lb.xmin, h = lb.ymax - lb.ymin;
    const double full_w = std::max(w, tw);
    const double full_h = h + (with_text ? kTextGap + kTextHeight : 0.0);
    const double x0 = 0.5 + unit(rng) * (S - 1.0 - full_w);
    const double y0 = 0.5 + unit(rng) * (S - 1.0 - full_h);
    const Rect footprint{x0, y0, x0 + full_w, y0 + full_h};
    if (footprint.xmin < 0.4 || footprint.xmax > S - 0.4 || footprint.ymax > S - 0.4) continue;
    bool clash = false;
    for (const auto& o : occupied) clash = clash || footprint.overlaps(o, 0.4);
    if (clash) continue;
    occupied.push_back(footprint);
    const double tx = x0 + 0.5 * (full_w - w) - lb.xmin, ty = y0 - lb.ymin;
    for (const auto& g : local) push(place(g, 0, tx, ty), label, instance);
    if (with_text) {
      const double cx = x0 + 0.5 * full_w, ybase = y0 + h + kTextGap;
      push(place(Text{cx - 0.5 * tw, ybase, cx + 0.5 * tw, ybase + kTextHeight, token, 0.0}, 0, 0, 0), annotation,
           kNoInstance);
    }
    ++instance;
  }

  for (int slot = 0; slot < 8; ++slot) {
    if (unit(rng) >= cfg.clutter_rate) continue;
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double len = 0.3 + 0.7 * unit(rng);
      const double ang = unit(rng) * kPi;
      const double x = 0.6 + unit(rng) * (S - 1.2), y = 0.6 + unit(rng) * (S - 1.2);
      const double x2 = x + len * std::cos(ang), y2 = y + len * std::sin(ang);
      const Rect r{std::min(x, x2), std::min(y, y2), std::max(x, x2), std::max(y, y2)};
      if (r.xmax > S - 0.6 || r.ymax > S - 0.6) continue;
      bool clash = false;
      for (const auto& o : occupied) clash = clash || r.overlaps(o, 0.3);
      if (clash) continue;
      occupied.push_back(r);
      push(qline(x, y, x2, y2), kBackgroundLabel, kNoInstance);
      break;
    }
  }
  return d;
}

const std::vector<std::string>& DatasetManifest::split(Split s) const {
  switch (s) {
    case Split::kTrain:
      return train;
    case Split::kVal:
      return val;
    default:
      return test;
  }
}

std::string serialize_manifest(const DatasetManifest& m) {
  nlohmann::json j;
  j["seed"] = m.seed;
  j["train"] = m.train;
  j["val"] = m.val;
  j["test"] = m.test;
  j["stats"] = m.stats;
  return j.dump(2) + "\n";
}

DatasetManifest parse_manifest(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    DatasetManifest m;
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train = j.at("train").get<std::vector<std::string>>();
    m.val = j.at("val").get<std::vector<std::string>>();
    m.test = j.at("test").get<std::vector<std::string>>();
    m.stats = j.at("stats").get<std::string>();
    return m;
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("manifest: ") + e.what(), e.byte);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("manifest: ") + e.what());
  }
}

DatasetManifest generate_dataset(const SynthConfig& cfg, const std::string& dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  DatasetManifest m;
  m.seed = cfg.seed;
  std::vector<Drawing> train_tiles;
  const std::pair<Split, int> splits[] = {{Split::kTrain, cfg.train_tiles}, {Split::kVal, cfg.val_tiles}, {Split::kTest, cfg.test_tiles}};
  for (const auto& [split, count] : splits) {
    const fs::path sub = fs::path(dir) / split_name(split);
    std::error_code ec;
    fs::create_directories(sub, ec);
    if (ec) throw IoError("synth", "cannot create " + sub.string() + ": " + ec.message());
    auto& list = split == Split::kTrain ? m.train : split == Split::kVal ? m.val : m.test;
    for (int i = 0; i < count; ++i) {
      Drawing t = generate_tile(cfg, split, i);
      char name[32];
      std::snprintf(name, sizeof name, "%04d.json", i);
      write_drawing_file((sub / name).string(), t);
      list.push_back(std::string(split_name(split)) + "/" + name);
      if (split == Split::kTrain) train_tiles.push_back(std::move(t));
    }
  }
  m.stats = "stats.tsv";
  write_stats_file((fs::path(dir) / m.stats).string(), build_corpus_stats(train_tiles));
  const std::string path = (fs::path(dir) / "manifest.json").string();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("synth", "cannot write " + path);
  out << serialize_manifest(m);
  return m;
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("synth", "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

}  // namespace textspot
