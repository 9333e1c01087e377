#include "textspot/spotting.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>

#include "textspot/error.hpp"
#include "textspot/metrics.hpp"

namespace textspot {
namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b",
                          "#e377c2", "#17becf", "#bcbd22", "#7f7f7f", "#393b79"};

std::string class_color(int label, const ClassTable& classes) {
  if (label == kBackgroundLabel) return "#b0b0b0";
  if (label == classes.annotation_label()) return "#000000";
  return kPalette[(label - 1) % (sizeof kPalette / sizeof kPalette[0])];
}

}  // namespace

std::vector<int> predict_semantics(std::span<const double> scores, int rows, int cols) {
  if (rows < 0 || cols < 1 || scores.size() != static_cast<std::size_t>(rows) * cols) {
    throw ShapeError("spotting", "score matrix does not have " + std::to_string(rows) + " x " + std::to_string(cols) + " values");
  }
  std::vector<int> out(rows);
  for (int r = 0; r < rows; ++r) {
    const double* row = scores.data() + static_cast<std::size_t>(r) * cols;
    int best = 0;
    for (int c = 1; c < cols; ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[r] = best;
  }
  return out;
}

std::vector<Point> shift_centers(const Drawing& tile, std::span<const double> offsets) {
  if (offsets.size() != 2 * tile.primitives.size()) throw ShapeError("spotting", "offsets must be N x 2");
  std::vector<Point> out;
  out.reserve(tile.primitives.size());
  for (std::size_t i = 0; i < tile.primitives.size(); ++i) {
    const Point c = primitive_center(tile.primitives[i]);
    out.push_back({c.x + offsets[2 * i], c.y + offsets[2 * i + 1]});
  }
  return out;
}

std::vector<int> cluster_instances(const std::vector<int>& labels, const std::vector<Point>& shifted, double radius,
                                   const ClassTable& classes) {
  if (labels.size() != shifted.size()) throw ShapeError("spotting", "labels and shifted centers differ in length");
  if (!(radius > 0)) throw ConfigError("spotting", "cluster radius must be > 0");
  const int n = static_cast<int>(labels.size());
  std::map<int, std::vector<int>> by_class;
  for (int i = 0; i < n; ++i) {
    if (classes.is_thing(labels[i])) by_class[labels[i]].push_back(i);
  }
  UnionFind uf(n);
  const double r2 = radius * radius;
  for (const auto& [label, members] : by_class) {
    for (std::size_t a = 0; a < members.size(); ++a) {
      for (std::size_t b = a + 1; b < members.size(); ++b) {
        const double dx = shifted[members[a]].x - shifted[members[b]].x;
        const double dy = shifted[members[a]].y - shifted[members[b]].y;
        if (dx * dx + dy * dy <= r2) uf.unite(members[a], members[b]);
      }
    }
  }
  std::vector<int> out(n, kNoInstance);
  std::map<int, int> root_id;
  for (int i = 0; i < n; ++i) {
    if (!classes.is_thing(labels[i])) continue;
    auto [it, inserted] = root_id.emplace(uf.find(i), static_cast<int>(root_id.size()));
    out[i] = it->second;
  }
  return out;
}

SymbolSet assemble_symbols(const std::vector<int>& labels, const std::vector<int>& instances, const Drawing& tile) {
  if (labels.size() != tile.primitives.size() || instances.size() != labels.size()) {
    throw ShapeError("spotting", "labels and instances must cover every primitive");
  }
  std::map<std::pair<int, int>, std::vector<int>> groups;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (tile.classes.is_thing(l) && instances[i] != kNoInstance) {
      groups[{l, instances[i]}].push_back(static_cast<int>(i));
    } else if (tile.classes.is_stuff(l)) {
      groups[{l, kNoInstance}].push_back(static_cast<int>(i));
    } else if (tile.classes.is_thing(l)) {
      // thing label without an instance: its own singleton symbol
      groups[{l, -2 - static_cast<int>(i)}].push_back(static_cast<int>(i));
    }
  }
  SymbolSet out;
  for (auto& [key, members] : groups) {
    out.push_back({key.first, std::max(key.second, kNoInstance), members});
  }
  std::sort(out.begin(), out.end(), [](const Symbol& a, const Symbol& b) {
    return std::pair(a.label, a.members.front()) < std::pair(b.label, b.members.front());
  });
  return out;
}

std::vector<int> drawing_labels(const Drawing& tile) {
  std::vector<int> out;
  out.reserve(tile.primitives.size());
  for (const auto& p : tile.primitives) out.push_back(p.label);
  return out;
}

SymbolSet ground_truth_symbols(const Drawing& tile) {
  std::vector<int> inst;
  inst.reserve(tile.primitives.size());
  for (const auto& p : tile.primitives) inst.push_back(p.instance);
  return assemble_symbols(drawing_labels(tile), inst, tile);
}

SpottingResult spot_tile(const SpottingModel& model, const TileGraph& g, double radius) {
  const ForwardResult out = model.forward(g);
  SpottingResult r;
  r.labels = predict_semantics(out.cosine.values(), out.cosine.dim(0), out.cosine.dim(1));
  r.shifted = shift_centers(g.tile, out.offsets.values());
  r.instances = cluster_instances(r.labels, r.shifted, radius, g.tile.classes);
  r.symbols = assemble_symbols(r.labels, r.instances, g.tile);
  return r;
}

Drawing apply_prediction(const Drawing& tile, const SpottingResult& r) {
  if (r.labels.size() != tile.primitives.size()) throw ShapeError("spotting", "prediction does not cover the tile");
  Drawing out = tile;
  for (std::size_t i = 0; i < out.primitives.size(); ++i) {
    out.primitives[i].label = r.labels[i];
    out.primitives[i].instance = r.instances[i];
  }
  return out;
}

std::string render_overlay_svg(const Drawing& gt, const Drawing& pred) {
  if (gt.primitives.size() != pred.primitives.size()) {
    throw ShapeError("spotting", "prediction and ground truth have different primitive counts");
  }
  const std::size_t n = gt.primitives.size();
  // which primitives are correct: same label, and for categories the
  // containing symbols are matched to each other
  const SymbolSet gs = ground_truth_symbols(gt), ps = ground_truth_symbols(pred);
  const MatchResult m = match_symbols(ps, gs, gt);
  std::vector<int> g_of(n, -1), p_of(n, -1);
  for (std::size_t s = 0; s < gs.size(); ++s)
    for (int id : gs[s].members) g_of[id] = static_cast<int>(s);
  for (std::size_t s = 0; s < ps.size(); ++s)
    for (int id : ps[s].members) p_of[id] = static_cast<int>(s);
  std::map<int, int> matched;
  for (const auto& t : m.tp) matched[t.gt] = t.pred;
  std::vector<bool> wrong(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    if (gt.primitives[i].label != pred.primitives[i].label) {
      wrong[i] = true;
    } else if (g_of[i] >= 0) {
      auto it = matched.find(g_of[i]);
      wrong[i] = it == matched.end() || it->second != p_of[i];
    }
  }

  Box b{0, 0, 1, 1};
  bool first = true;
  for (const auto& p : gt.primitives) {
    const Box e = geometry_bounds(p.geometry);
    if (first) {
      b = e;
      first = false;
    } else {
      b = {std::min(b.xmin, e.xmin), std::min(b.ymin, e.ymin), std::max(b.xmax, e.xmax), std::max(b.ymax, e.ymax)};
    }
  }
  const double span = std::max({b.xmax - b.xmin, b.ymax - b.ymin, 1e-9});
  const double panel = 480.0, margin = 10.0;
  const double sc = (panel - 2 * margin) / span;

  std::string out;
  char buf[512];
  auto emit = [&](const char* fmt, auto... args) {
    std::snprintf(buf, sizeof buf, fmt, args...);
    out += buf;
  };
  emit("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\" viewBox=\"0 0 %.0f %.0f\">\n", 2 * panel,
       panel + 20, 2 * panel, panel + 20);
  emit("<rect x=\"0\" y=\"0\" width=\"%.0f\" height=\"%.0f\" fill=\"white\"/>\n", 2 * panel, panel + 20);
  emit("<text x=\"%.1f\" y=\"14\" font-size=\"12\">ground truth</text>\n", margin);
  emit("<text x=\"%.1f\" y=\"14\" font-size=\"12\">prediction</text>\n", panel + margin);

  auto draw = [&](const Drawing& d, double x0, bool outline) {
    out += "<g fill=\"none\">\n";
    auto X = [&](double x) { return x0 + margin + (x - b.xmin) * sc; };
    auto Y = [&](double y) { return 20 + margin + (b.ymax - y) * sc; };
    for (std::size_t i = 0; i < n; ++i) {
      const Primitive& p = d.primitives[i];
      const std::string color = class_color(p.label, d.classes);
      const char* c = color.c_str();
      std::visit(
          [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Line>) {
              emit("<line x1=\"%.3f\" y1=\"%.3f\" x2=\"%.3f\" y2=\"%.3f\" stroke=\"%s\"/>\n", X(v.x1), Y(v.y1), X(v.x2),
                   Y(v.y2), c);
            } else if constexpr (std::is_same_v<T, Arc>) {
              const double a0 = v.start, a1 = v.start + v.sweep;
              emit("<path d=\"M %.3f %.3f A %.3f %.3f 0 %d %d %.3f %.3f\" stroke=\"%s\"/>\n", X(v.cx + v.r * std::cos(a0)),
                   Y(v.cy + v.r * std::sin(a0)), v.r * sc, v.r * sc, std::abs(v.sweep) > std::numbers::pi ? 1 : 0, v.sweep > 0 ? 0 : 1,
                   X(v.cx + v.r * std::cos(a1)), Y(v.cy + v.r * std::sin(a1)), c);
            } else if constexpr (std::is_same_v<T, Circle>) {
              emit("<circle cx=\"%.3f\" cy=\"%.3f\" r=\"%.3f\" stroke=\"%s\"/>\n", X(v.cx), Y(v.cy), v.r * sc, c);
            } else if constexpr (std::is_same_v<T, Ellipse>) {
              emit("<ellipse cx=\"%.3f\" cy=\"%.3f\" rx=\"%.3f\" ry=\"%.3f\" transform=\"rotate(%.3f %.3f %.3f)\" stroke=\"%s\"/>\n",
                   X(v.cx), Y(v.cy), v.a * sc, v.b * sc, -v.rotation * 180.0 / std::numbers::pi, X(v.cx), Y(v.cy), c);
            } else {
              emit("<rect x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" stroke=\"%s\" stroke-dasharray=\"2,2\"/>\n",
                   X(v.xmin), Y(v.ymax), (v.xmax - v.xmin) * sc, (v.ymax - v.ymin) * sc, c);
            }
          },
          p.geometry);
      if (outline && wrong[i]) {
        const Box e = geometry_bounds(p.geometry);
        emit("<rect x=\"%.3f\" y=\"%.3f\" width=\"%.3f\" height=\"%.3f\" stroke=\"red\" stroke-width=\"1.5\"/>\n",
             X(e.xmin) - 2, Y(e.ymax) - 2, (e.xmax - e.xmin) * sc + 4, (e.ymax - e.ymin) * sc + 4);
      }
    }
    out += "</g>\n";
  };
  draw(gt, 0.0, false);
  draw(pred, panel, true);
  out += "</svg>\n";
  return out;
}

}  // namespace textspot
