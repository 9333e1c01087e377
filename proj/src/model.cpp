#include "textspot/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include "textspot/error.hpp"

namespace textspot {
namespace {

constexpr double kPi = std::numbers::pi;

bool finite_all(std::initializer_list<double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

double wrap_half_turn(double angle) {
  double a = std::fmod(angle, kPi);
  if (a < 0) a += kPi;
  if (a >= kPi) a -= kPi;
  return a;
}

Point rotate(Point p, double c, double s) { return {c * p.x - s * p.y, s * p.x + c * p.y}; }

}  // namespace

const char* kind_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::kLine: return "line";
    case PrimitiveKind::kArc: return "arc";
    case PrimitiveKind::kCircle: return "circle";
    case PrimitiveKind::kEllipse: return "ellipse";
    case PrimitiveKind::kText: return "text";
  }
  return "unknown";
}

ClassTable::ClassTable(std::vector<ClassInfo> classes) : classes_(std::move(classes)) {
  std::sort(classes_.begin(), classes_.end(),
            [](const ClassInfo& a, const ClassInfo& b) { return a.id < b.id; });
}

bool ClassTable::is_thing(int label) const {
  return is_category(label) && classes_[label - 1].kind == ClassKind::kThing;
}

bool ClassTable::is_stuff(int label) const {
  return is_category(label) && classes_[label - 1].kind == ClassKind::kStuff;
}

std::string ClassTable::name_of(int label) const {
  if (label == kBackgroundLabel) return kBackgroundName;
  if (label == annotation_label()) return kAnnotationName;
  if (is_category(label)) return classes_[label - 1].name;
  return "#" + std::to_string(label);
}

std::optional<int> ClassTable::find(const std::string& name) const {
  if (name == kBackgroundName) return kBackgroundLabel;
  if (name == kAnnotationName) return annotation_label();
  for (const auto& c : classes_) {
    if (c.name == name) return c.id;
  }
  return std::nullopt;
}

void check_geometry(const Geometry& g) {
  std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Line>) {
          if (!finite_all({v.x1, v.y1, v.x2, v.y2})) throw InvalidGeometry("non-finite line");
        } else if constexpr (std::is_same_v<T, Arc>) {
          if (!finite_all({v.cx, v.cy, v.r, v.start, v.sweep}))
            throw InvalidGeometry("non-finite arc");
          if (!(v.r > 0)) throw InvalidGeometry("arc radius must be positive");
          if (!(v.sweep > 0 && v.sweep <= 2 * kPi)) throw InvalidGeometry("arc sweep outside (0, 2pi]");
        } else if constexpr (std::is_same_v<T, Circle>) {
          if (!finite_all({v.cx, v.cy, v.r})) throw InvalidGeometry("non-finite circle");
          if (!(v.r > 0)) throw InvalidGeometry("circle radius must be positive");
        } else if constexpr (std::is_same_v<T, Ellipse>) {
          if (!finite_all({v.cx, v.cy, v.a, v.b, v.rotation}))
            throw InvalidGeometry("non-finite ellipse");
          if (!(v.b > 0 && v.a >= v.b)) throw InvalidGeometry("ellipse needs a >= b > 0");
        } else {
          if (!finite_all({v.xmin, v.ymin, v.xmax, v.ymax, v.rotation}))
            throw InvalidGeometry("non-finite text box");
          if (!(v.xmax > v.xmin && v.ymax > v.ymin)) throw InvalidGeometry("degenerate text box");
        }
      },
      g);
}

double geometry_length(const Geometry& g) {
  check_geometry(g);
  return std::visit(
      [](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Line>) {
          return std::hypot(v.x2 - v.x1, v.y2 - v.y1);
        } else if constexpr (std::is_same_v<T, Arc>) {
          return v.r * std::abs(v.sweep);
        } else if constexpr (std::is_same_v<T, Circle>) {
          return 2 * kPi * v.r;
        } else if constexpr (std::is_same_v<T, Ellipse>) {
          // Ramanujan's first approximation; exact for a == b.
          const double a = v.a, b = v.b;
          return kPi * (3 * (a + b) - std::sqrt((3 * a + b) * (a + 3 * b)));
        } else {
          return std::hypot(v.xmax - v.xmin, v.ymax - v.ymin);
        }
      },
      g);
}

double primitive_length(const Primitive& p) { return geometry_length(p.geometry); }

Point geometry_center(const Geometry& g) {
  check_geometry(g);
  return std::visit(
      [](const auto& v) -> Point {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Line>) {
          return {0.5 * (v.x1 + v.x2), 0.5 * (v.y1 + v.y2)};
        } else if constexpr (std::is_same_v<T, Arc>) {
          const double mid = v.start + 0.5 * v.sweep;
          return {v.cx + v.r * std::cos(mid), v.cy + v.r * std::sin(mid)};
        } else if constexpr (std::is_same_v<T, Circle> || std::is_same_v<T, Ellipse>) {
          return {v.cx, v.cy};
        } else {
          return {0.5 * (v.xmin + v.xmax), 0.5 * (v.ymin + v.ymax)};
        }
      },
      g);
}

Point primitive_center(const Primitive& p) { return geometry_center(p.geometry); }

double primitive_orientation(const Primitive& p) {
  return std::visit(
      [](const auto& v) -> double {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Line>) {
          if (v.x1 == v.x2 && v.y1 == v.y2) return 0.0;
          return wrap_half_turn(std::atan2(v.y2 - v.y1, v.x2 - v.x1));
        } else if constexpr (std::is_same_v<T, Ellipse> || std::is_same_v<T, Text>) {
          return wrap_half_turn(v.rotation);
        } else {
          return 0.0;
        }
      },
      p.geometry);
}

Box geometry_bounds(const Geometry& g) {
  return std::visit(
      [](const auto& v) -> Box {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Line>) {
          return {std::min(v.x1, v.x2), std::min(v.y1, v.y2), std::max(v.x1, v.x2),
                  std::max(v.y1, v.y2)};
        } else if constexpr (std::is_same_v<T, Arc>) {
          // Endpoints plus any axis extreme inside the sweep.
          Box b{v.cx + v.r * std::cos(v.start), v.cy + v.r * std::sin(v.start), 0, 0};
          b.xmax = b.xmin;
          b.ymax = b.ymin;
          auto grow = [&](double x, double y) {
            b.xmin = std::min(b.xmin, x);
            b.xmax = std::max(b.xmax, x);
            b.ymin = std::min(b.ymin, y);
            b.ymax = std::max(b.ymax, y);
          };
          const double end = v.start + v.sweep;
          grow(v.cx + v.r * std::cos(end), v.cy + v.r * std::sin(end));
          for (int q = -8; q <= 8; ++q) {
            const double a = q * kPi / 2;
            if (a > v.start && a < end) grow(v.cx + v.r * std::cos(a), v.cy + v.r * std::sin(a));
          }
          return b;
        } else if constexpr (std::is_same_v<T, Circle>) {
          return {v.cx - v.r, v.cy - v.r, v.cx + v.r, v.cy + v.r};
        } else if constexpr (std::is_same_v<T, Ellipse>) {
          const double c = std::cos(v.rotation), s = std::sin(v.rotation);
          const double hx = std::sqrt(v.a * v.a * c * c + v.b * v.b * s * s);
          const double hy = std::sqrt(v.a * v.a * s * s + v.b * v.b * c * c);
          return {v.cx - hx, v.cy - hy, v.cx + hx, v.cy + hy};
        } else {
          return {v.xmin, v.ymin, v.xmax, v.ymax};
        }
      },
      g);
}

double primitive_weight(const Primitive& p) { return std::log1p(primitive_length(p)); }

double symbol_weight(const Symbol& s, const Drawing& drawing) {
  if (s.members.empty()) throw InvalidSymbol("symbol has no members");
  double total = 0.0;
  for (int id : s.members) {
    if (id < 0 || static_cast<std::size_t>(id) >= drawing.primitives.size() ||
        drawing.primitives[id].id != id) {
      throw InvalidSymbol("symbol member " + std::to_string(id) + " not in drawing");
    }
    total += primitive_weight(drawing.primitives[id]);
  }
  return total;
}

std::vector<Violation> validate_drawing(const Drawing& d) {
  std::vector<Violation> out;
  std::set<int> seen;
  std::map<int, int> instance_label;
  const int annotation = d.classes.annotation_label();
  for (std::size_t pos = 0; pos < d.primitives.size(); ++pos) {
    const Primitive& p = d.primitives[pos];
    if (!seen.insert(p.id).second) {
      out.push_back({p.id, "duplicate primitive id"});
    } else if (p.id != static_cast<int>(pos)) {
      out.push_back({p.id, "id not dense (expected " + std::to_string(pos) + ")"});
    }
    try {
      check_geometry(p.geometry);
    } catch (const InvalidGeometry& e) {
      out.push_back({p.id, e.what()});
    }
    if (p.label < 0 || p.label > annotation) {
      out.push_back({p.id, "label " + std::to_string(p.label) + " outside class table"});
    }
    if (p.is_text()) {
      if (p.label != annotation) out.push_back({p.id, "text primitive without annotation label"});
      if (p.instance != kNoInstance) out.push_back({p.id, "text primitive with an instance"});
      continue;
    }
    if (p.label == annotation) out.push_back({p.id, "annotation label on geometry"});
    if (p.instance < kNoInstance) {
      out.push_back({p.id, "instance index below -1"});
    } else if (p.instance >= 0) {
      if (!d.classes.is_thing(p.label)) {
        out.push_back({p.id, "instance index on a non-thing label"});
      }
      auto [it, inserted] = instance_label.emplace(p.instance, p.label);
      if (!inserted && it->second != p.label) {
        out.push_back({p.id, "instance " + std::to_string(p.instance) + " carries labels " +
                                 std::to_string(it->second) + " and " + std::to_string(p.label)});
      }
    }
  }
  return out;
}

Geometry rigid_transform(const Geometry& g, double angle, double dx, double dy) {
  const double c = std::cos(angle), s = std::sin(angle);
  auto tp = [&](double x, double y) { return rotate({x + dx, y + dy}, c, s); };
  return std::visit(
      [&](const auto& v) -> Geometry {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, Line>) {
          Point a = tp(v.x1, v.y1), b = tp(v.x2, v.y2);
          return Line{a.x, a.y, b.x, b.y};
        } else if constexpr (std::is_same_v<T, Arc>) {
          Point ctr = tp(v.cx, v.cy);
          return Arc{ctr.x, ctr.y, v.r, v.start + angle, v.sweep};
        } else if constexpr (std::is_same_v<T, Circle>) {
          Point ctr = tp(v.cx, v.cy);
          return Circle{ctr.x, ctr.y, v.r};
        } else if constexpr (std::is_same_v<T, Ellipse>) {
          Point ctr = tp(v.cx, v.cy);
          return Ellipse{ctr.x, ctr.y, v.a, v.b, v.rotation + angle};
        } else {
          // The box is kept axis aligned; rotation moves its center.
          Point ctr = tp(0.5 * (v.xmin + v.xmax), 0.5 * (v.ymin + v.ymax));
          const double hw = 0.5 * (v.xmax - v.xmin), hh = 0.5 * (v.ymax - v.ymin);
          return Text{ctr.x - hw, ctr.y - hh, ctr.x + hw, ctr.y + hh, v.content, v.rotation + angle};
        }
      },
      g);
}

}  // namespace textspot
