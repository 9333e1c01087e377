#pragma once

// Domain types for vector CAD drawings: primitives, symbols, drawings and
// the geometric measures (center, length) every other module consumes.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace textspot {

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct Line {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool operator==(const Line&) const = default;
};

// Circular arc; angles in radians, sweep counter-clockwise in (0, 2pi].
struct Arc {
  double cx = 0, cy = 0, r = 1, start = 0, sweep = 1;
  bool operator==(const Arc&) const = default;
};

struct Circle {
  double cx = 0, cy = 0, r = 1;
  bool operator==(const Circle&) const = default;
};

// Semi-axes a >= b > 0, rotation of the a-axis in radians.
struct Ellipse {
  double cx = 0, cy = 0, a = 1, b = 1, rotation = 0;
  bool operator==(const Ellipse&) const = default;
};

struct Text {
  double xmin = 0, ymin = 0, xmax = 1, ymax = 1;
  std::string content;
  double rotation = 0;
  bool operator==(const Text&) const = default;
};

using Geometry = std::variant<Line, Arc, Circle, Ellipse, Text>;

enum class PrimitiveKind : std::uint8_t { kLine, kArc, kCircle, kEllipse, kText };

const char* kind_name(PrimitiveKind kind);

inline constexpr int kBackgroundLabel = 0;
inline constexpr int kNoInstance = -1;

struct Primitive {
  int id = 0;
  Geometry geometry;
  int label = kBackgroundLabel;
  int instance = kNoInstance;

  PrimitiveKind kind() const { return static_cast<PrimitiveKind>(geometry.index()); }
  bool is_text() const { return std::holds_alternative<Text>(geometry); }
  bool operator==(const Primitive&) const = default;
};

enum class ClassKind : std::uint8_t { kThing, kStuff };

struct ClassInfo {
  int id = 0;
  std::string name;
  ClassKind kind = ClassKind::kThing;
  bool operator==(const ClassInfo&) const = default;
};

// Class ids 1..C come from the table; 0 is background and C+1 is the
// annotation-text pseudo-class.
class ClassTable {
 public:
  ClassTable() = default;
  explicit ClassTable(std::vector<ClassInfo> classes);

  const std::vector<ClassInfo>& classes() const { return classes_; }
  int num_categories() const { return static_cast<int>(classes_.size()); }
  int annotation_label() const { return num_categories() + 1; }
  // Categories plus background and annotation.
  int num_outputs() const { return num_categories() + 2; }

  bool is_thing(int label) const;
  bool is_stuff(int label) const;
  bool is_category(int label) const { return label >= 1 && label <= num_categories(); }

  std::string name_of(int label) const;
  std::optional<int> find(const std::string& name) const;

  bool operator==(const ClassTable&) const = default;

 private:
  std::vector<ClassInfo> classes_;
};

inline constexpr const char* kBackgroundName = "background";
inline constexpr const char* kAnnotationName = "annotation";

struct DrawingMeta {
  std::string source;
  Point origin;
  double tile_size = 0.0;  // 0 for an untiled drawing
  bool normalized = false;
  // Ids in the drawing this one was derived from (tiling, filtering).
  std::vector<int> source_ids;
  bool operator==(const DrawingMeta&) const = default;
};

struct Drawing {
  std::vector<Primitive> primitives;
  ClassTable classes;
  DrawingMeta meta;

  std::size_t size() const { return primitives.size(); }
  bool operator==(const Drawing&) const = default;
};

struct Symbol {
  int label = 0;
  int instance = kNoInstance;
  std::vector<int> members;  // primitive ids, sorted ascending
  bool operator==(const Symbol&) const = default;
};

using SymbolSet = std::vector<Symbol>;

struct Box {
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
};

// Throws InvalidGeometry when any value is non-finite or an invariant on
// radii, semi-axes, sweep or the text box is broken.
void check_geometry(const Geometry& g);

double primitive_length(const Primitive& p);
double geometry_length(const Geometry& g);

Point primitive_center(const Primitive& p);
Point geometry_center(const Geometry& g);

// Orientation in [0, pi): line direction, ellipse/text rotation, 0 for
// circles and arcs.
double primitive_orientation(const Primitive& p);

// Axis-aligned bounds of the full geometry.
Box geometry_bounds(const Geometry& g);

// ln(1 + L) for one primitive.
double primitive_weight(const Primitive& p);

// Sum of ln(1 + L(e)) over the members. Throws InvalidSymbol when the
// member list is empty or references an unknown id.
double symbol_weight(const Symbol& s, const Drawing& drawing);

struct Violation {
  int primitive_id = -1;
  std::string reason;
};

std::vector<Violation> validate_drawing(const Drawing& d);

// Translate by (dx, dy) then rotate by angle about the origin.
Geometry rigid_transform(const Geometry& g, double angle, double dx, double dy);

}  // namespace textspot
