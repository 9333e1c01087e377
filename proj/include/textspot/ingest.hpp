#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "textspot/model.hpp"

namespace textspot {

enum class DrawingFormat { kCanonicalJson, kSvgSubset };

DrawingFormat parse_format_name(const std::string& name);

struct SkippedElement {
  std::size_t byte_offset = 0;
  std::string element;
  std::string reason;
};

struct ParsedDrawing {
  Drawing drawing;
  std::vector<SkippedElement> skipped;
};

// Canonical JSON or the SVG subset (line, circle, ellipse, text, path with
// M/L/H/V/A/Z). Throws ParseError on malformed syntax and SchemaError on
// unknown class names, duplicate ids or invalid geometry.
ParsedDrawing parse_drawing(std::string_view bytes, DrawingFormat format);

// Deterministic canonical JSON: sorted keys, one primitive per line, reals
// printed with 9 significant digits.
std::string serialize_drawing(const Drawing& d);

// Rounds a value to what serialize_drawing prints, so parse(serialize(d))
// reproduces d exactly when every coordinate already went through this.
double canonical_real(double v);

Drawing read_drawing_file(const std::string& path, DrawingFormat format = DrawingFormat::kCanonicalJson);
void write_drawing_file(const std::string& path, const Drawing& d);

struct TileSpec {
  double tile_size = 14.0;
  double origin_snap = 0.0;
  double overlap = 0.0;
  void validate() const;
};

// Splits a drawing into square tiles by primitive center. Tiles are ordered
// by (row, column); instance indices become tile-local.
std::vector<Drawing> tile_drawing(const Drawing& d, const TileSpec& spec = {});

struct NormalizedTile {
  Drawing tile;
  std::vector<int> out_of_bounds;  // ids whose bounds leave [0,1]^2
};

// Maps tile coordinates into [0,1]^2: subtract origin, divide by tile size.
NormalizedTile normalize_coords(const Drawing& tile);
Drawing denormalize_coords(const Drawing& normalized);

}  // namespace textspot
