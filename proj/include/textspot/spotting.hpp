#pragma once

#include <span>
#include <string>
#include <vector>

#include "textspot/model.hpp"
#include "textspot/network.hpp"

namespace textspot {

inline constexpr double kDefaultClusterRadius = 0.08;

// Row-wise argmax of an N x C score matrix; ties go to the smaller class id.
std::vector<int> predict_semantics(std::span<const double> scores, int rows, int cols);

// center(p_i) + o_i for an N x 2 offset matrix.
std::vector<Point> shift_centers(const Drawing& tile, std::span<const double> offsets);

// Single-linkage clustering of shifted centers within radius r, separately
// for each predicted thing class. Non-thing predictions get -1.
std::vector<int> cluster_instances(const std::vector<int>& labels, const std::vector<Point>& shifted, double radius,
                                   const ClassTable& classes);

// One symbol per (thing label, instance) and one per stuff label present.
// Background and annotation are left out. Symbols are ordered by
// (label, smallest member).
SymbolSet assemble_symbols(const std::vector<int>& labels, const std::vector<int>& instances, const Drawing& tile);

// Symbols of the labels and instances stored on the drawing itself.
SymbolSet ground_truth_symbols(const Drawing& tile);
std::vector<int> drawing_labels(const Drawing& tile);

struct SpottingResult {
  std::vector<int> labels;
  std::vector<int> instances;
  std::vector<Point> shifted;
  SymbolSet symbols;
};

SpottingResult spot_tile(const SpottingModel& model, const TileGraph& g, double radius);

// Copy of `tile` carrying the predicted labels and instances.
Drawing apply_prediction(const Drawing& tile, const SpottingResult& r);

// Ground truth on the left, prediction on the right, strokes colored by
// class; primitives whose label or symbol differs are outlined in red.
std::string render_overlay_svg(const Drawing& gt, const Drawing& pred);

}  // namespace textspot
