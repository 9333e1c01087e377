#include "textspot/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "textspot/binary_io.hpp"
#include "textspot/error.hpp"

namespace textspot {

NeighborTable knn_neighbors(const std::vector<Point>& centers, int k) {
  const int n = static_cast<int>(centers.size());
  if (n < 2) throw GraphTooSmall("need at least 2 primitives, got " + std::to_string(n));
  if (k < 1) throw ConfigError("graph", "k must be >= 1");
  NeighborTable table;
  table.k = k;
  table.rows.resize(n);
  const int keep = std::min(k, n - 1);
  std::vector<std::pair<double, int>> cand;
  cand.reserve(n - 1);
  for (int i = 0; i < n; ++i) {
    cand.clear();
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dx = centers[j].x - centers[i].x, dy = centers[j].y - centers[i].y;
      cand.emplace_back(dx * dx + dy * dy, j);
    }
    std::partial_sort(cand.begin(), cand.begin() + keep, cand.end());
    auto& row = table.rows[i];
    row.reserve(keep);
    for (int j = 0; j < keep; ++j) row.push_back(cand[j].second);
  }
  return table;
}

NeighborTable knn_neighbors(const Drawing& tile, int k) {
  std::vector<Point> centers;
  centers.reserve(tile.primitives.size());
  for (const auto& p : tile.primitives) centers.push_back(primitive_center(p));
  return knn_neighbors(centers, k);
}

int pair_type_indicator(const Primitive& a, const Primitive& b) {
  return static_cast<int>(a.is_text()) + static_cast<int>(b.is_text());
}

EdgeVector geometric_edge_vector(const Primitive& a, const Primitive& b) {
  const Point ca = primitive_center(a), cb = primitive_center(b);
  const double dx = cb.x - ca.x, dy = cb.y - ca.y;
  const double rho = std::hypot(dx, dy);
  double sin_t = 0.0, cos_t = 1.0;
  if (rho > 0) {
    const double theta = std::atan2(dy, dx);
    sin_t = std::sin(theta);
    cos_t = std::cos(theta);
  }
  double da = std::abs(primitive_orientation(a) - primitive_orientation(b));
  da = std::min(da, std::numbers::pi - da);
  const double dalpha = std::clamp(da / (std::numbers::pi / 2), 0.0, 1.0);
  const double dlen = primitive_weight(b) - primitive_weight(a);
  return {dx, dy, rho, sin_t, cos_t, dalpha, dlen};
}

EdgeTensor build_edge_tensor(const Drawing& tile, const NeighborTable& nbrs) {
  if (nbrs.size() != tile.primitives.size()) {
    throw ShapeError("graph", "neighbor table has " + std::to_string(nbrs.size()) + " rows for " +
                                  std::to_string(tile.primitives.size()) + " primitives");
  }
  EdgeTensor e;
  e.n = static_cast<int>(tile.primitives.size());
  e.k = nbrs.k;
  const std::size_t slots = static_cast<std::size_t>(e.n) * e.k;
  e.values.assign(slots * kEdgeChannels, 0.0);
  e.mask.assign(slots, 0);
  e.neighbor.assign(slots, -1);
  for (int i = 0; i < e.n; ++i) {
    const auto& row = nbrs.rows[i];
    for (int j = 0; j < static_cast<int>(row.size()) && j < e.k; ++j) {
      const Primitive& a = tile.primitives[i];
      const Primitive& b = tile.primitives[row[j]];
      const std::size_t slot = static_cast<std::size_t>(i) * e.k + j;
      double* out = &e.values[slot * kEdgeChannels];
      out[0] = pair_type_indicator(a, b);
      const EdgeVector g = geometric_edge_vector(a, b);
      std::copy(g.begin(), g.end(), out + 1);
      e.mask[slot] = 1;
      e.neighbor[slot] = row[j];
    }
  }
  return e;
}

std::vector<std::uint8_t> encode_edge_tensor(const EdgeTensor& e) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(e.n));
  w.u32(static_cast<std::uint32_t>(e.k));
  w.u32(kEdgeChannels);
  for (double v : e.values) w.f32(static_cast<float>(v));
  return w.take();
}

EdgeTensor decode_edge_tensor(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, "graph");
  EdgeTensor e;
  e.n = static_cast<int>(r.u32());
  e.k = static_cast<int>(r.u32());
  if (r.u32() != kEdgeChannels) throw ShapeError("graph", "edge tensor must have 8 channels");
  const std::size_t slots = static_cast<std::size_t>(e.n) * e.k;
  e.values.resize(slots * kEdgeChannels);
  for (auto& v : e.values) v = r.f32();
  r.expect_end();
  // The dump carries no mask; padding rows are all zero which a real
  // neighbor can never produce (cos theta is 1 when rho is 0).
  e.mask.assign(slots, 0);
  e.neighbor.assign(slots, -1);
  for (std::size_t s = 0; s < slots; ++s) {
    const double* v = &e.values[s * kEdgeChannels];
    e.mask[s] = std::any_of(v, v + kEdgeChannels, [](double x) { return x != 0.0; }) ? 1 : 0;
  }
  return e;
}

void write_edge_tensor_file(const std::string& path, const EdgeTensor& e) {
  write_bytes_file(path, encode_edge_tensor(e), "graph");
}

}  // namespace textspot
