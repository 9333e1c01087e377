#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "textspot/model.hpp"

namespace textspot {

inline constexpr int kEdgeChannels = 8;

// Row i lists the min(k, N-1) nearest primitives of i by center distance,
// nearest first, ties by smaller id.
struct NeighborTable {
  int k = 0;
  std::vector<std::vector<int>> rows;

  std::size_t size() const { return rows.size(); }
};

NeighborTable knn_neighbors(const Drawing& tile, int k);
NeighborTable knn_neighbors(const std::vector<Point>& centers, int k);

// 0 geometry-geometry, 1 geometry-text (either order), 2 text-text.
int pair_type_indicator(const Primitive& a, const Primitive& b);

using EdgeVector = std::array<double, 7>;

// [dx, dy, rho, sin theta, cos theta, orientation difference in [0,1],
//  ln(1 + L(b)) - ln(1 + L(a))].
EdgeVector geometric_edge_vector(const Primitive& a, const Primitive& b);

// N x k x 8, row-major. Slot (i, j) with j >= |N(i)| is padding: zeros,
// mask 0 and neighbor index -1.
struct EdgeTensor {
  int n = 0;
  int k = 0;
  std::vector<double> values;
  std::vector<std::uint8_t> mask;
  std::vector<int> neighbor;

  double at(int i, int j, int c) const { return values[(static_cast<std::size_t>(i) * k + j) * kEdgeChannels + c]; }
  bool valid(int i, int j) const { return mask[static_cast<std::size_t>(i) * k + j] != 0; }
};

EdgeTensor build_edge_tensor(const Drawing& tile, const NeighborTable& nbrs);

// Debug dump: N, k, 8 as little-endian u32 followed by f32 row-major values.
std::vector<std::uint8_t> encode_edge_tensor(const EdgeTensor& e);
EdgeTensor decode_edge_tensor(const std::vector<std::uint8_t>& bytes);
void write_edge_tensor_file(const std::string& path, const EdgeTensor& e);

}  // namespace textspot
