#pragma once

// Reverse-mode differentiation over dense double tensors. A Tensor is a
// handle to a node in an explicit graph; backward() walks the graph from a
// scalar root in reverse topological order.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "textspot/model.hpp"

namespace textspot::ad {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v) { return from({}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  // Negative axes count from the end.
  int dim(int axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> values() const { return node_->value; }
  std::vector<double>& mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::vector<double>& mutable_grad() { return node_->grad_buffer(); }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

enum class TraversalOrder { kParentsInOrder, kParentsReversed };

// Seeds d(root)/d(root) = 1 and accumulates gradients into every node that
// requires them. The traversal order only changes summation order.
void backward(const Tensor& root, TraversalOrder order = TraversalOrder::kParentsInOrder);

// --- operations --------------------------------------------------------

// a: (..., K), b: (K, M) -> (..., M)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // rank 2
// Same shape, or b's shape a suffix of a's (broadcast over leading axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
// Softmax over the last axis. mask (same numel, 1 = keep) zeroes the weight
// and gradient of masked slots; a row with every slot masked throws.
Tensor softmax_lastdim(const Tensor& a, std::span<const std::uint8_t> mask = {});
Tensor concat_lastdim(const std::vector<Tensor>& parts);
// a: (R, D). Index -1 yields a zero row.
Tensor gather_rows(const Tensor& a, std::span<const int> rows);
Tensor reshape(const Tensor& a, Shape shape);
// Swaps the last two axes.
Tensor swap_last2(const Tensor& a);
// Scales every row over the last axis to unit L2 norm.
Tensor l2_norm_rows(const Tensor& a);
// (R, D) -> (R): L2 norm of each row; gradient 0 at a zero row.
Tensor row_norms(const Tensor& a);
// Mean over rows of -log softmax(logits)[target], weighted per row
// (empty weights = all ones). Zero total weight yields 0.
Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets,
                            std::span<const double> weights = {});
Tensor sum(const Tensor& a);
// sum_i w_i a_i with constant weights.
Tensor weighted_sum(const Tensor& a, std::span<const double> w);
Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// q: (N, d), keys: (N, k, d) -> (N, k, heads); per-head dot products.
Tensor neighbor_scores(const Tensor& q, const Tensor& keys, int heads);
// weights: (N, heads, k), values: (N, k, d) -> (N, d); head l aggregates
// its d/heads slice.
Tensor head_aggregate(const Tensor& weights, const Tensor& values);

// 3x3 convolution, zero padding 1. x: (H, W, Cin), w: (9*Cin, Cout) with
// row index (ky*3 + kx)*Cin + c, b: (Cout) -> (ceil(H/s), ceil(W/s), Cout).
Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride);

// F: (H, W, C); pixel-space sample points (x = column, y = row). Standard
// bilinear weights over the 4 surrounding cells; points are clamped to the
// cell-center lattice.
Tensor bilinear_gather(const Tensor& features, std::span<const Point> pixel_points);

// --- parameters --------------------------------------------------------

struct Parameter {
  std::string name;
  Tensor tensor;
};

enum class Init { kZeros, kOnes, kNormalFanIn, kUniformSmall };

class ParameterStore {
 public:
  Tensor& add(const std::string& name, Shape shape, Init init, std::mt19937_64& rng, double gain = 1.0);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
};

// Named tensors: per tensor u32 name length, name bytes, u32 rank, u32 dims,
// f32 payload; preceded by "TSCK" and a u32 tensor count.
std::vector<std::uint8_t> encode_checkpoint(const ParameterStore& store);
void decode_checkpoint(const std::vector<std::uint8_t>& bytes, ParameterStore& store);
void save_checkpoint(const std::string& path, const ParameterStore& store);
void load_checkpoint(const std::string& path, ParameterStore& store);

// --- verification ------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::string worst_param;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  // coordinates whose analytic and numeric values were both below the floor
  std::size_t floored = 0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  std::size_t coords_per_param = 64;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

// Compares central differences of the scalar f against its analytic
// gradient on a random sample of coordinates of each parameter.
GradCheckResult gradient_check(const std::function<Tensor()>& f, std::vector<Parameter>& params,
                               const GradCheckOptions& opts = {});

}  // namespace textspot::ad
