#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "textspot/autodiff.hpp"
#include "textspot/graph.hpp"
#include "textspot/model.hpp"
#include "textspot/raster.hpp"

namespace textspot {

struct ModelConfig {
  int stages = 4;
  int heads = 6;
  int dim = 96;
  int num_outputs = 8;  // categories + background + annotation
  int neighbors = 16;
  int edge_hidden = 32;   // hidden width of the edge-bias MLP
  int ffn_hidden = 192;   // feed-forward sublayer width
  int offset_hidden = 96;
  double am_scale = 30.0;
  double am_margin = 0.35;
  double lambda_sem = 1.0;
  double lambda_ins = 0.3;
  // Bare Softmax(A + T) f form: no value/output projections, norms,
  // residuals or feed-forward sublayer.
  bool literal_eq4 = false;
  // Forces the structural embedding T to zero.
  bool zero_edge_bias = false;
  // Adds a learned map of the neighbor displacement (dx, dy) to each
  // attended value. Ignored in the literal form.
  bool edge_values = true;
  // Whether annotation-text rows contribute to the classification loss.
  bool supervise_text = true;
  ExtractorConfig extractor;

  void validate() const;
  // key=value lines, sorted by key.
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
  // Applies one key=value override; throws ConfigError on unknown keys.
  void set(const std::string& key, const std::string& value);
};

// Everything the network consumes for one tile, in normalized coordinates.
struct TileGraph {
  Drawing tile;
  Image raster;
  NeighborTable neighbors;
  EdgeTensor edges;
  std::optional<FeatureMap> imported_features;
};

TileGraph build_tile_graph(const Drawing& normalized_tile, const ModelConfig& cfg);

// Training targets for one tile.
struct TileTargets {
  std::vector<int> labels;
  std::vector<double> offsets;  // N x 2: instance center minus primitive center
  std::vector<double> mask;     // 1 for thing primitives in an instance
  std::vector<double> sem_weights;
};

// Instance centers are the mean of member primitive centers.
std::vector<Point> instance_centers(const Drawing& tile);
TileTargets make_targets(const Drawing& normalized_tile, const ModelConfig& cfg);

struct StageParams {
  ad::Tensor wq, wk;
  ad::Tensor wv, wo, bo;
  ad::Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  ad::Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  ad::Tensor edge_w1, edge_b1, edge_w2, edge_b2;
  ad::Tensor rel_w;
};

struct StageState {
  ad::Tensor scores;      // A_s: N x k x h
  ad::Tensor bias;        // T_s: N x k x h
  ad::Tensor attention;   // softmax weights: N x h x k
  ad::Tensor features;    // f_s: N x d
};

// Per-head scaled dot products between each node's query and its
// neighbors' keys; padded slots hold -inf.
ad::Tensor attention_scores(const ad::Tensor& f_prev, const EdgeTensor& edges, const StageParams& p, int heads);

// Two-layer ReLU MLP over the 8 edge channels, N x k x h.
ad::Tensor edge_bias(const EdgeTensor& edges, const StageParams& p);

// Softmax(A + T) aggregation inside a pre-norm transformer block, or bare
// when cfg.literal_eq4 is set. Padded neighbor slots are masked out.
StageState attention_update(const ad::Tensor& f_prev, const ad::Tensor& scores, const ad::Tensor& bias,
                            const EdgeTensor& edges, const StageParams& p, const ModelConfig& cfg);

struct ClassificationOutput {
  ad::Tensor cosine;  // N x outputs, plain cosine logits used at inference
  ad::Tensor loss;    // AM-softmax cross-entropy (undefined without targets)
};

// Cross-entropy over s * (cos - m * onehot(target)).
ad::Tensor am_softmax_loss(const ad::Tensor& cosine, const std::vector<int>& targets, const std::vector<double>* weights,
                           double scale, double margin);

ClassificationOutput classification_head(const ad::Tensor& f, const ad::Tensor& class_weights,
                                         const std::vector<int>* targets, const std::vector<double>* weights,
                                         double scale, double margin);

// L_ins = sum_i m_i |o_i - (c_i - p_i)| / sum_i m_i, 0 when no row is masked in.
ad::Tensor instance_loss(const ad::Tensor& offsets, const TileTargets& targets);

ad::Tensor total_loss(const ad::Tensor& sem, const ad::Tensor& ins, const ModelConfig& cfg);
double total_loss(double sem, double ins, const ModelConfig& cfg);

struct ForwardResult {
  ad::Tensor cosine;   // N x outputs
  ad::Tensor offsets;  // N x 2
  std::vector<StageState> stages;
};

struct LossResult {
  ad::Tensor total;
  ad::Tensor sem;
  ad::Tensor ins;
};

class SpottingModel {
 public:
  SpottingModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterStore& params() { return store_; }
  const ad::ParameterStore& params() const { return store_; }

  ForwardResult forward(const TileGraph& g, bool record_stages = false) const;
  LossResult loss(const ForwardResult& out, const TileTargets& targets) const;

  const StageParams& stage(int s) const { return stages_[s]; }

 private:
  ModelConfig cfg_;
  ad::ParameterStore store_;
  std::optional<ConvStack> cnn_;
  ad::Tensor in_w_, in_b_;
  std::vector<StageParams> stages_;
  ad::Tensor cls_w_;
  ad::Tensor off_w1_, off_b1_, off_w2_, off_b2_;
};

}  // namespace textspot
