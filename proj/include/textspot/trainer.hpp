#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "textspot/autodiff.hpp"
#include "textspot/metrics.hpp"
#include "textspot/network.hpp"
#include "textspot/spotting.hpp"
#include "textspot/synth.hpp"
#include "textspot/text_filter.hpp"

namespace textspot {

// How a raw tile becomes network input.
struct PipelineConfig {
  bool no_text = false;  // drop every text primitive before graph and raster
  TextFilterConfig filter;
  double radius = kDefaultClusterRadius;

  std::string to_text() const;
  static PipelineConfig from_text(const std::string& text);
};

struct PreparedTile {
  TileGraph graph;
  TileTargets targets;
};

// Text filtering (or stripping), normalization, graph, raster and targets.
PreparedTile prepare_tile(const Drawing& raw_tile, const CorpusStats& stats, const PipelineConfig& pipe,
                          const ModelConfig& model);

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double decay = 0.5;
  int decay_every = 20;
  int epochs = 50;
  int batch = 2;
  std::uint64_t seed = 7;

  void validate() const;
};

double lr_schedule(int epoch, const TrainConfig& cfg);

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long t = 0;
};

// One bias-corrected Adam update at learning rate lr using the gradients
// stored on the parameters. Throws NumericError naming the first parameter
// with a non-finite gradient.
void adam_step(std::vector<ad::Parameter>& params, AdamState& state, double lr, const TrainConfig& cfg);

// Rounds every parameter to the nearest float so a float checkpoint holds
// the exact weights.
void round_params_to_float(ad::ParameterStore& store);

PanopticReport evaluate(const SpottingModel& model, const std::vector<PreparedTile>& tiles, double radius);

struct HistoryRow {
  int epoch = 0;
  double loss = 0.0;
  double sem = 0.0;
  double ins = 0.0;
  double val_pq = 0.0;
  double val_rq = 0.0;
  double val_sq = 0.0;
  double lr = 0.0;
};

std::string history_csv(const std::vector<HistoryRow>& rows);

struct TrainResult {
  std::vector<HistoryRow> history;
  int best_epoch = -1;
  double best_val_pq = -1.0;
  std::vector<std::uint8_t> best_checkpoint;
};

using EpochCallback = std::function<void(const HistoryRow&)>;

// Leaves the model holding the best-validation parameters.
TrainResult train(SpottingModel& model, const std::vector<PreparedTile>& train_tiles,
                  const std::vector<PreparedTile>& val_tiles, const TrainConfig& cfg, double radius,
                  const EpochCallback& on_epoch = {});

// Loads and prepares one split of a synthetic or ingested dataset.
std::vector<PreparedTile> prepare_split(const std::string& manifest_path, Split split, const CorpusStats& stats,
                                        const PipelineConfig& pipe, const ModelConfig& model);

// Model config matching a drawing's class table with desk defaults.
ModelConfig default_model_config(const ClassTable& classes);

struct GradCheckReport {
  ad::GradCheckResult result;
  int primitives = 0;
  std::size_t parameters = 0;
};

// Central-difference check of the full loss (raster, conv stack, sampling,
// attention stages, both heads) on an n-primitive synthetic tile with a
// small model.
GradCheckReport gradcheck_pipeline(int n, std::uint64_t seed, bool literal_eq4);

}  // namespace textspot
