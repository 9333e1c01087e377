#include "textspot/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "textspot/error.hpp"
#include "textspot/ingest.hpp"

namespace textspot {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::map<std::string, std::string> parse_kv(const std::string& text, const char* module) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    const auto eq = line.find('=');
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    if (trim(line).empty()) continue;
    if (eq == std::string::npos) throw ConfigError(module, "expected key = value, got '" + trim(line) + "'");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

}  // namespace

std::string PipelineConfig::to_text() const {
  std::string out;
  out += "collapse_digits = " + std::string(filter.normalize.collapse_digits ? "true" : "false") + "\n";
  out += "lowercase = " + std::string(filter.normalize.lowercase ? "true" : "false") + "\n";
  out += "max_kept_per_tile = " + (filter.max_kept_per_tile ? std::to_string(*filter.max_kept_per_tile) : "none") + "\n";
  out += "min_count = " + std::to_string(filter.min_count) + "\n";
  out += "no_text = " + std::string(no_text ? "true" : "false") + "\n";
  out += "radius = " + fmt(radius) + "\n";
  return out;
}

PipelineConfig PipelineConfig::from_text(const std::string& text) {
  PipelineConfig p;
  auto as_bool = [](const std::string& k, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ConfigError("trainer", "key " + k + ": expected true or false");
  };
  for (const auto& [k, v] : parse_kv(text, "trainer")) {
    try {
      if (k == "collapse_digits") p.filter.normalize.collapse_digits = as_bool(k, v);
      else if (k == "lowercase") p.filter.normalize.lowercase = as_bool(k, v);
      else if (k == "max_kept_per_tile") {
        if (v == "none") p.filter.max_kept_per_tile.reset();
        else p.filter.max_kept_per_tile = std::stoul(v);
      } else if (k == "min_count") p.filter.min_count = std::stoll(v);
      else if (k == "no_text") p.no_text = as_bool(k, v);
      else if (k == "radius") p.radius = std::stod(v);
      else throw ConfigError("trainer", "unknown pipeline key '" + k + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("trainer", "key " + k + ": bad value '" + v + "'");
    }
  }
  p.filter.validate();
  return p;
}

PreparedTile prepare_tile(const Drawing& raw, const CorpusStats& stats, const PipelineConfig& pipe, const ModelConfig& model) {
  const Drawing kept = pipe.no_text ? strip_text_primitives(raw) : filter_text_primitives(raw, stats, pipe.filter);
  const Drawing tile = kept.meta.normalized ? kept : normalize_coords(kept).tile;
  PreparedTile p;
  p.graph = build_tile_graph(tile, model);
  p.targets = make_targets(tile, model);
  return p;
}

void TrainConfig::validate() const {
  if (!(lr >= 0) || !std::isfinite(lr)) throw ConfigError("trainer", "lr must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("trainer", "betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("trainer", "eps must be > 0");
  if (!(decay > 0 && decay <= 1) || decay_every < 1) throw ConfigError("trainer", "bad decay schedule");
  if (epochs < 0) throw ConfigError("trainer", "epochs must be >= 0");
  if (batch < 1) throw ConfigError("trainer", "batch must be >= 1");
}

double lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("trainer", "epoch must be >= 0");
  return cfg.lr * std::pow(cfg.decay, epoch / cfg.decay_every);
}

void adam_step(std::vector<ad::Parameter>& params, AdamState& state, double lr, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), 0.0);
      state.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("trainer", "optimizer state does not match the parameters");
  for (auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("trainer", "non-finite gradient in " + p.name);
    }
  }
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& values = params[k].tensor.mutable_values();
    const auto grad = params[k].tensor.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != values.size()) throw ShapeError("trainer", "optimizer state shape differs for " + params[k].name);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
      values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

void round_params_to_float(ad::ParameterStore& store) {
  for (auto& p : store.params()) {
    for (auto& v : p.tensor.mutable_values()) v = static_cast<double>(static_cast<float>(v));
  }
}

PanopticReport evaluate(const SpottingModel& model, const std::vector<PreparedTile>& tiles, double radius) {
  ReportBuilder b(tiles.empty() ? ClassTable{} : tiles.front().graph.tile.classes);
  for (const auto& t : tiles) {
    const SpottingResult r = spot_tile(model, t.graph, radius);
    b.add_tile(r.symbols, ground_truth_symbols(t.graph.tile), t.graph.tile, r.labels, drawing_labels(t.graph.tile));
  }
  return b.finish();
}

std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::string out = "epoch,loss,L_sem,L_ins,val_PQ,val_RQ,val_SQ,lr\n";
  for (const auto& r : rows) {
    out += std::to_string(r.epoch) + "," + fmt(r.loss) + "," + fmt(r.sem) + "," + fmt(r.ins) + "," + fmt(r.val_pq) + "," +
           fmt(r.val_rq) + "," + fmt(r.val_sq) + "," + fmt(r.lr) + "\n";
  }
  return out;
}

TrainResult train(SpottingModel& model, const std::vector<PreparedTile>& train_tiles,
                  const std::vector<PreparedTile>& val_tiles, const TrainConfig& cfg, double radius,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_tiles.empty()) throw ConfigError("trainer", "training split is empty");
  auto& store = model.params();
  round_params_to_float(store);
  AdamState state;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_tiles.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  result.best_checkpoint = ad::encode_checkpoint(store);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_schedule(epoch, cfg);
    std::shuffle(order.begin(), order.end(), rng);
    double sum_total = 0, sum_sem = 0, sum_ins = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      const double inv = 1.0 / static_cast<double>(end - start);
      store.zero_grad();
      for (std::size_t b = start; b < end; ++b) {
        const PreparedTile& t = train_tiles[order[b]];
        const LossResult l = model.loss(model.forward(t.graph), t.targets);
        if (!std::isfinite(l.total.item())) throw NumericError("trainer", "non-finite loss at epoch " + std::to_string(epoch));
        sum_total += l.total.item();
        sum_sem += l.sem.item();
        sum_ins += l.ins.item();
        ad::backward(ad::scale(l.total, inv));
      }
      adam_step(store.params(), state, lr, cfg);
      round_params_to_float(store);
    }
    const double n = static_cast<double>(train_tiles.size());
    const PanopticReport val = evaluate(model, val_tiles, radius);
    HistoryRow row{epoch, sum_total / n, sum_sem / n, sum_ins / n, val.overall.pq, val.overall.rq, val.overall.sq, lr};
    result.history.push_back(row);
    if (row.val_pq > result.best_val_pq) {
      result.best_val_pq = row.val_pq;
      result.best_epoch = epoch;
      result.best_checkpoint = ad::encode_checkpoint(store);
    }
    if (on_epoch) on_epoch(row);
  }
  ad::decode_checkpoint(result.best_checkpoint, store);
  return result;
}

std::vector<PreparedTile> prepare_split(const std::string& manifest_path, Split split, const CorpusStats& stats,
                                        const PipelineConfig& pipe, const ModelConfig& model) {
  const DatasetManifest m = read_manifest(manifest_path);
  const auto dir = std::filesystem::path(manifest_path).parent_path();
  std::vector<PreparedTile> out;
  for (const auto& rel : m.split(split)) out.push_back(prepare_tile(read_drawing_file((dir / rel).string()), stats, pipe, model));
  return out;
}

ModelConfig default_model_config(const ClassTable& classes) {
  ModelConfig cfg;
  cfg.num_outputs = classes.num_outputs();
  return cfg;
}

GradCheckReport gradcheck_pipeline(int n, std::uint64_t seed, bool literal_eq4) {
  if (n < 2) throw ConfigError("trainer", "gradient check needs at least 2 primitives");
  SynthConfig sc;
  sc.seed = seed;
  sc.partitions_max = 0;
  sc.min_instances = sc.max_instances = 3;
  sc.clutter_rate = 0.0;
  const Drawing full = generate_tile(sc, Split::kTrain, 0);
  // instance primitives and text first, then walls
  std::vector<std::size_t> keep;
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < full.primitives.size() && static_cast<int>(keep.size()) < n; ++i) {
      const bool wall = full.classes.is_stuff(full.primitives[i].label);
      if (wall == (pass == 1)) keep.push_back(i);
    }
  }
  if (static_cast<int>(keep.size()) < n) throw ConfigError("trainer", "synthetic tile has fewer than n primitives");
  std::sort(keep.begin(), keep.end());
  const Drawing tile = normalize_coords(select_primitives(full, keep)).tile;

  ModelConfig mc = default_model_config(tile.classes);
  mc.dim = 24;
  mc.ffn_hidden = 48;
  mc.offset_hidden = 24;
  mc.edge_hidden = 16;
  mc.literal_eq4 = literal_eq4;
  mc.extractor.raster_size = 64;
  mc.extractor.channels = 16;
  mc.extractor.stage_widths = {4, 8};
  SpottingModel model(mc, seed);
  // move every bias off zero so no ReLU input sits exactly on its kink
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> small(-0.1, 0.1);
  for (auto& p : model.params().params()) {
    const std::string& nm = p.name;
    const auto dot = nm.rfind('.');
    const std::string leaf = nm.substr(dot + 1);
    if (leaf == "b" || leaf == "b1" || leaf == "b2" || leaf == "bo") {
      for (auto& v : p.tensor.mutable_values()) v = small(rng);
    }
  }
  const TileGraph g = build_tile_graph(tile, mc);
  const TileTargets t = make_targets(tile, mc);
  GradCheckReport rep;
  rep.primitives = static_cast<int>(tile.primitives.size());
  rep.parameters = model.params().scalar_count();
  ad::GradCheckOptions opts;
  opts.seed = seed;
  // central differences of an O(1) loss carry about 1e-10 of roundoff
  opts.floor = 1e-5;
  rep.result = ad::gradient_check([&] { return model.loss(model.forward(g), t).total; }, model.params().params(), opts);
  return rep;
}

}  // namespace textspot
