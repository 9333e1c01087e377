#include "textspot/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "textspot/error.hpp"

namespace textspot {
namespace {

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("network", "key " + key + ": expected an integer, got '" + v + "'");
  }
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(out)) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("network", "key " + key + ": expected a finite number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("network", "key " + key + ": expected true or false, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

ad::Tensor constant_edges(const EdgeTensor& edges, int c0, int count) {
  std::vector<double> v(static_cast<std::size_t>(edges.n) * edges.k * count);
  for (int i = 0; i < edges.n; ++i) {
    for (int j = 0; j < edges.k; ++j) {
      for (int c = 0; c < count; ++c) v[(static_cast<std::size_t>(i) * edges.k + j) * count + c] = edges.at(i, j, c0 + c);
    }
  }
  return ad::Tensor::from({edges.n, edges.k, count}, std::move(v));
}

ad::Tensor gather_neighbors(const ad::Tensor& x, const EdgeTensor& edges) {
  return ad::reshape(ad::gather_rows(x, edges.neighbor), {edges.n, edges.k, x.dim(1)});
}

}  // namespace

void ModelConfig::validate() const {
  if (stages < 1) throw ConfigError("network", "stages must be >= 1");
  if (heads < 1 || dim < 1 || dim % heads != 0) {
    throw ConfigError("network", "dim (" + std::to_string(dim) + ") must be a positive multiple of heads (" +
                                     std::to_string(heads) + ")");
  }
  if (num_outputs < 3) throw ConfigError("network", "num_outputs must cover at least one category");
  if (neighbors < 1) throw ConfigError("network", "neighbors must be >= 1");
  if (edge_hidden < 1 || ffn_hidden < 1 || offset_hidden < 1) throw ConfigError("network", "hidden widths must be >= 1");
  if (am_scale <= 0) throw ConfigError("network", "am_scale must be > 0");
  if (am_margin < 0) throw ConfigError("network", "am_margin must be >= 0");
  if (lambda_sem < 0 || lambda_ins < 0) throw ConfigError("network", "loss weights must be >= 0");
  extractor.validate();
}

std::string ModelConfig::to_text() const {
  std::map<std::string, std::string> kv;
  kv["stages"] = std::to_string(stages);
  kv["heads"] = std::to_string(heads);
  kv["dim"] = std::to_string(dim);
  kv["num_outputs"] = std::to_string(num_outputs);
  kv["neighbors"] = std::to_string(neighbors);
  kv["edge_hidden"] = std::to_string(edge_hidden);
  kv["ffn_hidden"] = std::to_string(ffn_hidden);
  kv["offset_hidden"] = std::to_string(offset_hidden);
  kv["am_scale"] = fmt_real(am_scale);
  kv["am_margin"] = fmt_real(am_margin);
  kv["lambda_sem"] = fmt_real(lambda_sem);
  kv["lambda_ins"] = fmt_real(lambda_ins);
  kv["literal_eq4"] = literal_eq4 ? "true" : "false";
  kv["zero_edge_bias"] = zero_edge_bias ? "true" : "false";
  kv["edge_values"] = edge_values ? "true" : "false";
  kv["supervise_text"] = supervise_text ? "true" : "false";
  kv["extractor.backend"] = extractor.backend == ExtractorBackend::kConvStack ? "conv" : "file";
  kv["extractor.raster_size"] = std::to_string(extractor.raster_size);
  kv["extractor.channels"] = std::to_string(extractor.channels);
  std::string widths;
  for (std::size_t i = 0; i < extractor.stage_widths.size(); ++i) {
    if (i) widths += ",";
    widths += std::to_string(extractor.stage_widths[i]);
  }
  kv["extractor.stage_widths"] = widths;
  kv["extractor.import_path"] = extractor.import_path;
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

void ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "stages") stages = parse_int(key, value);
  else if (key == "heads") heads = parse_int(key, value);
  else if (key == "dim") dim = parse_int(key, value);
  else if (key == "num_outputs") num_outputs = parse_int(key, value);
  else if (key == "neighbors") neighbors = parse_int(key, value);
  else if (key == "edge_hidden") edge_hidden = parse_int(key, value);
  else if (key == "ffn_hidden") ffn_hidden = parse_int(key, value);
  else if (key == "offset_hidden") offset_hidden = parse_int(key, value);
  else if (key == "am_scale") am_scale = parse_real(key, value);
  else if (key == "am_margin") am_margin = parse_real(key, value);
  else if (key == "lambda_sem") lambda_sem = parse_real(key, value);
  else if (key == "lambda_ins") lambda_ins = parse_real(key, value);
  else if (key == "literal_eq4") literal_eq4 = parse_bool(key, value);
  else if (key == "zero_edge_bias") zero_edge_bias = parse_bool(key, value);
  else if (key == "edge_values") edge_values = parse_bool(key, value);
  else if (key == "supervise_text") supervise_text = parse_bool(key, value);
  else if (key == "extractor.backend") {
    if (value == "conv") extractor.backend = ExtractorBackend::kConvStack;
    else if (value == "file") extractor.backend = ExtractorBackend::kFileImport;
    else throw ConfigError("network", "extractor.backend must be conv or file, got '" + value + "'");
  } else if (key == "extractor.raster_size") extractor.raster_size = parse_int(key, value);
  else if (key == "extractor.channels") extractor.channels = parse_int(key, value);
  else if (key == "extractor.stage_widths") {
    std::vector<int> w;
    std::stringstream ss(value);
    std::string part;
    while (std::getline(ss, part, ',')) w.push_back(parse_int(key, trim(part)));
    extractor.stage_widths = w;
  } else if (key == "extractor.import_path") extractor.import_path = value;
  else throw ConfigError("network", "unknown model config key '" + key + "'");
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("network", "line " + std::to_string(lineno) + ": expected key = value");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.validate();
  return cfg;
}

TileGraph build_tile_graph(const Drawing& tile, const ModelConfig& cfg) {
  if (!tile.meta.normalized) throw ConfigError("network", "tile graph needs normalized coordinates");
  TileGraph g;
  g.tile = tile;
  g.neighbors = knn_neighbors(tile, cfg.neighbors);
  g.edges = build_edge_tensor(tile, g.neighbors);
  if (cfg.extractor.backend == ExtractorBackend::kConvStack) {
    g.raster = rasterize_tile(tile, cfg.extractor.raster_size);
  } else {
    g.imported_features = import_feature_map(cfg.extractor, 0);
  }
  return g;
}

std::vector<Point> instance_centers(const Drawing& tile) {
  std::map<int, std::pair<Point, int>> acc;
  for (const auto& p : tile.primitives) {
    if (p.instance == kNoInstance) continue;
    const Point c = primitive_center(p);
    auto& [s, n] = acc[p.instance];
    s.x += c.x;
    s.y += c.y;
    ++n;
  }
  std::vector<Point> out(tile.primitives.size(), Point{});
  for (std::size_t i = 0; i < tile.primitives.size(); ++i) {
    const auto& p = tile.primitives[i];
    if (p.instance == kNoInstance) {
      out[i] = primitive_center(p);
    } else {
      const auto& [s, n] = acc.at(p.instance);
      out[i] = {s.x / n, s.y / n};
    }
  }
  return out;
}

TileTargets make_targets(const Drawing& tile, const ModelConfig& cfg) {
  const std::size_t n = tile.primitives.size();
  if (tile.classes.num_outputs() != cfg.num_outputs) {
    throw ShapeError("network", "tile has " + std::to_string(tile.classes.num_outputs()) + " outputs, model has " +
                                    std::to_string(cfg.num_outputs));
  }
  TileTargets t;
  t.labels.resize(n);
  t.offsets.assign(2 * n, 0.0);
  t.mask.assign(n, 0.0);
  t.sem_weights.assign(n, 1.0);
  const auto centers = instance_centers(tile);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = tile.primitives[i];
    t.labels[i] = p.label;
    if (p.is_text() && !cfg.supervise_text) t.sem_weights[i] = 0.0;
    if (p.instance != kNoInstance && tile.classes.is_thing(p.label)) {
      const Point c = primitive_center(p);
      t.offsets[2 * i] = centers[i].x - c.x;
      t.offsets[2 * i + 1] = centers[i].y - c.y;
      t.mask[i] = 1.0;
    }
  }
  return t;
}

ad::Tensor attention_scores(const ad::Tensor& f_prev, const EdgeTensor& edges, const StageParams& p, int heads) {
  const int d = p.wq.dim(1);
  const ad::Tensor q = ad::matmul(f_prev, p.wq);
  const ad::Tensor keys = gather_neighbors(ad::matmul(f_prev, p.wk), edges);
  const ad::Tensor a = ad::scale(ad::neighbor_scores(q, keys, heads), 1.0 / std::sqrt(static_cast<double>(d / heads)));
  // padded slots get -inf so any softmax over them ignores them
  std::vector<double> pad(a.numel(), 0.0);
  for (std::size_t slot = 0; slot < edges.mask.size(); ++slot) {
    if (!edges.mask[slot]) {
      for (int l = 0; l < heads; ++l) pad[slot * heads + l] = -std::numeric_limits<double>::infinity();
    }
  }
  return ad::add(a, ad::Tensor::from(a.shape(), std::move(pad)));
}

ad::Tensor edge_bias(const EdgeTensor& edges, const StageParams& p) {
  const ad::Tensor e = constant_edges(edges, 0, kEdgeChannels);
  const ad::Tensor hidden = ad::relu(ad::add(ad::matmul(e, p.edge_w1), p.edge_b1));
  return ad::add(ad::matmul(hidden, p.edge_w2), p.edge_b2);
}

StageState attention_update(const ad::Tensor& f_prev, const ad::Tensor& scores, const ad::Tensor& bias,
                            const EdgeTensor& edges, const StageParams& p, const ModelConfig& cfg) {
  const int h = cfg.heads;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(edges.n) * h * edges.k);
  for (int i = 0; i < edges.n; ++i) {
    for (int l = 0; l < h; ++l) {
      for (int j = 0; j < edges.k; ++j) mask[(static_cast<std::size_t>(i) * h + l) * edges.k + j] = edges.mask[i * edges.k + j];
    }
  }
  StageState st;
  st.scores = scores;
  st.bias = bias;
  st.attention = ad::softmax_lastdim(ad::swap_last2(ad::add(scores, bias)), mask);
  if (cfg.literal_eq4) {
    st.features = ad::head_aggregate(st.attention, gather_neighbors(f_prev, edges));
    return st;
  }
  const ad::Tensor x = ad::layer_norm(f_prev, p.ln1_g, p.ln1_b);
  ad::Tensor values = gather_neighbors(ad::matmul(x, p.wv), edges);
  if (cfg.edge_values) values = ad::add(values, ad::matmul(constant_edges(edges, 1, 2), p.rel_w));
  const ad::Tensor mixed = ad::add(ad::matmul(ad::head_aggregate(st.attention, values), p.wo), p.bo);
  const ad::Tensor f1 = ad::add(f_prev, mixed);
  const ad::Tensor x2 = ad::layer_norm(f1, p.ln2_g, p.ln2_b);
  const ad::Tensor ff =
      ad::add(ad::matmul(ad::relu(ad::add(ad::matmul(x2, p.ffn_w1), p.ffn_b1)), p.ffn_w2), p.ffn_b2);
  st.features = ad::add(f1, ff);
  return st;
}

ad::Tensor am_softmax_loss(const ad::Tensor& cosine, const std::vector<int>& targets, const std::vector<double>* weights,
                           double scale, double margin) {
  const int n = cosine.dim(0), c = cosine.dim(1);
  if (static_cast<int>(targets.size()) != n) throw ShapeError("network", "target count does not match rows");
  std::vector<double> shift(static_cast<std::size_t>(n) * c, 0.0);
  for (int i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t < 0 || t >= c) throw ShapeError("network", "target label " + std::to_string(t) + " out of range");
    shift[static_cast<std::size_t>(i) * c + t] = scale * margin;
  }
  const ad::Tensor logits = ad::sub(ad::scale(cosine, scale), ad::Tensor::from({n, c}, std::move(shift)));
  return ad::cross_entropy_logits(logits, targets, weights ? std::span<const double>(*weights) : std::span<const double>{});
}

ClassificationOutput classification_head(const ad::Tensor& f, const ad::Tensor& class_weights,
                                         const std::vector<int>* targets, const std::vector<double>* weights,
                                         double scale, double margin) {
  ClassificationOutput out;
  out.cosine = ad::matmul(ad::l2_norm_rows(f), ad::transpose(ad::l2_norm_rows(class_weights)));
  if (targets) out.loss = am_softmax_loss(out.cosine, *targets, weights, scale, margin);
  return out;
}

ad::Tensor instance_loss(const ad::Tensor& offsets, const TileTargets& targets) {
  const int n = offsets.dim(0);
  if (offsets.rank() != 2 || offsets.dim(1) != 2 || static_cast<int>(targets.mask.size()) != n) {
    throw ShapeError("network", "offset prediction " + ad::shape_str(offsets.shape()) + " does not match targets");
  }
  double msum = 0.0;
  for (double m : targets.mask) msum += m;
  if (msum <= 0.0) return ad::Tensor::scalar(0.0);
  std::vector<double> w(targets.mask);
  for (auto& v : w) v /= msum;
  const ad::Tensor resid = ad::sub(offsets, ad::Tensor::from({n, 2}, targets.offsets));
  return ad::weighted_sum(ad::row_norms(resid), w);
}

ad::Tensor total_loss(const ad::Tensor& sem, const ad::Tensor& ins, const ModelConfig& cfg) {
  return ad::add(ad::scale(sem, cfg.lambda_sem), ad::scale(ins, cfg.lambda_ins));
}

double total_loss(double sem, double ins, const ModelConfig& cfg) { return cfg.lambda_sem * sem + cfg.lambda_ins * ins; }

SpottingModel::SpottingModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  using ad::Init;
  const int d = cfg_.dim;
  if (cfg_.extractor.backend == ExtractorBackend::kConvStack) cnn_.emplace(cfg_.extractor, store_, rng);
  in_w_ = store_.add("input.w", {cfg_.extractor.channels, d}, Init::kNormalFanIn, rng);
  in_b_ = store_.add("input.b", {d}, Init::kZeros, rng);
  const double relu_gain = std::sqrt(2.0);
  for (int s = 0; s < cfg_.stages; ++s) {
    const std::string pre = "stage" + std::to_string(s) + ".";
    StageParams p;
    p.wq = store_.add(pre + "wq", {d, d}, Init::kNormalFanIn, rng);
    p.wk = store_.add(pre + "wk", {d, d}, Init::kNormalFanIn, rng);
    p.edge_w1 = store_.add(pre + "edge.w1", {kEdgeChannels, cfg_.edge_hidden}, Init::kNormalFanIn, rng, relu_gain);
    p.edge_b1 = store_.add(pre + "edge.b1", {cfg_.edge_hidden}, Init::kZeros, rng);
    p.edge_w2 = store_.add(pre + "edge.w2", {cfg_.edge_hidden, cfg_.heads}, Init::kNormalFanIn, rng);
    p.edge_b2 = store_.add(pre + "edge.b2", {cfg_.heads}, Init::kZeros, rng);
    if (!cfg_.literal_eq4) {
      p.wv = store_.add(pre + "wv", {d, d}, Init::kNormalFanIn, rng);
      p.wo = store_.add(pre + "wo", {d, d}, Init::kNormalFanIn, rng);
      p.bo = store_.add(pre + "bo", {d}, Init::kZeros, rng);
      p.ln1_g = store_.add(pre + "ln1.g", {d}, Init::kOnes, rng);
      p.ln1_b = store_.add(pre + "ln1.b", {d}, Init::kZeros, rng);
      p.ln2_g = store_.add(pre + "ln2.g", {d}, Init::kOnes, rng);
      p.ln2_b = store_.add(pre + "ln2.b", {d}, Init::kZeros, rng);
      p.ffn_w1 = store_.add(pre + "ffn.w1", {d, cfg_.ffn_hidden}, Init::kNormalFanIn, rng, relu_gain);
      p.ffn_b1 = store_.add(pre + "ffn.b1", {cfg_.ffn_hidden}, Init::kZeros, rng);
      p.ffn_w2 = store_.add(pre + "ffn.w2", {cfg_.ffn_hidden, d}, Init::kNormalFanIn, rng);
      p.ffn_b2 = store_.add(pre + "ffn.b2", {d}, Init::kZeros, rng);
      if (cfg_.edge_values) p.rel_w = store_.add(pre + "rel.w", {2, d}, Init::kNormalFanIn, rng);
    }
    stages_.push_back(p);
  }
  cls_w_ = store_.add("head.cls.w", {cfg_.num_outputs, d}, Init::kNormalFanIn, rng);
  off_w1_ = store_.add("head.off.w1", {d, cfg_.offset_hidden}, Init::kNormalFanIn, rng, relu_gain);
  off_b1_ = store_.add("head.off.b1", {cfg_.offset_hidden}, Init::kZeros, rng);
  off_w2_ = store_.add("head.off.w2", {cfg_.offset_hidden, 2}, Init::kNormalFanIn, rng, 0.1);
  off_b2_ = store_.add("head.off.b2", {2}, Init::kZeros, rng);
}

ForwardResult SpottingModel::forward(const TileGraph& g, bool record_stages) const {
  FeatureMap fm;
  if (g.imported_features) {
    fm = *g.imported_features;
    if (fm.channels() != cfg_.extractor.channels) {
      throw ShapeError("network", "imported features have " + std::to_string(fm.channels()) + " channels, model expects " +
                                      std::to_string(cfg_.extractor.channels));
    }
  } else if (cnn_) {
    fm = cnn_->forward(g.raster);
  } else {
    throw ConfigError("network", "file-import backend needs imported features on the tile graph");
  }
  ad::Tensor f = ad::add(ad::matmul(init_vertex_features(g.tile, fm), in_w_), in_b_);
  ForwardResult out;
  for (const auto& p : stages_) {
    const ad::Tensor x = cfg_.literal_eq4 ? f : ad::layer_norm(f, p.ln1_g, p.ln1_b);
    const ad::Tensor a = attention_scores(x, g.edges, p, cfg_.heads);
    const ad::Tensor t = cfg_.zero_edge_bias ? ad::Tensor::zeros(a.shape()) : edge_bias(g.edges, p);
    StageState st = attention_update(f, a, t, g.edges, p, cfg_);
    f = st.features;
    if (record_stages) out.stages.push_back(std::move(st));
  }
  out.cosine = classification_head(f, cls_w_, nullptr, nullptr, cfg_.am_scale, cfg_.am_margin).cosine;
  out.offsets = ad::add(ad::matmul(ad::relu(ad::add(ad::matmul(f, off_w1_), off_b1_)), off_w2_), off_b2_);
  return out;
}

LossResult SpottingModel::loss(const ForwardResult& out, const TileTargets& targets) const {
  LossResult r;
  r.sem = am_softmax_loss(out.cosine, targets.labels, &targets.sem_weights, cfg_.am_scale, cfg_.am_margin);
  r.ins = instance_loss(out.offsets, targets);
  r.total = total_loss(r.sem, r.ins, cfg_);
  return r;
}

}  // namespace textspot
