#include "textspot/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "textspot/binary_io.hpp"
#include "textspot/error.hpp"
#include "textspot/ingest.hpp"
#include "textspot/metrics.hpp"
#include "textspot/spotting.hpp"
#include "textspot/synth.hpp"
#include "textspot/text_filter.hpp"
#include "textspot/trainer.hpp"

namespace textspot {
namespace {

namespace fs = std::filesystem;

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cli", "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cli", "cannot write " + path);
  out << text;
}

void make_dirs(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cli", "cannot create " + dir + ": " + ec.message());
}

std::vector<int> parse_counts(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      out.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw ConfigError("cli", "bad tile count '" + part + "'");
    }
  }
  if (out.size() != 3) throw ConfigError("cli", "--tiles takes train,val,test counts");
  return out;
}

// A trained model directory: model.cfg, pipeline.cfg, stats.tsv, best.ckpt.
struct ModelDir {
  ModelConfig model;
  PipelineConfig pipe;
  CorpusStats stats;
};

ModelDir load_model_dir(const std::string& dir, SpottingModel*& out_model, std::unique_ptr<SpottingModel>& holder) {
  ModelDir d;
  d.model = ModelConfig::from_text(read_text((fs::path(dir) / "model.cfg").string()));
  d.pipe = PipelineConfig::from_text(read_text((fs::path(dir) / "pipeline.cfg").string()));
  d.stats = read_stats_file((fs::path(dir) / "stats.tsv").string());
  holder = std::make_unique<SpottingModel>(d.model, 0);
  ad::load_checkpoint((fs::path(dir) / "best.ckpt").string(), holder->params());
  out_model = holder.get();
  return d;
}

void print_options(const CLI::App& app, const std::string& prefix, std::ostream& out) {
  for (const CLI::Option* opt : app.get_options()) {
    const std::string name = opt->get_name(false, true);
    if (name == "--help" || name == "--config" || name.rfind("--", 0) != 0) continue;
    std::string value;
    if (opt->count() > 0) {
      for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
      if (opt->get_expected_min() == 0 && value.empty()) value = "true";
    } else {
      value = opt->get_default_str();
      if (value.empty() && opt->get_expected_min() == 0) value = "false";
    }
    out << prefix << name.substr(2) << " = " << value << "\n";
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Panoptic symbol spotting for vector CAD drawings with text-aware graph attention"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 7;
  app.add_option("--seed", seed, "Random seed for every stochastic step")->capture_default_str();
  app.set_config("--config", "", "Read option values from a TOML/INI file");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Parse a drawing and split it into tiles");
  std::string in_path, format = "canonical-json", out_dir;
  double tile_size = 14.0, overlap = 0.0;
  ingest->add_option("--in", in_path, "Input drawing")->required();
  ingest->add_option("--format", format, "canonical-json or svg-subset")->capture_default_str();
  ingest->add_option("--out", out_dir, "Output directory for tiles")->required();
  ingest->add_option("--tile-size", tile_size, "Tile edge length in drawing units")->capture_default_str();
  ingest->add_option("--overlap", overlap, "Tile overlap in drawing units")->capture_default_str();

  // stats
  auto* stats = app.add_subcommand("stats", "Corpus token statistics");
  stats->require_subcommand(1);
  auto* stats_build = stats->add_subcommand("build", "Count normalized text tokens over the train split");
  std::string manifest_path, stats_path;
  std::vector<std::string> tile_files;
  auto* manifest_opt = stats_build->add_option("--manifest", manifest_path, "Dataset manifest");
  stats_build->add_option("--tiles", tile_files, "Tile files instead of a manifest")->excludes(manifest_opt);
  stats_build->add_option("--out", stats_path, "Statistics file to write")->required();
  auto* stats_show = stats->add_subcommand("show", "Print the most frequent tokens");
  std::size_t top = 20;
  stats_show->add_option("--stats", stats_path, "Statistics file")->required();
  stats_show->add_option("--top", top, "Number of tokens")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled dataset");
  SynthConfig sc;
  std::string tiles = "200,40,40";
  synth->add_option("--tiles", tiles, "train,val,test tile counts")->capture_default_str();
  synth->add_option("--text-rate", sc.text_rate, "Probability of a text box per instance")->capture_default_str();
  synth->add_option("--informativeness", sc.informativeness, "Probability that a text names its class")
      ->capture_default_str();
  synth->add_option("--clutter-rate", sc.clutter_rate, "Probability per clutter slot")->capture_default_str();
  synth->add_option("--out", out_dir, "Output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the spotting model");
  TrainConfig tc;
  PipelineConfig pipe;
  bool zero_bias = false, literal = false;
  std::string model_cfg_path;
  std::vector<std::string> overrides;
  train_cmd->add_option("--data", manifest_path, "Dataset manifest")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--epochs", tc.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--lr", tc.lr, "Initial learning rate")->capture_default_str();
  train_cmd->add_option("--batch", tc.batch, "Tiles per optimizer step")->capture_default_str();
  train_cmd->add_option("--decay-every", tc.decay_every, "Epochs between learning-rate halvings")->capture_default_str();
  train_cmd->add_flag("--no-text", pipe.no_text, "Remove text primitives before the graph and raster");
  train_cmd->add_flag("--zero-edge-bias", zero_bias, "Force the structural attention bias to zero");
  train_cmd->add_flag("--literal-eq4", literal, "Bare softmax(A+T) f stages without transformer sublayers");
  train_cmd->add_option("--radius", pipe.radius, "Clustering radius in normalized units")->capture_default_str();
  train_cmd->add_option("--min-count", pipe.filter.min_count, "Minimum corpus count to keep a text token")
      ->capture_default_str();
  train_cmd->add_option("--model-config", model_cfg_path, "Model config file (key = value)");
  train_cmd->add_option("--set", overrides, "Model config override key=value (repeatable)");

  // eval
  auto* eval = app.add_subcommand("eval", "Panoptic quality of predictions");
  std::string pred_path, gt_path, json_path, model_dir, split = "test";
  auto* pred_opt = eval->add_option("--pred", pred_path, "Prediction drawing");
  auto* gt_opt = eval->add_option("--gt", gt_path, "Ground-truth drawing");
  auto* model_opt = eval->add_option("--model", model_dir, "Trained model directory");
  auto* data_opt = eval->add_option("--data", manifest_path, "Dataset manifest (with --model)");
  eval->add_option("--split", split, "train, val or test (with --model)")->capture_default_str();
  eval->add_option("--json", json_path, "Write the report as JSON");
  pred_opt->needs(gt_opt);
  gt_opt->needs(pred_opt);
  model_opt->needs(data_opt);
  model_opt->excludes(pred_opt);

  // spot
  auto* spot = app.add_subcommand("spot", "Predict symbols on one tile");
  double radius = -1.0;
  std::string out_path;
  spot->add_option("--model", model_dir, "Trained model directory")->required();
  spot->add_option("--in", in_path, "Tile drawing (canonical JSON)")->required();
  spot->add_option("--out", out_path, "Prediction drawing to write")->required();
  spot->add_option("--radius", radius, "Clustering radius (default from the model)");

  // render
  auto* render = app.add_subcommand("render", "SVG overlay of ground truth and prediction");
  render->add_option("--gt", gt_path, "Ground-truth drawing")->required();
  render->add_option("--pred", pred_path, "Prediction drawing")->required();
  render->add_option("--out", out_path, "SVG file to write")->required();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of the full loss gradient");
  int n = 12;
  gradcheck->add_option("--n", n, "Primitives in the synthetic tile")->capture_default_str();
  gradcheck->add_flag("--literal-eq4", literal, "Check the bare attention form");

  std::vector<std::string> argv_store = args;
  if (argv_store.empty()) argv_store.push_back("textspot");
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  out << "# resolved config\n";
  print_options(app, "", out);
  for (const CLI::App* sub : app.get_subcommands()) {
    print_options(*sub, sub->get_name() + ".", out);
    for (const CLI::App* inner : sub->get_subcommands()) print_options(*inner, sub->get_name() + "." + inner->get_name() + ".", out);
  }

  try {
    if (*ingest) {
      ParsedDrawing parsed = parse_drawing(read_text(in_path), parse_format_name(format));
      for (const auto& s : parsed.skipped) {
        out << "skipped <" << s.element << "> at byte " << s.byte_offset << ": " << s.reason << "\n";
      }
      TileSpec spec;
      spec.tile_size = tile_size;
      spec.overlap = overlap;
      const auto tiles_out = tile_drawing(parsed.drawing, spec);
      make_dirs(out_dir);
      DatasetManifest m;
      m.seed = seed;
      for (std::size_t i = 0; i < tiles_out.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%04zu.json", i);
        write_drawing_file((fs::path(out_dir) / name).string(), tiles_out[i]);
        m.test.push_back(name);
      }
      m.stats = "stats.tsv";
      write_stats_file((fs::path(out_dir) / m.stats).string(), build_corpus_stats(tiles_out));
      write_text((fs::path(out_dir) / "manifest.json").string(), serialize_manifest(m));
      out << "wrote " << tiles_out.size() << " tiles to " << out_dir << "\n";
    } else if (*stats) {
      if (*stats_build) {
        std::vector<Drawing> ds;
        if (!manifest_path.empty()) {
          const DatasetManifest m = read_manifest(manifest_path);
          const auto dir = fs::path(manifest_path).parent_path();
          for (const auto& rel : m.train) ds.push_back(read_drawing_file((dir / rel).string()));
        } else {
          if (tile_files.empty()) throw ConfigError("cli", "stats build needs --manifest or --tiles");
          for (const auto& f : tile_files) ds.push_back(read_drawing_file(f));
        }
        const CorpusStats cs = build_corpus_stats(ds);
        write_stats_file(stats_path, cs);
        out << "counted " << cs.counts.size() << " distinct tokens over " << cs.documents << " tiles\n";
      } else {
        const CorpusStats cs = read_stats_file(stats_path);
        for (const auto& [tok, c] : cs.top(top)) out << c << "\t" << tok << "\n";
      }
    } else if (*synth) {
      const auto counts = parse_counts(tiles);
      sc.seed = seed;
      sc.train_tiles = counts[0];
      sc.val_tiles = counts[1];
      sc.test_tiles = counts[2];
      const DatasetManifest m = generate_dataset(sc, out_dir);
      out << "wrote " << m.train.size() << "/" << m.val.size() << "/" << m.test.size() << " tiles to " << out_dir << "\n";
    } else if (*train_cmd) {
      tc.seed = seed;
      const DatasetManifest m = read_manifest(manifest_path);
      const auto data_dir = fs::path(manifest_path).parent_path();
      const CorpusStats cs = read_stats_file((data_dir / m.stats).string());
      if (m.train.empty()) throw ConfigError("cli", "manifest has no train tiles");
      const Drawing first = read_drawing_file((data_dir / m.train.front()).string());
      ModelConfig mc = model_cfg_path.empty() ? default_model_config(first.classes)
                                              : ModelConfig::from_text(read_text(model_cfg_path));
      for (const auto& kv : overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("cli", "--set expects key=value, got '" + kv + "'");
        mc.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (zero_bias) mc.zero_edge_bias = true;
      if (literal) mc.literal_eq4 = true;
      mc.validate();
      pipe.filter.validate();
      out << "# model config\n" << mc.to_text() << "# pipeline config\n" << pipe.to_text();
      const auto train_tiles = prepare_split(manifest_path, Split::kTrain, cs, pipe, mc);
      const auto val_tiles = prepare_split(manifest_path, Split::kVal, cs, pipe, mc);
      SpottingModel model(mc, seed);
      const TrainResult r = train(model, train_tiles, val_tiles, tc, pipe.radius, [&](const HistoryRow& row) {
        out << "epoch " << row.epoch << " loss " << row.loss << " val_PQ " << row.val_pq << "\n";
        out.flush();
      });
      make_dirs(out_dir);
      write_text((fs::path(out_dir) / "history.csv").string(), history_csv(r.history));
      write_bytes_file((fs::path(out_dir) / "best.ckpt").string(), r.best_checkpoint, "cli");
      write_text((fs::path(out_dir) / "model.cfg").string(), mc.to_text());
      write_text((fs::path(out_dir) / "pipeline.cfg").string(), pipe.to_text());
      write_stats_file((fs::path(out_dir) / "stats.tsv").string(), cs);
      out << "best epoch " << r.best_epoch << " val_PQ " << r.best_val_pq << "\n";
      if (!m.test.empty()) {
        const auto test_tiles = prepare_split(manifest_path, Split::kTest, cs, pipe, mc);
        const PanopticReport rep = evaluate(model, test_tiles, pipe.radius);
        write_text((fs::path(out_dir) / "test_report.json").string(), report_json(rep));
        out << "test split\n" << report_text(rep);
      }
    } else if (*eval) {
      PanopticReport rep;
      if (!model_dir.empty()) {
        SpottingModel* model = nullptr;
        std::unique_ptr<SpottingModel> holder;
        const ModelDir md = load_model_dir(model_dir, model, holder);
        Split s = Split::kTest;
        if (split == "train") s = Split::kTrain;
        else if (split == "val") s = Split::kVal;
        else if (split != "test") throw ConfigError("cli", "unknown split '" + split + "'");
        rep = evaluate(*model, prepare_split(manifest_path, s, md.stats, md.pipe, md.model), md.pipe.radius);
      } else {
        if (pred_path.empty()) throw ConfigError("cli", "eval needs --pred/--gt or --model/--data");
        const Drawing gt = read_drawing_file(gt_path);
        const Drawing pred = read_drawing_file(pred_path);
        if (pred.primitives.size() != gt.primitives.size()) {
          throw SchemaError("prediction has " + std::to_string(pred.primitives.size()) + " primitives, ground truth " +
                            std::to_string(gt.primitives.size()));
        }
        if (!(pred.classes == gt.classes)) throw SchemaError("prediction and ground truth use different class tables");
        ReportBuilder b(gt.classes);
        b.add_tile(ground_truth_symbols(pred), ground_truth_symbols(gt), gt, drawing_labels(pred), drawing_labels(gt));
        rep = b.finish();
      }
      out << report_text(rep);
      if (!json_path.empty()) write_text(json_path, report_json(rep));
    } else if (*spot) {
      SpottingModel* model = nullptr;
      std::unique_ptr<SpottingModel> holder;
      const ModelDir md = load_model_dir(model_dir, model, holder);
      const Drawing raw = read_drawing_file(in_path);
      // positional ids so source_ids after filtering index into raw
      Drawing input = raw;
      input.meta.source_ids.clear();
      for (std::size_t i = 0; i < input.primitives.size(); ++i) input.primitives[i].id = static_cast<int>(i);
      const PreparedTile t = prepare_tile(input, md.stats, md.pipe, md.model);
      const SpottingResult r = spot_tile(*model, t.graph, radius > 0 ? radius : md.pipe.radius);
      // every input primitive is kept; text the filter dropped is annotation
      Drawing pred = raw;
      for (auto& p : pred.primitives) {
        p.label = p.is_text() ? raw.classes.annotation_label() : kBackgroundLabel;
        p.instance = -1;
      }
      const auto& src = t.graph.tile.meta.source_ids;
      for (std::size_t k = 0; k < r.labels.size(); ++k) {
        Primitive& p = pred.primitives[src.empty() ? k : static_cast<std::size_t>(src[k])];
        p.label = r.labels[k];
        p.instance = r.instances[k];
      }
      write_drawing_file(out_path, pred);
      out << "predicted " << r.symbols.size() << " symbols over " << r.labels.size() << " primitives\n";
    } else if (*render) {
      write_text(out_path, render_overlay_svg(read_drawing_file(gt_path), read_drawing_file(pred_path)));
      out << "wrote " << out_path << "\n";
    } else if (*gradcheck) {
      const GradCheckReport g = gradcheck_pipeline(n, seed, literal);
      char line[256];
      std::snprintf(line, sizeof line, "max relative error %.3e over %zu coordinates (%zu below the 1e-5 floor; %d primitives, %zu parameters)\n",
                    g.result.max_rel_error, g.result.coords_checked, g.result.floored, g.primitives, g.parameters);
      out << line;
      out << "worst " << g.result.worst_param << " analytic " << g.result.worst_analytic << " numeric "
          << g.result.worst_numeric << "\n";
      if (!(g.result.max_rel_error < 1e-4)) {
        err << "gradcheck: relative error above 1e-4\n";
        return 1;
      }
    }
  } catch (const Error& e) {
    err << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace textspot
