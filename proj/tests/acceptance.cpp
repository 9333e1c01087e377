// Acceptance suite. Prints one PASS/FAIL line per criterion and exits
// non-zero when any selected criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "support.hpp"
#include "textspot/cli.hpp"
#include "textspot/graph.hpp"
#include "textspot/ingest.hpp"
#include "textspot/metrics.hpp"
#include "textspot/network.hpp"
#include "textspot/trainer.hpp"

using namespace textspot;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kTableDecimals = 1e4;
constexpr double kMetricTol = 1e-12;
constexpr double kGradTol = 1e-4;
constexpr double kAttentionTol = 1e-9;
constexpr double kTrainTarget = 0.80;
constexpr double kTextMargin = 0.03;
constexpr int kMetricPairs = 1000;
constexpr int kRoundTrips = 1000;
constexpr double kBudgetMetricIdentity = 1.0;
constexpr double kBudgetMetricOracle = 30.0;
constexpr double kBudgetGradcheck = 120.0;
constexpr double kBudgetTraining = 1800.0;

struct Outcome {
  bool pass = false;
  std::string detail;
  double budget = 0.0;  // seconds, 0 for none
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double round4(double v) { return std::round(v * kTableDecimals) / kTableDecimals; }

Outcome metric_identity() {
  struct Row {
    double rq, sq, pq;
  };
  const Row rows[] = {{0.8298, 0.8619, 0.7152}, {0.8381, 0.8794, 0.7371}};
  Outcome o{true, "", kBudgetMetricIdentity};
  for (const Row& r : rows) {
    const double pq = panoptic_quality(r.rq, r.sq);
    const bool ok = std::abs(round4(pq) - r.pq) < 0.5 / kTableDecimals;
    o.pass = o.pass && ok;
    o.detail += fmt("%.4f*%.4f=%.8f->%.4f (want %.4f%s) ", r.rq, r.sq, pq, round4(pq), r.pq, ok ? "" : ", MISMATCH");
  }
  return o;
}

Outcome metric_oracle() {
  std::mt19937_64 rng(2024);
  int greedy_mismatch = 0, identity_fail = 0, perfect_fail = 0, nonempty = 0;
  for (int rep = 0; rep < kMetricPairs; ++rep) {
    const auto pair = oracles::random_symbol_pair(rng);
    const MatchResult m = match_symbols(pair.pred, pair.gt, pair.drawing);
    const auto best = oracles::brute_force_matching(pair.pred, pair.gt, pair.drawing);
    const PanopticScores s = panoptic_scores(m);
    if (static_cast<int>(m.tp.size()) != best.count || std::abs(s.iou_sum - best.iou_sum) > kMetricTol) ++greedy_mismatch;
    if (std::abs(s.pq - s.rq * s.sq) > kMetricTol) ++identity_fail;
    if (!pair.gt.empty()) {
      ++nonempty;
      if (panoptic_scores(match_symbols(pair.gt, pair.gt, pair.drawing)).pq != 1.0) ++perfect_fail;
    }
  }
  return {greedy_mismatch == 0 && identity_fail == 0 && perfect_fail == 0 && nonempty > 0,
          fmt("%d pairs: greedy!=optimal %d, |PQ-RQ*SQ|>1e-12 %d, perfect!=1 %d/%d", kMetricPairs, greedy_mismatch,
              identity_fail, perfect_fail, nonempty),
          kBudgetMetricOracle};
}

Outcome iou_hand_case() {
  Drawing d;
  d.classes = testsupport::small_classes();
  // lengths 1, 3, 1: weights ln2, ln4, ln2
  d.primitives = {testsupport::line_prim(0, 0, 0, 1, 0), testsupport::line_prim(1, 0, 1, 3, 1),
                  testsupport::line_prim(2, 0, 2, 1, 2)};
  const double iou = weighted_iou(Symbol{1, 0, {0, 1}}, Symbol{1, 0, {1, 2}}, d);
  return {std::abs(iou - 0.5) < kMetricTol, fmt("IoU = %.17g", iou)};
}

Outcome gradcheck() {
  Outcome o{true, "", kBudgetGradcheck};
  for (bool literal : {false, true}) {
    const GradCheckReport r = gradcheck_pipeline(12, 7, literal);
    const bool ok = r.primitives == 12 && r.result.max_rel_error < kGradTol;
    o.pass = o.pass && ok;
    o.detail += fmt("%s: max rel %.2e over %zu coords; ", literal ? "literal" : "standard", r.result.max_rel_error,
                    r.result.coords_checked);
  }
  return o;
}

Drawing normalized_synth_tile(Split split, int index) {
  return normalize_coords(generate_tile(SynthConfig{}, split, index)).tile;
}

Outcome attention_invariants() {
  double worst_row = 0.0, worst_perm = 0.0;
  bool bitwise = true;
  for (int tile = 0; tile < 5; ++tile) {
    const Drawing d = normalized_synth_tile(Split::kTest, tile);
    for (bool literal : {false, true}) {
      ModelConfig cfg;
      cfg.literal_eq4 = literal;
      SpottingModel m(cfg, 100 + tile);
      const TileGraph g = build_tile_graph(d, cfg);
      const ForwardResult a = m.forward(g, true);
      const int n = g.edges.n, k = g.edges.k, h = cfg.heads, dim = cfg.dim;
      for (const auto& st : a.stages)
        for (int i = 0; i < n * h; ++i) {
          double total = 0;
          for (int j = 0; j < k; ++j) total += st.attention[static_cast<std::size_t>(i) * k + j];
          worst_row = std::max(worst_row, std::abs(total - 1.0));
        }

      std::vector<int> perm(n);  // old index -> new index
      std::iota(perm.begin(), perm.end(), 0);
      std::mt19937_64 rng(tile);
      std::shuffle(perm.begin(), perm.end(), rng);
      TileGraph pg;
      pg.tile = g.tile;
      pg.neighbors.k = g.neighbors.k;
      pg.neighbors.rows.resize(n);
      for (int i = 0; i < n; ++i) {
        Primitive p = g.tile.primitives[i];
        p.id = perm[i];
        pg.tile.primitives[perm[i]] = p;
        for (int j : g.neighbors.rows[i]) pg.neighbors.rows[perm[i]].push_back(perm[j]);
      }
      pg.edges = build_edge_tensor(pg.tile, pg.neighbors);
      pg.raster = rasterize_tile(pg.tile, cfg.extractor.raster_size);
      const ForwardResult b = m.forward(pg, true);
      for (std::size_t s = 0; s < a.stages.size(); ++s)
        for (int i = 0; i < n; ++i)
          for (int c = 0; c < dim; ++c)
            worst_perm = std::max(worst_perm, std::abs(a.stages[s].features[i * dim + c] - b.stages[s].features[perm[i] * dim + c]));
      for (int i = 0; i < n; ++i)
        for (int c = 0; c < 2; ++c) worst_perm = std::max(worst_perm, std::abs(a.offsets[i * 2 + c] - b.offsets[perm[i] * 2 + c]));
    }

    ModelConfig cfg;
    SpottingModel full(cfg, 200 + tile);
    cfg.zero_edge_bias = true;
    SpottingModel unbiased(cfg, 200 + tile);
    for (auto& p : full.params().params())
      if (p.name.find(".edge.") != std::string::npos) std::fill(p.tensor.mutable_values().begin(), p.tensor.mutable_values().end(), 0.0);
    const TileGraph g = build_tile_graph(d, cfg);
    const ForwardResult x = full.forward(g), y = unbiased.forward(g);
    bitwise = bitwise && std::ranges::equal(x.cosine.values(), y.cosine.values()) &&
              std::ranges::equal(x.offsets.values(), y.offsets.values());
  }
  return {worst_row < kAttentionTol && worst_perm < kAttentionTol && bitwise,
          fmt("max |row sum - 1| %.2e, max permutation error %.2e, zero edge MLP bitwise %s", worst_row, worst_perm,
              bitwise ? "equal" : "DIFFERENT")};
}

// Train on the seed-7 dataset and return test PQ.
struct Variant {
  bool no_text = false;
  bool zero_bias = false;
};

class Experiment {
 public:
  explicit Experiment(const fs::path& work) : dir_(work / "synth-seed7") {
    SynthConfig sc;
    manifest_ = generate_dataset(sc, dir_.string());
    stats_ = read_stats_file((dir_ / manifest_.stats).string());
    classes_ = synth_classes();
  }

  double run(const Variant& v, std::uint64_t seed, double* seconds = nullptr) {
    const auto start = std::chrono::steady_clock::now();
    PipelineConfig pipe;
    pipe.no_text = v.no_text;
    ModelConfig mc = default_model_config(classes_);
    mc.zero_edge_bias = v.zero_bias;
    const std::string m = (dir_ / "manifest.json").string();
    const auto tr = prepare_split(m, Split::kTrain, stats_, pipe, mc);
    const auto va = prepare_split(m, Split::kVal, stats_, pipe, mc);
    const auto te = prepare_split(m, Split::kTest, stats_, pipe, mc);
    TrainConfig tc;
    tc.seed = seed;
    SpottingModel model(mc, seed);
    train(model, tr, va, tc, pipe.radius);
    const double pq = evaluate(model, te, pipe.radius).overall.pq;
    if (seconds) *seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return pq;
  }

 private:
  fs::path dir_;
  DatasetManifest manifest_;
  CorpusStats stats_;
  ClassTable classes_;
};

Outcome desk_training(const fs::path& work) {
  Experiment e(work);
  double seconds = 0;
  const double pq = e.run({}, 7, &seconds);
  return {pq >= kTrainTarget && seconds < kBudgetTraining,
          fmt("test PQ %.4f after %d epochs (target %.2f), training %.0f s (budget %.0f s)", pq, TrainConfig{}.epochs,
              kTrainTarget, seconds, kBudgetTraining)};
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

Outcome ablation(const fs::path& work) {
  Experiment e(work);
  const std::uint64_t seeds[] = {7, 8, 9};
  std::vector<double> full, no_text, zero_bias;
  for (std::uint64_t s : seeds) {
    full.push_back(e.run({}, s));
    no_text.push_back(e.run({true, false}, s));
    zero_bias.push_back(e.run({false, true}, s));
    std::fprintf(stderr, "seed %llu: full %.4f no-text %.4f zero-bias %.4f\n", static_cast<unsigned long long>(s),
                 full.back(), no_text.back(), zero_bias.back());
  }
  const double f = median3(full), n = median3(no_text), z = median3(zero_bias);
  return {f >= n + kTextMargin && f >= z,
          fmt("median test PQ full %.4f, no-text %.4f (need <= %.4f), zero-edge-bias %.4f (need <= %.4f)", f, n,
              f - kTextMargin, z, f)};
}

Outcome oracles_knn_json() {
  std::mt19937_64 rng(808);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<int> grid(0, 6);
  int knn_cases = 0, knn_fail = 0;
  for (int n = 2; n <= 200; n += (n < 20 ? 1 : 9)) {
    for (int k : {1, 4, 16, 250}) {
      std::vector<Point> pts(n), lattice(n);
      for (auto& p : pts) p = {u(rng), u(rng)};
      for (auto& p : lattice) p = {static_cast<double>(grid(rng)), static_cast<double>(grid(rng))};
      knn_cases += 2;
      knn_fail += knn_neighbors(pts, k).rows != oracles::brute_knn(pts, k);
      knn_fail += knn_neighbors(lattice, k).rows != oracles::brute_knn(lattice, k);
    }
  }
  int rt_fail = 0;
  for (int i = 0; i < kRoundTrips; ++i) {
    const Drawing d = testsupport::random_drawing(rng);
    const std::string text = serialize_drawing(d);
    const ParsedDrawing back = parse_drawing(text, DrawingFormat::kCanonicalJson);
    rt_fail += !(back.drawing == d) || serialize_drawing(back.drawing) != text;
  }
  return {knn_fail == 0 && rt_fail == 0,
          fmt("knn mismatches %d/%d (N <= 200), round-trip failures %d/%d", knn_fail, knn_cases, rt_fail, kRoundTrips)};
}

const char* kSvg =
    "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 20 10\">\n"
    "  <line x1=\"1\" y1=\"1\" x2=\"9\" y2=\"1\" semantic-id=\"6\"/>\n"
    "  <circle cx=\"5\" cy=\"5\" r=\"1.5\" semantic-id=\"4\" instance-id=\"0\"/>\n"
    "  <path d=\"M 12 2 L 18 2 A 3 3 0 0 1 18 8\" semantic-id=\"1\" instance-id=\"1\"/>\n"
    "  <text x=\"12\" y=\"6\">WC</text>\n"
    "</svg>\n";

// Runs every subcommand in `dir` and returns the transcript and the bytes
// of every file produced.
std::map<std::string, std::string> cli_pass(const fs::path& dir, std::vector<std::string>& failures) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string w = dir.string();
  testsupport::write_file(dir / "input.svg", kSvg);
  const std::vector<std::string> small = {"--set", "dim=24",          "--set", "stages=2",
                                          "--set", "heads=2",         "--set", "ffn_hidden=48",
                                          "--set", "offset_hidden=24", "--set", "edge_hidden=8",
                                          "--set", "extractor.raster_size=64", "--set", "extractor.channels=8",
                                          "--set", "extractor.stage_widths=4,8"};
  std::vector<std::vector<std::string>> cmds = {
      {"--seed", "3", "synth", "--tiles", "6,2,2", "--out", w + "/ds"},
      {"stats", "build", "--manifest", w + "/ds/manifest.json", "--out", w + "/stats.tsv"},
      {"stats", "show", "--stats", w + "/stats.tsv", "--top", "5"},
      {"ingest", "--in", w + "/ds/train/0000.json", "--out", w + "/tiles", "--tile-size", "7"},
      {"ingest", "--in", w + "/input.svg", "--format", "svg-subset", "--out", w + "/svgtiles", "--tile-size", "10"},
      {"--seed", "5", "train", "--data", w + "/ds/manifest.json", "--out", w + "/run", "--epochs", "2"},
      {"eval", "--model", w + "/run", "--data", w + "/ds/manifest.json", "--split", "val", "--json", w + "/eval_model.json"},
      {"spot", "--model", w + "/run", "--in", w + "/ds/test/0000.json", "--out", w + "/pred.json"},
      {"eval", "--pred", w + "/pred.json", "--gt", w + "/ds/test/0000.json", "--json", w + "/eval_pred.json"},
      {"render", "--gt", w + "/ds/test/0000.json", "--pred", w + "/pred.json", "--out", w + "/overlay.svg"},
      {"--seed", "7", "gradcheck", "--n", "12"},
  };
  cmds[5].insert(cmds[5].end(), small.begin(), small.end());
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    std::vector<std::string> args = {"textspot"};
    args.insert(args.end(), cmds[i].begin(), cmds[i].end());
    std::ostringstream so, se;
    const int code = run(args, so, se);
    const std::string name = cmds[i][cmds[i][0] == "--seed" ? 2 : 0];
    if (code != 0) failures.push_back(fmt("%s exit %d: %s", name.c_str(), code, se.str().c_str()));
    out[fmt("cmd%02zu-%s", i, name.c_str())] = fmt("exit %d\n", code) + so.str() + se.str();
  }
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = testsupport::read_file(e.path());
  return out;
}

Outcome cli_determinism(const fs::path& work) {
  const fs::path dir = work / "cli";
  std::vector<std::string> failures;
  const auto a = cli_pass(dir, failures);
  const auto b = cli_pass(dir, failures);
  std::vector<std::string> differ;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end() || it->second != v) differ.push_back(k);
  }
  for (const auto& [k, v] : b)
    if (!a.count(k)) differ.push_back(k);
  std::string detail = fmt("%zu outputs compared over 11 invocations, %zu differ", a.size(), differ.size());
  for (const auto& d : differ) detail += " " + d;
  for (const auto& f : failures) detail += "; " + f;
  return {differ.empty() && failures.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance suite"};
  std::vector<int> selected;
  std::string work = (fs::temp_directory_path() / "textspot-acceptance").string();
  app.add_option("--criterion", selected, "Criterion number (repeatable; default all)")->check(CLI::Range(1, 9));
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8, 9};

  const fs::path wd = work;
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> table = {
      {1, {"metric identity on table rows", metric_identity}},
      {2, {"metric oracle suite", metric_oracle}},
      {3, {"weighted IoU hand case", iou_hand_case}},
      {4, {"full-pipeline gradient check", gradcheck}},
      {5, {"attention invariants", attention_invariants}},
      {6, {"desk-scale training", [&] { return desk_training(wd / "c6"); }}},
      {7, {"direction-of-effect ablation", [&] { return ablation(wd / "c7"); }}},
      {8, {"kNN and parser oracles", oracles_knn_json}},
      {9, {"CLI determinism", [&] { return cli_determinism(wd / "c9"); }}},
  };

  int failed = 0;
  for (int c : selected) {
    const auto& [name, fn] = table.at(c);
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (o.budget > 0 && secs >= o.budget) {
      o.pass = false;
      o.detail += fmt(" [over %.0f s budget]", o.budget);
    }
    failed += !o.pass;
    std::printf("criterion %d %s: %s (%.2f s) %s\n", c, o.pass ? "PASS" : "FAIL", name, secs, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
