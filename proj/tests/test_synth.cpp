#include <filesystem>
#include <set>

#include "doctest.h"
#include "support.hpp"
#include "textspot/error.hpp"
#include "textspot/ingest.hpp"
#include "textspot/metrics.hpp"
#include "textspot/spotting.hpp"
#include "textspot/synth.hpp"
#include "textspot/text_filter.hpp"

using namespace textspot;
using namespace testsupport;
namespace fs = std::filesystem;

TEST_SUITE("synth") {
  TEST_CASE("classes") {
    const ClassTable t = synth_classes();
    CHECK(t.num_categories() == 6);
    int things = 0;
    for (const auto& c : t.classes()) things += c.kind == ClassKind::kThing;
    CHECK(things == 5);
    CHECK(class_token(4) == "DINING TABLE");
  }

  TEST_CASE("tiles are deterministic and valid") {
    SynthConfig cfg;
    for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
      for (int i = 0; i < 15; ++i) {
        const Drawing a = generate_tile(cfg, s, i);
        CHECK(a == generate_tile(cfg, s, i));
        CHECK(validate_drawing(a).empty());
        // reals are canonical, so a file round trip is exact
        CHECK(parse_drawing(serialize_drawing(a), DrawingFormat::kCanonicalJson).drawing == a);
      }
    }
    CHECK_FALSE(generate_tile(cfg, Split::kTrain, 0) == generate_tile(cfg, Split::kVal, 0));
  }

  TEST_CASE("ground truth scores perfectly against itself") {
    SynthConfig cfg;
    for (int i = 0; i < 40; ++i) {
      const Drawing t = generate_tile(cfg, Split::kTrain, i);
      const SymbolSet gt = ground_truth_symbols(t);
      const SymbolSet pred = assemble_symbols(drawing_labels(t), [&] {
        std::vector<int> inst;
        for (const auto& p : t.primitives) inst.push_back(p.instance);
        return inst;
      }(), t);
      const PanopticScores s = panoptic_scores(match_symbols(pred, gt, t));
      CHECK(s.pq == 1.0);
      CHECK(s.rq == 1.0);
      CHECK(s.sq == 1.0);
    }
  }

  TEST_CASE("text and clutter knobs") {
    SynthConfig cfg;
    cfg.text_rate = 0.0;
    for (int i = 0; i < 10; ++i)
      for (const auto& p : generate_tile(cfg, Split::kTrain, i).primitives) CHECK_FALSE(p.is_text());

    SynthConfig exact;
    exact.clutter_rate = 0.0;
    exact.min_instances = exact.max_instances = 3;
    for (int i = 0; i < 10; ++i) {
      const Drawing t = generate_tile(exact, Split::kTrain, i);
      int things = 0, stuff = 0;
      for (const auto& s : ground_truth_symbols(t)) (t.classes.is_thing(s.label) ? things : stuff) += 1;
      CHECK(things == 3);
      CHECK(stuff == 1);
      for (const auto& p : t.primitives) CHECK(p.label != kBackgroundLabel);
    }

    SynthConfig bad;
    bad.informativeness = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("informative text names the nearby class") {
    SynthConfig cfg;
    cfg.informativeness = 1.0;
    for (int i = 0; i < 10; ++i) {
      const Drawing t = generate_tile(cfg, Split::kTrain, i);
      std::set<std::string> named;
      for (const auto& p : t.primitives)
        if (p.is_text()) named.insert(std::get<Text>(p.geometry).content);
      for (const auto& s : ground_truth_symbols(t))
        if (t.classes.is_thing(s.label)) CHECK(named.count(class_token(s.label)) == 1);
    }
  }

  TEST_CASE("dataset files") {
    const auto dir = scratch_dir("synth");
    SynthConfig cfg;
    cfg.train_tiles = 6;
    cfg.val_tiles = 2;
    cfg.test_tiles = 3;
    const DatasetManifest m = generate_dataset(cfg, (dir / "a").string());
    CHECK(m.train.size() == 6);
    CHECK(m.val.size() == 2);
    CHECK(m.test.size() == 3);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a"))
      if (e.path().extension() == ".json" && e.path().filename() != "manifest.json") ++files;
    CHECK(files == 11);
    CHECK(fs::exists(dir / "a" / "manifest.json"));
    generate_dataset(cfg, (dir / "b").string());
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), dir / "a");
      CHECK(read_file(e.path()) == read_file(dir / "b" / rel));
    }
    const DatasetManifest back = read_manifest((dir / "a" / "manifest.json").string());
    CHECK(back.train == m.train);
    // stats come from the train split only
    std::vector<Drawing> train;
    for (const auto& rel : m.train) train.push_back(read_drawing_file((dir / "a" / rel).string()));
    CHECK(read_stats_file((dir / "a" / m.stats).string()) == build_corpus_stats(train));
  }
}
