#include <random>

#include "doctest.h"
#include "support.hpp"
#include "textspot/error.hpp"
#include "textspot/text_filter.hpp"

using namespace textspot;
using namespace testsupport;

namespace {

Drawing tile_with_texts(const std::vector<std::string>& texts) {
  Drawing d;
  d.classes = small_classes();
  d.primitives.push_back(line_prim(0, 0, 0, 1, 0, 1, 0));
  for (const auto& t : texts) {
    d.primitives.push_back(text_prim(static_cast<int>(d.size()), 0, 0, 1, 1, t, d.classes.annotation_label()));
  }
  d.primitives.push_back(line_prim(static_cast<int>(d.size()), 0, 0, 0, 1, 3));
  return d;
}

}  // namespace

TEST_SUITE("text-integration") {
  TEST_CASE("token normalization") {
    CHECK(normalize_token("Bedroom 12") == "bedroom #");
    CHECK(normalize_token("  WC ") == "wc");
    CHECK(normalize_token("A-101-B") == "a-#-b");
    CHECK(normalize_token("DINING   TABLE") == "dining table");
    CHECK(normalize_token("") == "");
  }

  TEST_CASE("corpus stats") {
    const std::vector<Drawing> tiles = {tile_with_texts({"wc"}), tile_with_texts({"WC"}), tile_with_texts({"door"})};
    const CorpusStats s = build_corpus_stats(tiles);
    CHECK(s.counts.size() == 2);
    CHECK(s.count("wc") == 2);
    CHECK(s.count("door") == 1);
    CHECK(s.documents == 3);
    CHECK(build_corpus_stats({}).counts.empty());
    std::vector<std::string> ten(10, "Bedroom 3");
    CHECK(build_corpus_stats({tile_with_texts(ten)}).count("bedroom #") == 10);
  }

  TEST_CASE("stats file round trip and merge") {
    const CorpusStats a = build_corpus_stats({tile_with_texts({"wc", "door", "Bedroom 1"})});
    const CorpusStats b = build_corpus_stats({tile_with_texts({"wc", "window"})});
    CHECK(parse_stats(serialize_stats(a)) == a);
    CorpusStats ab = a;
    ab.merge(b);
    CHECK(ab == build_corpus_stats({tile_with_texts({"wc", "door", "Bedroom 1"}), tile_with_texts({"wc", "window"})}));
    CHECK_THROWS_AS(parse_stats("nonsense\n"), SchemaError);
    CorpusStats other = b;
    other.version = "norm-v0";
    CHECK_THROWS_AS(ab.merge(other), ConfigError);
    const auto top = ab.top(2);
    REQUIRE(top.size() == 2);
    CHECK(top[0].first == "wc");
    CHECK(top[1].first == "bedroom #");  // ties by token
  }

  TEST_CASE("filter threshold") {
    CorpusStats s;
    s.counts = {{"bedroom", 10}, {"xz#q", 1}};
    const Drawing t = tile_with_texts({"Bedroom", "xz9q"});
    TextFilterConfig cfg;
    cfg.min_count = 2;
    const Drawing f = filter_text_primitives(t, s, cfg);
    REQUIRE(f.size() == 3);
    CHECK(std::get<Text>(f.primitives[1].geometry).content == "Bedroom");
    CHECK(f.meta.source_ids == std::vector<int>{0, 1, 3});
    CHECK(validate_drawing(f).empty());

    cfg.min_count = 1;
    const Drawing all = filter_text_primitives(t, s, cfg);
    CHECK(all.primitives == t.primitives);

    const Drawing geom = tile_with_texts({});
    CHECK(filter_text_primitives(geom, s, cfg).primitives == geom.primitives);

    cfg.min_count = 0;
    CHECK_THROWS_AS(filter_text_primitives(t, s, cfg), ConfigError);
  }

  TEST_CASE("filter is monotone and keeps geometry intact") {
    std::mt19937_64 rng(9);
    std::vector<Drawing> corpus;
    for (int i = 0; i < 20; ++i) corpus.push_back(random_drawing(rng, 25));
    const CorpusStats s = build_corpus_stats(corpus);
    for (const Drawing& d : corpus) {
      std::size_t prev_text = d.size() + 1;
      for (std::int64_t m = 1; m <= 40; m += 3) {
        TextFilterConfig cfg;
        cfg.min_count = m;
        const Drawing f = filter_text_primitives(d, s, cfg);
        std::size_t text = 0;
        std::vector<Primitive> geom_before, geom_after;
        for (const auto& p : f.primitives) text += p.is_text();
        CHECK(text <= prev_text);
        prev_text = text;
        for (std::size_t i = 0; i < f.size(); ++i) {
          if (f.primitives[i].is_text()) continue;
          Primitive orig = d.primitives[f.meta.source_ids[i]];
          orig.id = f.primitives[i].id;
          CHECK(orig == f.primitives[i]);
        }
        CHECK(filter_text_primitives(d, s, cfg) == f);
      }
    }
  }

  TEST_CASE("strip removes all text") {
    const Drawing t = tile_with_texts({"a", "b"});
    const Drawing s = strip_text_primitives(t);
    CHECK(s.size() == 2);
    for (const auto& p : s.primitives) CHECK_FALSE(p.is_text());
    CHECK(s.meta.source_ids == std::vector<int>{0, 3});
  }
}
