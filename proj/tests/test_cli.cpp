#include <sstream>

#include "doctest.h"
#include "support.hpp"
#include "textspot/cli.hpp"
#include "textspot/ingest.hpp"
#include "textspot/synth.hpp"

using namespace textspot;
using namespace testsupport;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "textspot");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("eval of a drawing against itself") {
    const auto dir = scratch_dir("cli-eval");
    const std::string gt = (dir / "gt.json").string();
    write_drawing_file(gt, generate_tile(SynthConfig{}, Split::kTest, 0));
    const std::string json = (dir / "report.json").string();
    const Run r = cli({"eval", "--pred", gt, "--gt", gt, "--json", json});
    CHECK(r.code == 0);
    CHECK(r.out.find("PQ=1.0000") != std::string::npos);
    CHECK(r.out.rfind("# resolved config\n", 0) == 0);
    CHECK(read_file(json).find("\"PQ\"") != std::string::npos);
  }

  TEST_CASE("exit codes") {
    CHECK(cli({"eval", "--bogus"}).code == 2);
    CHECK(cli({}).code == 2);
    CHECK(cli({"--help"}).code == 0);
    const Run missing = cli({"eval", "--pred", "/nonexistent/a.json", "--gt", "/nonexistent/b.json"});
    CHECK(missing.code == 1);
    CHECK_FALSE(missing.err.empty());

    const auto dir = scratch_dir("cli-bad");
    write_file(dir / "bad.json", "{\"primitives\": [");
    CHECK(cli({"ingest", "--in", (dir / "bad.json").string(), "--out", (dir / "t").string()}).code == 1);
  }

  TEST_CASE("synth and ingest are byte-reproducible") {
    const auto dir = scratch_dir("cli-synth");
    for (const char* sub : {"a", "b"})
      REQUIRE(cli({"--seed", "3", "synth", "--tiles", "3,1,1", "--out", (dir / sub).string()}).code == 0);
    CHECK(read_file(dir / "a" / "manifest.json") == read_file(dir / "b" / "manifest.json"));
    CHECK(read_file(dir / "a" / "stats.tsv") == read_file(dir / "b" / "stats.tsv"));

    const std::string tile = (dir / "a" / "train" / "0000.json").string();
    const Run ing = cli({"ingest", "--in", tile, "--out", (dir / "tiles").string(), "--tile-size", "7"});
    CHECK(ing.code == 0);
    CHECK(ing.out.find("wrote ") != std::string::npos);

    const Run show = cli({"stats", "show", "--stats", (dir / "a" / "stats.tsv").string(), "--top", "3"});
    CHECK(show.code == 0);
  }

  TEST_CASE("gradcheck subcommand") {
    const Run r = cli({"--seed", "7", "gradcheck", "--n", "12"});
    CHECK(r.code == 0);
    CHECK(r.out.find("max relative error") != std::string::npos);
  }
}
