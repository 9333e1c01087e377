#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "textspot/cli.hpp"
#include "textspot/error.hpp"
#include "textspot/graph.hpp"
#include "textspot/ingest.hpp"
#include "textspot/metrics.hpp"
#include "textspot/spotting.hpp"
#include "textspot/synth.hpp"
#include "textspot/trainer.hpp"

namespace py = pybind11;
using namespace textspot;

namespace {

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw ConfigError("python", "unknown split '" + s + "'");
}

std::string evaluate_json(const std::string& pred_text, const std::string& gt_text) {
  const Drawing pred = parse_drawing(pred_text, DrawingFormat::kCanonicalJson).drawing;
  const Drawing gt = parse_drawing(gt_text, DrawingFormat::kCanonicalJson).drawing;
  if (pred.primitives.size() != gt.primitives.size()) throw SchemaError("prediction and ground truth differ in size");
  ReportBuilder b(gt.classes);
  b.add_tile(ground_truth_symbols(pred), ground_truth_symbols(gt), gt, drawing_labels(pred), drawing_labels(gt));
  return report_json(b.finish());
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Panoptic symbol spotting for vector CAD drawings";
  py::register_exception<Error>(m, "TextspotError");

  m.def("panoptic_quality", &panoptic_quality, py::arg("rq"), py::arg("sq"));
  m.def(
      "scores_from_counts",
      [](long tp, long fp, long fn, double iou_sum) {
        const PanopticScores s = scores_from_counts(tp, fp, fn, iou_sum);
        return py::dict(py::arg("PQ") = s.pq, py::arg("RQ") = s.rq, py::arg("SQ") = s.sq, py::arg("empty") = s.empty);
      },
      py::arg("tp"), py::arg("fp"), py::arg("fn"), py::arg("iou_sum"));
  m.def("evaluate_json", &evaluate_json, py::arg("pred"), py::arg("gt"),
        "Report JSON for two canonical-json drawings with the same primitives.");
  m.def(
      "canonicalize",
      [](const std::string& text, const std::string& format) {
        return serialize_drawing(parse_drawing(text, parse_format_name(format)).drawing);
      },
      py::arg("text"), py::arg("format") = "canonical-json");
  m.def(
      "synth_tile",
      [](std::uint64_t seed, const std::string& split, int index) {
        SynthConfig cfg;
        cfg.seed = seed;
        return serialize_drawing(generate_tile(cfg, parse_split(split), index));
      },
      py::arg("seed") = 7, py::arg("split") = "train", py::arg("index") = 0);
  m.def(
      "knn",
      [](const std::vector<std::pair<double, double>>& points, int k) {
        std::vector<Point> pts;
        for (const auto& [x, y] : points) pts.push_back({x, y});
        return knn_neighbors(pts, k).rows;
      },
      py::arg("points"), py::arg("k"));
  m.def(
      "gradcheck",
      [](int n, std::uint64_t seed, bool literal) {
        py::gil_scoped_release release;
        return gradcheck_pipeline(n, seed, literal).result.max_rel_error;
      },
      py::arg("n") = 12, py::arg("seed") = 7, py::arg("literal_eq4") = false);
  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "textspot");
        std::ostringstream out, err;
        const int code = run(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the command-line tool in process; returns (exit code, stdout, stderr).");
  m.attr("DEFAULT_CLUSTER_RADIUS") = kDefaultClusterRadius;
}
