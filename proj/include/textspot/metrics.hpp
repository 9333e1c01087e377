#pragma once

#include <map>
#include <string>
#include <vector>

#include "textspot/model.hpp"

namespace textspot {

// sum of ln(1 + L) over the intersection divided by the same over the union.
// Members index primitives of `drawing`.
double weighted_iou(const Symbol& a, const Symbol& b, const Drawing& drawing);

struct MatchPair {
  int pred = 0;  // index into the prediction set
  int gt = 0;    // index into the ground-truth set
  double iou = 0.0;
};

struct MatchResult {
  std::vector<MatchPair> tp;
  std::vector<int> fp;  // unmatched prediction indices
  std::vector<int> fn;  // unmatched ground-truth indices
};

// Pairs with equal labels and IoU > 0.5. A symbol can overlap more than half
// of at most one counterpart, so the pairing is unique.
MatchResult match_symbols(const SymbolSet& pred, const SymbolSet& gt, const Drawing& drawing);

struct PanopticScores {
  double pq = 0.0;
  double rq = 0.0;
  double sq = 0.0;
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double iou_sum = 0.0;
  bool empty = true;  // no symbols on either side
};

// RQ = TP / (TP + FP/2 + FN/2), SQ = mean TP IoU (0 without TP) and
// PQ = sum IoU / (TP + FP/2 + FN/2). Throws NumericError if PQ and RQ * SQ
// disagree by more than 1e-12.
PanopticScores scores_from_counts(long tp, long fp, long fn, double iou_sum);
PanopticScores panoptic_scores(const MatchResult& m);

// PQ from already-computed RQ and SQ.
inline double panoptic_quality(double rq, double sq) { return rq * sq; }

struct F1Counts {
  long tp = 0;
  long fp = 0;
  long fn = 0;
  double precision() const;
  double recall() const;
  double f1() const;
};

struct ClassReport {
  int label = 0;
  std::string name;
  PanopticScores scores;
  F1Counts f1;
};

struct PanopticReport {
  PanopticScores overall;
  F1Counts f1;
  std::vector<ClassReport> per_class;  // classes present in prediction or ground truth
  int tiles = 0;
};

// Pools matches and primitive counts across tiles.
class ReportBuilder {
 public:
  explicit ReportBuilder(ClassTable classes) : classes_(std::move(classes)) {}
  // pred_labels / gt_labels are per primitive of `drawing`.
  void add_tile(const SymbolSet& pred, const SymbolSet& gt, const Drawing& drawing, const std::vector<int>& pred_labels,
                const std::vector<int>& gt_labels);
  PanopticReport finish() const;

 private:
  struct Counts {
    long tp = 0, fp = 0, fn = 0;
    double iou_sum = 0.0;
  };
  ClassTable classes_;
  std::map<int, Counts> symbol_counts_;
  std::map<int, F1Counts> primitive_counts_;
  int tiles_ = 0;
};

// Single-drawing report.
PanopticReport classwise_report(const MatchResult& m, const SymbolSet& pred, const SymbolSet& gt, const Drawing& drawing,
                                const std::vector<int>& pred_labels, const std::vector<int>& gt_labels);

std::string report_text(const PanopticReport& r);
std::string report_json(const PanopticReport& r);

}  // namespace textspot
