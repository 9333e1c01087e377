#include "textspot/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "json.hpp"

#include "textspot/error.hpp"

namespace textspot {

double weighted_iou(const Symbol& a, const Symbol& b, const Drawing& drawing) {
  const int n = static_cast<int>(drawing.primitives.size());
  auto weight = [&](int id) {
    if (id < 0 || id >= n) throw InvalidSymbol("member " + std::to_string(id) + " not in drawing");
    return primitive_weight(drawing.primitives[id]);
  };
  double inter = 0.0, uni = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.members.size() || j < b.members.size()) {
    if (j == b.members.size() || (i < a.members.size() && a.members[i] < b.members[j])) {
      uni += weight(a.members[i++]);
    } else if (i == a.members.size() || b.members[j] < a.members[i]) {
      uni += weight(b.members[j++]);
    } else {
      const double w = weight(a.members[i]);
      inter += w;
      uni += w;
      ++i;
      ++j;
    }
  }
  if (uni <= 0.0) throw InvalidSymbol("weighted IoU of symbols with zero total weight");
  return inter / uni;
}

MatchResult match_symbols(const SymbolSet& pred, const SymbolSet& gt, const Drawing& drawing) {
  std::map<int, std::vector<int>> gt_of_primitive;
  for (std::size_t g = 0; g < gt.size(); ++g) {
    for (int id : gt[g].members) gt_of_primitive[id].push_back(static_cast<int>(g));
  }
  MatchResult m;
  std::vector<bool> gt_used(gt.size(), false);
  for (std::size_t p = 0; p < pred.size(); ++p) {
    std::set<int> candidates;
    for (int id : pred[p].members) {
      auto it = gt_of_primitive.find(id);
      if (it != gt_of_primitive.end()) candidates.insert(it->second.begin(), it->second.end());
    }
    bool matched = false;
    for (int g : candidates) {
      if (gt_used[g] || gt[g].label != pred[p].label) continue;
      const double iou = weighted_iou(pred[p], gt[g], drawing);
      if (iou > 0.5) {
        m.tp.push_back({static_cast<int>(p), g, iou});
        gt_used[g] = true;
        matched = true;
        break;
      }
    }
    if (!matched) m.fp.push_back(static_cast<int>(p));
  }
  for (std::size_t g = 0; g < gt.size(); ++g) {
    if (!gt_used[g]) m.fn.push_back(static_cast<int>(g));
  }
  return m;
}

PanopticScores scores_from_counts(long tp, long fp, long fn, double iou_sum) {
  PanopticScores s;
  s.tp = tp;
  s.fp = fp;
  s.fn = fn;
  s.iou_sum = iou_sum;
  s.empty = tp + fp + fn == 0;
  if (s.empty) return s;
  const double denom = tp + 0.5 * fp + 0.5 * fn;
  s.rq = tp / denom;
  s.sq = tp > 0 ? iou_sum / tp : 0.0;
  s.pq = iou_sum / denom;
  if (std::abs(s.pq - s.rq * s.sq) > 1e-12) {
    throw NumericError("metrics", "PQ " + std::to_string(s.pq) + " differs from RQ*SQ " + std::to_string(s.rq * s.sq));
  }
  return s;
}

PanopticScores panoptic_scores(const MatchResult& m) {
  double iou_sum = 0.0;
  for (const auto& p : m.tp) iou_sum += p.iou;
  return scores_from_counts(static_cast<long>(m.tp.size()), static_cast<long>(m.fp.size()),
                            static_cast<long>(m.fn.size()), iou_sum);
}

double F1Counts::precision() const { return tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0; }
double F1Counts::recall() const { return tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0; }
double F1Counts::f1() const {
  const long denom = 2 * tp + fp + fn;
  return denom > 0 ? 2.0 * tp / denom : 0.0;
}

void ReportBuilder::add_tile(const SymbolSet& pred, const SymbolSet& gt, const Drawing& drawing,
                             const std::vector<int>& pred_labels, const std::vector<int>& gt_labels) {
  if (pred_labels.size() != drawing.primitives.size() || gt_labels.size() != drawing.primitives.size()) {
    throw ShapeError("metrics", "label vectors do not cover the drawing");
  }
  const MatchResult m = match_symbols(pred, gt, drawing);
  for (const auto& p : m.tp) {
    auto& c = symbol_counts_[pred[p.pred].label];
    ++c.tp;
    c.iou_sum += p.iou;
  }
  for (int p : m.fp) ++symbol_counts_[pred[p].label].fp;
  for (int g : m.fn) ++symbol_counts_[gt[g].label].fn;
  for (std::size_t i = 0; i < pred_labels.size(); ++i) {
    const int pl = pred_labels[i], gl = gt_labels[i];
    const bool p_cat = classes_.is_category(pl), g_cat = classes_.is_category(gl);
    if (p_cat && pl == gl) {
      ++primitive_counts_[gl].tp;
    } else {
      if (p_cat) ++primitive_counts_[pl].fp;
      if (g_cat) ++primitive_counts_[gl].fn;
    }
  }
  ++tiles_;
}

PanopticReport ReportBuilder::finish() const {
  PanopticReport r;
  r.tiles = tiles_;
  Counts all;
  std::set<int> labels;
  for (const auto& [label, c] : symbol_counts_) {
    all.tp += c.tp;
    all.fp += c.fp;
    all.fn += c.fn;
    all.iou_sum += c.iou_sum;
    labels.insert(label);
  }
  for (const auto& [label, c] : primitive_counts_) {
    r.f1.tp += c.tp;
    r.f1.fp += c.fp;
    r.f1.fn += c.fn;
    labels.insert(label);
  }
  // sum in label order so pooled scores do not depend on tile order
  r.overall = scores_from_counts(all.tp, all.fp, all.fn, all.iou_sum);
  for (int label : labels) {
    ClassReport cr;
    cr.label = label;
    cr.name = classes_.name_of(label);
    if (auto it = symbol_counts_.find(label); it != symbol_counts_.end()) {
      cr.scores = scores_from_counts(it->second.tp, it->second.fp, it->second.fn, it->second.iou_sum);
    }
    if (auto it = primitive_counts_.find(label); it != primitive_counts_.end()) cr.f1 = it->second;
    r.per_class.push_back(cr);
  }
  return r;
}

PanopticReport classwise_report(const MatchResult& m, const SymbolSet& pred, const SymbolSet& gt, const Drawing& drawing,
                                const std::vector<int>& pred_labels, const std::vector<int>& gt_labels) {
  ReportBuilder b(drawing.classes);
  b.add_tile(pred, gt, drawing, pred_labels, gt_labels);
  PanopticReport r = b.finish();
  const PanopticScores direct = panoptic_scores(m);
  if (direct.tp != r.overall.tp || direct.fp != r.overall.fp || direct.fn != r.overall.fn) {
    throw InvalidSymbol("match result does not belong to these symbol sets");
  }
  return r;
}

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

nlohmann::json scores_json(const PanopticScores& s) {
  return {{"PQ", s.pq}, {"RQ", s.rq}, {"SQ", s.sq}, {"TP", s.tp}, {"FP", s.fp}, {"FN", s.fn}, {"empty", s.empty}};
}

nlohmann::json f1_json(const F1Counts& f) {
  return {{"F1", f.f1()}, {"precision", f.precision()}, {"recall", f.recall()}, {"TP", f.tp}, {"FP", f.fp}, {"FN", f.fn}};
}

}  // namespace

std::string report_text(const PanopticReport& r) {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %7s %7s %7s %7s %6s %6s %6s\n", "class", "PQ", "RQ", "SQ", "F1", "TP", "FP", "FN");
  out += line;
  auto row = [&](const std::string& name, const PanopticScores& s, const F1Counts& f) {
    std::snprintf(line, sizeof line, "%-16s %7s %7s %7s %7s %6ld %6ld %6ld\n", name.c_str(), fixed4(s.pq).c_str(),
                  fixed4(s.rq).c_str(), fixed4(s.sq).c_str(), fixed4(f.f1()).c_str(), s.tp, s.fp, s.fn);
    out += line;
  };
  for (const auto& c : r.per_class) row(c.name, c.scores, c.f1);
  row("overall", r.overall, r.f1);
  out += "PQ=" + fixed4(r.overall.pq) + " RQ=" + fixed4(r.overall.rq) + " SQ=" + fixed4(r.overall.sq) +
         " F1=" + fixed4(r.f1.f1()) + " tiles=" + std::to_string(r.tiles) + "\n";
  return out;
}

std::string report_json(const PanopticReport& r) {
  nlohmann::json j;
  j["overall"] = scores_json(r.overall);
  j["primitive_f1"] = f1_json(r.f1);
  j["tiles"] = r.tiles;
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    classes.push_back({{"label", c.label}, {"name", c.name}, {"scores", scores_json(c.scores)}, {"primitive_f1", f1_json(c.f1)}});
  }
  j["classes"] = classes;
  return j.dump(2) + "\n";
}

}  // namespace textspot
