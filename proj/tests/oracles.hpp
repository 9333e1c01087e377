#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "textspot/metrics.hpp"
#include "textspot/model.hpp"

namespace oracles {

using namespace textspot;

// IoU straight from the definition using std::set algebra.
inline double set_iou(const Symbol& a, const Symbol& b, const Drawing& d) {
  const std::set<int> sa(a.members.begin(), a.members.end()), sb(b.members.begin(), b.members.end());
  double inter = 0, uni = 0;
  std::set<int> all = sa;
  all.insert(sb.begin(), sb.end());
  for (int id : all) {
    const double w = std::log(1.0 + primitive_length(d.primitives[id]));
    uni += w;
    if (sa.count(id) && sb.count(id)) inter += w;
  }
  return uni > 0 ? inter / uni : 0.0;
}

// All-pairs kNN: stable sort of every other index by squared distance, so
// ties keep the smaller index first.
inline std::vector<std::vector<int>> brute_knn(const std::vector<Point>& c, int k) {
  const int n = static_cast<int>(c.size());
  std::vector<std::vector<int>> rows(n);
  for (int i = 0; i < n; ++i) {
    std::vector<int> idx;
    for (int j = 0; j < n; ++j)
      if (j != i) idx.push_back(j);
    auto d2 = [&](int j) { return (c[j].x - c[i].x) * (c[j].x - c[i].x) + (c[j].y - c[i].y) * (c[j].y - c[i].y); };
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return d2(a) < d2(b); });
    idx.resize(std::min<std::size_t>(idx.size(), k));
    rows[i] = idx;
  }
  return rows;
}

struct BestMatching {
  int count = 0;
  double iou_sum = 0.0;
  std::vector<std::pair<int, int>> pairs;
};

// Exhaustive search over every partial one-to-one pairing of predictions to
// ground truth; a pair scores only when labels agree and IoU > 0.5. Best is
// most scoring pairs, then largest IoU sum.
inline BestMatching brute_force_matching(const SymbolSet& pred, const SymbolSet& gt, const Drawing& d) {
  std::vector<std::vector<double>> iou(pred.size(), std::vector<double>(gt.size(), 0.0));
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (std::size_t j = 0; j < gt.size(); ++j) iou[i][j] = set_iou(pred[i], gt[j], d);
  BestMatching best;
  std::vector<char> used(gt.size(), 0);
  std::vector<std::pair<int, int>> cur;
  std::function<void(std::size_t, int, double)> rec = [&](std::size_t i, int count, double sum) {
    if (i == pred.size()) {
      if (count > best.count || (count == best.count && sum > best.iou_sum + 1e-15)) {
        best = {count, sum, cur};
      }
      return;
    }
    rec(i + 1, count, sum);
    for (std::size_t j = 0; j < gt.size(); ++j) {
      if (used[j]) continue;
      const bool scores = pred[i].label == gt[j].label && iou[i][j] > 0.5;
      if (!scores) continue;  // non-scoring pairs never improve the objective
      used[j] = 1;
      cur.emplace_back(static_cast<int>(i), static_cast<int>(j));
      rec(i + 1, count + 1, sum + iou[i][j]);
      cur.pop_back();
      used[j] = 0;
    }
  };
  rec(0, 0, 0.0);
  return best;
}

struct SymbolPair {
  Drawing drawing;
  SymbolSet pred;
  SymbolSet gt;
};

// Random drawing of at most 12 lines with a ground-truth symbol set and a
// prediction derived from it by moving, dropping and relabeling members.
inline SymbolPair random_symbol_pair(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(1, 12), lab(1, 3), coin(0, 99);
  std::uniform_real_distribution<double> len(0.05, 5.0);
  SymbolPair out;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    Primitive p;
    p.id = i;
    p.geometry = Line{0, static_cast<double>(i), len(rng), static_cast<double>(i)};
    out.drawing.primitives.push_back(p);
  }
  const int groups = 1 + static_cast<int>(rng() % 5);
  std::vector<int> gt_group(n), pred_group(n);
  for (int i = 0; i < n; ++i) {
    gt_group[i] = coin(rng) < 15 ? -1 : static_cast<int>(rng() % groups);
    const int c = coin(rng);
    if (c < 60) pred_group[i] = gt_group[i];
    else if (c < 75) pred_group[i] = -1;
    else pred_group[i] = static_cast<int>(rng() % (groups + 3));
  }
  std::vector<int> gt_label(groups + 3), pred_label(groups + 3);
  for (int g = 0; g < groups + 3; ++g) {
    gt_label[g] = lab(rng);
    pred_label[g] = coin(rng) < 80 ? gt_label[g] : lab(rng);
  }
  auto build = [&](const std::vector<int>& group, const std::vector<int>& label) {
    std::map<int, Symbol> m;
    for (int i = 0; i < n; ++i) {
      if (group[i] < 0) continue;
      Symbol& s = m[group[i]];
      s.label = label[group[i]];
      s.instance = group[i];
      s.members.push_back(i);
    }
    SymbolSet set;
    for (auto& [k, s] : m) set.push_back(s);
    std::shuffle(set.begin(), set.end(), rng);
    return set;
  };
  out.gt = build(gt_group, gt_label);
  out.pred = build(pred_group, pred_label);
  return out;
}

}  // namespace oracles
