#include "textspot/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "textspot/binary_io.hpp"
#include "textspot/error.hpp"

namespace textspot::ad {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

using NodePtr = std::shared_ptr<Node>;

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError("autodiff", op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

Tensor make(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
            std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward = std::move(backward);
  }
  return Tensor(std::move(n));
}

bool is_suffix(const Shape& whole, const Shape& tail) {
  if (tail.size() > whole.size()) return false;
  return std::equal(tail.begin(), tail.end(), whole.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

Shape with_last(Shape s, int last) {
  s.back() = last;
  return s;
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  std::vector<double> values(shape_numel(shape), v);
  return from(std::move(shape), std::move(values), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("autodiff", "payload of " + std::to_string(values.size()) + " for shape " + shape_str(shape));
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

int Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeError("autodiff", "axis out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("autodiff", "item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

void backward(const Tensor& root, TraversalOrder order) {
  if (root.numel() != 1) throw ShapeError("autodiff", "backward needs a scalar root, got " + shape_str(root.shape()));
  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const std::size_t idx = order == TraversalOrder::kParentsInOrder ? next : node->parents.size() - 1 - next;
      ++next;
      Node* p = node->parents[idx].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }
  Node& r = *root.node();
  r.grad_buffer()[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward) {
      n->grad_buffer();
      n->backward(*n);
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || b.rank() != 2 || a.dim(-1) != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
  const int k = b.dim(0), m = b.dim(1);
  const int rows = static_cast<int>(a.numel() / static_cast<std::size_t>(k));
  std::vector<double> out(static_cast<std::size_t>(rows) * m);
  MapMat(out.data(), rows, m).noalias() =
      ConstMapMat(a.values().data(), rows, k) * ConstMapMat(b.values().data(), k, m);
  NodePtr an = a.node(), bn = b.node();
  return make(with_last(a.shape(), m), std::move(out), {an, bn}, [an, bn, rows, k, m](Node& self) {
    ConstMapMat g(self.grad.data(), rows, m);
    if (an->requires_grad) {
      MapMat(an->grad_buffer().data(), rows, k).noalias() += g * ConstMapMat(bn->value.data(), k, m).transpose();
    }
    if (bn->requires_grad) {
      MapMat(bn->grad_buffer().data(), k, m).noalias() += ConstMapMat(an->value.data(), rows, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("autodiff", "transpose needs rank 2, got " + shape_str(a.shape()));
  return swap_last2(a);
}

namespace {

Tensor add_impl(const Tensor& a, const Tensor& b, double sign, const char* name) {
  if (a.shape() != b.shape() && !is_suffix(a.shape(), b.shape())) {
    if (is_suffix(b.shape(), a.shape()) && sign > 0) return add_impl(b, a, sign, name);
    shape_fail(name, a.shape(), b.shape());
  }
  const std::size_t inner = b.numel();
  std::vector<double> out(a.values().begin(), a.values().end());
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += sign * bv[i % inner];
  NodePtr an = a.node(), bn = b.node();
  return make(a.shape(), std::move(out), {an, bn}, [an, bn, inner, sign](Node& self) {
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % inner] += sign * self.grad[i];
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return add_impl(a, b, 1.0, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return add_impl(a, b, -1.0, "sub"); }

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() && !is_suffix(a.shape(), b.shape())) {
    if (is_suffix(b.shape(), a.shape())) return mul(b, a);
    shape_fail("mul", a.shape(), b.shape());
  }
  const std::size_t inner = b.numel();
  std::vector<double> out(a.numel());
  const auto av = a.values(), bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i % inner];
  NodePtr an = a.node(), bn = b.node();
  return make(a.shape(), std::move(out), {an, bn}, [an, bn, inner](Node& self) {
    if (an->requires_grad) {
      auto& ga = an->grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * bn->value[i % inner];
    }
    if (bn->requires_grad) {
      auto& gb = bn->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i % inner] += self.grad[i] * an->value[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v *= s;
  NodePtr an = a.node();
  return make(a.shape(), std::move(out), {an}, [an, s](Node& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * self.grad[i];
  });
}

Tensor relu(const Tensor& a) {
  std::vector<double> out(a.values().begin(), a.values().end());
  for (auto& v : out) v = v > 0 ? v : 0.0;
  NodePtr an = a.node();
  return make(a.shape(), std::move(out), {an}, [an](Node& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) {
      if (an->value[i] > 0) ga[i] += self.grad[i];
    }
  });
}

Tensor softmax_lastdim(const Tensor& a, std::span<const std::uint8_t> mask) {
  if (a.rank() < 1) throw ShapeError("autodiff", "softmax needs rank >= 1");
  if (!mask.empty() && mask.size() != a.numel()) {
    throw ShapeError("autodiff", "softmax mask of " + std::to_string(mask.size()) + " for " + shape_str(a.shape()));
  }
  const std::size_t len = static_cast<std::size_t>(a.dim(-1));
  const std::size_t rows = len ? a.numel() / len : 0;
  std::vector<double> out(a.numel(), 0.0);
  const auto x = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * len;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < len; ++j) {
      if (mask.empty() || mask[base + j]) mx = std::max(mx, x[base + j]);
    }
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw NumericError("autodiff", "softmax row " + std::to_string(r) + " has every slot masked");
    }
    double z = 0.0;
    for (std::size_t j = 0; j < len; ++j) {
      if (mask.empty() || mask[base + j]) z += (out[base + j] = std::exp(x[base + j] - mx));
    }
    for (std::size_t j = 0; j < len; ++j) out[base + j] /= z;
  }
  NodePtr an = a.node();
  return make(a.shape(), out, {an}, [an, out, len, rows](Node& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * len;
      double dot = 0.0;
      for (std::size_t j = 0; j < len; ++j) dot += out[base + j] * self.grad[base + j];
      for (std::size_t j = 0; j < len; ++j) ga[base + j] += out[base + j] * (self.grad[base + j] - dot);
    }
  });
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("autodiff", "concat of nothing");
  Shape lead = parts[0].shape();
  lead.pop_back();
  int total = 0;
  std::vector<int> widths;
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) {
    Shape l = p.shape();
    l.pop_back();
    if (l != lead) shape_fail("concat_lastdim", parts[0].shape(), p.shape());
    widths.push_back(p.dim(-1));
    total += p.dim(-1);
    nodes.push_back(p.node());
  }
  const std::size_t rows = shape_numel(lead);
  std::vector<double> out(rows * static_cast<std::size_t>(total));
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const auto v = parts[p].values();
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(r * widths[p]), widths[p],
                  out.begin() + static_cast<std::ptrdiff_t>(r * total + off));
      off += widths[p];
    }
  }
  Shape shape = lead;
  shape.push_back(total);
  return make(shape, std::move(out), nodes, [nodes, widths, rows, total](Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < nodes.size(); ++p) {
      if (nodes[p]->requires_grad) {
        auto& g = nodes[p]->grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (int c = 0; c < widths[p]; ++c) g[r * widths[p] + c] += self.grad[r * total + off + c];
        }
      }
      off += widths[p];
    }
  });
}

Tensor gather_rows(const Tensor& a, std::span<const int> rows) {
  if (a.rank() != 2) throw ShapeError("autodiff", "gather_rows needs rank 2, got " + shape_str(a.shape()));
  const int n = a.dim(0), d = a.dim(1);
  std::vector<int> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * d, 0.0);
  const auto v = a.values();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < -1 || idx[r] >= n) throw ShapeError("autodiff", "gather index " + std::to_string(idx[r]) + " out of range");
    if (idx[r] >= 0) std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(idx[r]) * d, d, out.begin() + static_cast<std::ptrdiff_t>(r) * d);
  }
  NodePtr an = a.node();
  return make({static_cast<int>(idx.size()), d}, std::move(out), {an}, [an, idx, d](Node& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      if (idx[r] < 0) continue;
      for (int c = 0; c < d; ++c) ga[static_cast<std::size_t>(idx[r]) * d + c] += self.grad[r * d + c];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) shape_fail("reshape", a.shape(), shape);
  NodePtr an = a.node();
  return make(std::move(shape), an->value, {an}, [an](Node& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor swap_last2(const Tensor& a) {
  if (a.rank() < 2) throw ShapeError("autodiff", "swap_last2 needs rank >= 2");
  const int p = a.dim(-2), q = a.dim(-1);
  const std::size_t block = static_cast<std::size_t>(p) * q;
  const std::size_t batches = a.numel() / block;
  std::vector<double> out(a.numel());
  const auto v = a.values();
  for (std::size_t b = 0; b < batches; ++b) {
    for (int i = 0; i < p; ++i) {
      for (int j = 0; j < q; ++j) out[b * block + j * p + i] = v[b * block + i * q + j];
    }
  }
  Shape shape = a.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  NodePtr an = a.node();
  return make(shape, std::move(out), {an}, [an, p, q, block, batches](Node& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t b = 0; b < batches; ++b) {
      for (int i = 0; i < p; ++i) {
        for (int j = 0; j < q; ++j) ga[b * block + i * q + j] += self.grad[b * block + j * p + i];
      }
    }
  });
}

Tensor l2_norm_rows(const Tensor& a) {
  constexpr double kMinNorm = 1e-12;
  const std::size_t d = static_cast<std::size_t>(a.dim(-1));
  const std::size_t rows = d ? a.numel() / d : 0;
  std::vector<double> out(a.numel());
  std::vector<double> norms(rows);
  const auto x = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += x[r * d + c] * x[r * d + c];
    norms[r] = std::max(std::sqrt(s), kMinNorm);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = x[r * d + c] / norms[r];
  }
  NodePtr an = a.node();
  return make(a.shape(), out, {an}, [an, out, norms, d, rows](Node& self) {
    auto& ga = an->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += out[r * d + c] * self.grad[r * d + c];
      for (std::size_t c = 0; c < d; ++c) {
        ga[r * d + c] += (self.grad[r * d + c] - out[r * d + c] * dot) / norms[r];
      }
    }
  });
}

Tensor row_norms(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("autodiff", "row_norms needs rank 2, got " + shape_str(a.shape()));
  const int rows = a.dim(0), d = a.dim(1);
  std::vector<double> out(rows);
  const auto x = a.values();
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    for (int c = 0; c < d; ++c) s += x[r * d + c] * x[r * d + c];
    out[r] = std::sqrt(s);
  }
  NodePtr an = a.node();
  return make({rows}, out, {an}, [an, out, rows, d](Node& self) {
    auto& ga = an->grad_buffer();
    for (int r = 0; r < rows; ++r) {
      if (out[r] == 0.0) continue;
      for (int c = 0; c < d; ++c) ga[r * d + c] += self.grad[r] * an->value[r * d + c] / out[r];
    }
  });
}

Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets, std::span<const double> weights) {
  if (logits.rank() != 2) throw ShapeError("autodiff", "cross_entropy needs (R, C) logits");
  const int rows = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int>(targets.size()) != rows || (!weights.empty() && static_cast<int>(weights.size()) != rows)) {
    throw ShapeError("autodiff", "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                     shape_str(logits.shape()));
  }
  std::vector<double> w(rows, 1.0);
  if (!weights.empty()) w.assign(weights.begin(), weights.end());
  const double total_w = std::accumulate(w.begin(), w.end(), 0.0);
  std::vector<double> probs(logits.numel());
  std::vector<int> tgt(targets.begin(), targets.end());
  const auto x = logits.values();
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    if (tgt[r] < 0 || tgt[r] >= classes) throw ShapeError("autodiff", "cross_entropy target out of range");
    const double* row = &x[static_cast<std::size_t>(r) * classes];
    const double mx = *std::max_element(row, row + classes);
    double z = 0.0;
    for (int c = 0; c < classes; ++c) z += (probs[r * classes + c] = std::exp(row[c] - mx));
    for (int c = 0; c < classes; ++c) probs[r * classes + c] /= z;
    if (total_w > 0) loss += w[r] * (std::log(z) + mx - row[tgt[r]]);
  }
  if (total_w > 0) loss /= total_w;
  NodePtr ln = logits.node();
  return make({}, {loss}, {ln}, [ln, probs, tgt, w, total_w, rows, classes](Node& self) {
    if (total_w <= 0) return;
    auto& g = ln->grad_buffer();
    for (int r = 0; r < rows; ++r) {
      const double s = self.grad[0] * w[r] / total_w;
      for (int c = 0; c < classes; ++c) {
        g[r * classes + c] += s * (probs[r * classes + c] - (c == tgt[r] ? 1.0 : 0.0));
      }
    }
  });
}

Tensor sum(const Tensor& a) {
  const auto v = a.values();
  const double s = std::accumulate(v.begin(), v.end(), 0.0);
  NodePtr an = a.node();
  return make({}, {s}, {an}, [an](Node& self) {
    for (auto& g : an->grad_buffer()) g += self.grad[0];
  });
}

Tensor weighted_sum(const Tensor& a, std::span<const double> w) {
  if (w.size() != a.numel()) throw ShapeError("autodiff", "weighted_sum weights do not match " + shape_str(a.shape()));
  std::vector<double> weights(w.begin(), w.end());
  const auto v = a.values();
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * v[i];
  NodePtr an = a.node();
  return make({}, {s}, {an}, [an, weights](Node& self) {
    auto& g = an->grad_buffer();
    for (std::size_t i = 0; i < weights.size(); ++i) g[i] += self.grad[0] * weights[i];
  });
}

Tensor layer_norm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
  const int d = a.dim(-1);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) shape_fail("layer_norm", a.shape(), gamma.shape());
  const std::size_t rows = a.numel() / d;
  std::vector<double> xhat(a.numel()), inv_std(rows), out(a.numel());
  const auto x = a.values();
  const auto gv = gamma.values(), bv = beta.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = &x[r * d];
    double mean = 0.0;
    for (int c = 0; c < d; ++c) mean += row[c];
    mean /= d;
    double var = 0.0;
    for (int c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= d;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (int c = 0; c < d; ++c) {
      xhat[r * d + c] = (row[c] - mean) * inv_std[r];
      out[r * d + c] = gv[c] * xhat[r * d + c] + bv[c];
    }
  }
  NodePtr an = a.node(), gn = gamma.node(), bn = beta.node();
  return make(a.shape(), std::move(out), {an, gn, bn}, [an, gn, bn, xhat, inv_std, rows, d](Node& self) {
    const auto& g = self.grad;
    if (gn->requires_grad || bn->requires_grad) {
      auto& gg = gn->grad_buffer();
      auto& gb = bn->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (int c = 0; c < d; ++c) {
          gg[c] += g[r * d + c] * xhat[r * d + c];
          gb[c] += g[r * d + c];
        }
      }
    }
    if (!an->requires_grad) return;
    auto& ga = an->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_dx = 0.0, mean_dx_xhat = 0.0;
      for (int c = 0; c < d; ++c) {
        const double dxhat = g[r * d + c] * gn->value[c];
        mean_dx += dxhat;
        mean_dx_xhat += dxhat * xhat[r * d + c];
      }
      mean_dx /= d;
      mean_dx_xhat /= d;
      for (int c = 0; c < d; ++c) {
        const double dxhat = g[r * d + c] * gn->value[c];
        ga[r * d + c] += inv_std[r] * (dxhat - mean_dx - xhat[r * d + c] * mean_dx_xhat);
      }
    }
  });
}

Tensor neighbor_scores(const Tensor& q, const Tensor& keys, int heads) {
  if (q.rank() != 2 || keys.rank() != 3 || keys.dim(0) != q.dim(0) || keys.dim(2) != q.dim(1)) {
    shape_fail("neighbor_scores", q.shape(), keys.shape());
  }
  const int n = q.dim(0), d = q.dim(1), k = keys.dim(1);
  if (heads < 1 || d % heads != 0) throw ShapeError("autodiff", "model dim not divisible by heads");
  const int dh = d / heads;
  std::vector<double> out(static_cast<std::size_t>(n) * k * heads, 0.0);
  const auto qv = q.values(), kv = keys.values();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) {
      const double* kr = &kv[(static_cast<std::size_t>(i) * k + j) * d];
      const double* qr = &qv[static_cast<std::size_t>(i) * d];
      for (int l = 0; l < heads; ++l) {
        double s = 0.0;
        for (int c = l * dh; c < (l + 1) * dh; ++c) s += qr[c] * kr[c];
        out[(static_cast<std::size_t>(i) * k + j) * heads + l] = s;
      }
    }
  }
  NodePtr qn = q.node(), kn = keys.node();
  return make({n, k, heads}, std::move(out), {qn, kn}, [qn, kn, n, d, k, heads, dh](Node& self) {
    const auto& g = self.grad;
    std::vector<double>* gq = qn->requires_grad ? &qn->grad_buffer() : nullptr;
    std::vector<double>* gk = kn->requires_grad ? &kn->grad_buffer() : nullptr;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < k; ++j) {
        const std::size_t slot = static_cast<std::size_t>(i) * k + j;
        for (int l = 0; l < heads; ++l) {
          const double gs = g[slot * heads + l];
          if (gs == 0.0) continue;
          for (int c = l * dh; c < (l + 1) * dh; ++c) {
            if (gq) (*gq)[static_cast<std::size_t>(i) * d + c] += gs * kn->value[slot * d + c];
            if (gk) (*gk)[slot * d + c] += gs * qn->value[static_cast<std::size_t>(i) * d + c];
          }
        }
      }
    }
  });
}

Tensor head_aggregate(const Tensor& weights, const Tensor& values) {
  if (weights.rank() != 3 || values.rank() != 3 || weights.dim(0) != values.dim(0) || weights.dim(2) != values.dim(1)) {
    shape_fail("head_aggregate", weights.shape(), values.shape());
  }
  const int n = weights.dim(0), heads = weights.dim(1), k = weights.dim(2), d = values.dim(2);
  if (d % heads != 0) throw ShapeError("autodiff", "value dim not divisible by heads");
  const int dh = d / heads;
  std::vector<double> out(static_cast<std::size_t>(n) * d, 0.0);
  const auto wv = weights.values(), vv = values.values();
  for (int i = 0; i < n; ++i) {
    for (int l = 0; l < heads; ++l) {
      for (int j = 0; j < k; ++j) {
        const double w = wv[(static_cast<std::size_t>(i) * heads + l) * k + j];
        if (w == 0.0) continue;
        const double* vr = &vv[(static_cast<std::size_t>(i) * k + j) * d];
        for (int c = l * dh; c < (l + 1) * dh; ++c) out[static_cast<std::size_t>(i) * d + c] += w * vr[c];
      }
    }
  }
  NodePtr wn = weights.node(), vn = values.node();
  return make({n, d}, std::move(out), {wn, vn}, [wn, vn, n, heads, k, d, dh](Node& self) {
    const auto& g = self.grad;
    std::vector<double>* gw = wn->requires_grad ? &wn->grad_buffer() : nullptr;
    std::vector<double>* gv = vn->requires_grad ? &vn->grad_buffer() : nullptr;
    for (int i = 0; i < n; ++i) {
      const double* gr = &g[static_cast<std::size_t>(i) * d];
      for (int l = 0; l < heads; ++l) {
        for (int j = 0; j < k; ++j) {
          const std::size_t wi = (static_cast<std::size_t>(i) * heads + l) * k + j;
          const std::size_t vbase = (static_cast<std::size_t>(i) * k + j) * d;
          if (gw) {
            double s = 0.0;
            for (int c = l * dh; c < (l + 1) * dh; ++c) s += gr[c] * vn->value[vbase + c];
            (*gw)[wi] += s;
          }
          if (gv) {
            const double w = wn->value[wi];
            if (w == 0.0) continue;
            for (int c = l * dh; c < (l + 1) * dh; ++c) (*gv)[vbase + c] += gr[c] * w;
          }
        }
      }
    }
  });
}

Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& b, int stride) {
  if (x.rank() != 3 || w.rank() != 2 || w.dim(0) != 9 * x.dim(2) || b.shape() != Shape{w.dim(1)}) {
    shape_fail("conv3x3", x.shape(), w.shape());
  }
  if (stride < 1) throw ShapeError("autodiff", "conv stride must be >= 1");
  const int h = x.dim(0), wd = x.dim(1), cin = x.dim(2), cout = w.dim(1);
  const int ho = (h - 1) / stride + 1, wo = (wd - 1) / stride + 1;
  const int patch = 9 * cin;
  // im2col
  RowMat cols = RowMat::Zero(static_cast<Eigen::Index>(ho) * wo, patch);
  const auto xv = x.values();
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* dst = cols.row(static_cast<Eigen::Index>(oy) * wo + ox).data();
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = oy * stride + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = ox * stride + kx - 1;
          if (ix < 0 || ix >= wd) continue;
          std::copy_n(&xv[(static_cast<std::size_t>(iy) * wd + ix) * cin], cin, dst + (ky * 3 + kx) * cin);
        }
      }
    }
  }
  std::vector<double> out(static_cast<std::size_t>(ho) * wo * cout);
  MapMat om(out.data(), static_cast<Eigen::Index>(ho) * wo, cout);
  om.noalias() = cols * ConstMapMat(w.values().data(), patch, cout);
  om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.values().data(), cout);
  NodePtr xn = x.node(), wn = w.node(), bn = b.node();
  auto shared_cols = std::make_shared<RowMat>(std::move(cols));
  return make({ho, wo, cout}, std::move(out), {xn, wn, bn},
              [xn, wn, bn, shared_cols, h, wd, cin, cout, ho, wo, patch, stride](Node& self) {
                ConstMapMat g(self.grad.data(), static_cast<Eigen::Index>(ho) * wo, cout);
                if (wn->requires_grad) {
                  MapMat(wn->grad_buffer().data(), patch, cout).noalias() += shared_cols->transpose() * g;
                }
                if (bn->requires_grad) {
                  Eigen::Map<Eigen::RowVectorXd>(bn->grad_buffer().data(), cout) += g.colwise().sum();
                }
                if (!xn->requires_grad) return;
                RowMat dcols = g * ConstMapMat(wn->value.data(), patch, cout).transpose();
                auto& gx = xn->grad_buffer();
                for (int oy = 0; oy < ho; ++oy) {
                  for (int ox = 0; ox < wo; ++ox) {
                    const double* src = dcols.row(static_cast<Eigen::Index>(oy) * wo + ox).data();
                    for (int ky = 0; ky < 3; ++ky) {
                      const int iy = oy * stride + ky - 1;
                      if (iy < 0 || iy >= h) continue;
                      for (int kx = 0; kx < 3; ++kx) {
                        const int ix = ox * stride + kx - 1;
                        if (ix < 0 || ix >= wd) continue;
                        double* dst = &gx[(static_cast<std::size_t>(iy) * wd + ix) * cin];
                        for (int c = 0; c < cin; ++c) dst[c] += src[(ky * 3 + kx) * cin + c];
                      }
                    }
                  }
                }
              });
}

Tensor bilinear_gather(const Tensor& features, std::span<const Point> pixel_points) {
  if (features.rank() != 3) throw ShapeError("autodiff", "bilinear_gather needs (H, W, C) features");
  const int h = features.dim(0), w = features.dim(1), c = features.dim(2);
  struct Tap {
    std::size_t offset[4];
    double weight[4];
  };
  std::vector<Tap> taps(pixel_points.size());
  std::vector<double> out(pixel_points.size() * c, 0.0);
  const auto f = features.values();
  for (std::size_t p = 0; p < pixel_points.size(); ++p) {
    const double px = std::clamp(pixel_points[p].x, 0.0, static_cast<double>(w - 1));
    const double py = std::clamp(pixel_points[p].y, 0.0, static_cast<double>(h - 1));
    const int x0 = std::min(static_cast<int>(std::floor(px)), w - 1);
    const int y0 = std::min(static_cast<int>(std::floor(py)), h - 1);
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double fx = px - x0, fy = py - y0;
    Tap& t = taps[p];
    const int xs[4] = {x0, x1, x0, x1}, ys[4] = {y0, y0, y1, y1};
    const double ws[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
    for (int q = 0; q < 4; ++q) {
      t.offset[q] = (static_cast<std::size_t>(ys[q]) * w + xs[q]) * c;
      t.weight[q] = ws[q];
      for (int ch = 0; ch < c; ++ch) out[p * c + ch] += ws[q] * f[t.offset[q] + ch];
    }
  }
  NodePtr fn = features.node();
  return make({static_cast<int>(pixel_points.size()), c}, std::move(out), {fn}, [fn, taps, c](Node& self) {
    auto& g = fn->grad_buffer();
    for (std::size_t p = 0; p < taps.size(); ++p) {
      for (int q = 0; q < 4; ++q) {
        for (int ch = 0; ch < c; ++ch) g[taps[p].offset[q] + ch] += taps[p].weight[q] * self.grad[p * c + ch];
      }
    }
  });
}

// --- parameters --------------------------------------------------------

Tensor& ParameterStore::add(const std::string& name, Shape shape, Init init, std::mt19937_64& rng, double gain) {
  if (contains(name)) throw ConfigError("autodiff", "duplicate parameter name " + name);
  const std::size_t n = shape_numel(shape);
  std::vector<double> values(n, 0.0);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(values.begin(), values.end(), 1.0);
      break;
    case Init::kNormalFanIn: {
      const double fan_in = shape.empty() ? 1.0 : static_cast<double>(shape[0]);
      std::normal_distribution<double> dist(0.0, gain / std::sqrt(fan_in));
      for (auto& v : values) v = dist(rng);
      break;
    }
    case Init::kUniformSmall: {
      std::uniform_real_distribution<double> dist(-gain, gain);
      for (auto& v : values) v = dist(rng);
      break;
    }
  }
  params_.push_back({name, Tensor::from(std::move(shape), std::move(values), true)});
  return params_.back().tensor;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw ConfigError("autodiff", "no parameter named " + name);
}

Tensor& ParameterStore::get(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const Parameter& p) { return p.name == name; });
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::vector<std::uint8_t> encode_checkpoint(const ParameterStore& store) {
  ByteWriter w;
  w.bytes("TSCK");
  w.u32(static_cast<std::uint32_t>(store.params().size()));
  for (const auto& p : store.params()) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.u32(static_cast<std::uint32_t>(p.tensor.rank()));
    for (int d : p.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.tensor.values()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

void decode_checkpoint(const std::vector<std::uint8_t>& bytes, ParameterStore& store) {
  ByteReader r(bytes, "autodiff");
  if (r.bytes(4) != "TSCK") throw ShapeError("autodiff", "not a checkpoint file");
  const std::uint32_t count = r.u32();
  if (count != store.params().size()) {
    throw ShapeError("autodiff", "checkpoint has " + std::to_string(count) + " tensors, model has " +
                                     std::to_string(store.params().size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.bytes(r.u32());
    Shape shape(r.u32());
    for (auto& d : shape) d = static_cast<int>(r.u32());
    Tensor& t = store.get(name);
    if (t.shape() != shape) {
      throw ShapeError("autodiff", "checkpoint tensor " + name + " has shape " + shape_str(shape) + ", model expects " +
                                       shape_str(t.shape()));
    }
    for (auto& v : t.mutable_values()) v = static_cast<double>(r.f32());
  }
  r.expect_end();
}

void save_checkpoint(const std::string& path, const ParameterStore& store) {
  write_bytes_file(path, encode_checkpoint(store), "autodiff");
}

void load_checkpoint(const std::string& path, ParameterStore& store) {
  decode_checkpoint(read_bytes_file(path, "autodiff"), store);
}

// --- verification ------------------------------------------------------

GradCheckResult gradient_check(const std::function<Tensor()>& f, std::vector<Parameter>& params,
                               const GradCheckOptions& opts) {
  for (auto& p : params) p.tensor.zero_grad();
  Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("autodiff", "gradient check: non-finite loss");
  backward(loss);
  std::mt19937_64 rng(opts.seed);
  GradCheckResult result;
  for (auto& p : params) {
    const std::vector<double> analytic(p.tensor.grad().begin(), p.tensor.grad().end());
    std::vector<std::size_t> coords(p.tensor.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > opts.coords_per_param) {
      for (std::size_t i = 0; i < opts.coords_per_param; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, coords.size() - 1);
        std::swap(coords[i], coords[pick(rng)]);
      }
      coords.resize(opts.coords_per_param);
    }
    auto& values = p.tensor.mutable_values();
    for (std::size_t idx : coords) {
      const double saved = values[idx];
      values[idx] = saved + opts.eps;
      const double up = f().item();
      values[idx] = saved - opts.eps;
      const double down = f().item();
      values[idx] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("autodiff", "gradient check: non-finite loss perturbing " + p.name);
      }
      const double numeric = (up - down) / (2 * opts.eps);
      const double a = analytic[idx];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.floor});
      ++result.coords_checked;
      if (std::max(std::abs(a), std::abs(numeric)) < opts.floor) ++result.floored;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_param = p.name;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace textspot::ad
