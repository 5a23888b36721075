// Copyright 2026 The advc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "advc/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

namespace advc::ag {

namespace {

thread_local bool g_grad_enabled = true;

uint64_t next_seq() {
  static std::atomic<uint64_t> counter{0};
  return ++counter;
}

using VjpFn = std::function<std::vector<NodePtr>(const NodePtr&, const NodePtr&)>;

NodePtr make_node(Value v, std::vector<NodePtr> parents, VjpFn vjp) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  n->seq = next_seq();
  bool rg = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p && p->requires_grad) {
        rg = true;
        break;
      }
    }
  }
  n->requires_grad = rg;
  if (rg) {
    n->parents = std::move(parents);
    n->vjp = std::move(vjp);
  }
  return n;
}

std::vector<Eigen::Index> row_counts(const NodePtr& a) {
  std::vector<Eigen::Index> r;
  r.reserve(a->val.size());
  for (const auto& m : a->val) r.push_back(m.rows());
  return r;
}

void check(bool cond, const char* msg) {
  if (!cond) throw ConfigError(std::string("autodiff: ") + msg);
}

bool same_shape(const NodePtr& a, const NodePtr& b) {
  if (a->batch() != b->batch()) return false;
  for (int i = 0; i < a->batch(); ++i) {
    if (a->val[i].rows() != b->val[i].rows() || a->val[i].cols() != b->val[i].cols())
      return false;
  }
  return true;
}

enum class Bcast { kSame, kRow, kScalar };

// Broadcast duals, declared here so forward ops can reference them.
NodePtr bcast_all(const NodePtr& g, std::vector<Eigen::Index> rows, Eigen::Index cols);
NodePtr bcast_rows(const NodePtr& g, std::vector<Eigen::Index> rows);
NodePtr bcast_cols(const NodePtr& g, Eigen::Index cols);
NodePtr bcast_row_per_item(const NodePtr& g, std::vector<Eigen::Index> rows);
NodePtr bcast_all_per_item(const NodePtr& g, std::vector<Eigen::Index> rows, Eigen::Index cols);
NodePtr scatter_row_to(const NodePtr& g, int t, std::vector<Eigen::Index> rows);

NodePtr bcast_all(const NodePtr& g, std::vector<Eigen::Index> rows, Eigen::Index cols) {
  Value out(rows.size());
  double x = g->val[0](0, 0);
  for (size_t i = 0; i < rows.size(); ++i) out[i] = Mat::Constant(rows[i], cols, x);
  return make_node(std::move(out), {g},
                   [](const NodePtr&, const NodePtr& gg) -> std::vector<NodePtr> {
                     return {sum_all(gg)};
                   });
}

NodePtr bcast_rows(const NodePtr& g, std::vector<Eigen::Index> rows) {
  Value out(rows.size());
  for (size_t i = 0; i < rows.size(); ++i)
    out[i] = g->val[0].replicate(rows[i], 1);
  return make_node(std::move(out), {g},
                   [](const NodePtr&, const NodePtr& gg) -> std::vector<NodePtr> {
                     return {sum_rows(gg)};
                   });
}

NodePtr bcast_cols(const NodePtr& g, Eigen::Index cols) {
  Value out(g->val.size());
  for (size_t i = 0; i < g->val.size(); ++i) out[i] = g->val[i].replicate(1, cols);
  return make_node(std::move(out), {g},
                   [](const NodePtr&, const NodePtr& gg) -> std::vector<NodePtr> {
                     return {sum_cols(gg)};
                   });
}

NodePtr bcast_row_per_item(const NodePtr& g, std::vector<Eigen::Index> rows) {
  Value out(rows.size());
  for (size_t i = 0; i < rows.size(); ++i)
    out[i] = g->val[0].row(static_cast<Eigen::Index>(i)).replicate(rows[i], 1);
  return make_node(std::move(out), {g},
                   [](const NodePtr&, const NodePtr& gg) -> std::vector<NodePtr> {
                     return {sum_rows_per_item(gg)};
                   });
}

NodePtr bcast_all_per_item(const NodePtr& g, std::vector<Eigen::Index> rows, Eigen::Index cols) {
  Value out(rows.size());
  for (size_t i = 0; i < rows.size(); ++i)
    out[i] = Mat::Constant(rows[i], cols, g->val[0](static_cast<Eigen::Index>(i), 0));
  return make_node(std::move(out), {g},
                   [](const NodePtr&, const NodePtr& gg) -> std::vector<NodePtr> {
                     return {sum_all_per_item(gg)};
                   });
}

NodePtr scatter_row_to(const NodePtr& g, int t, std::vector<Eigen::Index> rows) {
  Value out(rows.size());
  Eigen::Index cols = g->cols();
  for (size_t i = 0; i < rows.size(); ++i) {
    out[i] = Mat::Zero(rows[i], cols);
    if (t < rows[i]) out[i].row(t) = g->val[0].row(static_cast<Eigen::Index>(i));
  }
  return make_node(std::move(out), {g},
                   [t](const NodePtr&, const NodePtr& gg) -> std::vector<NodePtr> {
                     return {rows_at(gg, t)};
                   });
}

}  // namespace

// ---------------------------------------------------------------------------

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

GradModeGuard::GradModeGuard(bool enabled) : saved_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = saved_; }

NodePtr constant(Value v) {
  check(!v.empty(), "constant: empty value");
  return make_node(std::move(v), {}, nullptr);
}

NodePtr constant(Mat m) {
  Value v;
  v.push_back(std::move(m));
  return constant(std::move(v));
}

NodePtr scalar(double x) { return constant(Mat::Constant(1, 1, x)); }

NodePtr param(Value v) {
  auto n = std::make_shared<Node>();
  n->val = std::move(v);
  n->seq = next_seq();
  n->requires_grad = true;
  return n;
}

NodePtr param(Mat m) {
  Value v;
  v.push_back(std::move(m));
  return param(std::move(v));
}

NodePtr zeros_like(const NodePtr& a) {
  Value v(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i)
    v[i] = Mat::Zero(a->val[i].rows(), a->val[i].cols());
  return constant(std::move(v));
}

double scalar_value(const NodePtr& a) {
  check(a->is_scalar(), "scalar_value: node is not scalar");
  return a->val[0](0, 0);
}

std::vector<NodePtr> gradient(const NodePtr& root, const std::vector<NodePtr>& wrt,
                              bool create_graph) {
  check(root != nullptr, "gradient: null root");
  check(root->is_scalar(), "gradient: root must be a 1x1 scalar");

  std::unordered_map<Node*, NodePtr> cot;
  if (root->requires_grad) {
    std::vector<NodePtr> order;
    std::unordered_set<Node*> seen;
    std::vector<NodePtr> stack{root};
    seen.insert(root.get());
    while (!stack.empty()) {
      NodePtr n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (const auto& p : n->parents) {
        if (p && p->requires_grad && !seen.count(p.get())) {
          seen.insert(p.get());
          stack.push_back(p);
        }
      }
    }
    std::sort(order.begin(), order.end(),
              [](const NodePtr& a, const NodePtr& b) { return a->seq > b->seq; });

    GradModeGuard guard(create_graph);
    cot[root.get()] = scalar(1.0);
    for (const auto& n : order) {
      auto it = cot.find(n.get());
      if (it == cot.end() || !n->vjp) continue;
      NodePtr g = it->second;
      std::vector<NodePtr> pg = n->vjp(n, g);
      check(pg.size() == n->parents.size(), "vjp arity mismatch");
      for (size_t i = 0; i < pg.size(); ++i) {
        const NodePtr& p = n->parents[i];
        if (!p || !pg[i] || !p->requires_grad) continue;
        auto pit = cot.find(p.get());
        if (pit == cot.end()) {
          cot[p.get()] = pg[i];
        } else {
          pit->second = add(pit->second, pg[i]);
        }
      }
    }
  }

  std::vector<NodePtr> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto it = cot.find(w.get());
    result.push_back(it != cot.end() ? it->second : zeros_like(w));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Arithmetic

namespace {

Bcast classify(const NodePtr& a, const NodePtr& b) {
  if (same_shape(a, b)) return Bcast::kSame;
  if (b->batch() == 1 && b->val[0].rows() == 1 && b->val[0].cols() == 1) return Bcast::kScalar;
  if (b->batch() == 1 && b->val[0].rows() == 1 && b->val[0].cols() == a->cols())
    return Bcast::kRow;
  throw ConfigError("autodiff: incompatible shapes for broadcast op");
}

}  // namespace

NodePtr add(const NodePtr& a, const NodePtr& b) {
  // Normalize so the first operand carries the full shape.
  bool swapped = false;
  NodePtr x = a, y = b;
  if (!same_shape(a, b)) {
    bool b_small = b->batch() == 1 && b->val[0].rows() == 1;
    bool a_small = a->batch() == 1 && a->val[0].rows() == 1;
    if (!b_small && a_small) {
      std::swap(x, y);
      swapped = true;
    }
  }
  Bcast mode = classify(x, y);
  Value out(x->val.size());
  switch (mode) {
    case Bcast::kSame:
      for (size_t i = 0; i < x->val.size(); ++i) out[i] = x->val[i] + y->val[i];
      break;
    case Bcast::kScalar: {
      double c = y->val[0](0, 0);
      for (size_t i = 0; i < x->val.size(); ++i) out[i] = x->val[i].array() + c;
      break;
    }
    case Bcast::kRow:
      for (size_t i = 0; i < x->val.size(); ++i)
        out[i] = x->val[i].rowwise() + y->val[0].row(0);
      break;
  }
  return make_node(std::move(out), {x, y},
                   [mode, swapped](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     NodePtr dx = g;
                     NodePtr dy;
                     switch (mode) {
                       case Bcast::kSame:
                         dy = g;
                         break;
                       case Bcast::kScalar:
                         dy = sum_all(g);
                         break;
                       case Bcast::kRow:
                         dy = sum_rows(g);
                         break;
                     }
                     (void)swapped;  // parent order follows x, y
                     return {dx, dy};
                   });
}

NodePtr neg(const NodePtr& a) { return scale(a, -1.0); }

NodePtr sub(const NodePtr& a, const NodePtr& b) { return add(a, neg(b)); }

NodePtr mul(const NodePtr& a, const NodePtr& b) {
  bool swapped = false;
  NodePtr x = a, y = b;
  if (!same_shape(a, b)) {
    bool b_small = b->batch() == 1 && b->val[0].rows() == 1;
    bool a_small = a->batch() == 1 && a->val[0].rows() == 1;
    if (!b_small && a_small) {
      std::swap(x, y);
      swapped = true;
    }
  }
  Bcast mode = classify(x, y);
  Value out(x->val.size());
  switch (mode) {
    case Bcast::kSame:
      for (size_t i = 0; i < x->val.size(); ++i)
        out[i] = x->val[i].cwiseProduct(y->val[i]);
      break;
    case Bcast::kScalar: {
      double c = y->val[0](0, 0);
      for (size_t i = 0; i < x->val.size(); ++i) out[i] = x->val[i] * c;
      break;
    }
    case Bcast::kRow:
      for (size_t i = 0; i < x->val.size(); ++i)
        out[i] = x->val[i].array().rowwise() * y->val[0].row(0).array();
      break;
  }
  auto xp = x, yp = y;
  return make_node(std::move(out), {x, y},
                   [mode, xp, yp, swapped](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     NodePtr dx = mul(g, yp);  // broadcast repeats on the same path
                     NodePtr dy;
                     switch (mode) {
                       case Bcast::kSame:
                         dy = mul(g, xp);
                         break;
                       case Bcast::kScalar:
                         dy = sum_all(mul(g, xp));
                         break;
                       case Bcast::kRow:
                         dy = sum_rows(mul(g, xp));
                         break;
                     }
                     (void)swapped;
                     return {dx, dy};
                   });
}

NodePtr scale(const NodePtr& a, double c) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) out[i] = a->val[i] * c;
  return make_node(std::move(out), {a},
                   [c](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {scale(g, c)};
                   });
}

NodePtr add_scalar(const NodePtr& a, double c) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) out[i] = a->val[i].array() + c;
  return make_node(std::move(out), {a},
                   [](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {g};
                   });
}

// Unary elementwise. Backward formulas reference nodes (self or input), so
// second derivatives are exact wherever the function is smooth.

NodePtr sigmoid(const NodePtr& a) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i)
    out[i] = 1.0 / (1.0 + (-a->val[i].array()).exp());
  return make_node(std::move(out), {a},
                   [](const NodePtr& self, const NodePtr& g) -> std::vector<NodePtr> {
                     NodePtr y = self;
                     return {mul(mul(g, y), add_scalar(neg(y), 1.0))};
                   });
}

NodePtr tanh_(const NodePtr& a) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) out[i] = a->val[i].array().tanh();
  return make_node(std::move(out), {a},
                   [](const NodePtr& self, const NodePtr& g) -> std::vector<NodePtr> {
                     return {mul(g, add_scalar(neg(square(self)), 1.0))};
                   });
}

NodePtr relu(const NodePtr& a) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) out[i] = a->val[i].cwiseMax(0.0);
  Value mask(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i)
    mask[i] = (a->val[i].array() > 0.0).cast<double>();
  auto mask_node = constant(std::move(mask));
  return make_node(std::move(out), {a},
                   [mask_node](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {mul(g, mask_node)};
                   });
}

NodePtr leaky_relu(const NodePtr& a, double slope) {
  Value out(a->val.size());
  Value mask(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) {
    mask[i] = (a->val[i].array() > 0.0).select(Mat::Constant(a->val[i].rows(), a->val[i].cols(), 1.0),
                                               Mat::Constant(a->val[i].rows(), a->val[i].cols(), slope));
    out[i] = a->val[i].cwiseProduct(mask[i]);
  }
  auto mask_node = constant(std::move(mask));
  return make_node(std::move(out), {a},
                   [mask_node](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {mul(g, mask_node)};
                   });
}

NodePtr exp_(const NodePtr& a) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) out[i] = a->val[i].array().exp();
  return make_node(std::move(out), {a},
                   [](const NodePtr& self, const NodePtr& g) -> std::vector<NodePtr> {
                     return {mul(g, self)};
                   });
}

NodePtr log_(const NodePtr& a) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) out[i] = a->val[i].array().log();
  return make_node(std::move(out), {a},
                   [a](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {mul(g, recip(a))};
                   });
}

NodePtr sqrt_(const NodePtr& a) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) out[i] = a->val[i].array().sqrt();
  return make_node(std::move(out), {a},
                   [](const NodePtr& self, const NodePtr& g) -> std::vector<NodePtr> {
                     return {scale(mul(g, recip(self)), 0.5)};
                   });
}

NodePtr square(const NodePtr& a) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) out[i] = a->val[i].cwiseProduct(a->val[i]);
  return make_node(std::move(out), {a},
                   [a](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {scale(mul(g, a), 2.0)};
                   });
}

NodePtr recip(const NodePtr& a) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) out[i] = a->val[i].cwiseInverse();
  return make_node(std::move(out), {a},
                   [](const NodePtr& self, const NodePtr& g) -> std::vector<NodePtr> {
                     return {neg(mul(g, square(self)))};
                   });
}

// ---------------------------------------------------------------------------
// Matrix products

NodePtr matmul(const NodePtr& a, const NodePtr& b, bool trans_a, bool trans_b) {
  int na = a->batch();
  int nb = b->batch();
  check(na == nb || na == 1 || nb == 1, "matmul: batch sizes incompatible");
  int n = std::max(na, nb);
  Value out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Mat& A = a->val[static_cast<size_t>(na == 1 ? 0 : i)];
    const Mat& B = b->val[static_cast<size_t>(nb == 1 ? 0 : i)];
    Eigen::Index ak = trans_a ? A.rows() : A.cols();
    Eigen::Index bk = trans_b ? B.cols() : B.rows();
    check(ak == bk, "matmul: inner dimensions differ");
    if (!trans_a && !trans_b)
      out[static_cast<size_t>(i)].noalias() = A * B;
    else if (!trans_a && trans_b)
      out[static_cast<size_t>(i)].noalias() = A * B.transpose();
    else if (trans_a && !trans_b)
      out[static_cast<size_t>(i)].noalias() = A.transpose() * B;
    else
      out[static_cast<size_t>(i)].noalias() = A.transpose() * B.transpose();
  }
  return make_node(
      std::move(out), {a, b},
      [a, b, trans_a, trans_b, na, nb, n](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
        NodePtr da, db;
        if (a->requires_grad) {
          da = trans_a ? matmul(b, g, trans_b, true) : matmul(g, b, false, !trans_b);
          if (na == 1 && n > 1) da = sum_items(da);
        }
        if (b->requires_grad) {
          db = trans_b ? matmul(g, a, true, trans_a) : matmul(a, g, !trans_a, false);
          if (nb == 1 && n > 1) db = sum_items(db);
        }
        return {da, db};
      });
}

// ---------------------------------------------------------------------------
// Reductions and duals

NodePtr sum_all(const NodePtr& a) {
  double s = 0.0;
  for (const auto& m : a->val) s += m.sum();
  auto rows = row_counts(a);
  Eigen::Index cols = a->cols();
  return make_node({Mat::Constant(1, 1, s)}, {a},
                   [rows, cols](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {bcast_all(g, rows, cols)};
                   });
}

NodePtr sum_rows(const NodePtr& a) {
  Mat s = Mat::Zero(1, a->cols());
  for (const auto& m : a->val) s += m.colwise().sum();
  auto rows = row_counts(a);
  return make_node({std::move(s)}, {a},
                   [rows](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {bcast_rows(g, rows)};
                   });
}

NodePtr sum_cols(const NodePtr& a) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) out[i] = a->val[i].rowwise().sum();
  Eigen::Index cols = a->cols();
  return make_node(std::move(out), {a},
                   [cols](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {bcast_cols(g, cols)};
                   });
}

NodePtr sum_items(const NodePtr& a) {
  Mat s = Mat::Zero(a->val[0].rows(), a->val[0].cols());
  for (const auto& m : a->val) {
    check(m.rows() == s.rows() && m.cols() == s.cols(), "sum_items: ragged shapes");
    s += m;
  }
  int n = a->batch();
  return make_node({std::move(s)}, {a},
                   [n](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {repeat_item(g, n)};
                   });
}

NodePtr repeat_item(const NodePtr& a, int n) {
  check(a->batch() == 1, "repeat_item: expects single item");
  Value out(static_cast<size_t>(n), a->val[0]);
  return make_node(std::move(out), {a},
                   [](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {sum_items(g)};
                   });
}

NodePtr sum_rows_per_item(const NodePtr& a) {
  Mat s(a->batch(), a->cols());
  for (int i = 0; i < a->batch(); ++i)
    s.row(i) = a->val[static_cast<size_t>(i)].colwise().sum();
  auto rows = row_counts(a);
  return make_node({std::move(s)}, {a},
                   [rows](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {bcast_row_per_item(g, rows)};
                   });
}

NodePtr sum_all_per_item(const NodePtr& a) {
  Mat s(a->batch(), 1);
  for (int i = 0; i < a->batch(); ++i) s(i, 0) = a->val[static_cast<size_t>(i)].sum();
  auto rows = row_counts(a);
  Eigen::Index cols = a->cols();
  return make_node({std::move(s)}, {a},
                   [rows, cols](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {bcast_all_per_item(g, rows, cols)};
                   });
}

NodePtr add_colvec(const NodePtr& a, const NodePtr& v) {
  check(v->batch() == a->batch(), "add_colvec: batch mismatch");
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) {
    check(v->val[i].cols() == 1 && v->val[i].rows() == a->val[i].rows(),
          "add_colvec: shape mismatch");
    out[i] = a->val[i].colwise() + v->val[i].col(0);
  }
  return make_node(std::move(out), {a, v},
                   [](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {g, sum_cols(g)};
                   });
}

NodePtr mul_colvec(const NodePtr& a, const NodePtr& v) {
  check(v->batch() == a->batch(), "mul_colvec: batch mismatch");
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) {
    check(v->val[i].cols() == 1 && v->val[i].rows() == a->val[i].rows(),
          "mul_colvec: shape mismatch");
    out[i] = a->val[i].array().colwise() * v->val[i].col(0).array();
  }
  return make_node(std::move(out), {a, v},
                   [a, v](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {mul_colvec(g, v), sum_cols(mul(g, a))};
                   });
}

NodePtr add_rowvec_per_item(const NodePtr& a, const NodePtr& r) {
  check(r->batch() == 1 && r->val[0].rows() == a->batch() && r->val[0].cols() == a->cols(),
        "add_rowvec_per_item: shape mismatch");
  Value out(a->val.size());
  for (int i = 0; i < a->batch(); ++i)
    out[static_cast<size_t>(i)] = a->val[static_cast<size_t>(i)].rowwise() + r->val[0].row(i);
  return make_node(std::move(out), {a, r},
                   [](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {g, sum_rows_per_item(g)};
                   });
}

NodePtr mul_rowvec_per_item(const NodePtr& a, const NodePtr& r) {
  check(r->batch() == 1 && r->val[0].rows() == a->batch() && r->val[0].cols() == a->cols(),
        "mul_rowvec_per_item: shape mismatch");
  Value out(a->val.size());
  for (int i = 0; i < a->batch(); ++i)
    out[static_cast<size_t>(i)] =
        a->val[static_cast<size_t>(i)].array().rowwise() * r->val[0].row(i).array();
  return make_node(std::move(out), {a, r},
                   [a, r](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {mul_rowvec_per_item(g, r), sum_rows_per_item(mul(g, a))};
                   });
}

NodePtr scale_per_item(const NodePtr& a, const NodePtr& s) {
  check(s->batch() == 1 && s->val[0].rows() == a->batch() && s->val[0].cols() == 1,
        "scale_per_item: shape mismatch");
  Value out(a->val.size());
  for (int i = 0; i < a->batch(); ++i)
    out[static_cast<size_t>(i)] = a->val[static_cast<size_t>(i)] * s->val[0](i, 0);
  return make_node(std::move(out), {a, s},
                   [a, s](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {scale_per_item(g, s), sum_all_per_item(mul(g, a))};
                   });
}

// ---------------------------------------------------------------------------
// Structural ops

NodePtr zero_pad_rows(const NodePtr& a, const std::vector<int>& valid) {
  check(valid.size() == a->val.size(), "zero_pad_rows: valid size mismatch");
  Value out = a->val;
  for (size_t i = 0; i < out.size(); ++i) {
    Eigen::Index v = std::min<Eigen::Index>(valid[i], out[i].rows());
    if (v < out[i].rows()) out[i].bottomRows(out[i].rows() - v).setZero();
  }
  return make_node(std::move(out), {a},
                   [valid](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {zero_pad_rows(g, valid)};
                   });
}

NodePtr mask_batch_rows(const NodePtr& a, const std::vector<unsigned char>& keep) {
  check(a->batch() == 1 && static_cast<Eigen::Index>(keep.size()) == a->val[0].rows(),
        "mask_batch_rows: shape mismatch");
  Value out = a->val;
  for (size_t i = 0; i < keep.size(); ++i)
    if (!keep[i]) out[0].row(static_cast<Eigen::Index>(i)).setZero();
  return make_node(std::move(out), {a},
                   [keep](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {mask_batch_rows(g, keep)};
                   });
}

NodePtr rows_at(const NodePtr& a, int t) {
  Mat out = Mat::Zero(a->batch(), a->cols());
  for (int i = 0; i < a->batch(); ++i)
    if (t < a->val[static_cast<size_t>(i)].rows()) out.row(i) = a->val[static_cast<size_t>(i)].row(t);
  auto rows = row_counts(a);
  return make_node({std::move(out)}, {a},
                   [t, rows](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {scatter_row_to(g, t, rows)};
                   });
}

NodePtr pack_steps(const std::vector<NodePtr>& steps, const std::vector<int>& valid) {
  check(!steps.empty(), "pack_steps: no steps");
  int batch = static_cast<int>(steps[0]->val[0].rows());
  Eigen::Index cols = steps[0]->cols();
  int total = static_cast<int>(steps.size());
  check(static_cast<int>(valid.size()) == batch, "pack_steps: valid size mismatch");
  Value out(static_cast<size_t>(batch));
  for (int i = 0; i < batch; ++i) out[static_cast<size_t>(i)] = Mat::Zero(total, cols);
  for (int t = 0; t < total; ++t) {
    check(steps[static_cast<size_t>(t)]->batch() == 1 &&
              steps[static_cast<size_t>(t)]->val[0].rows() == batch &&
              steps[static_cast<size_t>(t)]->cols() == cols,
          "pack_steps: step shape mismatch");
    for (int i = 0; i < batch; ++i)
      if (t < valid[static_cast<size_t>(i)])
        out[static_cast<size_t>(i)].row(t) = steps[static_cast<size_t>(t)]->val[0].row(i);
  }
  std::vector<NodePtr> parents(steps.begin(), steps.end());
  return make_node(std::move(out), std::move(parents),
                   [valid, batch](const NodePtr& self, const NodePtr& g) -> std::vector<NodePtr> {
                     std::vector<NodePtr> pg(self->parents.size());
                     for (size_t t = 0; t < self->parents.size(); ++t) {
                       std::vector<unsigned char> keep(static_cast<size_t>(batch));
                       for (int i = 0; i < batch; ++i)
                         keep[static_cast<size_t>(i)] =
                             static_cast<int>(t) < valid[static_cast<size_t>(i)] ? 1 : 0;
                       pg[t] = mask_batch_rows(rows_at(g, static_cast<int>(t)), keep);
                     }
                     return pg;
                   });
}

NodePtr slice_cols(const NodePtr& a, int c0, int len) {
  check(c0 >= 0 && c0 + len <= a->cols(), "slice_cols: out of range");
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) out[i] = a->val[i].middleCols(c0, len);
  Eigen::Index total = a->cols();
  return make_node(std::move(out), {a},
                   [c0, len, total](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     // zero-embed back into the original column span
                     Value padded(g->val.size());
                     for (size_t i = 0; i < g->val.size(); ++i) {
                       padded[i] = Mat::Zero(g->val[i].rows(), total);
                       padded[i].middleCols(c0, len) = g->val[i];
                     }
                     NodePtr res = make_node(std::move(padded), {g},
                                             [c0, len](const NodePtr&, const NodePtr& gg) -> std::vector<NodePtr> {
                                               return {slice_cols(gg, c0, len)};
                                             });
                     return {res};
                   });
}

NodePtr concat_cols(const NodePtr& a, const NodePtr& b) {
  check(a->batch() == b->batch(), "concat_cols: batch mismatch");
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) {
    check(a->val[i].rows() == b->val[i].rows(), "concat_cols: row mismatch");
    out[i].resize(a->val[i].rows(), a->val[i].cols() + b->val[i].cols());
    out[i] << a->val[i], b->val[i];
  }
  int ca = static_cast<int>(a->cols());
  int cb = static_cast<int>(b->cols());
  return make_node(std::move(out), {a, b},
                   [ca, cb](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {slice_cols(g, 0, ca), slice_cols(g, ca, cb)};
                   });
}

NodePtr repeat_rows(const NodePtr& a, int r) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) {
    out[i].resize(a->val[i].rows() * r, a->val[i].cols());
    for (Eigen::Index t = 0; t < a->val[i].rows(); ++t)
      out[i].middleRows(t * r, r) = a->val[i].row(t).replicate(r, 1);
  }
  return make_node(std::move(out), {a},
                   [r](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {sum_row_groups(g, r)};
                   });
}

NodePtr sum_row_groups(const NodePtr& a, int r) {
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) {
    check(a->val[i].rows() % r == 0, "sum_row_groups: rows not divisible");
    Eigen::Index t_out = a->val[i].rows() / r;
    out[i] = Mat::Zero(t_out, a->val[i].cols());
    for (Eigen::Index t = 0; t < t_out; ++t)
      for (int j = 0; j < r; ++j) out[i].row(t) += a->val[i].row(t * r + j);
  }
  return make_node(std::move(out), {a},
                   [r](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {repeat_rows(g, r)};
                   });
}

NodePtr unfold_frames(const NodePtr& a, int r) {
  check(a->cols() % r == 0, "unfold_frames: cols not divisible");
  Eigen::Index c = a->cols() / r;
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) {
    out[i].resize(a->val[i].rows() * r, c);
    for (Eigen::Index t = 0; t < a->val[i].rows(); ++t)
      for (int j = 0; j < r; ++j) out[i].row(t * r + j) = a->val[i].row(t).segment(j * c, c);
  }
  return make_node(std::move(out), {a},
                   [r](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {fold_frames(g, r)};
                   });
}

NodePtr fold_frames(const NodePtr& a, int r) {
  Value out(a->val.size());
  Eigen::Index c = a->cols();
  for (size_t i = 0; i < a->val.size(); ++i) {
    check(a->val[i].rows() % r == 0, "fold_frames: rows not divisible");
    Eigen::Index t_out = a->val[i].rows() / r;
    out[i].resize(t_out, c * r);
    for (Eigen::Index t = 0; t < t_out; ++t)
      for (int j = 0; j < r; ++j) out[i].row(t).segment(j * c, c) = a->val[i].row(t * r + j);
  }
  return make_node(std::move(out), {a},
                   [r](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {unfold_frames(g, r)};
                   });
}

NodePtr reverse_valid(const NodePtr& a, const std::vector<int>& valid) {
  check(valid.size() == a->val.size(), "reverse_valid: valid size mismatch");
  Value out = a->val;
  for (size_t i = 0; i < out.size(); ++i) {
    Eigen::Index v = std::min<Eigen::Index>(valid[i], out[i].rows());
    out[i].topRows(v) = a->val[i].topRows(v).colwise().reverse();
  }
  return make_node(std::move(out), {a},
                   [valid](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {reverse_valid(g, valid)};
                   });
}

NodePtr im2col(const NodePtr& a, int k, int stride) {
  check(k % 2 == 1, "im2col: kernel must be odd");
  check(stride >= 1, "im2col: bad stride");
  int half = k / 2;
  Eigen::Index c = a->cols();
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) {
    Eigen::Index t_in = a->val[i].rows();
    Eigen::Index t_out = (t_in + stride - 1) / stride;
    out[i] = Mat::Zero(t_out, k * c);
    for (Eigen::Index j = 0; j < t_out; ++j) {
      for (int o = 0; o < k; ++o) {
        Eigen::Index src = j * stride - half + o;
        if (src >= 0 && src < t_in) out[i].row(j).segment(o * c, c) = a->val[i].row(src);
      }
    }
  }
  auto rows = row_counts(a);
  return make_node(std::move(out), {a},
                   [k, stride, rows, c](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {col2im(g, k, stride, rows, c)};
                   });
}

NodePtr col2im(const NodePtr& a, int k, int stride, const std::vector<Eigen::Index>& out_rows,
               Eigen::Index out_cols) {
  check(a->cols() == k * out_cols, "col2im: column count mismatch");
  int half = k / 2;
  Value out(a->val.size());
  for (size_t i = 0; i < a->val.size(); ++i) {
    out[i] = Mat::Zero(out_rows[i], out_cols);
    for (Eigen::Index j = 0; j < a->val[i].rows(); ++j) {
      for (int o = 0; o < k; ++o) {
        Eigen::Index dst = j * stride - half + o;
        if (dst >= 0 && dst < out_rows[i])
          out[i].row(dst) += a->val[i].row(j).segment(o * out_cols, out_cols);
      }
    }
  }
  return make_node(std::move(out), {a},
                   [k, stride](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {im2col(g, k, stride)};
                   });
}

NodePtr gather_rows(const NodePtr& table, const std::vector<int>& ids) {
  check(table->batch() == 1, "gather_rows: table must be single item");
  Eigen::Index v = table->val[0].rows();
  Mat out(static_cast<Eigen::Index>(ids.size()), table->cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && ids[i] < v, "gather_rows: id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table->val[0].row(ids[i]);
  }
  return make_node({std::move(out)}, {table},
                   [ids, v](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {scatter_rows(g, ids, v)};
                   });
}

NodePtr scatter_rows(const NodePtr& a, const std::vector<int>& ids, Eigen::Index table_rows) {
  check(a->batch() == 1 && a->val[0].rows() == static_cast<Eigen::Index>(ids.size()),
        "scatter_rows: shape mismatch");
  Mat out = Mat::Zero(table_rows, a->cols());
  for (size_t i = 0; i < ids.size(); ++i)
    out.row(ids[i]) += a->val[0].row(static_cast<Eigen::Index>(i));
  return make_node({std::move(out)}, {a},
                   [ids](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {gather_rows(g, ids)};
                   });
}

NodePtr detach(const NodePtr& a) { return constant(a->val); }

NodePtr weighted_sum_rows(const NodePtr& h, const NodePtr& w) {
  check(h->batch() == w->batch(), "weighted_sum_rows: batch mismatch");
  Mat out(h->batch(), h->cols());
  for (int i = 0; i < h->batch(); ++i) {
    check(w->val[static_cast<size_t>(i)].cols() == 1 &&
              w->val[static_cast<size_t>(i)].rows() == h->val[static_cast<size_t>(i)].rows(),
          "weighted_sum_rows: weight shape mismatch");
    out.row(i) = (h->val[static_cast<size_t>(i)].transpose() * w->val[static_cast<size_t>(i)]).transpose();
  }
  return make_node({std::move(out)}, {h, w},
                   [h, w](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {rank1_per_item(w, g), rowdot_per_item(h, g)};
                   });
}

NodePtr rank1_per_item(const NodePtr& w, const NodePtr& r) {
  check(r->batch() == 1 && r->val[0].rows() == w->batch(), "rank1_per_item: shape mismatch");
  Value out(w->val.size());
  for (int i = 0; i < w->batch(); ++i) {
    check(w->val[static_cast<size_t>(i)].cols() == 1, "rank1_per_item: w must be Tx1");
    out[static_cast<size_t>(i)].noalias() = w->val[static_cast<size_t>(i)] * r->val[0].row(i);
  }
  return make_node(std::move(out), {w, r},
                   [w, r](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {rowdot_per_item(g, r), weighted_sum_rows(g, w)};
                   });
}

NodePtr rowdot_per_item(const NodePtr& h, const NodePtr& r) {
  check(r->batch() == 1 && r->val[0].rows() == h->batch() && r->val[0].cols() == h->cols(),
        "rowdot_per_item: shape mismatch");
  Value out(h->val.size());
  for (int i = 0; i < h->batch(); ++i)
    out[static_cast<size_t>(i)].noalias() = h->val[static_cast<size_t>(i)] * r->val[0].row(i).transpose();
  return make_node(std::move(out), {h, r},
                   [h, r](const NodePtr&, const NodePtr& g) -> std::vector<NodePtr> {
                     return {rank1_per_item(g, r), weighted_sum_rows(h, g)};
                   });
}

// ---------------------------------------------------------------------------
// Composites

NodePtr softmax_rows(const NodePtr& logits) {
  Value shift(logits->val.size());
  for (size_t i = 0; i < logits->val.size(); ++i)
    shift[i] = logits->val[i].rowwise().maxCoeff();
  NodePtr m = constant(std::move(shift));
  NodePtr e = exp_(add_colvec(logits, neg(m)));
  NodePtr s = sum_cols(e);
  return mul_colvec(e, recip(s));
}

NodePtr log_softmax_rows(const NodePtr& logits) {
  Value shift(logits->val.size());
  for (size_t i = 0; i < logits->val.size(); ++i)
    shift[i] = logits->val[i].rowwise().maxCoeff();
  NodePtr m = constant(std::move(shift));
  NodePtr t = add_colvec(logits, neg(m));
  NodePtr s = sum_cols(exp_(t));
  return add_colvec(t, neg(log_(s)));
}

NodePtr softmax_over_rows_per_item(const NodePtr& scores, const std::vector<int>& valid) {
  check(scores->cols() == 1, "softmax_over_rows_per_item: scores must be Tx1");
  Mat shift(scores->batch(), 1);
  for (int i = 0; i < scores->batch(); ++i) {
    Eigen::Index v = std::min<Eigen::Index>(valid[static_cast<size_t>(i)],
                                            scores->val[static_cast<size_t>(i)].rows());
    check(v > 0, "softmax_over_rows_per_item: empty valid range");
    shift(i, 0) = scores->val[static_cast<size_t>(i)].topRows(v).maxCoeff();
  }
  NodePtr m = constant(std::move(shift));
  NodePtr e = zero_pad_rows(exp_(add_rowvec_per_item(scores, neg(m))), valid);
  NodePtr z = sum_all_per_item(e);
  return scale_per_item(e, recip(z));
}

NodePtr masked_mse(const NodePtr& a, const NodePtr& b, const std::vector<int>& valid) {
  check(same_shape(a, b), "masked_mse: shape mismatch");
  long n = 0;
  for (size_t i = 0; i < valid.size(); ++i)
    n += std::min<long>(valid[i], static_cast<long>(a->val[i].rows()));
  check(n > 0, "masked_mse: no valid frames");
  NodePtr d = zero_pad_rows(sub(a, b), valid);
  double denom = static_cast<double>(n) * static_cast<double>(a->cols());
  return scale(sum_all(square(d)), 1.0 / denom);
}

bool all_finite(const NodePtr& a) {
  for (const auto& m : a->val)
    if (!m.allFinite()) return false;
  return true;
}

}  // namespace advc::ag
