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

#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "advc/common.hpp"

// Reverse-mode automatic differentiation on batches of matrices.
//
// A value is a batch of Eigen matrices: one matrix per sequence in a
// mini-batch. Items may have different row counts (ragged time axes);
// the column count is uniform. Ops record a tape; `gradient` walks it
// backwards. Every backward formula is itself expressed through ops, so
// gradients of gradients work (needed by the WGAN gradient penalty).

namespace advc::ag {

using Mat = Eigen::MatrixXd;
using Value = std::vector<Mat>;

class Node;
using NodePtr = std::shared_ptr<Node>;

class Node {
 public:
  Value val;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  // Maps the cotangent of this node to cotangents of the parents
  // (same order; entries may be null when a parent needs no grad).
  std::function<std::vector<NodePtr>(const NodePtr& self, const NodePtr& grad)> vjp;
  uint64_t seq = 0;  // creation index; creation order is a topological order

  int batch() const { return static_cast<int>(val.size()); }
  Eigen::Index rows(int i) const { return val[static_cast<size_t>(i)].rows(); }
  Eigen::Index cols() const { return val.empty() ? 0 : val[0].cols(); }
  const Mat& m(int i = 0) const { return val[static_cast<size_t>(i)]; }
  bool is_scalar() const { return batch() == 1 && val[0].rows() == 1 && val[0].cols() == 1; }
};

// ---------------------------------------------------------------------------
// Tape control

bool grad_enabled();

/// Disables tape recording for its lifetime (forward-only evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();

 private:
  bool saved_;
};

// ---------------------------------------------------------------------------
// Construction

NodePtr constant(Value v);
NodePtr constant(Mat m);
NodePtr scalar(double x);
NodePtr param(Value v);
NodePtr param(Mat m);
NodePtr zeros_like(const NodePtr& a);

double scalar_value(const NodePtr& a);

/// d(root)/d(wrt[i]); root must be scalar. Nodes unreachable from root get
/// zero gradients. With create_graph the returned nodes are differentiable.
std::vector<NodePtr> gradient(const NodePtr& root, const std::vector<NodePtr>& wrt,
                              bool create_graph = false);

// ---------------------------------------------------------------------------
// Elementwise and broadcasting arithmetic.
// `b` may be shaped like `a`, or be a single 1xC row (added/multiplied into
// every row of every item), or a single 1x1 scalar.

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr neg(const NodePtr& a);
NodePtr scale(const NodePtr& a, double c);
NodePtr add_scalar(const NodePtr& a, double c);

NodePtr sigmoid(const NodePtr& a);
NodePtr tanh_(const NodePtr& a);
NodePtr relu(const NodePtr& a);
NodePtr leaky_relu(const NodePtr& a, double slope);
NodePtr exp_(const NodePtr& a);
NodePtr log_(const NodePtr& a);
NodePtr sqrt_(const NodePtr& a);
NodePtr square(const NodePtr& a);
NodePtr recip(const NodePtr& a);

// ---------------------------------------------------------------------------
// Matrix products. `b` must be a single-item node (weights) or match `a`'s
// batch; a single-item `b` broadcasts over the batch.

NodePtr matmul(const NodePtr& a, const NodePtr& b, bool trans_a = false, bool trans_b = false);

// ---------------------------------------------------------------------------
// Reductions and their broadcast duals.

NodePtr sum_all(const NodePtr& a);                       // -> single 1x1
NodePtr sum_rows(const NodePtr& a);                      // -> single 1xC (all items)
NodePtr sum_cols(const NodePtr& a);                      // -> batch Tx1 (per row)
NodePtr sum_items(const NodePtr& a);                     // -> single (uniform shapes)
NodePtr sum_rows_per_item(const NodePtr& a);             // -> single BxC
NodePtr sum_all_per_item(const NodePtr& a);              // -> single Bx1
NodePtr repeat_item(const NodePtr& a, int n);            // inverse of sum_items

// Per-row / per-item broadcasting combinators.
NodePtr add_colvec(const NodePtr& a, const NodePtr& v);  // v: batch Tx1
NodePtr mul_colvec(const NodePtr& a, const NodePtr& v);
NodePtr add_rowvec_per_item(const NodePtr& a, const NodePtr& r);  // r: single BxC
NodePtr mul_rowvec_per_item(const NodePtr& a, const NodePtr& r);
NodePtr scale_per_item(const NodePtr& a, const NodePtr& s);       // s: single Bx1

// ---------------------------------------------------------------------------
// Structural ops (all linear in their tensor argument).

/// Zeroes rows >= valid[i] of each item.
NodePtr zero_pad_rows(const NodePtr& a, const std::vector<int>& valid);
/// Zeroes row i of a single-item BxC matrix where keep[i] is false.
NodePtr mask_batch_rows(const NodePtr& a, const std::vector<unsigned char>& keep);
/// Row t of every item, stacked into a single BxC matrix (missing rows -> 0).
NodePtr rows_at(const NodePtr& a, int t);
/// Stacks per-step BxC singles into a batch of TxC items; rows >= valid[i]
/// are zeroed.
NodePtr pack_steps(const std::vector<NodePtr>& steps, const std::vector<int>& valid);
NodePtr slice_cols(const NodePtr& a, int c0, int len);
NodePtr concat_cols(const NodePtr& a, const NodePtr& b);
/// Each row repeated r times consecutively.
NodePtr repeat_rows(const NodePtr& a, int r);
/// Sums consecutive groups of r rows (adjoint of repeat_rows).
NodePtr sum_row_groups(const NodePtr& a, int r);
/// Tx(r*C) -> (T*r)xC, splitting each row into r consecutive frames.
NodePtr unfold_frames(const NodePtr& a, int r);
NodePtr fold_frames(const NodePtr& a, int r);
/// Reverses the first valid[i] rows of each item; the rest stays in place.
NodePtr reverse_valid(const NodePtr& a, const std::vector<int>& valid);
/// Sliding windows for 1-D convolution with "same" zero padding:
/// TxC -> ceil(T/stride) x (k*C). k must be odd.
NodePtr im2col(const NodePtr& a, int k, int stride);
NodePtr col2im(const NodePtr& a, int k, int stride, const std::vector<Eigen::Index>& out_rows,
               Eigen::Index out_cols);
/// Rows of a single VxE table selected by ids -> single |ids|xE.
NodePtr gather_rows(const NodePtr& table, const std::vector<int>& ids);
NodePtr scatter_rows(const NodePtr& a, const std::vector<int>& ids, Eigen::Index table_rows);
/// Stops gradient flow: value copy with no parents.
NodePtr detach(const NodePtr& a);

// Attention family (closed under differentiation):
//   weighted_sum_rows(H, w)[i] = H_i^T w_i          (single BxC)
//   rank1_per_item(w, r)_i     = w_i * r.row(i)     (batch TxC)
//   rowdot_per_item(H, r)_i    = H_i * r.row(i)^T   (batch Tx1)
NodePtr weighted_sum_rows(const NodePtr& h, const NodePtr& w);
NodePtr rank1_per_item(const NodePtr& w, const NodePtr& r);
NodePtr rowdot_per_item(const NodePtr& h, const NodePtr& r);

// ---------------------------------------------------------------------------
// Composites (built from the primitives above).

/// Per-row softmax, numerically shifted by the detached row max.
NodePtr softmax_rows(const NodePtr& logits);
NodePtr log_softmax_rows(const NodePtr& logits);
/// Softmax over the rows of each item (one weight column per item),
/// restricted to the first valid[i] rows; padded rows get weight 0.
NodePtr softmax_over_rows_per_item(const NodePtr& scores, const std::vector<int>& valid);
/// Mean of masked squared error: sum over valid entries / (n_valid * C).
NodePtr masked_mse(const NodePtr& a, const NodePtr& b, const std::vector<int>& valid);

bool all_finite(const NodePtr& a);

}  // namespace advc::ag
