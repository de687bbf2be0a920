//
// Copyright 2026 The ttslab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

#ifndef TTSLAB_AUTOGRAD_HPP_
#define TTSLAB_AUTOGRAD_HPP_

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "ttslab/common.hpp"

// Reverse-mode autodiff over dense float matrices, sized for the small
// transformers this project trains. A Tape owns the nodes of one forward
// pass; Params persist across tapes and collect gradients.
namespace ttslab::ag {

struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)) {
    grad = Mat::Zero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(); }
};

class Tape;

struct Node {
  Mat value;
  Mat grad;  // allocated lazily on first accumulation
  bool needs_grad = false;
  std::function<void(Tape&)> backward;

  void accumulate(const Mat& g) {
    if (grad.size() == 0)
      grad = g;
    else
      grad += g;
  }
  bool has_grad() const { return grad.size() != 0; }
};

// Handle into a tape; cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, size_t index) : tape_(tape), index_(index) {}
  const Mat& value() const;
  Node& node() const;
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  size_t index_ = 0;
};

class Tape {
 public:
  Var leaf(Param& p);
  Var constant(Mat value);

  // Runs backward from a 1x1 loss node. Parameter gradients accumulate into
  // their Param::grad, so several tapes per optimizer step just add up.
  void backward(Var loss);

  Node& at(size_t index) { return nodes_[index]; }
  const Node& at(size_t index) const { return nodes_[index]; }
  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  Var make_node(Mat value, bool needs_grad, std::function<void(Tape&)> backward);

 private:
  std::deque<Node> nodes_;
};

// --- Elementwise and linear ops ----------------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // Hadamard
Var scale(Var a, Scalar s);
Var add_rowvec(Var a, Var bias);       // bias is 1 x C
Var mul_rowvec(Var a, Var gain);       // gain is 1 x C
Var add_const(Var a, const Mat& c);
Var relu(Var a);
Var gelu(Var a);
Var tanh_op(Var a);

// --- Shape ops ----------------------------------------------------------------

Var slice_rows(Var a, Index start, Index count);
Var concat_cols(const std::vector<Var>& parts);
Var gather_rows(Var table, const std::vector<int>& ids);  // embedding lookup

// --- Normalization -------------------------------------------------------------

// Row-wise layer norm with learned gain/bias (1 x C each).
Var layer_norm(Var a, Var gain, Var bias, Scalar eps = 1e-5f);

// --- Attention -------------------------------------------------------------------

// Fused multi-head attention. q is Tq x (H*dh), k/v are Tk x (H*dh).
// If causal, position i attends to j <= i (requires Tq == Tk).
// attn_bias, when given, is Tq x Tk and is added to every head's scores
// (use large negative entries to forbid edges).
Var multihead_attention(Var q, Var k, Var v, int num_heads, bool causal,
                        const Mat* attn_bias = nullptr);

// --- Losses (all return 1x1) -----------------------------------------------------

// Mean squared error over rows with weight > 0, normalized by
// (sum of weights * cols). Rows with weight 0 are ignored.
Var weighted_mse(Var pred, const Mat& target, const Vec& row_weights);

// Sum over rows of weight * (-log softmax(logits_row)[target_row]), divided
// by `normalizer`. Rows with weight 0 are skipped; negative weights are
// allowed (REINFORCE uses advantage-weighted rows).
Var weighted_cross_entropy(Var logits, const std::vector<int>& targets,
                           const Vec& row_weights, Scalar normalizer);

// Mean over selected rows of KL(softmax(logits) || softmax(base_logits)),
// treating base_logits as a constant.
Var kl_to_const(Var logits, const Mat& base_logits, const Vec& row_weights);

Var sum_all(Var a);

// Row-wise log-softmax values without graph participation (inference helper).
Mat log_softmax_rows(const Mat& logits);

}  // namespace ttslab::ag

#endif  // TTSLAB_AUTOGRAD_HPP_
