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

#include "ttslab/autograd.hpp"

#include <cmath>
#include <memory>

namespace ttslab::ag {

const Mat& Var::value() const { return tape_->at(index_).value; }
Node& Var::node() const { return tape_->at(index_); }

Var Tape::make_node(Mat value, bool needs_grad, std::function<void(Tape&)> backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::leaf(Param& p) {
  Param* pp = &p;
  const size_t self = nodes_.size();
  return make_node(p.value, true, [pp, self](Tape& t) {
    Node& me = t.at(self);
    if (me.has_grad()) pp->grad += me.grad;
  });
}

Var Tape::constant(Mat value) { return make_node(std::move(value), false, nullptr); }

void Tape::backward(Var loss) {
  Node& top = loss.node();
  if (top.value.rows() != 1 || top.value.cols() != 1)
    throw ShapeError("backward expects a 1x1 loss node");
  top.accumulate(Mat::Ones(1, 1));
  for (size_t i = nodes_.size(); i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && n.has_grad()) n.backward(*this);
  }
}

namespace {

void ensure_grad(Node& n) {
  if (!n.has_grad()) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
}

bool same_shape(const Mat& a, const Mat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

[[noreturn]] void shape_fail(const char* op, const Mat& a, const Mat& b) {
  throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                   std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                   std::to_string(b.cols()) + ")");
}

bool any_grad(std::initializer_list<Var> vars) {
  for (const Var& v : vars)
    if (v.node().needs_grad) return true;
  return false;
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) shape_fail("matmul", a.value(), b.value());
  Tape& t = *a.tape();
  const bool ng = any_grad({a, b});
  const size_t self = t.size();
  return t.make_node(a.value() * b.value(), ng, !ng ? std::function<void(Tape&)>() : [a, b, self](Tape& t2) {
    const Mat& g = t2.at(self).grad;
    if (a.node().needs_grad) a.node().accumulate(g * b.value().transpose());
    if (b.node().needs_grad) b.node().accumulate(a.value().transpose() * g);
  });
}

Var add(Var a, Var b) {
  if (!same_shape(a.value(), b.value())) shape_fail("add", a.value(), b.value());
  Tape& t = *a.tape();
  const bool ng = any_grad({a, b});
  const size_t self = t.size();
  return t.make_node(a.value() + b.value(), ng, !ng ? std::function<void(Tape&)>() : [a, b, self](Tape& t2) {
    const Mat& g = t2.at(self).grad;
    if (a.node().needs_grad) a.node().accumulate(g);
    if (b.node().needs_grad) b.node().accumulate(g);
  });
}

Var sub(Var a, Var b) {
  if (!same_shape(a.value(), b.value())) shape_fail("sub", a.value(), b.value());
  Tape& t = *a.tape();
  const bool ng = any_grad({a, b});
  const size_t self = t.size();
  return t.make_node(a.value() - b.value(), ng, !ng ? std::function<void(Tape&)>() : [a, b, self](Tape& t2) {
    const Mat& g = t2.at(self).grad;
    if (a.node().needs_grad) a.node().accumulate(g);
    if (b.node().needs_grad) b.node().accumulate(-g);
  });
}

Var mul(Var a, Var b) {
  if (!same_shape(a.value(), b.value())) shape_fail("mul", a.value(), b.value());
  Tape& t = *a.tape();
  const bool ng = any_grad({a, b});
  const size_t self = t.size();
  return t.make_node(a.value().cwiseProduct(b.value()), ng,
                     !ng ? std::function<void(Tape&)>() : [a, b, self](Tape& t2) {
                       const Mat& g = t2.at(self).grad;
                       if (a.node().needs_grad) a.node().accumulate(g.cwiseProduct(b.value()));
                       if (b.node().needs_grad) b.node().accumulate(g.cwiseProduct(a.value()));
                     });
}

Var scale(Var a, Scalar s) {
  Tape& t = *a.tape();
  const bool ng = a.node().needs_grad;
  const size_t self = t.size();
  return t.make_node(a.value() * s, ng, !ng ? std::function<void(Tape&)>() : [a, s, self](Tape& t2) {
    a.node().accumulate(t2.at(self).grad * s);
  });
}

Var add_rowvec(Var a, Var bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) shape_fail("add_rowvec", a.value(), bias.value());
  Tape& t = *a.tape();
  const bool ng = any_grad({a, bias});
  Mat out = a.value();
  out.rowwise() += bias.value().row(0);
  const size_t self = t.size();
  return t.make_node(std::move(out), ng, !ng ? std::function<void(Tape&)>() : [a, bias, self](Tape& t2) {
    const Mat& g = t2.at(self).grad;
    if (a.node().needs_grad) a.node().accumulate(g);
    if (bias.node().needs_grad) bias.node().accumulate(g.colwise().sum());
  });
}

Var mul_rowvec(Var a, Var gain) {
  if (gain.rows() != 1 || gain.cols() != a.cols()) shape_fail("mul_rowvec", a.value(), gain.value());
  Tape& t = *a.tape();
  const bool ng = any_grad({a, gain});
  Mat out = a.value().array().rowwise() * gain.value().row(0).array();
  const size_t self = t.size();
  return t.make_node(std::move(out), ng, !ng ? std::function<void(Tape&)>() : [a, gain, self](Tape& t2) {
    const Mat& g = t2.at(self).grad;
    if (a.node().needs_grad)
      a.node().accumulate(g.array().rowwise() * gain.value().row(0).array());
    if (gain.node().needs_grad)
      gain.node().accumulate(g.cwiseProduct(a.value()).colwise().sum());
  });
}

Var add_const(Var a, const Mat& c) {
  if (!same_shape(a.value(), c)) shape_fail("add_const", a.value(), c);
  Tape& t = *a.tape();
  const bool ng = a.node().needs_grad;
  const size_t self = t.size();
  return t.make_node(a.value() + c, ng, !ng ? std::function<void(Tape&)>() : [a, self](Tape& t2) {
    a.node().accumulate(t2.at(self).grad);
  });
}

Var relu(Var a) {
  Tape& t = *a.tape();
  const bool ng = a.node().needs_grad;
  const size_t self = t.size();
  return t.make_node(a.value().cwiseMax(Scalar(0)), ng,
                     !ng ? std::function<void(Tape&)>() : [a, self](Tape& t2) {
                       const Mat& g = t2.at(self).grad;
                       const Mat mask = (a.value().array() > 0).cast<Scalar>().matrix();
                       a.node().accumulate(g.cwiseProduct(mask));
                     });
}

namespace {
constexpr Scalar kGeluC = 0.7978845608028654f;  // sqrt(2/pi)
constexpr Scalar kGeluA = 0.044715f;
}  // namespace

Var gelu(Var a) {
  Tape& t = *a.tape();
  const bool ng = a.node().needs_grad;
  const auto x = a.value().array();
  const Mat th = (kGeluC * (x + kGeluA * x.cube())).tanh().matrix();
  Mat out = (Scalar(0.5) * x * (1 + th.array())).matrix();
  const size_t self = t.size();
  return t.make_node(std::move(out), ng, !ng ? std::function<void(Tape&)>() : [a, th, self](Tape& t2) {
    const Mat& g = t2.at(self).grad;
    const auto x2 = a.value().array();
    const auto sech2 = 1 - th.array().square();
    const auto dd = 0.5 * (1 + th.array()) +
                    0.5 * x2 * sech2 * (kGeluC * (1 + 3 * kGeluA * x2.square()));
    a.node().accumulate((g.array() * dd).matrix());
  });
}

Var tanh_op(Var a) {
  Tape& t = *a.tape();
  const bool ng = a.node().needs_grad;
  Mat out = a.value().array().tanh().matrix();
  const size_t self = t.size();
  return t.make_node(std::move(out), ng, !ng ? std::function<void(Tape&)>() : [a, self](Tape& t2) {
    const Node& me = t2.at(self);
    a.node().accumulate((me.grad.array() * (1 - me.value.array().square())).matrix());
  });
}

Var slice_rows(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows())
    throw ShapeError("slice_rows out of range");
  Tape& t = *a.tape();
  const bool ng = a.node().needs_grad;
  const size_t self = t.size();
  return t.make_node(a.value().middleRows(start, count), ng,
                     !ng ? std::function<void(Tape&)>() : [a, start, count, self](Tape& t2) {
                       ensure_grad(a.node());
                       a.node().grad.middleRows(start, count) += t2.at(self).grad;
                     });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Tape& t = *parts.front().tape();
  const Index rows = parts.front().rows();
  Index cols = 0;
  bool ng = false;
  for (const Var& p : parts) {
    if (p.rows() != rows) shape_fail("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
    ng = ng || p.node().needs_grad;
  }
  Mat out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  const size_t self = t.size();
  return t.make_node(std::move(out), ng, !ng ? std::function<void(Tape&)>() : [parts, self](Tape& t2) {
    const Mat& g = t2.at(self).grad;
    Index at2 = 0;
    for (const Var& p : parts) {
      if (p.node().needs_grad) p.node().accumulate(g.middleCols(at2, p.cols()));
      at2 += p.cols();
    }
  });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
  Tape& t = *table.tape();
  const bool ng = table.node().needs_grad;
  Mat out(static_cast<Index>(ids.size()), table.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows())
      throw VocabError("gather_rows: id " + std::to_string(ids[i]) + " out of range");
    out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
  }
  const size_t self = t.size();
  return t.make_node(std::move(out), ng, !ng ? std::function<void(Tape&)>() : [table, ids, self](Tape& t2) {
    const Mat& g = t2.at(self).grad;
    ensure_grad(table.node());
    for (size_t i = 0; i < ids.size(); ++i)
      table.node().grad.row(ids[i]) += g.row(static_cast<Index>(i));
  });
}

Var layer_norm(Var a, Var gain, Var bias, Scalar eps) {
  if (gain.rows() != 1 || gain.cols() != a.cols() || bias.rows() != 1 || bias.cols() != a.cols())
    throw ShapeError("layer_norm: gain/bias must be 1 x cols");
  Tape& t = *a.tape();
  const bool ng = any_grad({a, gain, bias});
  const Index rows = a.rows(), cols = a.cols();
  Mat xhat(rows, cols);
  Vec inv_std(rows);
  for (Index i = 0; i < rows; ++i) {
    const Scalar mu = a.value().row(i).mean();
    const auto centered = a.value().row(i).array() - mu;
    const Scalar var = centered.square().sum() / static_cast<Scalar>(cols);
    const Scalar istd = Scalar(1) / std::sqrt(var + eps);
    inv_std(i) = istd;
    xhat.row(i) = (centered * istd).matrix();
  }
  Mat out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  const size_t self = t.size();
  return t.make_node(std::move(out), ng,
                     !ng ? std::function<void(Tape&)>()
                         : [a, gain, bias, xhat, inv_std, self](Tape& t2) {
    const Mat& g = t2.at(self).grad;
    const Index cols2 = g.cols();
    if (bias.node().needs_grad) bias.node().accumulate(g.colwise().sum());
    if (gain.node().needs_grad) gain.node().accumulate(g.cwiseProduct(xhat).colwise().sum());
    if (a.node().needs_grad) {
      Mat dxhat = g.array().rowwise() * gain.value().row(0).array();
      Mat da(g.rows(), cols2);
      for (Index i = 0; i < g.rows(); ++i) {
        const Scalar m1 = dxhat.row(i).mean();
        const Scalar m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
        da.row(i) = ((dxhat.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i)).matrix();
      }
      a.node().accumulate(da);
    }
  });
}

namespace {

// In-place row softmax with max subtraction.
void softmax_rows_inplace(Mat& m) {
  for (Index i = 0; i < m.rows(); ++i) {
    const Scalar mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

}  // namespace

Var multihead_attention(Var q, Var k, Var v, int num_heads, bool causal, const Mat* attn_bias) {
  if (q.cols() != k.cols() || k.cols() != v.cols() || q.cols() % num_heads != 0)
    throw ShapeError("attention: width must match and divide by heads");
  if (k.rows() != v.rows()) throw ShapeError("attention: k/v length mismatch");
  if (causal && q.rows() != k.rows()) throw ShapeError("causal attention needs square scores");
  if (attn_bias && (attn_bias->rows() != q.rows() || attn_bias->cols() != k.rows()))
    throw ShapeError("attention bias shape mismatch");
  Tape& t = *q.tape();
  const bool ng = any_grad({q, k, v});
  const Index dh = q.cols() / num_heads;
  const Scalar sc = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const Index tq = q.rows(), tk = k.rows();

  auto probs = std::make_shared<std::vector<Mat>>();
  probs->reserve(static_cast<size_t>(num_heads));
  Mat out(tq, q.cols());
  for (int h = 0; h < num_heads; ++h) {
    Mat s = sc * (q.value().middleCols(h * dh, dh) * k.value().middleCols(h * dh, dh).transpose());
    if (attn_bias) s += *attn_bias;
    if (causal)
      for (Index i = 0; i < tq; ++i)
        for (Index j = i + 1; j < tk; ++j) s(i, j) = -1e30f;
    softmax_rows_inplace(s);
    out.middleCols(h * dh, dh) = s * v.value().middleCols(h * dh, dh);
    probs->push_back(std::move(s));
  }
  const size_t self = t.size();
  return t.make_node(std::move(out), ng,
                     !ng ? std::function<void(Tape&)>()
                         : [q, k, v, num_heads, dh, sc, probs, self](Tape& t2) {
    const Mat& g = t2.at(self).grad;
    for (int h = 0; h < num_heads; ++h) {
      const Mat& p = (*probs)[static_cast<size_t>(h)];
      const auto qh = q.value().middleCols(h * dh, dh);
      const auto kh = k.value().middleCols(h * dh, dh);
      const auto vh = v.value().middleCols(h * dh, dh);
      const auto gh = g.middleCols(h * dh, dh);
      if (v.node().needs_grad) {
        ensure_grad(v.node());
        v.node().grad.middleCols(h * dh, dh) += p.transpose() * gh;
      }
      if (q.node().needs_grad || k.node().needs_grad) {
        Mat dp = gh * vh.transpose();
        // softmax backward: ds = p .* (dp - rowsum(dp .* p))
        Mat ds(p.rows(), p.cols());
        for (Index i = 0; i < p.rows(); ++i) {
          const Scalar dot = dp.row(i).dot(p.row(i));
          ds.row(i) = p.row(i).cwiseProduct(dp.row(i).array().matrix() -
                                            Mat::Constant(1, p.cols(), dot));
        }
        if (q.node().needs_grad) {
          ensure_grad(q.node());
          q.node().grad.middleCols(h * dh, dh) += sc * (ds * kh);
        }
        if (k.node().needs_grad) {
          ensure_grad(k.node());
          k.node().grad.middleCols(h * dh, dh) += sc * (ds.transpose() * qh);
        }
      }
    }
  });
}

Var weighted_mse(Var pred, const Mat& target, const Vec& row_weights) {
  if (!same_shape(pred.value(), target)) shape_fail("weighted_mse", pred.value(), target);
  if (row_weights.size() != pred.rows()) throw ShapeError("weighted_mse: weight count mismatch");
  Tape& t = *pred.tape();
  double wsum = 0.0, loss = 0.0;
  for (Index i = 0; i < pred.rows(); ++i) {
    if (row_weights(i) <= 0) continue;
    wsum += row_weights(i);
    loss += row_weights(i) *
            static_cast<double>((pred.value().row(i) - target.row(i)).squaredNorm());
  }
  const double norm = std::max(1e-12, wsum * static_cast<double>(pred.cols()));
  Mat out(1, 1);
  out(0, 0) = static_cast<Scalar>(loss / norm);
  const bool ng = pred.node().needs_grad;
  const size_t self = t.size();
  return t.make_node(std::move(out), ng,
                     !ng ? std::function<void(Tape&)>()
                         : [pred, target, row_weights, norm, self](Tape& t2) {
    const Scalar g = t2.at(self).grad(0, 0);
    Mat d = Mat::Zero(pred.rows(), pred.cols());
    for (Index i = 0; i < pred.rows(); ++i) {
      if (row_weights(i) <= 0) continue;
      d.row(i) = (2.0f * row_weights(i) * g / static_cast<Scalar>(norm)) *
                 (pred.value().row(i) - target.row(i));
    }
    pred.node().accumulate(d);
  });
}

Var weighted_cross_entropy(Var logits, const std::vector<int>& targets, const Vec& row_weights,
                           Scalar normalizer) {
  if (static_cast<Index>(targets.size()) != logits.rows() || row_weights.size() != logits.rows())
    throw ShapeError("weighted_cross_entropy: row count mismatch");
  if (normalizer <= 0) throw ValidationError("weighted_cross_entropy: normalizer must be > 0");
  Tape& t = *logits.tape();
  double loss = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    if (row_weights(i) == 0) continue;
    const int tgt = targets[static_cast<size_t>(i)];
    if (tgt < 0 || tgt >= logits.cols()) throw VocabError("cross entropy target out of range");
    const Scalar mx = logits.value().row(i).maxCoeff();
    const double lse =
        std::log((logits.value().row(i).array() - mx).exp().sum()) + static_cast<double>(mx);
    loss += row_weights(i) * (lse - logits.value()(i, tgt));
  }
  Mat out(1, 1);
  out(0, 0) = static_cast<Scalar>(loss / normalizer);
  const bool ng = logits.node().needs_grad;
  const size_t self = t.size();
  return t.make_node(std::move(out), ng,
                     !ng ? std::function<void(Tape&)>()
                         : [logits, targets, row_weights, normalizer, self](Tape& t2) {
    const Scalar g = t2.at(self).grad(0, 0);
    Mat d = Mat::Zero(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
      if (row_weights(i) == 0) continue;
      Mat p = logits.value().row(i);
      softmax_rows_inplace(p);
      p(0, targets[static_cast<size_t>(i)]) -= 1.0f;
      d.row(i) = (row_weights(i) * g / normalizer) * p.row(0);
    }
    logits.node().accumulate(d);
  });
}

Var kl_to_const(Var logits, const Mat& base_logits, const Vec& row_weights) {
  if (!same_shape(logits.value(), base_logits)) shape_fail("kl_to_const", logits.value(), base_logits);
  if (row_weights.size() != logits.rows()) throw ShapeError("kl_to_const: weight count mismatch");
  Tape& t = *logits.tape();
  const Mat logp = log_softmax_rows(logits.value());
  const Mat logq = log_softmax_rows(base_logits);
  double wsum = 0.0, total = 0.0;
  Vec row_kl = Vec::Zero(logits.rows());
  for (Index i = 0; i < logits.rows(); ++i) {
    if (row_weights(i) <= 0) continue;
    wsum += row_weights(i);
    const auto p = logp.row(i).array().exp();
    row_kl(i) = (p * (logp.row(i).array() - logq.row(i).array())).sum();
    total += row_weights(i) * row_kl(i);
  }
  const double norm = std::max(1e-12, wsum);
  Mat out(1, 1);
  out(0, 0) = static_cast<Scalar>(total / norm);
  const bool ng = logits.node().needs_grad;
  const size_t self = t.size();
  return t.make_node(std::move(out), ng,
                     !ng ? std::function<void(Tape&)>()
                         : [logits, logp, logq, row_weights, row_kl, norm, self](Tape& t2) {
    const Scalar g = t2.at(self).grad(0, 0);
    Mat d = Mat::Zero(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
      if (row_weights(i) <= 0) continue;
      const auto p = logp.row(i).array().exp();
      const auto a = logp.row(i).array() - logq.row(i).array();
      d.row(i) = (row_weights(i) * g / static_cast<Scalar>(norm)) *
                 (p * (a - row_kl(i))).matrix();
    }
    logits.node().accumulate(d);
  });
}

Var sum_all(Var a) {
  Tape& t = *a.tape();
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  const bool ng = a.node().needs_grad;
  const size_t self = t.size();
  return t.make_node(std::move(out), ng, !ng ? std::function<void(Tape&)>() : [a, self](Tape& t2) {
    const Scalar g = t2.at(self).grad(0, 0);
    a.node().accumulate(Mat::Constant(a.rows(), a.cols(), g));
  });
}

Mat log_softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const Scalar mx = logits.row(i).maxCoeff();
    const double lse =
        std::log((logits.row(i).array() - mx).template cast<double>().exp().sum()) +
        static_cast<double>(mx);
    out.row(i) = (logits.row(i).array() - static_cast<Scalar>(lse)).matrix();
  }
  return out;
}

}  // namespace ttslab::ag
