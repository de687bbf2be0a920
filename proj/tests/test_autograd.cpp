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

#include <doctest.h>

#include <cmath>
#include <functional>

#include "ttslab/nn.hpp"

using namespace ttslab;
using ag::Param;
using ag::Tape;
using ag::Var;

namespace {

// Central-difference gradient check of a scalar loss against one parameter.
void check_grads(Param& p, const std::function<Scalar()>& loss_value,
                 const std::function<void()>& run_backward, Scalar tol = 2e-2f,
                 Scalar eps = 1e-3f) {
  p.zero_grad();
  run_backward();
  const Mat analytic = p.grad;
  for (Index i = 0; i < p.value.rows(); ++i) {
    for (Index j = 0; j < p.value.cols(); ++j) {
      const Scalar keep = p.value(i, j);
      p.value(i, j) = keep + eps;
      const Scalar up = loss_value();
      p.value(i, j) = keep - eps;
      const Scalar down = loss_value();
      p.value(i, j) = keep;
      const Scalar numeric = (up - down) / (2 * eps);
      const Scalar denom = std::max(1.0f, std::abs(numeric));
      CHECK(std::abs(analytic(i, j) - numeric) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("matmul and bias gradients match finite differences") {
  Rng rng(3);
  Mat xv(4, 3), tv(4, 2);
  rng.fill_gaussian(xv);
  rng.fill_gaussian(tv);
  Mat wv(3, 2);
  rng.fill_gaussian(wv);
  Param w("w", wv), b("b", Mat::Zero(1, 2));

  auto loss = [&]() {
    Tape t;
    Var x = t.constant(xv);
    Var pred = ag::add_rowvec(ag::matmul(x, t.leaf(w)), t.leaf(b));
    return ag::weighted_mse(pred, tv, Vec::Ones(4)).value()(0, 0);
  };
  auto backward = [&]() {
    Tape t;
    Var x = t.constant(xv);
    Var pred = ag::add_rowvec(ag::matmul(x, t.leaf(w)), t.leaf(b));
    t.backward(ag::weighted_mse(pred, tv, Vec::Ones(4)));
  };
  check_grads(w, loss, backward);
  check_grads(b, loss, backward);
}

TEST_CASE("gelu, tanh, relu, mul gradients") {
  Rng rng(5);
  Mat wv(3, 3);
  rng.fill_gaussian(wv);
  Param w("w", wv);
  Mat xv(5, 3), tv(5, 3);
  rng.fill_gaussian(xv);
  rng.fill_gaussian(tv);

  auto build = [&](Tape& t) {
    Var x = t.constant(xv);
    Var h = ag::matmul(x, t.leaf(w));
    Var g = ag::gelu(h);
    Var r = ag::relu(ag::tanh_op(h));
    Var m = ag::mul(g, r);
    return ag::weighted_mse(ag::sub(m, ag::scale(g, 0.3f)), tv, Vec::Ones(5));
  };
  auto loss = [&]() {
    Tape t;
    return build(t).value()(0, 0);
  };
  auto backward = [&]() {
    Tape t;
    t.backward(build(t));
  };
  check_grads(w, loss, backward);
}

TEST_CASE("layer norm gradients") {
  Rng rng(9);
  Mat wv(4, 6), tv(3, 6);
  rng.fill_gaussian(wv);
  rng.fill_gaussian(tv);
  Mat xv(3, 4);
  rng.fill_gaussian(xv);
  Param w("w", wv), gain("g", Mat::Ones(1, 6)), bias("b", Mat::Zero(1, 6));

  auto build = [&](Tape& t) {
    Var h = ag::matmul(t.constant(xv), t.leaf(w));
    Var n = ag::layer_norm(h, t.leaf(gain), t.leaf(bias));
    return ag::weighted_mse(n, tv, Vec::Ones(3));
  };
  auto loss = [&]() {
    Tape t;
    return build(t).value()(0, 0);
  };
  auto backward = [&]() {
    Tape t;
    t.backward(build(t));
  };
  check_grads(w, loss, backward);
  check_grads(gain, loss, backward);
  check_grads(bias, loss, backward);
}

TEST_CASE("causal multihead attention gradients") {
  Rng rng(11);
  const Index tlen = 5, width = 8;
  Mat xv(tlen, width), tv(tlen, width);
  rng.fill_gaussian(xv);
  rng.fill_gaussian(tv);
  Mat qv(width, width), kv(width, width), vv(width, width);
  rng.fill_gaussian(qv, 0.5);
  rng.fill_gaussian(kv, 0.5);
  rng.fill_gaussian(vv, 0.5);
  Param wq("q", qv), wk("k", kv), wv("v", vv);

  auto build = [&](Tape& t) {
    Var x = t.constant(xv);
    Var attn = ag::multihead_attention(ag::matmul(x, t.leaf(wq)), ag::matmul(x, t.leaf(wk)),
                                       ag::matmul(x, t.leaf(wv)), 2, /*causal=*/true);
    return ag::weighted_mse(attn, tv, Vec::Ones(tlen));
  };
  auto loss = [&]() {
    Tape t;
    return build(t).value()(0, 0);
  };
  auto backward = [&]() {
    Tape t;
    t.backward(build(t));
  };
  check_grads(wq, loss, backward);
  check_grads(wk, loss, backward);
  check_grads(wv, loss, backward);
}

TEST_CASE("causal attention cannot see the future") {
  Rng rng(13);
  const Index tlen = 6, width = 4;
  Mat q(tlen, width), k(tlen, width), v(tlen, width);
  rng.fill_gaussian(q);
  rng.fill_gaussian(k);
  rng.fill_gaussian(v);
  Tape t;
  const Mat out1 = ag::multihead_attention(t.constant(q), t.constant(k), t.constant(v), 2, true)
                       .value();
  // Perturb the last row of k/v; earlier outputs must not move.
  Mat k2 = k, v2 = v;
  k2.row(tlen - 1).setConstant(9.0f);
  v2.row(tlen - 1).setConstant(-9.0f);
  Tape t2;
  const Mat out2 =
      ag::multihead_attention(t2.constant(q), t2.constant(k2), t2.constant(v2), 2, true).value();
  CHECK((out1.topRows(tlen - 1) - out2.topRows(tlen - 1)).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((out1.row(tlen - 1) - out2.row(tlen - 1)).cwiseAbs().maxCoeff() > 0.0f);
}

TEST_CASE("cross entropy gradients with mixed-sign row weights") {
  Rng rng(17);
  Mat wv(3, 7);
  rng.fill_gaussian(wv);
  Param w("w", wv);
  Mat xv(5, 3);
  rng.fill_gaussian(xv);
  const std::vector<int> targets = {1, 4, 0, 6, 2};
  Vec weights(5);
  weights << 1.0f, 0.0f, -0.7f, 2.0f, 1.0f;

  auto build = [&](Tape& t) {
    Var logits = ag::matmul(t.constant(xv), t.leaf(w));
    return ag::weighted_cross_entropy(logits, targets, weights, 4.0f);
  };
  auto loss = [&]() {
    Tape t;
    return build(t).value()(0, 0);
  };
  auto backward = [&]() {
    Tape t;
    t.backward(build(t));
  };
  check_grads(w, loss, backward);
}

TEST_CASE("kl_to_const is zero against itself and has correct gradients") {
  Rng rng(19);
  Mat logits(4, 6), base(4, 6);
  rng.fill_gaussian(logits);
  rng.fill_gaussian(base);
  {
    Tape t;
    const Scalar v = ag::kl_to_const(t.constant(logits), logits, Vec::Ones(4)).value()(0, 0);
    CHECK(std::abs(v) < 1e-6);
  }
  {
    Tape t;
    const Scalar v = ag::kl_to_const(t.constant(logits), base, Vec::Ones(4)).value()(0, 0);
    CHECK(v > 0.0f);
  }
  Mat wv(3, 6);
  rng.fill_gaussian(wv);
  Param w("w", wv);
  Mat xv(4, 3);
  rng.fill_gaussian(xv);
  auto build = [&](Tape& t) {
    Var z = ag::matmul(t.constant(xv), t.leaf(w));
    return ag::kl_to_const(z, base.topRows(4), Vec::Ones(4));
  };
  auto loss = [&]() {
    Tape t;
    return build(t).value()(0, 0);
  };
  auto backward = [&]() {
    Tape t;
    t.backward(build(t));
  };
  check_grads(w, loss, backward);
}

TEST_CASE("gather, slice and concat gradients") {
  Rng rng(23);
  Mat table(6, 4);
  rng.fill_gaussian(table);
  Param emb("emb", table);
  const std::vector<int> ids = {2, 2, 5, 0};
  Mat tv(2, 8);
  rng.fill_gaussian(tv);
  auto build = [&](Tape& t) {
    Var e = ag::gather_rows(t.leaf(emb), ids);
    Var top = ag::slice_rows(e, 0, 2);
    Var bottom = ag::slice_rows(e, 2, 2);
    Var cat = ag::concat_cols({top, bottom});
    return ag::weighted_mse(cat, tv, Vec::Ones(2));
  };
  auto loss = [&]() {
    Tape t;
    return build(t).value()(0, 0);
  };
  auto backward = [&]() {
    Tape t;
    t.backward(build(t));
  };
  check_grads(emb, loss, backward);
}

TEST_CASE("transformer forward matches incremental KV-cache inference") {
  Rng rng(29);
  nn::ParamStore ps;
  nn::TransformerConfig cfg;
  cfg.layers = 2;
  cfg.width = 16;
  cfg.heads = 4;
  cfg.mlp_hidden = 32;
  nn::Transformer tf(ps, cfg, "tf", rng);

  Mat x(7, 16);
  rng.fill_gaussian(x);
  Tape t;
  const Mat full = tf.forward(t, t.constant(x), /*causal=*/true).value();

  auto cache = tf.make_cache();
  Mat inc(7, 16);
  inc.topRows(3) = tf.forward_incremental(x.topRows(3), cache);
  for (Index i = 3; i < 7; ++i) inc.row(i) = tf.forward_incremental(x.row(i), cache);
  CHECK((full - inc).cwiseAbs().maxCoeff() < 1e-4f);
}

TEST_CASE("adam with cosine schedule reduces a regression loss") {
  Rng rng(31);
  nn::ParamStore ps;
  nn::LinearP l1 = nn::make_linear(ps, "l1", 3, 16, rng);
  nn::LinearP l2 = nn::make_linear(ps, "l2", 16, 2, rng);
  Mat x(32, 3);
  rng.fill_gaussian(x);
  // Teacher of the same shape, so the loss can actually reach ~0.
  nn::ParamStore teacher;
  nn::LinearP t1 = nn::make_linear(teacher, "t1", 3, 16, rng);
  nn::LinearP t2 = nn::make_linear(teacher, "t2", 16, 2, rng);
  Mat target;
  {
    Tape t;
    target = nn::linear(ag::gelu(nn::linear(t.constant(x), t1)), t2).value();
  }
  nn::AdamConfig acfg;
  acfg.lr = 3e-3;
  nn::Adam opt(ps.all(), acfg);
  Scalar first = 0, last = 0;
  const int steps = 800;
  for (int s = 0; s < steps; ++s) {
    Tape t;
    Var pred = nn::linear(ag::gelu(nn::linear(t.constant(x), l1)), l2);
    Var loss = ag::weighted_mse(pred, target, Vec::Ones(32));
    if (s == 0) first = loss.value()(0, 0);
    last = loss.value()(0, 0);
    opt.zero_grads();
    t.backward(loss);
    opt.step(nn::cosine_lr_scale(s, steps));
  }
  CHECK(last < first * 0.05f);
}

TEST_CASE("parameter stores save and load through checkpoints") {
  Rng rng(37);
  nn::ParamStore ps;
  nn::make_linear(ps, "lin", 4, 4, rng);
  io::Checkpoint ck;
  ps.save_into(ck);
  const auto dir = std::filesystem::temp_directory_path() / "ttslab_nn_test";
  std::filesystem::create_directories(dir);
  ck.save(dir / "p.ckpt");

  nn::ParamStore ps2;
  Rng rng2(99);
  nn::make_linear(ps2, "lin", 4, 4, rng2);
  CHECK(ps.distance_to(ps2) > 0.0);
  ps2.load_from(io::Checkpoint::load(dir / "p.ckpt"));
  CHECK(ps.distance_to(ps2) == 0.0);
}
