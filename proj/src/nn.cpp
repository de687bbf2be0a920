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

#include "ttslab/nn.hpp"

#include <cmath>

namespace ttslab::nn {

Param& ParamStore::gaussian(const std::string& name, Index rows, Index cols, Rng& rng,
                            double stddev) {
  Mat v(rows, cols);
  rng.fill_gaussian(v, stddev);
  params_.emplace_back(name, std::move(v));
  return params_.back();
}

Param& ParamStore::zeros(const std::string& name, Index rows, Index cols) {
  params_.emplace_back(name, Mat::Zero(rows, cols));
  return params_.back();
}

Param& ParamStore::ones(const std::string& name, Index rows, Index cols) {
  params_.emplace_back(name, Mat::Ones(rows, cols));
  return params_.back();
}

std::vector<Param*> ParamStore::all() {
  std::vector<Param*> out;
  out.reserve(params_.size());
  for (Param& p : params_) out.push_back(&p);
  return out;
}

Param& ParamStore::at(const std::string& name) {
  for (Param& p : params_)
    if (p.name == name) return p;
  throw ValidationError("no parameter named " + name);
}

void ParamStore::zero_grads() {
  for (Param& p : params_) p.zero_grad();
}

void ParamStore::save_into(io::Checkpoint& ck) const {
  for (const Param& p : params_) ck.add(p.name, p.value);
}

void ParamStore::load_from(const io::Checkpoint& ck) {
  for (Param& p : params_) {
    const Mat& m = ck.get(p.name);
    if (m.rows() != p.value.rows() || m.cols() != p.value.cols())
      throw ShapeError("checkpoint parameter " + p.name + " has wrong shape");
    p.value = m;
    p.zero_grad();
  }
}

double ParamStore::distance_to(const ParamStore& other) const {
  if (params_.size() != other.params_.size())
    throw ShapeError("parameter stores differ in layout");
  double d2 = 0.0;
  for (size_t i = 0; i < params_.size(); ++i)
    d2 += (params_[i].value - other.params_[i].value).cast<double>().squaredNorm();
  return std::sqrt(d2);
}

Adam::Adam(std::vector<Param*> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (Param* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

double Adam::grad_norm() const {
  double n2 = 0.0;
  for (Param* p : params_) n2 += p->grad.cast<double>().squaredNorm();
  return std::sqrt(n2);
}

void Adam::step(double lr_scale) {
  ++t_;
  double clip_scale = 1.0;
  if (config_.clip_norm > 0) {
    const double gn = grad_norm();
    if (!std::isfinite(gn)) throw TrainingError("non-finite gradient norm at step " +
                                                std::to_string(t_));
    if (gn > config_.clip_norm) clip_scale = config_.clip_norm / gn;
  }
  const double lr = config_.lr * lr_scale;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    Mat g = p.grad * static_cast<Scalar>(clip_scale);
    m_[i] = static_cast<Scalar>(config_.beta1) * m_[i] + static_cast<Scalar>(1 - config_.beta1) * g;
    v_[i] = static_cast<Scalar>(config_.beta2) * v_[i] +
            static_cast<Scalar>(1 - config_.beta2) * g.cwiseProduct(g);
    const Mat mhat = m_[i] / static_cast<Scalar>(bc1);
    const Mat vhat = v_[i] / static_cast<Scalar>(bc2);
    p.value -= (static_cast<Scalar>(lr) * mhat.array() /
                (vhat.array().sqrt() + static_cast<Scalar>(config_.eps)))
                   .matrix();
  }
}

void Adam::zero_grads() {
  for (Param* p : params_) p->zero_grad();
}

double cosine_lr_scale(int64_t step, int64_t total_steps, int64_t warmup, double floor) {
  if (warmup > 0 && step < warmup) return static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total_steps <= warmup) return floor;
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
  const double clamped = std::min(1.0, std::max(0.0, progress));
  return floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(M_PI * clamped));
}

LinearP make_linear(ParamStore& ps, const std::string& name, Index in, Index out, Rng& rng) {
  LinearP p;
  p.w = &ps.gaussian(name + ".w", in, out, rng, 1.0 / std::sqrt(static_cast<double>(in)));
  p.b = &ps.zeros(name + ".b", 1, out);
  return p;
}

Var linear(Var x, const LinearP& p) {
  Tape& t = *x.tape();
  return ag::add_rowvec(ag::matmul(x, t.leaf(*p.w)), t.leaf(*p.b));
}

Mat linear_infer(const Mat& x, const LinearP& p) {
  Mat out = x * p.w->value;
  out.rowwise() += p.b->value.row(0);
  return out;
}

LayerNormP make_layer_norm(ParamStore& ps, const std::string& name, Index width) {
  LayerNormP p;
  p.gain = &ps.ones(name + ".g", 1, width);
  p.bias = &ps.zeros(name + ".b", 1, width);
  return p;
}

Var layer_norm(Var x, const LayerNormP& p) {
  Tape& t = *x.tape();
  return ag::layer_norm(x, t.leaf(*p.gain), t.leaf(*p.bias));
}

Mat layer_norm_infer(const Mat& x, const LayerNormP& p) {
  Mat out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar mu = x.row(i).mean();
    const auto centered = x.row(i).array() - mu;
    const Scalar var = centered.square().sum() / static_cast<Scalar>(x.cols());
    out.row(i) = (centered / std::sqrt(var + 1e-5f)).matrix();
  }
  out = out.array().rowwise() * p.gain->value.row(0).array();
  out.rowwise() += p.bias->value.row(0);
  return out;
}

Transformer::Transformer(ParamStore& ps, const TransformerConfig& config,
                         const std::string& prefix, Rng& rng)
    : config_(config) {
  const Index w = config.width;
  for (int l = 0; l < config.layers; ++l) {
    const std::string base = prefix + ".block" + std::to_string(l);
    BlockP b;
    b.ln1 = make_layer_norm(ps, base + ".ln1", w);
    b.wq = make_linear(ps, base + ".wq", w, w, rng);
    b.wk = make_linear(ps, base + ".wk", w, w, rng);
    b.wv = make_linear(ps, base + ".wv", w, w, rng);
    b.wo = make_linear(ps, base + ".wo", w, w, rng);
    if (config.cross_attention) {
      b.ln_cross = make_layer_norm(ps, base + ".lnx", w);
      b.cq = make_linear(ps, base + ".cq", w, w, rng);
      b.ck = make_linear(ps, base + ".ck", w, w, rng);
      b.cv = make_linear(ps, base + ".cv", w, w, rng);
      b.co = make_linear(ps, base + ".co", w, w, rng);
    }
    b.ln2 = make_layer_norm(ps, base + ".ln2", w);
    b.fc1 = make_linear(ps, base + ".fc1", w, config.mlp_hidden, rng);
    b.fc2 = make_linear(ps, base + ".fc2", config.mlp_hidden, w, rng);
    blocks_.push_back(b);
  }
  ln_final_ = make_layer_norm(ps, prefix + ".ln_final", w);
}

Var Transformer::forward(Tape& tape, Var x, bool causal, const Mat* attn_bias,
                         std::optional<Var> memory) const {
  (void)tape;
  if (config_.cross_attention && !memory)
    throw ValidationError("cross-attention transformer needs a memory sequence");
  Var h = x;
  for (const BlockP& b : blocks_) {
    {
      Var n = layer_norm(h, b.ln1);
      Var attn = ag::multihead_attention(linear(n, b.wq), linear(n, b.wk), linear(n, b.wv),
                                         config_.heads, causal, attn_bias);
      h = ag::add(h, linear(attn, b.wo));
    }
    if (config_.cross_attention) {
      Var n = layer_norm(h, b.ln_cross);
      Var attn = ag::multihead_attention(linear(n, b.cq), linear(*memory, b.ck),
                                         linear(*memory, b.cv), config_.heads,
                                         /*causal=*/false, nullptr);
      h = ag::add(h, linear(attn, b.co));
    }
    {
      Var n = layer_norm(h, b.ln2);
      h = ag::add(h, linear(ag::gelu(linear(n, b.fc1)), b.fc2));
    }
  }
  return layer_norm(h, ln_final_);
}

Transformer::KVCache Transformer::make_cache() const {
  KVCache c;
  c.k.resize(static_cast<size_t>(config_.layers));
  c.v.resize(static_cast<size_t>(config_.layers));
  for (int l = 0; l < config_.layers; ++l) {
    c.k[static_cast<size_t>(l)] = Mat(0, config_.width);
    c.v[static_cast<size_t>(l)] = Mat(0, config_.width);
  }
  return c;
}

namespace {

Mat gelu_infer(const Mat& x) {
  constexpr Scalar c = 0.7978845608028654f;
  constexpr Scalar a = 0.044715f;
  const auto xa = x.array();
  return (0.5f * xa * (1 + (c * (xa + a * xa.cube())).tanh())).matrix();
}

}  // namespace

Mat Transformer::forward_incremental(const Mat& x_new, KVCache& cache) const {
  if (config_.cross_attention)
    throw ValidationError("incremental forward does not support cross attention");
  const int H = config_.heads;
  const Index dh = config_.width / H;
  const Scalar sc = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
  const Index prev = cache.length();
  const Index tn = x_new.rows();
  Mat h = x_new;
  for (size_t l = 0; l < blocks_.size(); ++l) {
    const BlockP& b = blocks_[l];
    const Mat n = layer_norm_infer(h, b.ln1);
    const Mat q = linear_infer(n, b.wq);
    Mat& kc = cache.k[l];
    Mat& vc = cache.v[l];
    const Index old_rows = kc.rows();
    kc.conservativeResize(old_rows + tn, Eigen::NoChange);
    vc.conservativeResize(old_rows + tn, Eigen::NoChange);
    kc.bottomRows(tn) = linear_infer(n, b.wk);
    vc.bottomRows(tn) = linear_infer(n, b.wv);
    Mat attn(tn, config_.width);
    for (int hd = 0; hd < H; ++hd) {
      const auto qh = q.middleCols(hd * dh, dh);
      const auto kh = kc.middleCols(hd * dh, dh);
      const auto vh = vc.middleCols(hd * dh, dh);
      for (Index i = 0; i < tn; ++i) {
        const Index visible = prev + i + 1;
        Eigen::RowVectorXf s = sc * (qh.row(i) * kh.topRows(visible).transpose());
        const Scalar mx = s.maxCoeff();
        s = (s.array() - mx).exp();
        s /= s.sum();
        attn.row(i).segment(hd * dh, dh) = s * vh.topRows(visible);
      }
    }
    h += linear_infer(attn, b.wo);
    const Mat n2 = layer_norm_infer(h, b.ln2);
    h += linear_infer(gelu_infer(linear_infer(n2, b.fc1)), b.fc2);
  }
  return layer_norm_infer(h, ln_final_);
}

Mat positional_encoding(Index length, Index width) {
  Mat pe = Mat::Zero(length, width);
  for (Index pos = 0; pos < length; ++pos) {
    for (Index i = 0; i < width / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) /
                                                static_cast<double>(width));
      pe(pos, 2 * i) = static_cast<Scalar>(std::sin(pos * freq));
      pe(pos, 2 * i + 1) = static_cast<Scalar>(std::cos(pos * freq));
    }
  }
  return pe;
}

Vec scalar_time_embedding(double tau, Index width) {
  Vec e = Vec::Zero(width);
  for (Index i = 0; i < width / 2; ++i) {
    const double freq =
        std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(width));
    // tau in [0,1] mapped onto the same frequency ladder as position 0..100
    e(2 * i) = static_cast<Scalar>(std::sin(100.0 * tau * freq));
    e(2 * i + 1) = static_cast<Scalar>(std::cos(100.0 * tau * freq));
  }
  return e;
}

}  // namespace ttslab::nn
