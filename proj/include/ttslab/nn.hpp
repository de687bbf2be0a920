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

#ifndef TTSLAB_NN_HPP_
#define TTSLAB_NN_HPP_

#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "ttslab/autograd.hpp"
#include "ttslab/io.hpp"
#include "ttslab/rng.hpp"

namespace ttslab::nn {

using ag::Param;
using ag::Tape;
using ag::Var;

// Owns a model's parameters; names double as checkpoint section names.
class ParamStore {
 public:
  Param& gaussian(const std::string& name, Index rows, Index cols, Rng& rng, double stddev);
  Param& zeros(const std::string& name, Index rows, Index cols);
  Param& ones(const std::string& name, Index rows, Index cols);

  std::vector<Param*> all();
  Param& at(const std::string& name);
  void zero_grads();

  void save_into(io::Checkpoint& ck) const;
  void load_from(const io::Checkpoint& ck);

  // L2 distance between this store's values and another's (same layout).
  double distance_to(const ParamStore& other) const;

 private:
  std::deque<Param> params_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; 0 disables
};

class Adam {
 public:
  Adam(std::vector<Param*> params, AdamConfig config);
  // lr_scale multiplies the configured base rate (schedules hook in here).
  void step(double lr_scale = 1.0);
  void zero_grads();
  double grad_norm() const;

 private:
  std::vector<Param*> params_;
  AdamConfig config_;
  std::vector<Mat> m_, v_;
  int64_t t_ = 0;
};

// Half-cosine decay from 1 to floor, with linear warmup over warmup steps.
double cosine_lr_scale(int64_t step, int64_t total_steps, int64_t warmup = 0,
                       double floor = 0.05);

struct LinearP {
  Param* w = nullptr;  // in x out
  Param* b = nullptr;  // 1 x out
};
LinearP make_linear(ParamStore& ps, const std::string& name, Index in, Index out, Rng& rng);
Var linear(Var x, const LinearP& p);
Mat linear_infer(const Mat& x, const LinearP& p);

struct LayerNormP {
  Param* gain = nullptr;
  Param* bias = nullptr;
};
LayerNormP make_layer_norm(ParamStore& ps, const std::string& name, Index width);
Var layer_norm(Var x, const LayerNormP& p);
Mat layer_norm_infer(const Mat& x, const LayerNormP& p);

struct TransformerConfig {
  int layers = 4;
  int width = 128;
  int heads = 4;
  int mlp_hidden = 512;
  bool cross_attention = false;
};

struct BlockP {
  LayerNormP ln1;
  LinearP wq, wk, wv, wo;
  LayerNormP ln_cross;  // present only with cross attention
  LinearP cq, ck, cv, co;
  LayerNormP ln2;
  LinearP fc1, fc2;
};

// Pre-norm transformer over a caller-built input stream. Self-attention can
// be causal and/or masked with an additive bias; cross-attention (when
// configured) reads a fixed memory sequence.
class Transformer {
 public:
  Transformer(ParamStore& ps, const TransformerConfig& config, const std::string& prefix,
              Rng& rng);

  Var forward(Tape& tape, Var x, bool causal, const Mat* attn_bias = nullptr,
              std::optional<Var> memory = std::nullopt) const;

  // Inference with per-layer KV cache; causal self-attention only.
  struct KVCache {
    std::vector<Mat> k, v;  // one entry per layer, rows grow as tokens arrive
    Index length() const { return k.empty() ? 0 : k.front().rows(); }
  };
  KVCache make_cache() const;
  // Appends new rows to the cache and returns their final hidden states.
  Mat forward_incremental(const Mat& x_new, KVCache& cache) const;

  const TransformerConfig& config() const { return config_; }

 private:
  TransformerConfig config_;
  std::vector<BlockP> blocks_;
  LayerNormP ln_final_;
};

// Standard sin/cos positional table, rows 0..length-1.
Mat positional_encoding(Index length, Index width);
// Same frequencies applied to a scalar time in [0, 1] (diffusion step embedding).
Vec scalar_time_embedding(double tau, Index width);

}  // namespace ttslab::nn

#endif  // TTSLAB_NN_HPP_
