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

#ifndef TTSLAB_TOKENIZER_HPP_
#define TTSLAB_TOKENIZER_HPP_

#include <filesystem>
#include <vector>

#include "ttslab/nn.hpp"

// Discrete speech tokenizer: MLP encoder over r-frame windows, vector
// quantization with EMA codebook updates and straight-through gradients,
// MLP decoder for reconstruction and diagnostics.
namespace ttslab::vq {

struct SpeechTokenSeq {
  std::vector<int> token_ids;  // each in [0, K)
  int downsample = 2;          // r
  int source_length = 0;       // T of the encoded frame matrix

  Index length() const { return static_cast<Index>(token_ids.size()); }
};

struct TokenizerConfig {
  int codebook_size = 256;  // K
  int downsample = 2;       // r
  int code_dim = 16;        // d_z
  int hidden = 64;
  int train_steps = 3000;
  int batch_size = 256;
  double lr = 1e-3;
  double commitment_weight = 0.25;
  double ema_decay = 0.99;
  double holdout_fraction = 0.05;
  uint64_t seed = 41;

  void validate() const;
};

struct TokenizerReport {
  std::vector<double> smoothed_loss;  // per log interval
  double held_out_mse = 0.0;
  double held_out_utilization = 0.0;  // fraction of codes used
  int dead_code_reseeds = 0;
};

class Tokenizer {
 public:
  // Trains on raw frame matrices. Deterministic in config.seed.
  static Tokenizer train(const std::vector<Mat>& corpus_frames, const TokenizerConfig& config,
                         int frame_dim, TokenizerReport* report = nullptr);

  SpeechTokenSeq encode(const Mat& frames) const;
  Mat reconstruct(const SpeechTokenSeq& tokens) const;

  // Mean per-entry squared reconstruction error of encode+reconstruct.
  double reconstruction_mse(const Mat& frames) const;

  const TokenizerConfig& config() const { return config_; }
  int frame_dim() const { return frame_dim_; }
  const Mat& codebook() const { return codebook_; }

  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

  // Splits a frame matrix into ceil(T/r) windows of r*frame_dim entries,
  // right-padding the last window by repeating the final frame.
  static Mat window_frames(const Mat& frames, int r);

 private:
  Tokenizer() = default;
  Mat encode_windows(const Mat& windows) const;  // rows -> code-space vectors
  void build_net(Rng& rng);

  TokenizerConfig config_;
  int frame_dim_ = 0;
  nn::ParamStore params_;
  nn::LinearP enc1_, enc2_, dec1_, dec2_;
  Mat codebook_;  // K x d_z
};

}  // namespace ttslab::vq

#endif  // TTSLAB_TOKENIZER_HPP_
