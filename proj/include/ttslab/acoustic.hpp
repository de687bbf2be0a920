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

#ifndef TTSLAB_ACOUSTIC_HPP_
#define TTSLAB_ACOUSTIC_HPP_

#include <chrono>
#include <filesystem>
#include <optional>
#include <vector>

#include "ttslab/nn.hpp"
#include "ttslab/tokenizer.hpp"

// Token-conditioned rectified-flow decoder producing vocoder latents, the
// vocoder autoencoder itself, and the causal streaming path with latency
// instrumentation.
namespace ttslab::acoustic {

// --- Vocoder -------------------------------------------------------------------

struct VocoderConfig {
  int latent_dim = 16;
  int hidden = 64;
  int train_steps = 1500;
  int batch_size = 512;
  double lr = 1e-3;
  double holdout_fraction = 0.05;
  uint64_t seed = 13;
};

struct VocoderReport {
  std::vector<double> smoothed_loss;
  double held_out_mse = 0.0;
};

class Vocoder {
 public:
  static Vocoder train(const std::vector<Mat>& corpus_frames, const VocoderConfig& config,
                       int frame_dim, VocoderReport* report = nullptr);
  Mat encode(const Mat& frames) const;   // T x d_l
  Mat decode(const Mat& latents) const;  // T x D
  int latent_dim() const { return config_.latent_dim; }
  int frame_dim() const { return frame_dim_; }
  void save(const std::filesystem::path& path) const;
  static Vocoder load(const std::filesystem::path& path);

 private:
  Vocoder() = default;
  VocoderConfig config_;
  int frame_dim_ = 0;
  nn::ParamStore params_;
  nn::LinearP enc1_, enc2_, dec1_, dec2_;
};

// --- Diffusion -----------------------------------------------------------------

// One aligned training item: latents have exactly r * tokens.size() rows.
struct DiffusionExample {
  std::vector<int> tokens;  // in [0, K)
  Mat latents;
  DVec timbre;  // unit speaker embedding, may be zero-size when absent
};

struct DiffusionCondition {
  std::vector<int> tokens;            // in [0, K); upsampled by repetition
  std::optional<Mat> prompt_latents;  // clamped prefix, row count multiple of r
  std::optional<DVec> timbre_ref;
  bool condition_dropout = false;  // evaluate the unconditional branch
};

struct FlowConfig {
  int num_steps = 16;       // N
  double guidance_scale = 1.0;  // v = v_c + g*(v_c - v_u); 0 = conditional only
  uint64_t seed = 0;

  void validate() const;
};

struct DiffusionConfig {
  int layers = 4;
  int width = 128;
  int heads = 4;
  int mlp_hidden = 512;
  int token_embed_dim = 32;
  int codebook_size = 256;  // K
  int downsample = 2;       // r
  int latent_dim = 16;
  int timbre_dim = 4;
  int max_len = 1100;
  double p_drop = 0.1;         // token-condition dropout for CFG
  double p_timbre = 0.5;       // probability the timbre reference is provided
  double p_prefix = 0.5;       // probability a latent prefix is provided
  int train_steps = 2500;
  int batch_size = 8;
  double lr = 1e-3;
  int warmup = 50;
  uint64_t seed = 17;

  void validate() const;
};

struct DiffusionReport {
  std::vector<double> smoothed_loss;
  double final_loss = 0.0;
};

struct StreamChunkTiming {
  int chunk_index = 0;
  double wall_time_s = 0.0;  // time from stream start to chunk availability
};

struct StreamState {
  int chunk_size = 0;                     // C, in tokens
  Mat emitted;                            // latent history
  std::vector<int> pending_tokens;        // not yet consumed
  std::vector<StreamChunkTiming> timing;  // one entry per emitted chunk
  io::json timing_json() const;
};

struct LatencyReport {
  double first_packet_latency_s = 0.0;
  double rtf = 0.0;
};

LatencyReport measure_latency_rtf(const std::vector<StreamChunkTiming>& timing,
                                  Index output_frames, double frame_rate);

class DiffusionModel;

// Pull-based streaming sampler: each chunk re-runs the ODE over
// [emitted history + current chunk] with the history clamped.
class StreamSampler {
 public:
  StreamSampler(const DiffusionModel& model, DiffusionCondition cond, FlowConfig flow,
                int chunk_size);
  bool done() const;
  Mat next_chunk();  // throws if done
  const StreamState& state() const { return state_; }
  int total_chunks() const { return total_chunks_; }

 private:
  const DiffusionModel& model_;
  DiffusionCondition cond_;
  FlowConfig flow_;
  StreamState state_;
  int total_chunks_ = 0;
  int emitted_chunks_ = 0;
  Index prompt_rows_ = 0;
  std::chrono::steady_clock::time_point start_;
};

class DiffusionModel {
 public:
  DiffusionModel(const DiffusionConfig& config);

  DiffusionReport train(const std::vector<DiffusionExample>& examples);

  // Velocity field v(x_tau, tau | cond). Rows of x span the whole sequence.
  Mat velocity(const Mat& x_tau, double tau, const DiffusionCondition& cond,
               const Mat* prefix_latents, Index prefix_rows) const;

  // Euler integration from tau=0 to 1 in N uniform steps; the prompt prefix,
  // when present, is clamped to its known values at every step.
  Mat sample(const DiffusionCondition& cond, const FlowConfig& flow) const;

  // Output latent length for a condition (r * token count).
  Index output_length(const DiffusionCondition& cond) const;

  const DiffusionConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }

  void save(const std::filesystem::path& path) const;
  static DiffusionModel load(const std::filesystem::path& path);

  // Deterministic per-frame base noise, shared by offline and streaming paths.
  static Mat base_noise(uint64_t seed, Index rows, Index cols);

 private:
  friend class StreamSampler;
  Mat sample_window(const DiffusionCondition& cond, const FlowConfig& flow, Index window_rows,
                    const Mat& clamped, Index clamped_rows) const;
  ag::Var forward_velocity(ag::Tape& tape, const Mat& x_tau, double tau,
                           const std::vector<int>& frame_tokens, const DVec* timbre,
                           const Mat* prefix, Index prefix_rows, bool drop_tokens) const;

  DiffusionConfig config_;
  nn::ParamStore params_;
  ag::Param* token_emb_ = nullptr;  // K+1 rows; last row is the null (dropped) token
  nn::LinearP in_proj_;
  std::unique_ptr<nn::Transformer> tf_;
  nn::LinearP head_;
  Mat pos_enc_;
};

// Builds aligned (tokens, latents, timbre) examples. Frames are trimmed to a
// multiple of the tokenizer downsample so lengths match one-to-one.
std::vector<DiffusionExample> make_diffusion_examples(const std::vector<Mat>& corpus_frames,
                                                      const std::vector<DVec>& timbres,
                                                      const vq::Tokenizer& tokenizer,
                                                      const Vocoder& vocoder);

Mat trim_to_multiple(const Mat& frames, int r);

}  // namespace ttslab::acoustic

#endif  // TTSLAB_ACOUSTIC_HPP_
