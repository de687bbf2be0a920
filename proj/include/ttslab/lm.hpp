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

#ifndef TTSLAB_LM_HPP_
#define TTSLAB_LM_HPP_

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "ttslab/corpus.hpp"
#include "ttslab/nn.hpp"
#include "ttslab/tokenizer.hpp"

// Autoregressive token language model over mixed text + speech-token
// sequences. Text positions never contribute to the loss; decoding is
// constrained to the speech range plus EOS.
namespace ttslab::lm {

struct VocabLayout {
  int num_symbols = 24;   // text ids [0, V)
  int boundary_id = 24;   // V
  int speech_offset = 25; // O; speech ids [O, O+K)
  int speech_size = 256;  // K
  int bos = 0, eos = 0, sep = 0;
  std::vector<std::string> speakers;  // speaker k -> id speaker_offset + k
  int speaker_offset = 0;
  std::array<int, corpus::kNumEmotions> control_ids{};  // one per emotion
  int total = 0;

  static VocabLayout build(int num_symbols, int speech_size,
                           const std::vector<std::string>& speaker_ids);
  void validate() const;
  int speaker_token(const std::string& speaker_id) const;
  int control_token(corpus::Emotion e) const;
  bool is_speech(int id) const { return id >= speech_offset && id < speech_offset + speech_size; }

  io::json to_json() const;
  static VocabLayout from_json(const io::json& j);
};

struct MixedSequence {
  std::vector<int> ids;
  std::vector<uint8_t> loss_mask;  // 1 exactly at speech-token targets (and final EOS)

  size_t size() const { return ids.size(); }
  void validate(const VocabLayout& layout) const;
};

// ICL prefix: [BOS, text(prompt), text(target), SEP, speech(prompt)].
// Prompt speech positions are loss-marked; generation continues from the end.
MixedSequence build_icl_sequence(const std::vector<int>& prompt_text,
                                 const std::vector<int>& target_text,
                                 const vq::SpeechTokenSeq& prompt_tokens,
                                 const VocabLayout& layout, int context_window = 512);

// Appends continuation speech tokens plus EOS (all loss-marked): the training
// form of an ICL sequence.
void append_continuation(MixedSequence& seq, const vq::SpeechTokenSeq& target_tokens,
                         const VocabLayout& layout, int context_window = 512);

// Speaker fine-tune form: [BOS, speaker, text, SEP, speech..., EOS].
MixedSequence build_speaker_sequence(int speaker_token, const std::vector<int>& text,
                                     const vq::SpeechTokenSeq& tokens, const VocabLayout& layout,
                                     int context_window = 512);

// Instruction form: [BOS, speaker, control, text, SEP, speech..., EOS].
MixedSequence build_instruction_sequence(int speaker_token, int control_token,
                                         const std::vector<int>& text,
                                         const vq::SpeechTokenSeq& tokens,
                                         const VocabLayout& layout, int context_window = 512);

struct LmConfig {
  int layers = 4;
  int width = 128;
  int heads = 4;
  int mlp_hidden = 512;
  int context = 512;
  int train_steps = 2000;
  int batch_size = 8;
  double lr = 1e-3;
  int warmup = 50;
  uint64_t seed = 7;

  void validate() const;
};

struct SamplerConfig {
  double temperature = 0.9;
  int top_k = 16;
  int max_new_tokens = 256;
  uint64_t seed = 0;

  void validate() const;
};

struct TrainStats {
  std::vector<double> smoothed_loss;
  double final_loss = 0.0;
};

class TokenLm {
 public:
  TokenLm(const VocabLayout& layout, const LmConfig& config);
  TokenLm(const TokenLm& other);
  TokenLm& operator=(const TokenLm&) = delete;

  // Cross entropy over loss-masked positions, constrained to speech+EOS.
  // Deterministic in config.seed. Throws TrainingError on divergence.
  TrainStats train(const std::vector<MixedSequence>& sequences);

  // Fine-tuning entry point with explicit budget (speaker/instruction stages).
  TrainStats train(const std::vector<MixedSequence>& sequences, int steps, double lr,
                   int batch_size, uint64_t seed, int warmup = 10);

  // One REINFORCE accumulation: adds pg_weight * (-log p(masked ids)) plus
  // kl_weight * mean-token KL(current || base) to the parameter gradients.
  // base_logits = frozen_policy.constrained_logits(seq.ids minus last id).
  // Returns the policy-gradient term; *kl_value gets the mean KL.
  double reinforce_accumulate(const MixedSequence& seq, double pg_weight, const Mat& base_logits,
                              double kl_weight, double* kl_value);

  // One gradient accumulation pass for external fine-tuners (REINFORCE).
  // Returns the loss value; gradients land in params().
  double accumulate_loss(const MixedSequence& seq, double scale = 1.0);

  // Low-level loss on explicit (inputs, targets, mask); used by training and
  // by tests that scramble targets at masked-off positions.
  double batch_loss(const std::vector<int>& inputs, const std::vector<int>& targets,
                    const std::vector<uint8_t>& target_mask, bool backprop, double scale = 1.0);

  // Sum of constrained log-probabilities at loss-masked positions; <= 0.
  double sequence_logprob(const MixedSequence& seq) const;

  // Per-position constrained logits for a full sequence (teacher-forced).
  Mat constrained_logits(const std::vector<int>& ids) const;

  // Constrained sampling; returns speech tokens re-based to [0, K).
  vq::SpeechTokenSeq generate(const MixedSequence& prefix, const SamplerConfig& sampler,
                              int downsample) const;

  // Teacher-forced top-1 accuracy at masked positions.
  double masked_accuracy(const std::vector<MixedSequence>& sequences) const;

  const VocabLayout& layout() const { return layout_; }
  const LmConfig& config() const { return config_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  void save(const std::filesystem::path& path) const;
  static TokenLm load(const std::filesystem::path& path);

 private:
  ag::Var forward_logits(ag::Tape& tape, const std::vector<int>& inputs);
  Mat legal_bias_rows(Index rows) const;

  VocabLayout layout_;
  LmConfig config_;
  nn::ParamStore params_;
  ag::Param* tok_emb_ = nullptr;
  std::unique_ptr<nn::Transformer> tf_;
  nn::LinearP head_;
  Mat pos_enc_;
};

}  // namespace ttslab::lm

#endif  // TTSLAB_LM_HPP_
