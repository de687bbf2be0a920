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

#ifndef TTSLAB_ADAPT_HPP_
#define TTSLAB_ADAPT_HPP_

#include <functional>
#include <string>
#include <vector>

#include "ttslab/corpus.hpp"
#include "ttslab/lm.hpp"

// Fine-tuning and post-training: speaker fine-tuning with index tokens,
// instruction fine-tuning with emotion controls, REINFORCE with oracle-backed
// rewards.
namespace ttslab::adapt {

struct SpeakerRegistry {
  std::vector<std::string> speaker_ids;   // order matches the vocab layout
  std::vector<int> utterance_counts;      // data-hours analog

  void validate(const lm::VocabLayout& layout) const;
  bool contains(const std::string& id) const;
};

struct FinetuneConfig {
  int steps = 300;
  int batch_size = 8;
  double lr = 3e-4;
  int warmup = 10;
  uint64_t seed = 23;
};

// Speaker fine-tuning: every sequence must start [BOS, speaker-index, ...]
// with a registered index. Returns a tuned copy; the base stays frozen.
lm::TokenLm speaker_finetune(const lm::TokenLm& base, const SpeakerRegistry& registry,
                             const std::vector<lm::MixedSequence>& data,
                             const FinetuneConfig& config);

// Instruction fine-tuning: sequences carry an emotion-control token right
// after the speaker index.
lm::TokenLm instruction_finetune(const lm::TokenLm& sft, const SpeakerRegistry& registry,
                                 const std::vector<lm::MixedSequence>& data,
                                 const FinetuneConfig& config);

// --- Rewards -------------------------------------------------------------------

struct RewardSpec {
  enum class Kind { kSimWer, kSer };
  Kind kind = Kind::kSimWer;
  double alpha = 1.0;    // SIM weight
  double lambda = 0.5;   // WER penalty weight
  corpus::Emotion target_emotion = corpus::Emotion::kNeutral;
  double clip_lo = -2.0;
  double clip_hi = 2.0;

  void validate() const;
};

// SIM_WER: alpha*cos(emb(gen), emb(reference)) - lambda*WER(target, decode(gen)).
// SER: 1 if the oracle classifies the target emotion, else 0. Clipped.
double compute_reward(const Mat& generated_frames, const Mat* reference_frames,
                      const std::vector<int>& target_text, const RewardSpec& spec,
                      const corpus::WorldBasis& world);

// --- REINFORCE -----------------------------------------------------------------

struct RLConfig {
  int samples_per_prompt = 8;  // k
  double temperature = 1.0;
  enum class Baseline { kBatchMean, kLeaveOneOut } baseline = Baseline::kBatchMean;
  double kl_coeff = 0.05;  // beta against the frozen pre-RL policy
  int steps = 40;
  int prompts_per_step = 4;
  double lr = 2e-4;
  int top_k = 16;
  uint64_t seed = 29;

  void validate() const;
};

struct RlPrompt {
  lm::MixedSequence prefix;        // ends at the speech-continuation position
  std::vector<int> target_text;
  Mat reference_frames;            // speaker reference for SIM rewards
  corpus::Emotion target_emotion = corpus::Emotion::kNeutral;  // SER target
  int max_new_tokens = 128;
};

// Decodes sampled speech tokens into frames through the acoustic stack.
using RolloutDecodeFn = std::function<Mat(const RlPrompt& prompt, const vq::SpeechTokenSeq&)>;

struct RlStepLog {
  int step = 0;
  double mean_reward = 0.0;
  double kl = 0.0;
  double mean_duration_frames = 0.0;  // reward-hacking probe
  double mean_wer = 0.0;
  double mean_sim = 0.0;
  bool zero_advantage = false;  // all-equal rewards -> pure KL step
  io::json to_json() const;
};

struct RlReport {
  std::vector<RlStepLog> steps;
  void save_jsonl(const std::filesystem::path& path) const;
};

// REINFORCE with a batch baseline and KL anchoring to the frozen base
// policy. Only the language model is updated.
lm::TokenLm reinforce_tune(const lm::TokenLm& base, const std::vector<RlPrompt>& prompts,
                           const RewardSpec& reward, const RLConfig& config,
                           const RolloutDecodeFn& decode, const corpus::WorldBasis& world,
                           RlReport* report = nullptr);

}  // namespace ttslab::adapt

#endif  // TTSLAB_ADAPT_HPP_
