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

#include "ttslab/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ttslab/evalkit.hpp"
#include "ttslab/nn.hpp"

namespace ttslab::adapt {

using lm::MixedSequence;
using lm::TokenLm;

void SpeakerRegistry::validate(const lm::VocabLayout& layout) const {
  if (speaker_ids.empty()) throw ValidationError("speaker registry is empty");
  for (size_t i = 0; i < speaker_ids.size(); ++i) {
    for (size_t j = i + 1; j < speaker_ids.size(); ++j)
      if (speaker_ids[i] == speaker_ids[j])
        throw ValidationError("duplicate registry entry " + speaker_ids[i]);
    layout.speaker_token(speaker_ids[i]);  // throws when unregistered
  }
  if (!utterance_counts.empty() && utterance_counts.size() != speaker_ids.size())
    throw ValidationError("registry utterance counts out of step with speakers");
}

bool SpeakerRegistry::contains(const std::string& id) const {
  return std::find(speaker_ids.begin(), speaker_ids.end(), id) != speaker_ids.end();
}

namespace {

void check_speaker_prefixed(const std::vector<MixedSequence>& data,
                            const lm::VocabLayout& layout, const SpeakerRegistry& registry) {
  for (const MixedSequence& seq : data) {
    if (seq.size() < 2) throw ValidationError("fine-tune sequence too short");
    const int spk = seq.ids[1];
    const int idx = spk - layout.speaker_offset;
    if (idx < 0 || idx >= static_cast<int>(layout.speakers.size()))
      throw VocabError("fine-tune sequence lacks a speaker-index token at position 1");
    if (!registry.contains(layout.speakers[static_cast<size_t>(idx)]))
      throw VocabError("speaker " + layout.speakers[static_cast<size_t>(idx)] +
                       " appears in data but is not registered");
  }
}

}  // namespace

TokenLm speaker_finetune(const TokenLm& base, const SpeakerRegistry& registry,
                         const std::vector<MixedSequence>& data, const FinetuneConfig& config) {
  registry.validate(base.layout());
  if (data.empty()) throw DataError("speaker fine-tuning data is empty");
  check_speaker_prefixed(data, base.layout(), registry);
  TokenLm tuned(base);
  tuned.train(data, config.steps, config.lr, config.batch_size, config.seed, config.warmup);
  return tuned;
}

TokenLm instruction_finetune(const TokenLm& sft, const SpeakerRegistry& registry,
                             const std::vector<MixedSequence>& data,
                             const FinetuneConfig& config) {
  registry.validate(sft.layout());
  if (data.empty()) throw DataError("instruction fine-tuning data is empty");
  check_speaker_prefixed(data, sft.layout(), registry);
  const lm::VocabLayout& layout = sft.layout();
  for (const MixedSequence& seq : data) {
    if (seq.size() < 3) throw ValidationError("instruction sequence too short");
    const bool has_control = std::find(layout.control_ids.begin(), layout.control_ids.end(),
                                       seq.ids[2]) != layout.control_ids.end();
    if (!has_control)
      throw VocabError("instruction sequence lacks a control token after the speaker index");
  }
  TokenLm tuned(sft);
  tuned.train(data, config.steps, config.lr, config.batch_size, config.seed, config.warmup);
  return tuned;
}

void RewardSpec::validate() const {
  if (alpha < 0 || lambda < 0) throw ValidationError("reward weights must be nonnegative");
  if (!(clip_lo < clip_hi) || !std::isfinite(clip_lo) || !std::isfinite(clip_hi))
    throw ValidationError("reward clip range must be finite and ordered");
}

double compute_reward(const Mat& generated_frames, const Mat* reference_frames,
                      const std::vector<int>& target_text, const RewardSpec& spec,
                      const corpus::WorldBasis& world) {
  spec.validate();
  if (generated_frames.rows() == 0) throw DataError("reward of empty generated frames");
  double r = 0.0;
  if (spec.kind == RewardSpec::Kind::kSimWer) {
    if (!reference_frames || reference_frames->rows() == 0)
      throw ValidationError("SIM_WER reward needs a reference utterance");
    const double sim = eval::sim_metric(corpus::oracle_speaker_embedding(generated_frames, world),
                                        corpus::oracle_speaker_embedding(*reference_frames, world));
    const double wer =
        eval::wer_proxy(target_text, corpus::oracle_decode_text(generated_frames, world));
    r = spec.alpha * sim - spec.lambda * wer;
  } else {
    r = corpus::oracle_emotion_classify(generated_frames, world) == spec.target_emotion ? 1.0
                                                                                        : 0.0;
  }
  return std::clamp(r, spec.clip_lo, spec.clip_hi);
}

void RLConfig::validate() const {
  if (samples_per_prompt < 2) throw ValidationError("REINFORCE needs k >= 2 samples per prompt");
  if (!(temperature > 0)) throw ValidationError("rl temperature must be positive");
  if (kl_coeff < 0) throw ValidationError("kl coefficient must be nonnegative");
  if (steps < 1 || prompts_per_step < 1) throw ValidationError("rl sizes must be positive");
}

io::json RlStepLog::to_json() const {
  return io::json{{"step", step},
                  {"mean_reward", mean_reward},
                  {"kl", kl},
                  {"mean_duration", mean_duration_frames},
                  {"wer", mean_wer},
                  {"sim", mean_sim},
                  {"zero_advantage", zero_advantage}};
}

void RlReport::save_jsonl(const std::filesystem::path& path) const {
  std::vector<io::json> rows;
  rows.reserve(steps.size());
  for (const RlStepLog& s : steps) rows.push_back(s.to_json());
  io::write_jsonl(path, rows);
}

lm::TokenLm reinforce_tune(const TokenLm& base, const std::vector<RlPrompt>& prompts,
                           const RewardSpec& reward, const RLConfig& config,
                           const RolloutDecodeFn& decode, const corpus::WorldBasis& world,
                           RlReport* report) {
  config.validate();
  reward.validate();
  if (prompts.empty()) throw DataError("REINFORCE needs a nonempty prompt set");

  TokenLm policy(base);
  TokenLm frozen(base);
  nn::AdamConfig acfg;
  acfg.lr = config.lr;
  nn::Adam opt(policy.params().all(), acfg);
  Rng rng(Rng::splitmix(config.seed ^ 0x5e1f));

  RlReport local;
  RlReport& rep = report ? *report : local;
  const int k = config.samples_per_prompt;

  for (int step = 0; step < config.steps; ++step) {
    opt.zero_grads();
    double reward_sum = 0, kl_sum = 0, dur_sum = 0, wer_sum = 0, sim_sum = 0;
    int rollouts = 0, kl_terms = 0;
    bool any_nonzero_adv = false;

    for (int p = 0; p < config.prompts_per_step; ++p) {
      const RlPrompt& prompt = prompts[rng.below(prompts.size())];

      std::vector<MixedSequence> rollouts_seq(static_cast<size_t>(k));
      std::vector<double> rewards(static_cast<size_t>(k), 0.0);
      for (int i = 0; i < k; ++i) {
        lm::SamplerConfig sampler;
        sampler.temperature = config.temperature;
        sampler.top_k = config.top_k;
        sampler.max_new_tokens = prompt.max_new_tokens;
        sampler.seed = rng.next_u64();
        const vq::SpeechTokenSeq tokens = policy.generate(prompt.prefix, sampler, 2);

        MixedSequence seq = prompt.prefix;
        lm::append_continuation(seq, tokens, policy.layout(), policy.config().context);
        rollouts_seq[static_cast<size_t>(i)] = std::move(seq);

        double r = reward.clip_lo;
        if (!tokens.token_ids.empty()) {
          const Mat frames = decode(prompt, tokens);
          RewardSpec spec = reward;
          if (spec.kind == RewardSpec::Kind::kSer) spec.target_emotion = prompt.target_emotion;
          r = compute_reward(frames, &prompt.reference_frames, prompt.target_text, spec, world);
          if (reward.kind == RewardSpec::Kind::kSimWer) {
            wer_sum += eval::wer_proxy(prompt.target_text,
                                       corpus::oracle_decode_text(frames, world));
            sim_sum +=
                eval::sim_metric(corpus::oracle_speaker_embedding(frames, world),
                                 corpus::oracle_speaker_embedding(prompt.reference_frames, world));
          }
          dur_sum += static_cast<double>(frames.rows());
        }
        rewards[static_cast<size_t>(i)] = r;
        reward_sum += r;
        ++rollouts;
      }

      // Advantages against the configured baseline.
      std::vector<double> adv(static_cast<size_t>(k));
      const double mean =
          std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(k);
      for (int i = 0; i < k; ++i) {
        if (config.baseline == RLConfig::Baseline::kBatchMean) {
          adv[static_cast<size_t>(i)] = rewards[static_cast<size_t>(i)] - mean;
        } else {
          const double others = (mean * k - rewards[static_cast<size_t>(i)]) / (k - 1);
          adv[static_cast<size_t>(i)] = rewards[static_cast<size_t>(i)] - others;
        }
        if (std::abs(adv[static_cast<size_t>(i)]) > 1e-12) any_nonzero_adv = true;
      }

      for (int i = 0; i < k; ++i) {
        const MixedSequence& seq = rollouts_seq[static_cast<size_t>(i)];
        if (seq.size() < 2) continue;
        std::vector<int> inputs(seq.ids.begin(), seq.ids.end() - 1);
        const Mat base_logits = frozen.constrained_logits(inputs);
        double kl = 0.0;
        const double denom = static_cast<double>(k * config.prompts_per_step);
        policy.reinforce_accumulate(seq, adv[static_cast<size_t>(i)] / denom, base_logits,
                                    config.kl_coeff / denom, &kl);
        kl_sum += kl;
        ++kl_terms;
      }
    }

    if (!std::isfinite(opt.grad_norm()))
      throw TrainingError("REINFORCE produced a non-finite gradient at step " +
                          std::to_string(step));
    opt.step();

    RlStepLog log;
    log.step = step;
    log.mean_reward = rollouts > 0 ? reward_sum / rollouts : 0.0;
    log.kl = kl_terms > 0 ? kl_sum / kl_terms : 0.0;
    log.mean_duration_frames = rollouts > 0 ? dur_sum / rollouts : 0.0;
    log.mean_wer = rollouts > 0 ? wer_sum / rollouts : 0.0;
    log.mean_sim = rollouts > 0 ? sim_sum / rollouts : 0.0;
    log.zero_advantage = !any_nonzero_adv;
    rep.steps.push_back(log);
  }
  return policy;
}

}  // namespace ttslab::adapt
