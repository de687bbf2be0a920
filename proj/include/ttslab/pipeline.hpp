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

#ifndef TTSLAB_PIPELINE_HPP_
#define TTSLAB_PIPELINE_HPP_

#include <optional>

#include "ttslab/acoustic.hpp"
#include "ttslab/corpus.hpp"
#include "ttslab/dit.hpp"
#include "ttslab/lm.hpp"

// Glue paths wiring tokenizer -> LM -> diffusion -> vocoder for the standard
// synthesis modes. All functions are deterministic in the seeds carried by
// their sampler/flow configs.
namespace ttslab::pipeline {

struct SynthStack {
  const corpus::WorldBasis* world = nullptr;
  const vq::Tokenizer* tokenizer = nullptr;
  const acoustic::Vocoder* vocoder = nullptr;
  const acoustic::DiffusionModel* diffusion = nullptr;

  void require() const;
};

// Upper bound on continuation tokens for a target of `target_symbols`,
// clamped to the remaining context window.
int continuation_budget(int prefix_len, int context, int target_symbols);

// Decodes generated continuation tokens into frames: diffusion over
// [prompt tokens ++ generated tokens] with the prompt latents clamped, then
// the vocoder on the continuation region only.
Mat decode_continuation(const SynthStack& stack, const Mat& prompt_frames,
                        const vq::SpeechTokenSeq& generated,
                        const acoustic::FlowConfig& flow);

// Full zero-shot ICL synthesis for (prompt audio, prompt text, target text).
Mat icl_synthesize(const SynthStack& stack, const lm::TokenLm& model,
                   const std::vector<int>& prompt_text, const std::vector<int>& target_text,
                   const Mat& prompt_frames, const lm::SamplerConfig& sampler,
                   const acoustic::FlowConfig& flow);

// Speaker-index (and optionally emotion-controlled) synthesis without any
// audio prompt: tokens come purely from the fine-tuned model.
Mat index_synthesize(const SynthStack& stack, const lm::TokenLm& model, int speaker_token,
                     std::optional<int> control_token, const std::vector<int>& text,
                     const lm::SamplerConfig& sampler, const acoustic::FlowConfig& flow);

// Duration-conditioned DiT synthesis with an audio prompt: the prompt enters
// as an observed latent prefix, text covers prompt + target, and the target
// region duration is caller-supplied.
Mat dit_synthesize(const SynthStack& stack, const dit::DitModel& model,
                   const std::vector<int>& prompt_text, const std::vector<int>& target_text,
                   const Mat& prompt_frames, Index target_frames,
                   const acoustic::FlowConfig& flow);

}  // namespace ttslab::pipeline

#endif  // TTSLAB_PIPELINE_HPP_
