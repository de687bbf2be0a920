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

#include "ttslab/pipeline.hpp"

#include <algorithm>

namespace ttslab::pipeline {

void SynthStack::require() const {
  if (!world || !tokenizer || !vocoder || !diffusion)
    throw DependencyError("synthesis stack is incomplete");
}

int continuation_budget(int prefix_len, int context, int target_symbols) {
  // Worst-case frames per symbol: duration 8, rate 1.25, sad scale 1.25,
  // plus a boundary frame, halved by the token rate, plus slack for EOS.
  const int bound = 8 * target_symbols + 10;
  return std::max(1, std::min(bound, context - prefix_len - 1));
}

Mat decode_continuation(const SynthStack& stack, const Mat& prompt_frames,
                        const vq::SpeechTokenSeq& generated, const acoustic::FlowConfig& flow) {
  stack.require();
  if (generated.token_ids.empty()) throw DataError("no continuation tokens to decode");
  const int r = stack.tokenizer->config().downsample;
  const Mat prompt = acoustic::trim_to_multiple(prompt_frames, r);
  const vq::SpeechTokenSeq prompt_tokens = stack.tokenizer->encode(prompt);

  acoustic::DiffusionCondition cond;
  cond.tokens = prompt_tokens.token_ids;
  cond.tokens.insert(cond.tokens.end(), generated.token_ids.begin(), generated.token_ids.end());
  cond.prompt_latents = stack.vocoder->encode(prompt);
  const Mat latents = stack.diffusion->sample(cond, flow);
  const Index prompt_rows = prompt.rows();
  return stack.vocoder->decode(latents.bottomRows(latents.rows() - prompt_rows));
}

Mat icl_synthesize(const SynthStack& stack, const lm::TokenLm& model,
                   const std::vector<int>& prompt_text, const std::vector<int>& target_text,
                   const Mat& prompt_frames, const lm::SamplerConfig& sampler,
                   const acoustic::FlowConfig& flow) {
  stack.require();
  const int r = stack.tokenizer->config().downsample;
  const Mat prompt = acoustic::trim_to_multiple(prompt_frames, r);
  const vq::SpeechTokenSeq prompt_tokens = stack.tokenizer->encode(prompt);
  const lm::MixedSequence prefix = lm::build_icl_sequence(prompt_text, target_text, prompt_tokens,
                                                          model.layout(),
                                                          model.config().context);
  lm::SamplerConfig s = sampler;
  s.max_new_tokens = std::min(
      s.max_new_tokens, continuation_budget(static_cast<int>(prefix.size()),
                                            model.config().context,
                                            static_cast<int>(target_text.size())));
  const vq::SpeechTokenSeq generated = model.generate(prefix, s, r);
  return decode_continuation(stack, prompt, generated, flow);
}

Mat index_synthesize(const SynthStack& stack, const lm::TokenLm& model, int speaker_token,
                     std::optional<int> control_token, const std::vector<int>& text,
                     const lm::SamplerConfig& sampler, const acoustic::FlowConfig& flow) {
  stack.require();
  const lm::VocabLayout& layout = model.layout();
  lm::MixedSequence prefix;
  auto push = [&prefix](int id) {
    prefix.ids.push_back(id);
    prefix.loss_mask.push_back(0);
  };
  push(layout.bos);
  push(speaker_token);
  if (control_token) push(*control_token);
  for (int sym : text) {
    if (sym < 0 || sym >= layout.num_symbols) throw VocabError("unknown text symbol");
    push(sym);
  }
  push(layout.sep);
  prefix.validate(layout);

  lm::SamplerConfig s = sampler;
  s.max_new_tokens = std::min(
      s.max_new_tokens,
      continuation_budget(static_cast<int>(prefix.size()), model.config().context,
                          static_cast<int>(text.size())));
  const int r = stack.tokenizer->config().downsample;
  const vq::SpeechTokenSeq generated = model.generate(prefix, s, r);
  if (generated.token_ids.empty()) throw DataError("model emitted no speech tokens");

  acoustic::DiffusionCondition cond;
  cond.tokens = generated.token_ids;
  const Mat latents = stack.diffusion->sample(cond, flow);
  return stack.vocoder->decode(latents);
}

Mat dit_synthesize(const SynthStack& stack, const dit::DitModel& model,
                   const std::vector<int>& prompt_text, const std::vector<int>& target_text,
                   const Mat& prompt_frames, Index target_frames,
                   const acoustic::FlowConfig& flow) {
  if (!stack.world || !stack.vocoder) throw DependencyError("dit synthesis needs world + vocoder");
  if (target_frames < 1) throw ValidationError("target duration must be >= 1 frame");
  dit::DitCondition cond;
  cond.text = prompt_text;
  cond.text.insert(cond.text.end(), target_text.begin(), target_text.end());
  cond.prompt_latents = stack.vocoder->encode(prompt_frames);
  cond.total_duration = prompt_frames.rows() + target_frames;
  cond.timbre_ref = corpus::oracle_speaker_embedding(prompt_frames, *stack.world);
  const Mat latents = model.generate(cond, flow);
  return stack.vocoder->decode(latents.bottomRows(target_frames));
}

}  // namespace ttslab::pipeline
