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

#include "ttslab/lm.hpp"

using namespace ttslab;
using lm::build_icl_sequence;
using lm::LmConfig;
using lm::MixedSequence;
using lm::SamplerConfig;
using lm::TokenLm;
using lm::VocabLayout;

namespace {

VocabLayout small_layout(int k = 16) {
  return VocabLayout::build(24, k, {"spk0", "spk1"});
}

LmConfig small_config() {
  LmConfig cfg;
  cfg.layers = 2;
  cfg.width = 32;
  cfg.heads = 2;
  cfg.mlp_hidden = 64;
  cfg.context = 128;
  cfg.train_steps = 120;
  cfg.batch_size = 4;
  return cfg;
}

vq::SpeechTokenSeq tokens_of(std::vector<int> ids) {
  vq::SpeechTokenSeq t;
  t.token_ids = std::move(ids);
  t.downsample = 2;
  t.source_length = static_cast<int>(t.token_ids.size()) * 2;
  return t;
}

}  // namespace

TEST_CASE("vocab layout packs disjoint ranges") {
  const VocabLayout l = small_layout();
  CHECK(l.boundary_id == 24);
  CHECK(l.speech_offset == 25);
  CHECK(l.bos == 25 + 16);
  CHECK(l.eos == l.bos + 1);
  CHECK(l.sep == l.eos + 1);
  CHECK(l.speaker_token("spk1") == l.speaker_offset + 1);
  CHECK_THROWS_AS(l.speaker_token("spk9"), VocabError);
  CHECK(l.total == l.control_ids.back() + 1);
  const VocabLayout back = VocabLayout::from_json(l.to_json());
  CHECK(back.total == l.total);
  CHECK(back.speakers == l.speakers);
}

TEST_CASE("icl sequence layout and mask rule") {
  const VocabLayout l = small_layout();
  const MixedSequence seq = build_icl_sequence({0}, {1}, tokens_of({3, 4, 5}), l);
  // [BOS, a, b, SEP, s3, s4, s5]
  REQUIRE(seq.size() == 7);
  CHECK(seq.ids[0] == l.bos);
  CHECK(seq.ids[3] == l.sep);
  CHECK(seq.ids[4] == l.speech_offset + 3);
  int masked = 0;
  for (size_t i = 0; i < seq.size(); ++i) {
    if (seq.loss_mask[i]) {
      ++masked;
      CHECK(i >= 4);
    }
  }
  CHECK(masked == 3);
}

TEST_CASE("icl sequence rejects empty texts, unknown symbols, and overlong input") {
  const VocabLayout l = small_layout();
  CHECK_THROWS_AS(build_icl_sequence({0}, {}, tokens_of({1}), l), ValidationError);
  CHECK_THROWS_AS(build_icl_sequence({}, {0}, tokens_of({1}), l), ValidationError);
  CHECK_THROWS_AS(build_icl_sequence({99}, {0}, tokens_of({1}), l), VocabError);
  CHECK_THROWS_AS(build_icl_sequence({0}, {1}, tokens_of(std::vector<int>(200, 1)), l, 64),
                  ValidationError);
}

TEST_CASE("speaker and instruction sequences carry their control prefix") {
  const VocabLayout l = small_layout();
  const MixedSequence sft =
      lm::build_speaker_sequence(l.speaker_token("spk0"), {2, 3}, tokens_of({1, 2}), l);
  CHECK(sft.ids[1] == l.speaker_token("spk0"));
  CHECK(sft.ids.back() == l.eos);
  CHECK(sft.loss_mask.back() == 1);

  const MixedSequence ift = lm::build_instruction_sequence(
      l.speaker_token("spk0"), l.control_token(corpus::Emotion::kAngry), {2, 3},
      tokens_of({1, 2}), l);
  CHECK(ift.ids[2] == l.control_token(corpus::Emotion::kAngry));
  CHECK(ift.loss_mask[2] == 0);
  CHECK_THROWS_AS(lm::build_instruction_sequence(l.speaker_token("spk0"), l.bos, {2}, tokens_of({1}), l),
                  VocabError);
}

TEST_CASE("uniform-initialized model spreads mass over the constrained support") {
  const VocabLayout l = small_layout(16);
  LmConfig cfg = small_config();
  TokenLm model(l, cfg);
  // One speech target position; support is K speech ids plus EOS.
  MixedSequence seq = build_icl_sequence({0}, {1}, tokens_of({3}), l);
  const double lp = model.sequence_logprob(seq);
  CHECK(lp <= 0.0);
  // A freshly initialized model is near-uniform over the 17 legal ids.
  CHECK(std::abs(lp - std::log(1.0 / 17.0)) < 0.35);

  MixedSequence no_speech;
  no_speech.ids = {l.bos, 0, 1, l.sep};
  no_speech.loss_mask = {0, 0, 0, 0};
  CHECK(model.sequence_logprob(no_speech) == 0.0);
}

TEST_CASE("masked-off targets cannot affect the loss") {
  const VocabLayout l = small_layout();
  TokenLm model(l, small_config());
  const MixedSequence seq = build_icl_sequence({0, 1, 2}, {3}, tokens_of({1, 2, 3}), l);
  std::vector<int> inputs(seq.ids.begin(), seq.ids.end() - 1);
  std::vector<int> targets(seq.ids.begin() + 1, seq.ids.end());
  std::vector<uint8_t> mask(seq.loss_mask.begin() + 1, seq.loss_mask.end());
  const double base = model.batch_loss(inputs, targets, mask, false);
  // Permute every masked-off target; the loss must not move at all.
  std::vector<int> scrambled = targets;
  for (size_t i = 0; i < scrambled.size(); ++i)
    if (!mask[i]) scrambled[i] = (scrambled[i] + 7) % l.total;
  CHECK(model.batch_loss(inputs, scrambled, mask, false) == base);
}

TEST_CASE("single repeated sequence is memorized") {
  const VocabLayout l = small_layout();
  LmConfig cfg = small_config();
  cfg.train_steps = 250;
  TokenLm model(l, cfg);
  MixedSequence seq = build_icl_sequence({0, 1}, {2, 3}, tokens_of({5, 9, 2}), l);
  lm::append_continuation(seq, tokens_of({7, 7, 1}), l);
  model.train({seq});
  CHECK(model.masked_accuracy({seq}) >= 0.99);
}

TEST_CASE("generation is deterministic, constrained, and respects budgets") {
  const VocabLayout l = small_layout();
  LmConfig cfg = small_config();
  cfg.train_steps = 150;
  TokenLm model(l, cfg);
  MixedSequence train_seq = build_icl_sequence({0, 1}, {2}, tokens_of({5, 9}), l);
  lm::append_continuation(train_seq, tokens_of({7, 1}), l);
  model.train({train_seq});

  const MixedSequence prefix = build_icl_sequence({0, 1}, {2}, tokens_of({5, 9}), l);
  SamplerConfig sampler;
  sampler.max_new_tokens = 0;
  CHECK(model.generate(prefix, sampler, 2).token_ids.empty());

  sampler.max_new_tokens = 8;
  sampler.seed = 33;
  const auto a = model.generate(prefix, sampler, 2);
  const auto b = model.generate(prefix, sampler, 2);
  CHECK(a.token_ids == b.token_ids);
  for (int id : a.token_ids) CHECK((id >= 0 && id < l.speech_size));

  SamplerConfig too_long = sampler;
  too_long.max_new_tokens = 1000;
  CHECK_THROWS_AS(model.generate(prefix, too_long, 2), ValidationError);
}

TEST_CASE("training rejects empty data and overlong sequences") {
  const VocabLayout l = small_layout();
  TokenLm model(l, small_config());
  CHECK_THROWS_AS(model.train({}), DataError);
  MixedSequence seq = build_icl_sequence({0}, {1}, tokens_of(std::vector<int>(100, 1)), l, 512);
  CHECK_THROWS_AS(model.train({seq}), ValidationError);  // beyond context = 128
}

TEST_CASE("checkpoints require the vocabulary sidecar") {
  const VocabLayout l = small_layout();
  TokenLm model(l, small_config());
  const auto dir = std::filesystem::temp_directory_path() / "ttslab_lm_test";
  std::filesystem::create_directories(dir);
  model.save(dir / "lm.msc");
  const TokenLm back = TokenLm::load(dir / "lm.msc");
  CHECK(back.layout().total == l.total);
  std::filesystem::remove(dir / "lm.msc.vocab.json");
  CHECK_THROWS_AS(TokenLm::load(dir / "lm.msc"), ValidationError);
}

TEST_CASE("reinforce accumulation moves parameters along the advantage") {
  const VocabLayout l = small_layout();
  LmConfig cfg = small_config();
  TokenLm model(l, cfg);
  TokenLm frozen(model);
  MixedSequence seq = build_icl_sequence({0, 1}, {2}, tokens_of({5}), l);
  lm::append_continuation(seq, tokens_of({3, 4}), l);

  std::vector<int> inputs(seq.ids.begin(), seq.ids.end() - 1);
  const Mat base_logits = frozen.constrained_logits(inputs);
  double kl = -1.0;
  model.params().zero_grads();
  model.reinforce_accumulate(seq, 0.5, base_logits, 0.1, &kl);
  CHECK(kl == doctest::Approx(0.0).epsilon(1e-6));  // identical policies
  double grad_norm = 0.0;
  for (auto* p : model.params().all()) grad_norm += p->grad.squaredNorm();
  CHECK(grad_norm > 0.0);
}
