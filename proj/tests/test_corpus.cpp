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

#include "ttslab/corpus.hpp"
#include "ttslab/io.hpp"

using namespace ttslab;
using namespace ttslab::corpus;

namespace {

WorldBasis default_world(uint64_t seed = 7) {
  WorldConfig cfg;
  return build_world(cfg, seed);
}

UtteranceSpec make_spec(const WorldBasis& world, const std::string& text, int speaker_index,
                        Emotion emotion = Emotion::kNeutral, double rate = 1.0,
                        double noise = 0.0, uint64_t seed = 1) {
  UtteranceSpec spec;
  spec.text = text_from_string(text, world.dims.num_symbols);
  spec.speaker = make_speaker(world, speaker_index);
  spec.emotion = emotion;
  spec.rate_factor = rate;
  spec.noise_sigma = noise;
  spec.utterance_seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("build_world satisfies the basis invariants") {
  const WorldBasis w = default_world();
  CHECK(w.mixing.rows() == 16);
  CHECK(w.content_codebook.rows() == 25);

  const DMat gram = w.mixing.transpose() * w.mixing;
  CHECK((gram - DMat::Identity(16, 16)).cwiseAbs().maxCoeff() <= 1e-6);

  double worst = 0.0;
  for (Index i = 0; i < w.content_codebook.rows(); ++i) {
    CHECK(std::abs(w.content_codebook.row(i).norm() - 1.0) < 1e-9);
    for (Index j = i + 1; j < w.content_codebook.rows(); ++j)
      worst = std::max(worst, std::abs(w.content_codebook.row(i).dot(w.content_codebook.row(j))));
  }
  CHECK(worst <= 0.7);

  for (int e = 0; e < kNumEmotions; ++e)
    CHECK(std::abs(w.emotion_anchors.row(e).norm() - 1.0) < 1e-9);
}

TEST_CASE("build_world is deterministic in the seed") {
  const WorldBasis a = default_world(7), b = default_world(7), c = default_world(8);
  CHECK((a.mixing - b.mixing).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.content_codebook - b.content_codebook).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.mixing - c.mixing).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("build_world rejects inconsistent dims") {
  WorldConfig cfg;
  cfg.dims.prosody_dim = 3;  // 8+4+3+2 = 17 != 16
  CHECK_THROWS_AS(build_world(cfg, 7), ValidationError);
}

TEST_CASE("render produces the span-sum length with boundaries between symbols") {
  const WorldBasis w = default_world();
  UtteranceSpec spec = make_spec(w, "ab", 0);
  spec.speaker.durations[0] = 3;  // 'a'
  spec.speaker.durations[1] = 4;  // 'b'
  const Utterance u = render_utterance(spec, w);
  CHECK(u.length() == 3 + 1 + 4);
  REQUIRE(u.spans.size() == 3);
  CHECK(u.spans[1].symbol == w.boundary_symbol());
  CHECK(u.spans[0].end == u.spans[1].start);
  CHECK(u.spans[1].end == u.spans[2].start);
  CHECK(u.spans.back().end == u.length());
}

TEST_CASE("render is deterministic and honors the duration law") {
  const WorldBasis w = default_world();
  const UtteranceSpec spec = make_spec(w, "abcab", 3, Emotion::kSad, 1.3, 0.05, 99);
  const Utterance u1 = render_utterance(spec, w);
  const Utterance u2 = render_utterance(spec, w);
  CHECK((u1.frames - u2.frames).cwiseAbs().maxCoeff() == 0.0f);

  const auto mod = emotion_modulation(Emotion::kSad);
  int expect = 0;
  for (size_t i = 0; i < spec.text.size(); ++i) {
    if (i > 0) expect += span_length(1, spec.rate_factor, mod.duration_scale);
    expect += span_length(spec.speaker.durations[spec.text[i]], spec.rate_factor,
                          mod.duration_scale);
  }
  CHECK(u1.length() == expect);

  // Monotone nondecreasing in the rate factor.
  int prev = 0;
  for (double r : {0.25, 0.5, 1.0, 1.7, 2.5, 4.0}) {
    UtteranceSpec s = spec;
    s.rate_factor = r;
    const int t = static_cast<int>(render_utterance(s, w).length());
    CHECK(t >= prev);
    prev = t;
  }
}

TEST_CASE("render rejects invalid specs") {
  const WorldBasis w = default_world();
  UtteranceSpec spec = make_spec(w, "ab", 0);
  spec.text.clear();
  CHECK_THROWS_AS(render_utterance(spec, w), ValidationError);

  UtteranceSpec bad_sym = make_spec(w, "ab", 0);
  bad_sym.text[0] = 99;
  CHECK_THROWS_AS(render_utterance(bad_sym, w), VocabError);

  UtteranceSpec too_long = make_spec(w, "", 0);
  too_long.text.assign(500, 0);
  too_long.speaker.durations[0] = 8;
  too_long.rate_factor = 1.0;
  CHECK_THROWS_AS(render_utterance(too_long, w), ValidationError);
}

TEST_CASE("noiseless round trip through all three oracles is exact") {
  const WorldBasis w = default_world();
  for (int i = 0; i < 40; ++i) {
    Rng rng(1000 + i);
    const int len = rng.uniform_int(1, 10);
    std::string text;
    for (int k = 0; k < len; ++k) text.push_back(static_cast<char>('a' + rng.uniform_int(0, 23)));
    const auto emotion = static_cast<Emotion>(rng.uniform_int(0, 4));
    UtteranceSpec spec =
        make_spec(w, text, rng.uniform_int(0, 30), emotion, rng.uniform(0.25, 4.0), 0.0,
                  rng.next_u64());
    const Utterance u = render_utterance(spec, w);

    CHECK(oracle_decode_text(u.frames, w) == spec.text);
    const DVec emb = oracle_speaker_embedding(u.frames, w);
    CHECK(std::abs(emb.dot(spec.speaker.timbre) - 1.0) <= 1e-6);
    CHECK(oracle_emotion_classify(u.frames, w) == emotion);
  }
}

TEST_CASE("boundary symbol keeps repeated text symbols apart") {
  const WorldBasis w = default_world();
  const UtteranceSpec spec = make_spec(w, "aa", 2);
  const Utterance u = render_utterance(spec, w);
  CHECK(text_to_string(oracle_decode_text(u.frames, w)) == "aa");
}

TEST_CASE("decode of empty frames is empty, bad shapes fail") {
  const WorldBasis w = default_world();
  CHECK(oracle_decode_text(Mat(0, 16), w).empty());
  CHECK_THROWS_AS(oracle_decode_text(Mat(3, 5), w), ShapeError);
  CHECK_THROWS_AS(oracle_speaker_embedding(Mat(0, 16), w), DataError);
  CHECK_THROWS_AS(oracle_emotion_classify(Mat(0, 16), w), DataError);
}

TEST_CASE("orthogonal timbres give zero cross-speaker cosine at zero noise") {
  const WorldBasis w = default_world();
  UtteranceSpec a = make_spec(w, "abc", 0);
  UtteranceSpec b = make_spec(w, "abc", 1);
  // Force exactly orthogonal timbres.
  a.speaker.timbre = DVec::Zero(4);
  a.speaker.timbre(0) = 1.0;
  b.speaker.timbre = DVec::Zero(4);
  b.speaker.timbre(1) = 1.0;
  const DVec ea = oracle_speaker_embedding(render_utterance(a, w).frames, w);
  const DVec eb = oracle_speaker_embedding(render_utterance(b, w).frames, w);
  CHECK(std::abs(ea.dot(eb)) <= 1e-6);
}

TEST_CASE("changing only the timbre leaves decoded text unchanged") {
  const WorldBasis w = default_world();
  UtteranceSpec a = make_spec(w, "hello", 0);
  UtteranceSpec b = a;
  b.speaker.timbre = make_speaker(w, 17).timbre;
  CHECK(oracle_decode_text(render_utterance(a, w).frames, w) ==
        oracle_decode_text(render_utterance(b, w).frames, w));
}

TEST_CASE("noisy oracles stay near-exact at the default noise level") {
  // Seeded Monte-Carlo checks: frame error rate, speaker cosine, emotion
  // accuracy at noise_sigma=0.05.
  const WorldBasis w = default_world();
  Rng rng(555);
  int frame_errors = 0, frames_total = 0, emo_correct = 0, emo_total = 0;
  double worst_cos = 1.0;
  for (int i = 0; i < 200; ++i) {
    std::string text;
    const int len = rng.uniform_int(3, 10);
    for (int k = 0; k < len; ++k) text.push_back(static_cast<char>('a' + rng.uniform_int(0, 23)));
    const auto emotion = static_cast<Emotion>(rng.uniform_int(0, 4));
    UtteranceSpec spec = make_spec(w, text, rng.uniform_int(0, 30), emotion, 1.0, 0.05,
                                   rng.next_u64());
    const Utterance u = render_utterance(spec, w);
    const auto per_frame = oracle_frame_symbols(u.frames, w);
    for (const SymbolSpan& span : u.spans)
      for (int t = span.start; t < span.end; ++t) {
        frames_total++;
        if (per_frame[static_cast<size_t>(t)] != span.symbol) frame_errors++;
      }
    const DVec emb = oracle_speaker_embedding(u.frames, w);
    worst_cos = std::min(worst_cos, emb.dot(spec.speaker.timbre));
    emo_total++;
    if (oracle_emotion_classify(u.frames, w) == emotion) emo_correct++;
  }
  CHECK(static_cast<double>(frame_errors) / frames_total < 0.01);
  CHECK(worst_cos >= 0.99);
  CHECK(static_cast<double>(emo_correct) / emo_total >= 0.99);
}

TEST_CASE("emotion modulation table matches the declared constants") {
  CHECK(emotion_modulation(Emotion::kAngry).energy_offset == doctest::Approx(0.5));
  CHECK(emotion_modulation(Emotion::kHappy).pitch_freq_scale == doctest::Approx(1.3));
  CHECK(emotion_modulation(Emotion::kSad).duration_scale == doctest::Approx(1.25));
  CHECK(emotion_modulation(Emotion::kSad).energy_offset == doctest::Approx(-0.3));
  CHECK(emotion_modulation(Emotion::kSurprise).pitch_amp_scale == doctest::Approx(1.5));
  const auto neutral = emotion_modulation(Emotion::kNeutral);
  CHECK(neutral.duration_scale == 1.0);
  CHECK(neutral.energy_offset == 0.0);
}

TEST_CASE("sad emotion stretches durations") {
  const WorldBasis w = default_world();
  const UtteranceSpec neutral = make_spec(w, "abcd", 0, Emotion::kNeutral);
  UtteranceSpec sad = neutral;
  sad.emotion = Emotion::kSad;
  CHECK(render_utterance(sad, w).length() > render_utterance(neutral, w).length());
}

TEST_CASE("corpus sampling is deterministic and serializable") {
  const WorldBasis w = default_world();
  CorpusConfig cfg;
  cfg.num_utterances = 20;
  cfg.num_speakers = 4;
  const Corpus c1 = sample_corpus(w, cfg, 11);
  const Corpus c2 = sample_corpus(w, cfg, 11);
  REQUIRE(c1.utterances.size() == 20);
  for (size_t i = 0; i < 20; ++i)
    CHECK((c1.utterances[i].frames - c2.utterances[i].frames).cwiseAbs().maxCoeff() == 0.0f);

  const auto dir = std::filesystem::temp_directory_path() / "ttslab_corpus_test";
  std::filesystem::remove_all(dir);
  save_corpus(c1, dir);
  const auto manifest = io::read_jsonl(dir / "manifest.jsonl");
  REQUIRE(manifest.size() == 20);
  const Mat frames = io::read_msf1(dir / manifest[3].at("frames_path").get<std::string>());
  CHECK((frames - c1.utterances[3].frames).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(manifest[3].at("text").get<std::string>() == text_to_string(c1.utterances[3].spec.text));
}

TEST_CASE("world json round trip is exact") {
  const WorldBasis w = default_world(21);
  const WorldBasis back = WorldBasis::from_json(w.to_json());
  CHECK((w.mixing - back.mixing).cwiseAbs().maxCoeff() == 0.0);
  CHECK((w.content_codebook - back.content_codebook).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.dims.num_symbols == w.dims.num_symbols);
}
