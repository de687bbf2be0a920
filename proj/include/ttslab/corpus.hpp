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

#ifndef TTSLAB_CORPUS_HPP_
#define TTSLAB_CORPUS_HPP_

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttslab/common.hpp"
#include "ttslab/rng.hpp"

// Synthetic factor-controlled frame world. Every frame is an orthogonal
// mixture of four factor blocks (content, timbre, prosody, emotion) plus
// isotropic noise, so exact analyzers exist for text, speaker and emotion.
namespace ttslab::corpus {

enum class Emotion : int { kNeutral = 0, kAngry, kHappy, kSad, kSurprise };
constexpr int kNumEmotions = 5;

const char* emotion_name(Emotion e);
Emotion emotion_from_name(const std::string& name);

struct WorldDims {
  int frame_dim = 16;    // D
  int content_dim = 8;   // d_c
  int speaker_dim = 4;   // d_s
  int prosody_dim = 2;   // d_p
  int emotion_dim = 2;   // d_e
  int num_symbols = 24;  // V
  int max_symbols = 64;

  void validate() const;
};

// Per-emotion modulation of prosody and duration. Fixed table:
//   angry    -> energy +0.5
//   happy    -> pitch frequency x1.3
//   sad      -> duration x1.25, energy -0.3
//   surprise -> pitch amplitude x1.5
//   neutral  -> identity
struct EmotionModulation {
  double pitch_freq_scale = 1.0;
  double pitch_amp_scale = 1.0;
  double energy_offset = 0.0;
  double duration_scale = 1.0;
};
EmotionModulation emotion_modulation(Emotion e);

struct WorldBasis {
  WorldDims dims;
  uint64_t world_seed = 0;
  DMat mixing;            // D x D orthogonal
  DMat content_codebook;  // (V+1) x d_c unit rows; row V is the boundary symbol
  DMat emotion_anchors;   // 5 x d_e unit rows

  int boundary_symbol() const { return dims.num_symbols; }

  // Column offsets of the factor blocks inside a factor vector z.
  int content_offset() const { return 0; }
  int speaker_offset() const { return dims.content_dim; }
  int prosody_offset() const { return dims.content_dim + dims.speaker_dim; }
  int emotion_offset() const {
    return dims.content_dim + dims.speaker_dim + dims.prosody_dim;
  }

  nlohmann::json to_json() const;
  static WorldBasis from_json(const nlohmann::json& j);
};

struct SpeakerProfile {
  std::string speaker_id;
  DVec timbre;                  // unit vector in R^{d_s}
  std::vector<int> durations;   // per-symbol frame counts, each in [2, 8]
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static SpeakerProfile from_json(const nlohmann::json& j);
};

struct UtteranceSpec {
  std::vector<int> text;  // symbol ids in [0, V)
  SpeakerProfile speaker;
  Emotion emotion = Emotion::kNeutral;
  double rate_factor = 1.0;
  double noise_sigma = 0.05;
  uint64_t utterance_seed = 0;

  void validate(const WorldDims& dims) const;
};

struct SymbolSpan {
  int symbol = 0;  // may be the boundary symbol
  int start = 0;
  int end = 0;  // exclusive
};

struct Utterance {
  Mat frames;  // T x D, float
  UtteranceSpec spec;
  std::vector<SymbolSpan> spans;

  Index length() const { return frames.rows(); }
};

inline constexpr int kMaxUtteranceFrames = 2048;
inline constexpr double kFrameRate = 50.0;  // frames per abstract second

// --- World construction -----------------------------------------------------

struct WorldConfig {
  WorldDims dims;
  double max_pairwise_cos = 0.62;  // content codebook separation target
  int codebook_retries = 4000;
};

WorldBasis build_world(const WorldConfig& config, uint64_t world_seed);

// Deterministic speaker derived from (world_seed, index).
SpeakerProfile make_speaker(const WorldBasis& world, int index);

// --- Rendering and oracles --------------------------------------------------

Utterance render_utterance(const UtteranceSpec& spec, const WorldBasis& world);

// Span length under the duration law, clamped so no span is ever empty.
int span_length(int base_duration, double rate_factor, double emotion_duration_scale);

// Exact ASR stand-in: per-frame cosine argmax against the content codebook,
// run-length collapse, boundary symbols dropped.
std::vector<int> oracle_decode_text(const Mat& frames, const WorldBasis& world);

// Exact speaker-verifier stand-in: renormalized mean of the timbre block.
DVec oracle_speaker_embedding(const Mat& frames, const WorldBasis& world);

// Exact SER stand-in: nearest anchor to the time-averaged emotion block.
Emotion oracle_emotion_classify(const Mat& frames, const WorldBasis& world);

// Per-frame symbol decisions before collapse (used by analysis tooling).
std::vector<int> oracle_frame_symbols(const Mat& frames, const WorldBasis& world);

// --- Text helpers -----------------------------------------------------------

// Symbols render as 'a'.. for manifests and logs.
std::string text_to_string(const std::vector<int>& text);
std::vector<int> text_from_string(const std::string& s, int num_symbols);

// --- Corpus sampling --------------------------------------------------------

struct CorpusConfig {
  int num_utterances = 10000;
  int num_speakers = 40;
  int min_text_len = 3;
  int max_text_len = 12;
  double min_rate = 0.8;
  double max_rate = 1.25;
  double noise_sigma = 0.05;
  bool uniform_emotions = true;  // else all neutral
};

struct Corpus {
  std::vector<Utterance> utterances;
  std::vector<SpeakerProfile> speakers;
};

// Deterministic in (world, config, seed). Speaker k is make_speaker(world, k).
Corpus sample_corpus(const WorldBasis& world, const CorpusConfig& config, uint64_t seed);

UtteranceSpec sample_spec(const WorldBasis& world, const std::vector<SpeakerProfile>& speakers,
                          const CorpusConfig& config, Rng& rng);

// JSON Lines manifest + one MSF1 file per utterance under dir/frames/.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);

}  // namespace ttslab::corpus

#endif  // TTSLAB_CORPUS_HPP_
