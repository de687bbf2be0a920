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

#include "ttslab/corpus.hpp"

#include <algorithm>
#include <cmath>

#include "ttslab/io.hpp"

namespace ttslab::corpus {

using nlohmann::json;

const char* emotion_name(Emotion e) {
  switch (e) {
    case Emotion::kNeutral: return "neutral";
    case Emotion::kAngry: return "angry";
    case Emotion::kHappy: return "happy";
    case Emotion::kSad: return "sad";
    case Emotion::kSurprise: return "surprise";
  }
  throw ValidationError("unknown emotion value");
}

Emotion emotion_from_name(const std::string& name) {
  for (int i = 0; i < kNumEmotions; ++i) {
    if (name == emotion_name(static_cast<Emotion>(i))) return static_cast<Emotion>(i);
  }
  throw ValidationError("unknown emotion label: " + name);
}

EmotionModulation emotion_modulation(Emotion e) {
  EmotionModulation m;
  switch (e) {
    case Emotion::kNeutral: break;
    case Emotion::kAngry: m.energy_offset = 0.5; break;
    case Emotion::kHappy: m.pitch_freq_scale = 1.3; break;
    case Emotion::kSad:
      m.duration_scale = 1.25;
      m.energy_offset = -0.3;
      break;
    case Emotion::kSurprise: m.pitch_amp_scale = 1.5; break;
  }
  return m;
}

void WorldDims::validate() const {
  if (frame_dim <= 0 || content_dim <= 0 || speaker_dim <= 0 || prosody_dim < 2 ||
      emotion_dim <= 0)
    throw ValidationError("world dims must be positive (prosody needs pitch and energy)");
  if (content_dim + speaker_dim + prosody_dim + emotion_dim != frame_dim)
    throw ValidationError("factor dims must sum to the frame dim: " +
                          std::to_string(content_dim) + "+" + std::to_string(speaker_dim) + "+" +
                          std::to_string(prosody_dim) + "+" + std::to_string(emotion_dim) +
                          " != " + std::to_string(frame_dim));
  if (num_symbols < 2) throw ValidationError("need at least 2 text symbols");
  if (num_symbols + 1 > max_symbols)
    throw ValidationError("num_symbols+1 exceeds configured max_symbols");
}

namespace {

DMat random_orthogonal(int n, Rng& rng) {
  DMat g(n, n);
  rng.fill_gaussian(g);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g.transpose());
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  // Fix signs so the factorization is unique.
  for (int i = 0; i < n; ++i)
    if (r(i, i) < 0) q.col(i) *= -1.0;
  return q;
}

// Unit rows with bounded pairwise cosine, by rejection.
DMat separated_unit_rows(int count, int dim, double max_cos, int retries, Rng& rng) {
  DMat rows(count, dim);
  for (int i = 0; i < count; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < retries && !placed; ++attempt) {
      DVec v = rng.unit_vector<double>(dim);
      placed = true;
      for (int j = 0; j < i; ++j) {
        if (std::abs(rows.row(j).dot(v.transpose())) > max_cos) {
          placed = false;
          break;
        }
      }
      if (placed) rows.row(i) = v.transpose();
    }
    if (!placed) {
      double worst = 0.0;
      int worst_j = 0;
      for (int j = 0; j < i; ++j) {
        const double c = std::abs(rows.row(j).dot(rows.row(i > 0 ? i - 1 : 0)));
        if (c > worst) worst = c, worst_j = j;
      }
      throw Error("codebook separation unattainable after " + std::to_string(retries) +
                  " retries at entry " + std::to_string(i) + " (tightest against entry " +
                  std::to_string(worst_j) + ")");
    }
  }
  return rows;
}

}  // namespace

WorldBasis build_world(const WorldConfig& config, uint64_t world_seed) {
  config.dims.validate();
  const WorldDims& d = config.dims;
  WorldBasis world;
  world.dims = d;
  world.world_seed = world_seed;

  Rng mix_rng = Rng::fork(world_seed, 1);
  world.mixing = random_orthogonal(d.frame_dim, mix_rng);

  Rng code_rng = Rng::fork(world_seed, 2);
  world.content_codebook = separated_unit_rows(d.num_symbols + 1, d.content_dim,
                                               config.max_pairwise_cos,
                                               config.codebook_retries, code_rng);

  Rng emo_rng = Rng::fork(world_seed, 3);
  if (d.emotion_dim == 2) {
    // Evenly spaced on the circle with a seed-dependent phase.
    world.emotion_anchors.resize(kNumEmotions, 2);
    const double phase = emo_rng.uniform(0.0, 2.0 * M_PI);
    for (int e = 0; e < kNumEmotions; ++e) {
      const double a = phase + 2.0 * M_PI * e / kNumEmotions;
      world.emotion_anchors(e, 0) = std::cos(a);
      world.emotion_anchors(e, 1) = std::sin(a);
    }
  } else {
    world.emotion_anchors =
        separated_unit_rows(kNumEmotions, d.emotion_dim, 0.5, config.codebook_retries, emo_rng);
  }

  const DMat gram = world.mixing.transpose() * world.mixing;
  const double err = (gram - DMat::Identity(d.frame_dim, d.frame_dim)).cwiseAbs().maxCoeff();
  if (err > 1e-6) throw Error("mixing matrix failed the orthogonality check");
  return world;
}

SpeakerProfile make_speaker(const WorldBasis& world, int index) {
  SpeakerProfile sp;
  sp.seed = Rng::splitmix(world.world_seed ^ (0x5eedull + static_cast<uint64_t>(index) * 7919));
  sp.speaker_id = "spk" + std::to_string(index);
  Rng rng(sp.seed);
  sp.timbre = rng.unit_vector<double>(world.dims.speaker_dim);
  sp.durations.resize(world.dims.num_symbols);
  for (auto& dur : sp.durations) dur = rng.uniform_int(2, 8);
  return sp;
}

void UtteranceSpec::validate(const WorldDims& dims) const {
  if (text.empty()) throw ValidationError("utterance text must be nonempty");
  for (int s : text)
    if (s < 0 || s >= dims.num_symbols)
      throw VocabError("unknown symbol id " + std::to_string(s));
  if (!(rate_factor >= 0.25 && rate_factor <= 4.0))
    throw ValidationError("rate_factor must lie in [0.25, 4]");
  if (!(noise_sigma >= 0.0 && noise_sigma <= 1.0))
    throw ValidationError("noise_sigma must lie in [0, 1]");
  if (static_cast<int>(speaker.durations.size()) < dims.num_symbols)
    throw ValidationError("speaker duration map does not cover the symbol alphabet");
  if (std::abs(speaker.timbre.norm() - 1.0) > 1e-6)
    throw ValidationError("speaker timbre must be unit norm");
}

int span_length(int base_duration, double rate_factor, double emotion_duration_scale) {
  const long n = std::lround(base_duration * rate_factor * emotion_duration_scale);
  return static_cast<int>(std::max(1l, n));
}

Utterance render_utterance(const UtteranceSpec& spec, const WorldBasis& world) {
  spec.validate(world.dims);
  const WorldDims& d = world.dims;
  const EmotionModulation mod = emotion_modulation(spec.emotion);

  // Span layout: symbol, boundary, symbol, ..., symbol.
  std::vector<SymbolSpan> spans;
  int total = 0;
  for (size_t i = 0; i < spec.text.size(); ++i) {
    if (i > 0) {
      const int blen = span_length(1, spec.rate_factor, mod.duration_scale);
      spans.push_back({world.boundary_symbol(), total, total + blen});
      total += blen;
    }
    const int sym = spec.text[i];
    const int slen = span_length(spec.speaker.durations[sym], spec.rate_factor, mod.duration_scale);
    spans.push_back({sym, total, total + slen});
    total += slen;
  }
  if (total > kMaxUtteranceFrames)
    throw ValidationError("utterance of " + std::to_string(total) + " frames exceeds the " +
                          std::to_string(kMaxUtteranceFrames) + " frame limit");

  Rng rng(Rng::splitmix(spec.utterance_seed ^ 0xf7a3e5));
  const double phase = rng.uniform(0.0, 2.0 * M_PI);
  const double pitch_freq = 5.0 * mod.pitch_freq_scale;   // cycles per abstract second
  const double pitch_amp = 1.0 * mod.pitch_amp_scale;
  const double energy = 1.0 + mod.energy_offset;

  DMat z(total, d.frame_dim);
  for (const SymbolSpan& span : spans) {
    for (int t = span.start; t < span.end; ++t) {
      z.row(t).segment(world.content_offset(), d.content_dim) =
          world.content_codebook.row(span.symbol);
      z.row(t).segment(world.speaker_offset(), d.speaker_dim) = spec.speaker.timbre.transpose();
      z(t, world.prosody_offset()) =
          pitch_amp * std::sin(2.0 * M_PI * pitch_freq * t / kFrameRate + phase);
      z(t, world.prosody_offset() + 1) = energy;
      // Any prosody dims beyond pitch/energy stay zero.
      z.row(t).segment(world.emotion_offset(), d.emotion_dim) =
          world.emotion_anchors.row(static_cast<int>(spec.emotion));
    }
  }

  DMat x = z * world.mixing.transpose();
  if (spec.noise_sigma > 0.0) {
    for (Index t = 0; t < x.rows(); ++t)
      for (Index j = 0; j < x.cols(); ++j) x(t, j) += spec.noise_sigma * rng.gaussian();
  }

  Utterance u;
  u.frames = x.cast<Scalar>();
  u.spec = spec;
  u.spans = std::move(spans);
  return u;
}

namespace {

void check_frame_dim(const Mat& frames, const WorldBasis& world) {
  if (frames.cols() != world.dims.frame_dim)
    throw ShapeError("frame dim " + std::to_string(frames.cols()) + " does not match world dim " +
                     std::to_string(world.dims.frame_dim));
}

}  // namespace

std::vector<int> oracle_frame_symbols(const Mat& frames, const WorldBasis& world) {
  check_frame_dim(frames, world);
  const DMat z = frames.cast<double>() * world.mixing;  // (A^T x)^T rows
  const DMat content = z.middleCols(world.content_offset(), world.dims.content_dim);
  std::vector<int> symbols(static_cast<size_t>(frames.rows()));
  for (Index t = 0; t < frames.rows(); ++t) {
    const double norm = content.row(t).norm();
    int best = 0;
    double best_cos = -2.0;
    for (Index k = 0; k < world.content_codebook.rows(); ++k) {
      const double c = norm > 0 ? content.row(t).dot(world.content_codebook.row(k)) / norm : 0.0;
      if (c > best_cos) {
        best_cos = c;
        best = static_cast<int>(k);
      }
    }
    symbols[static_cast<size_t>(t)] = best;
  }
  return symbols;
}

std::vector<int> oracle_decode_text(const Mat& frames, const WorldBasis& world) {
  if (frames.rows() == 0) return {};
  const std::vector<int> per_frame = oracle_frame_symbols(frames, world);
  std::vector<int> out;
  int prev = -1;
  for (int s : per_frame) {
    if (s != prev && s != world.boundary_symbol()) out.push_back(s);
    prev = s;
  }
  return out;
}

DVec oracle_speaker_embedding(const Mat& frames, const WorldBasis& world) {
  if (frames.rows() == 0) throw DataError("speaker embedding of an empty utterance");
  check_frame_dim(frames, world);
  const DMat z = frames.cast<double>() * world.mixing;
  DVec mean = z.middleCols(world.speaker_offset(), world.dims.speaker_dim)
                  .colwise()
                  .mean()
                  .transpose();
  const double n = mean.norm();
  if (n < 1e-12) throw DataError("degenerate input: zero-norm timbre mean");
  return mean / n;
}

Emotion oracle_emotion_classify(const Mat& frames, const WorldBasis& world) {
  if (frames.rows() == 0) throw DataError("emotion classification of an empty utterance");
  check_frame_dim(frames, world);
  const DMat z = frames.cast<double>() * world.mixing;
  const DVec mean =
      z.middleCols(world.emotion_offset(), world.dims.emotion_dim).colwise().mean().transpose();
  int best = 0;
  double best_dot = -1e300;
  for (int e = 0; e < kNumEmotions; ++e) {
    const double dot = world.emotion_anchors.row(e).dot(mean.transpose());
    if (dot > best_dot) {
      best_dot = dot;
      best = e;
    }
  }
  return static_cast<Emotion>(best);
}

std::string text_to_string(const std::vector<int>& text) {
  std::string s;
  s.reserve(text.size());
  for (int sym : text) s.push_back(static_cast<char>('a' + sym));
  return s;
}

std::vector<int> text_from_string(const std::string& s, int num_symbols) {
  std::vector<int> text;
  text.reserve(s.size());
  for (char c : s) {
    const int sym = c - 'a';
    if (sym < 0 || sym >= num_symbols) throw VocabError(std::string("unknown symbol '") + c + "'");
    text.push_back(sym);
  }
  return text;
}

UtteranceSpec sample_spec(const WorldBasis& world, const std::vector<SpeakerProfile>& speakers,
                          const CorpusConfig& config, Rng& rng) {
  UtteranceSpec spec;
  const int len = rng.uniform_int(config.min_text_len, config.max_text_len);
  spec.text.resize(static_cast<size_t>(len));
  for (int& s : spec.text) s = rng.uniform_int(0, world.dims.num_symbols - 1);
  spec.speaker = speakers[rng.below(speakers.size())];
  spec.emotion = config.uniform_emotions
                     ? static_cast<Emotion>(rng.uniform_int(0, kNumEmotions - 1))
                     : Emotion::kNeutral;
  spec.rate_factor = rng.uniform(config.min_rate, config.max_rate);
  spec.noise_sigma = config.noise_sigma;
  spec.utterance_seed = rng.next_u64();
  return spec;
}

Corpus sample_corpus(const WorldBasis& world, const CorpusConfig& config, uint64_t seed) {
  if (config.num_utterances < 0 || config.num_speakers <= 0)
    throw ValidationError("corpus config sizes must be positive");
  Corpus corpus;
  corpus.speakers.reserve(static_cast<size_t>(config.num_speakers));
  for (int k = 0; k < config.num_speakers; ++k)
    corpus.speakers.push_back(make_speaker(world, k));
  Rng rng = Rng::fork(seed, 0xc0ffee);
  corpus.utterances.reserve(static_cast<size_t>(config.num_utterances));
  for (int i = 0; i < config.num_utterances; ++i) {
    const UtteranceSpec spec = sample_spec(world, corpus.speakers, config, rng);
    corpus.utterances.push_back(render_utterance(spec, world));
  }
  return corpus;
}

json WorldBasis::to_json() const {
  auto mat_to_json = [](const DMat& m) {
    json rows = json::array();
    for (Index i = 0; i < m.rows(); ++i) {
      json row = json::array();
      for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
      rows.push_back(row);
    }
    return rows;
  };
  return json{{"dims",
               {{"frame_dim", dims.frame_dim},
                {"content_dim", dims.content_dim},
                {"speaker_dim", dims.speaker_dim},
                {"prosody_dim", dims.prosody_dim},
                {"emotion_dim", dims.emotion_dim},
                {"num_symbols", dims.num_symbols},
                {"max_symbols", dims.max_symbols}}},
              {"world_seed", world_seed},
              {"mixing", mat_to_json(mixing)},
              {"content_codebook", mat_to_json(content_codebook)},
              {"emotion_anchors", mat_to_json(emotion_anchors)}};
}

WorldBasis WorldBasis::from_json(const json& j) {
  auto mat_from_json = [](const json& rows) {
    const Index r = static_cast<Index>(rows.size());
    const Index c = r > 0 ? static_cast<Index>(rows[0].size()) : 0;
    DMat m(r, c);
    for (Index i = 0; i < r; ++i)
      for (Index k = 0; k < c; ++k) m(i, k) = rows[static_cast<size_t>(i)][static_cast<size_t>(k)];
    return m;
  };
  WorldBasis w;
  const json& d = j.at("dims");
  w.dims.frame_dim = d.at("frame_dim");
  w.dims.content_dim = d.at("content_dim");
  w.dims.speaker_dim = d.at("speaker_dim");
  w.dims.prosody_dim = d.at("prosody_dim");
  w.dims.emotion_dim = d.at("emotion_dim");
  w.dims.num_symbols = d.at("num_symbols");
  w.dims.max_symbols = d.at("max_symbols");
  w.world_seed = j.at("world_seed");
  w.mixing = mat_from_json(j.at("mixing"));
  w.content_codebook = mat_from_json(j.at("content_codebook"));
  w.emotion_anchors = mat_from_json(j.at("emotion_anchors"));
  return w;
}

json SpeakerProfile::to_json() const {
  json t = json::array();
  for (Index i = 0; i < timbre.size(); ++i) t.push_back(timbre(i));
  return json{{"speaker_id", speaker_id}, {"timbre", t}, {"durations", durations}, {"seed", seed}};
}

SpeakerProfile SpeakerProfile::from_json(const json& j) {
  SpeakerProfile sp;
  sp.speaker_id = j.at("speaker_id");
  const auto& t = j.at("timbre");
  sp.timbre.resize(static_cast<Index>(t.size()));
  for (Index i = 0; i < sp.timbre.size(); ++i) sp.timbre(i) = t[static_cast<size_t>(i)];
  sp.durations = j.at("durations").get<std::vector<int>>();
  sp.seed = j.at("seed");
  return sp;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "frames");
  std::vector<json> manifest;
  manifest.reserve(corpus.utterances.size());
  for (size_t i = 0; i < corpus.utterances.size(); ++i) {
    const Utterance& u = corpus.utterances[i];
    const std::string id = "utt" + std::to_string(i);
    const std::string rel = "frames/" + id + ".msf";
    io::write_msf1(dir / rel, u.frames);
    manifest.push_back({{"id", id},
                        {"text", text_to_string(u.spec.text)},
                        {"speaker_id", u.spec.speaker.speaker_id},
                        {"emotion", emotion_name(u.spec.emotion)},
                        {"rate_factor", u.spec.rate_factor},
                        {"noise_sigma", u.spec.noise_sigma},
                        {"seed", u.spec.utterance_seed},
                        {"frames_path", rel}});
  }
  io::write_jsonl(dir / "manifest.jsonl", manifest);
}

}  // namespace ttslab::corpus
