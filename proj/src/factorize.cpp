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

#include "ttslab/factorize.hpp"

#include <cmath>

#include "ttslab/evalkit.hpp"

namespace ttslab::factorize {

using acoustic::DiffusionCondition;
using corpus::Utterance;
using corpus::WorldBasis;

void AcousticStack::require() const {
  if (!tokenizer || !vocoder || !diffusion)
    throw DependencyError("acoustic stack is incomplete (tokenizer/vocoder/diffusion required)");
}

namespace {

DVec jitter_timbre(const DVec& timbre, double angle_deg, Rng& rng) {
  // Rotate within the plane spanned by the timbre and a random orthogonal
  // direction.
  DVec noise(timbre.size());
  for (Index i = 0; i < noise.size(); ++i) noise(i) = rng.gaussian();
  DVec ortho = noise - noise.dot(timbre) * timbre;
  const double n = ortho.norm();
  if (n < 1e-9) return timbre;  // pathological draw; keep the original
  ortho /= n;
  const double rad = angle_deg * M_PI / 180.0;
  DVec out = std::cos(rad) * timbre + std::sin(rad) * ortho;
  return out / out.norm();
}

}  // namespace

PerturbOutcome perturb_timbre_generate(const Utterance& utterance, const PerturbConfig& config,
                                       const AcousticStack& stack,
                                       const std::vector<DVec>& timbre_pool,
                                       const WorldBasis& world, uint64_t pair_seed) {
  stack.require();
  Rng rng(Rng::splitmix(config.seed ^ pair_seed));

  const int r = stack.tokenizer->config().downsample;
  const Mat ori_frames = acoustic::trim_to_multiple(utterance.frames, r);
  if (ori_frames.rows() < r) throw DataError("utterance too short to perturb");

  PerturbOutcome out;
  out.pair.source_id = utterance.spec.speaker.speaker_id + "/" +
                       corpus::text_to_string(utterance.spec.text);
  out.pair.perturb_seed = pair_seed;
  out.pair.ori_frames = ori_frames;
  out.pair.ori_tokens = stack.tokenizer->encode(ori_frames).token_ids;
  out.pair.ori_latents = stack.vocoder->encode(ori_frames);
  out.pair.timbre_ref = corpus::oracle_speaker_embedding(ori_frames, world);

  DVec perturbed;
  if (config.mode == PerturbConfig::Mode::kSwap) {
    if (timbre_pool.empty()) throw DataError("swap perturbation needs a timbre pool");
    perturbed = timbre_pool[rng.below(timbre_pool.size())];
  } else {
    perturbed = jitter_timbre(out.pair.timbre_ref, config.jitter_angle_deg, rng);
  }

  DiffusionCondition cond;
  cond.tokens = out.pair.ori_tokens;
  cond.timbre_ref = perturbed;
  acoustic::FlowConfig flow = config.flow;
  flow.seed = Rng::splitmix(pair_seed ^ 0xa17);
  const Mat alt_latents = stack.diffusion->sample(cond, flow);
  out.pair.alt_latents = alt_latents;
  out.pair.alt_frames = stack.vocoder->decode(alt_latents);
  out.pair.alt_tokens = stack.tokenizer->encode(out.pair.alt_frames).token_ids;

  const auto ori_text = corpus::oracle_decode_text(ori_frames, world);
  const auto alt_text = corpus::oracle_decode_text(out.pair.alt_frames, world);
  out.content_wer = ori_text.empty() ? 1.0 : eval::wer_proxy(ori_text, alt_text);
  out.timbre_cos = eval::sim_metric(corpus::oracle_speaker_embedding(out.pair.alt_frames, world),
                                    out.pair.timbre_ref);

  if (out.content_wer > config.max_content_wer) {
    out.rejection_reason = "content not preserved (WER " + std::to_string(out.content_wer) + ")";
    return out;
  }
  if (out.timbre_cos > config.max_timbre_cos) {
    out.rejection_reason = "timbre not shifted (cos " + std::to_string(out.timbre_cos) + ")";
    return out;
  }
  out.accepted = true;
  return out;
}

bool validate_pair(const DistillPair& pair, const PerturbConfig& config, const WorldBasis& world,
                   double* content_wer, double* timbre_cos) {
  const auto ori_text = corpus::oracle_decode_text(pair.ori_frames, world);
  const auto alt_text = corpus::oracle_decode_text(pair.alt_frames, world);
  const double wer = ori_text.empty() ? 1.0 : eval::wer_proxy(ori_text, alt_text);
  const double cos = eval::sim_metric(corpus::oracle_speaker_embedding(pair.alt_frames, world),
                                      corpus::oracle_speaker_embedding(pair.ori_frames, world));
  if (content_wer) *content_wer = wer;
  if (timbre_cos) *timbre_cos = cos;
  return wer <= config.max_content_wer && cos <= config.max_timbre_cos &&
         pair.ori_tokens.size() == pair.alt_tokens.size();
}

std::vector<DistillPair> build_distill_set(const std::vector<Utterance>& utterances,
                                           const PerturbConfig& config, const AcousticStack& stack,
                                           const WorldBasis& world, int target_pairs,
                                           DistillSetStats* stats) {
  stack.require();
  if (target_pairs < 0) throw ValidationError("target pair count must be >= 0");
  DistillSetStats local;
  DistillSetStats& st = stats ? *stats : local;
  std::vector<DistillPair> pairs;
  pairs.reserve(static_cast<size_t>(target_pairs));
  if (target_pairs == 0) return pairs;

  std::vector<DVec> pool;
  pool.reserve(utterances.size());
  for (const Utterance& u : utterances)
    pool.push_back(u.spec.speaker.timbre);

  const int max_attempts = std::max(16, target_pairs * 8);
  for (int attempt = 0; attempt < max_attempts && static_cast<int>(pairs.size()) < target_pairs;
       ++attempt) {
    const Utterance& u = utterances[static_cast<size_t>(attempt) % utterances.size()];
    PerturbOutcome out = perturb_timbre_generate(u, config, stack, pool, world,
                                                 0x9f00d + static_cast<uint64_t>(attempt));
    ++st.attempted;
    if (!out.accepted) {
      if (out.content_wer > config.max_content_wer)
        ++st.rejected_content;
      else
        ++st.rejected_timbre;
      continue;
    }
    ++st.accepted;
    pairs.push_back(std::move(out.pair));
  }
  if (static_cast<int>(pairs.size()) < target_pairs)
    throw Error("distill set underfilled: " + std::to_string(pairs.size()) + "/" +
                std::to_string(target_pairs) + " pairs after " + std::to_string(st.attempted) +
                " attempts (" + std::to_string(st.rejected_content) + " content, " +
                std::to_string(st.rejected_timbre) + " timbre rejections)");
  return pairs;
}

acoustic::DiffusionModel train_distilled_diffusion(const std::vector<DistillPair>& pairs,
                                                   acoustic::DiffusionConfig config,
                                                   const acoustic::DiffusionModel* fine_tune_from) {
  if (pairs.empty()) throw DataError("distilled diffusion needs a nonempty pair set");
  // The timbre reference is the whole point here: always provided, no prefix.
  config.p_timbre = 1.0;
  config.p_prefix = 0.0;
  std::vector<acoustic::DiffusionExample> examples;
  examples.reserve(pairs.size());
  for (const DistillPair& p : pairs) {
    acoustic::DiffusionExample ex;
    ex.tokens = p.alt_tokens;
    ex.latents = p.ori_latents;
    ex.timbre = p.timbre_ref;
    examples.push_back(std::move(ex));
  }
  acoustic::DiffusionModel model(config);
  if (fine_tune_from) {
    io::Checkpoint ck;
    const_cast<nn::ParamStore&>(const_cast<acoustic::DiffusionModel*>(fine_tune_from)->params())
        .save_into(ck);
    model.params().load_from(ck);
  }
  model.train(examples);
  return model;
}

Mat voice_convert(const Mat& source_frames, const Mat& target_reference_frames,
                  const AcousticStack& stack, const WorldBasis& world,
                  const acoustic::FlowConfig& flow) {
  stack.require();
  if (source_frames.rows() == 0 || target_reference_frames.rows() == 0)
    throw DataError("voice conversion needs nonempty source and reference audio");
  const vq::SpeechTokenSeq tokens = stack.tokenizer->encode(source_frames);
  DiffusionCondition cond;
  cond.tokens = tokens.token_ids;
  cond.timbre_ref = corpus::oracle_speaker_embedding(target_reference_frames, world);
  const Mat latents = stack.diffusion->sample(cond, flow);
  const Mat frames = stack.vocoder->decode(latents);
  // ceil upsampling can overshoot by r-1 frames; the contract is exact length.
  return frames.topRows(source_frames.rows());
}

void save_distill_set(const std::vector<DistillPair>& pairs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "pairs");
  std::vector<io::json> rows;
  rows.reserve(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    const DistillPair& p = pairs[i];
    const std::string base = "pairs/pair" + std::to_string(i);
    io::write_msf1(dir / (base + "_ori_frames.msf"), p.ori_frames);
    io::write_msf1(dir / (base + "_ori_latents.msf"), p.ori_latents);
    io::write_msf1(dir / (base + "_alt_frames.msf"), p.alt_frames);
    io::write_msf1(dir / (base + "_alt_latents.msf"), p.alt_latents);
    io::json timbre = io::json::array();
    for (Index k = 0; k < p.timbre_ref.size(); ++k) timbre.push_back(p.timbre_ref(k));
    rows.push_back({{"id", "pair" + std::to_string(i)},
                    {"source_id", p.source_id},
                    {"perturb_seed", p.perturb_seed},
                    {"ori_tokens", p.ori_tokens},
                    {"alt_tokens", p.alt_tokens},
                    {"timbre_ref", timbre},
                    {"prefix", base}});
  }
  io::write_jsonl(dir / "pairs.jsonl", rows);
}

std::vector<DistillPair> load_distill_set(const std::filesystem::path& dir) {
  const auto rows = io::read_jsonl(dir / "pairs.jsonl");
  std::vector<DistillPair> pairs;
  pairs.reserve(rows.size());
  for (const io::json& row : rows) {
    DistillPair p;
    const std::string base = row.at("prefix");
    p.source_id = row.at("source_id");
    p.perturb_seed = row.at("perturb_seed");
    p.ori_tokens = row.at("ori_tokens").get<std::vector<int>>();
    p.alt_tokens = row.at("alt_tokens").get<std::vector<int>>();
    const auto& timbre = row.at("timbre_ref");
    p.timbre_ref.resize(static_cast<Index>(timbre.size()));
    for (Index k = 0; k < p.timbre_ref.size(); ++k)
      p.timbre_ref(k) = timbre[static_cast<size_t>(k)];
    p.ori_frames = io::read_msf1(dir / (base + "_ori_frames.msf"));
    p.ori_latents = io::read_msf1(dir / (base + "_ori_latents.msf"));
    p.alt_frames = io::read_msf1(dir / (base + "_alt_frames.msf"));
    p.alt_latents = io::read_msf1(dir / (base + "_alt_latents.msf"));
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace ttslab::factorize
