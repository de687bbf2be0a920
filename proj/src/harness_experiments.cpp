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

#include <algorithm>
#include <chrono>
#include <cmath>

#include "ttslab/harness.hpp"

namespace ttslab::harness {

using corpus::Utterance;
using corpus::UtteranceSpec;
using eval::EvalCaseData;

namespace {

std::vector<int> random_text(Rng& rng, int lo, int hi, int num_symbols) {
  std::vector<int> text(static_cast<size_t>(rng.uniform_int(lo, hi)));
  for (int& s : text) s = rng.uniform_int(0, num_symbols - 1);
  return text;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

// --- RL ---------------------------------------------------------------------------

std::vector<adapt::RlPrompt> Harness::build_rl_prompts(const std::string& kind, bool eval_split,
                                                       int count, uint64_t seed) {
  const corpus::WorldBasis& w = world();
  const vq::Tokenizer& tok = tokenizer();
  const lm::TokenLm& model = base_lm();
  const int r = tok.config().downsample;

  // SER prompts carry the target emotion in the prompt clip itself; SIM-WER
  // prompts use the neutral-manifest style. Half of each set targets hard
  // texts. Train and eval splits draw from disjoint streams.
  eval::ManifestConfig mcfg = config_.manifest;
  mcfg.num_cases = count;
  mcfg.emotion_controlled = (kind == "ser");
  const uint64_t stream = Rng::splitmix(seed ^ (eval_split ? 0xe0a1u : 0x70a1u));
  const auto cases = eval::make_icl_manifest(w, mcfg, stream);

  eval::HardSetConfig hcfg = config_.hard_set;
  hcfg.seed = Rng::splitmix(stream ^ 0xa3d);
  const auto hard = eval::make_hard_set(hcfg, w.dims.num_symbols);

  std::vector<adapt::RlPrompt> prompts;
  prompts.reserve(cases.size());
  for (size_t i = 0; i < cases.size(); ++i) {
    const EvalCaseData& c = cases[i];
    adapt::RlPrompt p;
    const bool use_hard = (kind != "ser") && (i % 2 == 1);
    p.target_text = use_hard ? hard[i % hard.size()]
                             : corpus::text_from_string(c.meta.target_text, w.dims.num_symbols);
    const Mat prompt = acoustic::trim_to_multiple(c.prompt_frames, r);
    p.prefix = lm::build_icl_sequence(
        corpus::text_from_string(c.meta.prompt_text, w.dims.num_symbols), p.target_text,
        tok.encode(prompt), model.layout(), model.config().context);
    p.reference_frames = prompt;
    p.target_emotion = corpus::emotion_from_name(c.meta.emotion);
    p.max_new_tokens = pipeline::continuation_budget(static_cast<int>(p.prefix.size()),
                                                     model.config().context,
                                                     static_cast<int>(p.target_text.size()));
    prompts.push_back(std::move(p));
  }
  return prompts;
}

json Harness::evaluate_rl_policy(const lm::TokenLm& policy, const std::string& kind,
                                 const std::vector<adapt::RlPrompt>& prompts, uint64_t seed) {
  const corpus::WorldBasis& w = world();
  adapt::RewardSpec spec;
  spec.kind = kind == "ser" ? adapt::RewardSpec::Kind::kSer : adapt::RewardSpec::Kind::kSimWer;
  spec.alpha = config_.rl.alpha;
  spec.lambda = config_.rl.lambda;

  Rng rng(Rng::splitmix(seed ^ 0xe7a1));
  std::vector<double> wers, sims, rewards, durations;
  std::map<std::string, std::pair<int, int>> emotion_hits;  // emotion -> (hits, total)
  for (const adapt::RlPrompt& p : prompts) {
    for (int s = 0; s < config_.rl.eval_samples; ++s) {
      lm::SamplerConfig sampler;
      sampler.temperature = config_.rl.rl.temperature;
      sampler.top_k = config_.rl.rl.top_k;
      sampler.max_new_tokens = p.max_new_tokens;
      sampler.seed = rng.next_u64();
      const vq::SpeechTokenSeq tokens = policy.generate(p.prefix, sampler, 2);
      if (tokens.token_ids.empty()) {
        wers.push_back(1.0);
        rewards.push_back(spec.clip_lo);
        continue;
      }
      acoustic::FlowConfig flow = config_.flow;
      flow.seed = rng.next_u64();
      const Mat frames = pipeline::decode_continuation(stack(), p.reference_frames, tokens, flow);
      durations.push_back(static_cast<double>(frames.rows()));
      const double wer =
          eval::wer_proxy(p.target_text, corpus::oracle_decode_text(frames, w));
      wers.push_back(wer);
      sims.push_back(eval::sim_metric(corpus::oracle_speaker_embedding(frames, w),
                                      corpus::oracle_speaker_embedding(p.reference_frames, w)));
      adapt::RewardSpec rs = spec;
      rs.target_emotion = p.target_emotion;
      rewards.push_back(adapt::compute_reward(frames, &p.reference_frames, p.target_text, rs, w));
      if (spec.kind == adapt::RewardSpec::Kind::kSer) {
        auto& cell = emotion_hits[corpus::emotion_name(p.target_emotion)];
        cell.second += 1;
        if (corpus::oracle_emotion_classify(frames, w) == p.target_emotion) cell.first += 1;
      }
    }
  }
  json out{{"wer", mean_of(wers)},
           {"sim", mean_of(sims)},
           {"reward", mean_of(rewards)},
           {"mean_duration", mean_of(durations)}};
  if (!emotion_hits.empty()) {
    json acc = json::object();
    for (const auto& [name, cell] : emotion_hits)
      acc[name] = cell.second > 0 ? static_cast<double>(cell.first) / cell.second : 0.0;
    out["emotion_accuracy"] = acc;
  }
  return out;
}

json Harness::run_rl_experiment(const std::string& kind, uint64_t seed, adapt::RlReport* log,
                                std::unique_ptr<lm::TokenLm>& tuned_out) {
  if (kind != "sim_wer" && kind != "ser")
    throw ValidationError("rl kind must be sim_wer or ser");
  const corpus::WorldBasis& w = world();
  const lm::TokenLm& base = base_lm();

  const auto train_prompts = build_rl_prompts(kind, /*eval_split=*/false,
                                              config_.rl.train_prompts, seed);
  // Held-out sets: for sim_wer split standard/hard, for ser one emotion set.
  std::vector<adapt::RlPrompt> eval_std, eval_hard;
  {
    const auto eval_all = build_rl_prompts(kind, /*eval_split=*/true, config_.rl.eval_prompts,
                                           seed);
    for (size_t i = 0; i < eval_all.size(); ++i) {
      if (kind == "ser" || i % 2 == 0)
        eval_std.push_back(eval_all[i]);
      else
        eval_hard.push_back(eval_all[i]);
    }
  }

  adapt::RewardSpec spec;
  spec.kind = kind == "ser" ? adapt::RewardSpec::Kind::kSer : adapt::RewardSpec::Kind::kSimWer;
  spec.alpha = config_.rl.alpha;
  spec.lambda = config_.rl.lambda;

  adapt::RLConfig rl = config_.rl.rl;
  rl.seed = seed;

  uint64_t decode_counter = 0;
  adapt::RolloutDecodeFn decode = [this, &decode_counter](const adapt::RlPrompt& p,
                                                          const vq::SpeechTokenSeq& tokens) {
    acoustic::FlowConfig flow = config_.flow;
    // Rollout decoding stays cheap and conditional-only.
    flow.num_steps = std::max(4, config_.flow.num_steps / 2);
    flow.guidance_scale = 0.0;
    flow.seed = Rng::splitmix(0xdec0de ^ ++decode_counter);
    return pipeline::decode_continuation(stack(), p.reference_frames, tokens, flow);
  };

  const json pre_std = evaluate_rl_policy(base, kind, eval_std, seed + 1);
  const json pre_hard = eval_hard.empty() ? json() : evaluate_rl_policy(base, kind, eval_hard,
                                                                        seed + 2);
  tuned_out = std::make_unique<lm::TokenLm>(
      adapt::reinforce_tune(base, train_prompts, spec, rl, decode, w, log));
  const json post_std = evaluate_rl_policy(*tuned_out, kind, eval_std, seed + 1);
  const json post_hard = eval_hard.empty() ? json() : evaluate_rl_policy(*tuned_out, kind,
                                                                         eval_hard, seed + 2);

  json metrics{{"kind", kind}, {"seed", seed},
               {"pre", {{"standard", pre_std}, {"hard", pre_hard}}},
               {"post", {{"standard", post_std}, {"hard", post_hard}}}};
  if (log && !log->steps.empty()) {
    metrics["duration_first"] = log->steps.front().mean_duration_frames;
    metrics["duration_last"] = log->steps.back().mean_duration_frames;
    metrics["duration_drift"] =
        log->steps.back().mean_duration_frames - log->steps.front().mean_duration_frames;
  }
  return metrics;
}

// --- SFT / IFT evals -----------------------------------------------------------------

json Harness::run_sft_eval(const lm::TokenLm& sft_model, uint64_t seed) {
  const corpus::WorldBasis& w = world();
  const lm::TokenLm& base = base_lm();
  Rng rng(Rng::splitmix(seed ^ 0x5f7e));

  // One enrollment clip per registered speaker, in the manifest prompt range.
  std::vector<Utterance> enrollment;
  std::vector<DVec> enrollment_emb;
  for (int k = 0; k < config_.sft.speakers; ++k) {
    UtteranceSpec spec;
    spec.text = random_text(rng, config_.manifest.min_prompt_symbols,
                            config_.manifest.max_prompt_symbols, w.dims.num_symbols);
    spec.speaker = corpus::make_speaker(w, k);
    spec.emotion = corpus::Emotion::kNeutral;
    spec.rate_factor = 1.0;
    spec.noise_sigma = config_.corpus.noise_sigma;
    spec.utterance_seed = rng.next_u64();
    enrollment.push_back(corpus::render_utterance(spec, w));
    enrollment_emb.push_back(corpus::oracle_speaker_embedding(enrollment.back().frames, w));
  }

  std::vector<double> icl_wer, icl_sim, sft_wer, sft_sim;
  int closest_ok = 0, closest_total = 0;
  for (int i = 0; i < config_.sft.eval_generations; ++i) {
    const int k = i % config_.sft.speakers;
    const auto text = random_text(rng, config_.manifest.min_target_symbols,
                                  config_.manifest.max_target_symbols, w.dims.num_symbols);
    lm::SamplerConfig sampler = config_.eval_sampler;
    sampler.seed = rng.next_u64();
    acoustic::FlowConfig flow = config_.flow;
    flow.seed = rng.next_u64();
    // Zero-shot ICL with the enrollment clip as the audio prompt.
    try {
      const Mat icl_out = pipeline::icl_synthesize(stack(), base, enrollment[k].spec.text, text,
                                                   enrollment[k].frames, sampler, flow);
      icl_wer.push_back(eval::wer_proxy(text, corpus::oracle_decode_text(icl_out, w)));
      icl_sim.push_back(eval::sim_metric(corpus::oracle_speaker_embedding(icl_out, w),
                                         enrollment_emb[k]));
    } catch (const std::exception&) {
      icl_wer.push_back(1.0);
    }
    // Index-conditioned SFT generation, no audio prompt.
    try {
      sampler.seed = rng.next_u64();
      flow.seed = rng.next_u64();
      const Mat sft_out = pipeline::index_synthesize(
          stack(), sft_model, sft_model.layout().speaker_token("spk" + std::to_string(k)),
          std::nullopt, text, sampler, flow);
      sft_wer.push_back(eval::wer_proxy(text, corpus::oracle_decode_text(sft_out, w)));
      const DVec emb = corpus::oracle_speaker_embedding(sft_out, w);
      sft_sim.push_back(eval::sim_metric(emb, enrollment_emb[k]));
      int best = 0;
      double best_cos = -2;
      for (int j = 0; j < config_.sft.speakers; ++j) {
        const double c = eval::sim_metric(emb, enrollment_emb[j]);
        if (c > best_cos) {
          best_cos = c;
          best = j;
        }
      }
      closest_total += 1;
      closest_ok += best == k ? 1 : 0;
    } catch (const std::exception&) {
      sft_wer.push_back(1.0);
    }
  }
  return json{{"seed", seed},
              {"icl_wer", mean_of(icl_wer)},
              {"icl_sim", mean_of(icl_sim)},
              {"sft_wer", mean_of(sft_wer)},
              {"sft_sim", mean_of(sft_sim)},
              {"sft_closest_correct",
               closest_total > 0 ? static_cast<double>(closest_ok) / closest_total : 0.0}};
}

json Harness::run_ift_eval(const lm::TokenLm& ift_model, const lm::TokenLm& sft_model,
                           uint64_t seed) {
  const corpus::WorldBasis& w = world();
  Rng rng(Rng::splitmix(seed ^ 0x1f7e));
  json per_emotion = json::object();
  const int per = std::max(1, config_.ift.eval_generations / 4);
  for (int e = 1; e < corpus::kNumEmotions; ++e) {  // angry, happy, sad, surprise
    const auto emotion = static_cast<corpus::Emotion>(e);
    int controlled_hit = 0, uncontrolled_hit = 0, total = 0;
    for (int i = 0; i < per; ++i) {
      const int k = i % config_.sft.speakers;
      const int spk_token = ift_model.layout().speaker_token("spk" + std::to_string(k));
      const auto text = random_text(rng, config_.manifest.min_target_symbols,
                                    config_.manifest.max_target_symbols, w.dims.num_symbols);
      lm::SamplerConfig sampler = config_.eval_sampler;
      acoustic::FlowConfig flow = config_.flow;
      ++total;
      try {
        sampler.seed = rng.next_u64();
        flow.seed = rng.next_u64();
        const Mat out = pipeline::index_synthesize(
            stack(), ift_model, spk_token, ift_model.layout().control_token(emotion), text,
            sampler, flow);
        if (corpus::oracle_emotion_classify(out, w) == emotion) ++controlled_hit;
      } catch (const std::exception&) {
      }
      try {
        sampler.seed = rng.next_u64();
        flow.seed = rng.next_u64();
        const Mat out = pipeline::index_synthesize(stack(), sft_model, spk_token, std::nullopt,
                                                   text, sampler, flow);
        if (corpus::oracle_emotion_classify(out, w) == emotion) ++uncontrolled_hit;
      } catch (const std::exception&) {
      }
    }
    per_emotion[corpus::emotion_name(emotion)] = {
        {"controlled", static_cast<double>(controlled_hit) / total},
        {"uncontrolled", static_cast<double>(uncontrolled_hit) / total}};
  }
  return json{{"seed", seed}, {"per_emotion", per_emotion}};
}

// --- VC ----------------------------------------------------------------------------

json Harness::run_vc_experiment() {
  const corpus::WorldBasis& w = world();
  const corpus::Corpus corpus = training_corpus();
  factorize::AcousticStack base_stack{&tokenizer(), &vocoder(), &diffusion()};
  factorize::AcousticStack distilled_stack{&tokenizer(), &vocoder(), &distilled_diffusion()};

  Rng rng = Rng::fork(config_.distill.seed, 0xce);
  std::vector<double> sim_target_base, sim_target_distilled, sim_source_distilled;
  std::vector<double> wer_converted, wer_before, identity_sim, identity_wer_delta;
  int length_exact = 0;

  for (int i = 0; i < config_.distill.eval_cases; ++i) {
    const Utterance& src = corpus.utterances[rng.below(corpus.utterances.size())];
    // A reference clip from a different speaker.
    const Utterance* ref = nullptr;
    for (int tries = 0; tries < 64 && !ref; ++tries) {
      const Utterance& cand = corpus.utterances[rng.below(corpus.utterances.size())];
      if (cand.spec.speaker.speaker_id != src.spec.speaker.speaker_id) ref = &cand;
    }
    if (!ref) continue;

    acoustic::FlowConfig flow = config_.flow;
    flow.seed = rng.next_u64();
    const Mat conv_distilled = factorize::voice_convert(src.frames, ref->frames, distilled_stack,
                                                        w, flow);
    const Mat conv_base = factorize::voice_convert(src.frames, ref->frames, base_stack, w, flow);
    length_exact += conv_distilled.rows() == src.frames.rows() ? 1 : 0;

    const DVec src_emb = corpus::oracle_speaker_embedding(src.frames, w);
    const DVec ref_emb = corpus::oracle_speaker_embedding(ref->frames, w);
    sim_target_distilled.push_back(
        eval::sim_metric(corpus::oracle_speaker_embedding(conv_distilled, w), ref_emb));
    sim_target_base.push_back(
        eval::sim_metric(corpus::oracle_speaker_embedding(conv_base, w), ref_emb));
    sim_source_distilled.push_back(
        eval::sim_metric(corpus::oracle_speaker_embedding(conv_distilled, w), src_emb));
    wer_before.push_back(
        eval::wer_proxy(src.spec.text, corpus::oracle_decode_text(src.frames, w)));
    wer_converted.push_back(
        eval::wer_proxy(src.spec.text, corpus::oracle_decode_text(conv_distilled, w)));

    // Identity conversion: target reference is the source speaker itself.
    flow.seed = rng.next_u64();
    const Mat conv_self = factorize::voice_convert(src.frames, src.frames, distilled_stack, w,
                                                   flow);
    identity_sim.push_back(
        eval::sim_metric(corpus::oracle_speaker_embedding(conv_self, w), src_emb));
    identity_wer_delta.push_back(
        eval::wer_proxy(src.spec.text, corpus::oracle_decode_text(conv_self, w)) -
        wer_before.back());
  }

  return json{{"cases", sim_target_distilled.size()},
              {"sim_to_target_distilled", mean_of(sim_target_distilled)},
              {"sim_to_target_base", mean_of(sim_target_base)},
              {"sim_to_source_distilled", mean_of(sim_source_distilled)},
              {"wer_converted", mean_of(wer_converted)},
              {"wer_before", mean_of(wer_before)},
              {"identity_sim", mean_of(identity_sim)},
              {"identity_wer_delta", mean_of(identity_wer_delta)},
              {"length_exact_fraction",
               sim_target_distilled.empty()
                   ? 0.0
                   : static_cast<double>(length_exact) /
                         static_cast<double>(sim_target_distilled.size())}};
}

// --- DiT ----------------------------------------------------------------------------

json Harness::run_dit_eval() {
  const corpus::WorldBasis& w = world();
  const auto cases = icl_manifest();
  const dit::DitModel& model = dit_model();
  const json ar_report = read_report("icl-eval");

  int case_index = 0;
  int duration_exact = 0;
  eval::IclSystem dit_system{
      "dit-model", [this, &model, &case_index, &duration_exact, &w](const EvalCaseData& c) {
        acoustic::FlowConfig flow = config_.flow;
        flow.seed = Rng::splitmix(config_.flow.seed ^ (0xd17 + case_index++));
        const Mat out = pipeline::dit_synthesize(
            stack(), model, corpus::text_from_string(c.meta.prompt_text, w.dims.num_symbols),
            corpus::text_from_string(c.meta.target_text, w.dims.num_symbols), c.prompt_frames,
            c.reference_frames.rows(), flow);
        if (out.rows() == c.reference_frames.rows()) ++duration_exact;
        return out;
      }};
  const eval::MetricReport report = eval::run_icl_eval(cases, dit_system, w);
  const auto p = root_ / "reports" / "dit-eval.dit-model.json";
  io::write_text_file(p, report.to_json().dump(2));

  return json{{"dit_wer", report.mean_wer},
              {"dit_sim", report.mean_sim},
              {"ar_wer", ar_report.at("model_wer")},
              {"ar_sim", ar_report.at("model_sim")},
              {"failed_cases", report.failed_cases},
              {"duration_exact_fraction",
               static_cast<double>(duration_exact) / static_cast<double>(cases.size())},
              {"manifest_hash", report.manifest_hash}};
}

json Harness::run_edit_experiment() {
  const corpus::WorldBasis& w = world();
  dit::EditStack stack_{&dit_model(), &vocoder()};
  Rng rng = Rng::fork(config_.edit.seed, 0xed17);

  json per_rate = json::object();
  std::map<std::string, std::vector<double>> rate_wer;
  std::vector<double> unedited_wer;
  bool preservation_exact = true;
  int substitution_ok = 0, substitution_total = 0;

  for (int i = 0; i < config_.edit.cases; ++i) {
    UtteranceSpec spec;
    spec.text = random_text(rng, 6, config_.corpus.max_text_len, w.dims.num_symbols);
    spec.speaker = corpus::make_speaker(w, rng.uniform_int(0, config_.corpus.num_speakers - 1));
    spec.emotion = corpus::Emotion::kNeutral;
    spec.rate_factor = 1.0;
    spec.noise_sigma = config_.corpus.noise_sigma;
    spec.utterance_seed = rng.next_u64();
    const Utterance u = corpus::render_utterance(spec, w);
    const Index t = u.frames.rows();
    const DVec timbre = corpus::oracle_speaker_embedding(u.frames, w);
    unedited_wer.push_back(eval::wer_proxy(spec.text, corpus::oracle_decode_text(u.frames, w)));

    for (double rate : config_.edit.mask_rates) {
      dit::EditRequest req;
      req.kind = dit::EditRequest::Kind::kContent;
      req.replacement_text = spec.text;
      req.frame_mask.assign(static_cast<size_t>(t), 0);
      const Index span = std::max<Index>(1, static_cast<Index>(std::lround(rate * t)));
      const Index start = static_cast<Index>(rng.below(static_cast<uint64_t>(t - span + 1)));
      for (Index j = start; j < start + span; ++j) req.frame_mask[static_cast<size_t>(j)] = 1;

      acoustic::FlowConfig flow = config_.flow;
      flow.seed = rng.next_u64();
      const Mat edited = dit::edit_content(u.frames, req, stack_, flow, &timbre);
      for (Index j = 0; j < t; ++j)
        if (!req.frame_mask[static_cast<size_t>(j)] &&
            (edited.row(j) - u.frames.row(j)).cwiseAbs().maxCoeff() != 0.0f)
          preservation_exact = false;
      char key[16];
      std::snprintf(key, sizeof(key), "%.1f", rate);
      rate_wer[key].push_back(
          eval::wer_proxy(spec.text, corpus::oracle_decode_text(edited, w)));
    }

    // Symbol substitution: mask one symbol's span and re-spell the text.
    {
      const size_t pos = rng.below(spec.text.size());
      std::vector<int> new_text = spec.text;
      new_text[pos] = (new_text[pos] + 1 + static_cast<int>(rng.below(
                          static_cast<uint64_t>(w.dims.num_symbols - 1)))) %
                      w.dims.num_symbols;
      // Locate the span of that symbol occurrence (text spans sit at even
      // indices; odd ones are boundaries).
      const corpus::SymbolSpan& span = u.spans[2 * pos];
      dit::EditRequest req;
      req.kind = dit::EditRequest::Kind::kContent;
      req.replacement_text = new_text;
      req.frame_mask.assign(static_cast<size_t>(t), 0);
      const Index margin = 2;
      for (Index j = std::max<Index>(0, span.start - margin);
           j < std::min<Index>(t, span.end + margin); ++j)
        req.frame_mask[static_cast<size_t>(j)] = 1;
      acoustic::FlowConfig flow = config_.flow;
      flow.seed = rng.next_u64();
      const Mat edited = dit::edit_content(u.frames, req, stack_, flow, &timbre);
      ++substitution_total;
      if (corpus::oracle_decode_text(edited, w) == new_text) ++substitution_ok;
    }
  }
  for (const auto& [key, v] : rate_wer) per_rate[key] = mean_of(v);
  return json{{"cases", config_.edit.cases},
              {"unedited_wer", mean_of(unedited_wer)},
              {"wer_by_mask_rate", per_rate},
              {"unmasked_frames_exact", preservation_exact},
              {"substitution_success",
               substitution_total > 0
                   ? static_cast<double>(substitution_ok) / substitution_total
                   : 0.0}};
}

json Harness::run_rate_edit_experiment() {
  const corpus::WorldBasis& w = world();
  dit::EditStack stack_{&dit_model(), &vocoder()};
  Rng rng = Rng::fork(config_.rate_edit.seed, 0x4a7e);

  json per_rate = json::object();
  std::map<std::string, std::vector<double>> rate_wer, rate_sim;
  bool lengths_exact = true;

  for (int i = 0; i < config_.rate_edit.cases; ++i) {
    UtteranceSpec spec;
    spec.text = random_text(rng, 5, config_.corpus.max_text_len, w.dims.num_symbols);
    spec.speaker = corpus::make_speaker(w, rng.uniform_int(0, config_.corpus.num_speakers - 1));
    spec.emotion = corpus::Emotion::kNeutral;
    spec.rate_factor = 1.0;
    spec.noise_sigma = config_.corpus.noise_sigma;
    spec.utterance_seed = rng.next_u64();
    const Utterance u = corpus::render_utterance(spec, w);
    const DVec timbre = corpus::oracle_speaker_embedding(u.frames, w);

    for (double rate : config_.rate_edit.rates) {
      dit::EditRequest req;
      req.kind = dit::EditRequest::Kind::kRate;
      req.rate = rate;
      acoustic::FlowConfig flow = config_.flow;
      flow.seed = rng.next_u64();
      const Mat out = dit::edit_rate(u.frames, req, spec.text, stack_, flow, timbre);
      const Index expected = static_cast<Index>(std::lround(rate * u.frames.rows()));
      if (out.rows() != expected) lengths_exact = false;
      char key[16];
      std::snprintf(key, sizeof(key), "%.1f", rate);
      rate_wer[key].push_back(eval::wer_proxy(spec.text, corpus::oracle_decode_text(out, w)));
      rate_sim[key].push_back(eval::sim_metric(corpus::oracle_speaker_embedding(out, w), timbre));
    }
  }
  json wj = json::object(), sj = json::object();
  for (const auto& [key, v] : rate_wer) wj[key] = mean_of(v);
  for (const auto& [key, v] : rate_sim) sj[key] = mean_of(v);
  return json{{"cases", config_.rate_edit.cases},
              {"wer_by_rate", wj},
              {"sim_by_rate", sj},
              {"lengths_exact", lengths_exact}};
}

// --- Streaming ------------------------------------------------------------------------

json Harness::run_stream_bench() {
  const corpus::WorldBasis& w = world();
  const vq::Tokenizer& tok = tokenizer();
  const acoustic::Vocoder& voc = vocoder();
  const acoustic::DiffusionModel& diff = diffusion();
  Rng rng = Rng::fork(config_.stream.seed, 0x57e);

  std::vector<double> off_wer, str_wer, latency_ratio, rtf_values, first_packet;
  bool lengths_match = true, degenerate_exact = true;
  json timing_sample;

  for (int i = 0; i < config_.stream.cases; ++i) {
    UtteranceSpec spec;
    spec.text = random_text(rng, 8, 14, w.dims.num_symbols);
    spec.speaker = corpus::make_speaker(w, rng.uniform_int(0, config_.corpus.num_speakers - 1));
    spec.emotion = corpus::Emotion::kNeutral;
    spec.rate_factor = 1.0;
    spec.noise_sigma = config_.corpus.noise_sigma;
    spec.utterance_seed = rng.next_u64();
    const Utterance u = corpus::render_utterance(spec, w);
    const Mat trimmed = acoustic::trim_to_multiple(u.frames, tok.config().downsample);

    acoustic::DiffusionCondition cond;
    cond.tokens = tok.encode(trimmed).token_ids;
    acoustic::FlowConfig flow = config_.flow;
    flow.seed = rng.next_u64();

    const auto t0 = std::chrono::steady_clock::now();
    const Mat offline = diff.sample(cond, flow);
    const double offline_wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    off_wer.push_back(
        eval::wer_proxy(spec.text, corpus::oracle_decode_text(voc.decode(offline), w)));

    acoustic::StreamSampler stream(diff, cond, flow, config_.stream.chunk);
    Mat collected(0, diff.config().latent_dim);
    while (!stream.done()) {
      const Mat chunk = stream.next_chunk();
      collected.conservativeResize(collected.rows() + chunk.rows(), Eigen::NoChange);
      collected.bottomRows(chunk.rows()) = chunk;
    }
    lengths_match = lengths_match && collected.rows() == offline.rows();
    str_wer.push_back(
        eval::wer_proxy(spec.text, corpus::oracle_decode_text(voc.decode(collected), w)));

    const acoustic::LatencyReport lat = acoustic::measure_latency_rtf(
        stream.state().timing, collected.rows(), corpus::kFrameRate);
    first_packet.push_back(lat.first_packet_latency_s);
    rtf_values.push_back(lat.rtf);
    latency_ratio.push_back(offline_wall > 0 ? lat.first_packet_latency_s / offline_wall : 0.0);
    if (i == 0) timing_sample = stream.state().timing_json();

    // Degenerate chunking must match the offline path bit for bit.
    acoustic::StreamSampler degenerate(diff, cond, flow,
                                       static_cast<int>(cond.tokens.size()));
    const Mat single = degenerate.next_chunk();
    if (single.rows() != offline.rows() ||
        (single - offline).cwiseAbs().maxCoeff() != 0.0f)
      degenerate_exact = false;
  }

  return json{{"cases", config_.stream.cases},
              {"chunk", config_.stream.chunk},
              {"offline_wer", mean_of(off_wer)},
              {"streamed_wer", mean_of(str_wer)},
              {"lengths_match", lengths_match},
              {"degenerate_bit_exact", degenerate_exact},
              {"first_packet_latency_s", mean_of(first_packet)},
              {"first_packet_over_offline", mean_of(latency_ratio)},
              {"rtf", mean_of(rtf_values)},
              {"timing_sample", timing_sample}};
}

// --- Shuffled ASR -------------------------------------------------------------------

json Harness::run_shuffle_asr() {
  const lm::TokenLm& model = base_lm();
  uint64_t counter = 0;
  eval::PromptedSynthesisFn synth = [this, &model, &counter](const Utterance& prompt,
                                                             const std::vector<int>& text) {
    lm::SamplerConfig sampler = config_.eval_sampler;
    sampler.seed = Rng::splitmix(config_.shuffle_asr.seed ^ ++counter);
    acoustic::FlowConfig flow = config_.flow;
    flow.seed = Rng::splitmix(config_.shuffle_asr.seed ^ (counter << 20));
    return pipeline::icl_synthesize(stack(), model, prompt.spec.text, text, prompt.frames,
                                    sampler, flow);
  };
  const eval::ShuffledAsrReport report =
      eval::shuffled_asr_experiment(world(), config_.shuffle_asr, synth);
  return report.to_json();
}

}  // namespace ttslab::harness
