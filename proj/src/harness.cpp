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

#include "ttslab/harness.hpp"

#include <chrono>
#include <cmath>

namespace ttslab::harness {

// --- Strict JSON parsing ------------------------------------------------------------

namespace {

class StrictObj {
 public:
  StrictObj(json j, std::string path) : j_(std::move(j)), path_(std::move(path)) {
    if (!j_.is_object()) throw ValidationError(path_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ValidationError(path_ + "." + key + ": " + e.what());
    }
  }

  void get_seed(const char* key, uint64_t& out) {
    used_.insert(key);
    if (!j_.contains(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer() || v.get<int64_t>() < 0)
      throw ValidationError(path_ + "." + key + ": seeds must be nonnegative integers");
    out = static_cast<uint64_t>(v.get<int64_t>());
  }

  json section(const char* key) {
    used_.insert(key);
    return j_.contains(key) ? j_.at(key) : json::object();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key()))
        throw ValidationError("unknown config key \"" + path_ + "." + it.key() + "\"");
    }
  }

 private:
  json j_;  // by value: sections are often temporaries
  std::string path_;
  std::set<std::string> used_;
};

void parse_sampler(const json& j, const std::string& path, lm::SamplerConfig& s) {
  StrictObj o(j, path);
  o.get("temperature", s.temperature);
  o.get("top_k", s.top_k);
  o.get("max_new_tokens", s.max_new_tokens);
  o.get_seed("seed", s.seed);
  o.finish();
}

void parse_diffusion(const json& j, const std::string& path, acoustic::DiffusionConfig& d) {
  StrictObj o(j, path);
  o.get("layers", d.layers);
  o.get("width", d.width);
  o.get("heads", d.heads);
  o.get("mlp_hidden", d.mlp_hidden);
  o.get("token_embed_dim", d.token_embed_dim);
  o.get("codebook_size", d.codebook_size);
  o.get("downsample", d.downsample);
  o.get("latent_dim", d.latent_dim);
  o.get("timbre_dim", d.timbre_dim);
  o.get("max_len", d.max_len);
  o.get("p_drop", d.p_drop);
  o.get("p_timbre", d.p_timbre);
  o.get("p_prefix", d.p_prefix);
  o.get("train_steps", d.train_steps);
  o.get("batch_size", d.batch_size);
  o.get("lr", d.lr);
  o.get("warmup", d.warmup);
  o.get_seed("seed", d.seed);
  o.finish();
}

void parse_finetune(StrictObj& o, adapt::FinetuneConfig& f) {
  o.get("steps", f.steps);
  o.get("batch_size", f.batch_size);
  o.get("lr", f.lr);
  o.get("warmup", f.warmup);
  o.get_seed("seed", f.seed);
}

json sampler_json(const lm::SamplerConfig& s) {
  return json{{"temperature", s.temperature},
              {"top_k", s.top_k},
              {"max_new_tokens", s.max_new_tokens},
              {"seed", s.seed}};
}

json diffusion_json(const acoustic::DiffusionConfig& d) {
  return json{{"layers", d.layers},       {"width", d.width},
              {"heads", d.heads},         {"mlp_hidden", d.mlp_hidden},
              {"token_embed_dim", d.token_embed_dim},
              {"codebook_size", d.codebook_size},
              {"downsample", d.downsample},
              {"latent_dim", d.latent_dim},
              {"timbre_dim", d.timbre_dim},
              {"max_len", d.max_len},     {"p_drop", d.p_drop},
              {"p_timbre", d.p_timbre},   {"p_prefix", d.p_prefix},
              {"train_steps", d.train_steps},
              {"batch_size", d.batch_size},
              {"lr", d.lr},               {"warmup", d.warmup},
              {"seed", d.seed}};
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig c;
  c.tokenizer.train_steps = 4000;
  c.vocoder.train_steps = 2000;
  c.lm.train_steps = 2200;
  c.diffusion.train_steps = 2600;
  c.dit.train_steps = 3200;
  c.eval_sampler.temperature = 0.5;
  c.eval_sampler.top_k = 2;
  c.distill.train = c.diffusion;
  c.distill.train.train_steps = 1800;
  c.distill.train.seed = 51;
  return c;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c = defaults();
  StrictObj top(j, "config");

  {
    StrictObj o(top.section("world"), "world");
    o.get_seed("seed", c.world_seed);
    o.get("frame_dim", c.world.dims.frame_dim);
    o.get("content_dim", c.world.dims.content_dim);
    o.get("speaker_dim", c.world.dims.speaker_dim);
    o.get("prosody_dim", c.world.dims.prosody_dim);
    o.get("emotion_dim", c.world.dims.emotion_dim);
    o.get("num_symbols", c.world.dims.num_symbols);
    o.get("max_symbols", c.world.dims.max_symbols);
    o.get("max_pairwise_cos", c.world.max_pairwise_cos);
    o.get("codebook_retries", c.world.codebook_retries);
    o.finish();
  }
  {
    StrictObj o(top.section("corpus"), "corpus");
    o.get_seed("seed", c.corpus_seed);
    o.get("num_utterances", c.corpus.num_utterances);
    o.get("num_speakers", c.corpus.num_speakers);
    o.get("min_text_len", c.corpus.min_text_len);
    o.get("max_text_len", c.corpus.max_text_len);
    o.get("min_rate", c.corpus.min_rate);
    o.get("max_rate", c.corpus.max_rate);
    o.get("noise_sigma", c.corpus.noise_sigma);
    o.get("uniform_emotions", c.corpus.uniform_emotions);
    o.finish();
  }
  {
    StrictObj o(top.section("tokenizer"), "tokenizer");
    o.get("codebook_size", c.tokenizer.codebook_size);
    o.get("downsample", c.tokenizer.downsample);
    o.get("code_dim", c.tokenizer.code_dim);
    o.get("hidden", c.tokenizer.hidden);
    o.get("train_steps", c.tokenizer.train_steps);
    o.get("batch_size", c.tokenizer.batch_size);
    o.get("lr", c.tokenizer.lr);
    o.get("commitment_weight", c.tokenizer.commitment_weight);
    o.get("ema_decay", c.tokenizer.ema_decay);
    o.get("holdout_fraction", c.tokenizer.holdout_fraction);
    o.get_seed("seed", c.tokenizer.seed);
    o.finish();
  }
  {
    StrictObj o(top.section("vocoder"), "vocoder");
    o.get("latent_dim", c.vocoder.latent_dim);
    o.get("hidden", c.vocoder.hidden);
    o.get("train_steps", c.vocoder.train_steps);
    o.get("batch_size", c.vocoder.batch_size);
    o.get("lr", c.vocoder.lr);
    o.get("holdout_fraction", c.vocoder.holdout_fraction);
    o.get_seed("seed", c.vocoder.seed);
    o.finish();
  }
  {
    StrictObj o(top.section("lm"), "lm");
    o.get("layers", c.lm.layers);
    o.get("width", c.lm.width);
    o.get("heads", c.lm.heads);
    o.get("mlp_hidden", c.lm.mlp_hidden);
    o.get("context", c.lm.context);
    o.get("train_steps", c.lm.train_steps);
    o.get("batch_size", c.lm.batch_size);
    o.get("lr", c.lm.lr);
    o.get("warmup", c.lm.warmup);
    o.get_seed("seed", c.lm.seed);
    o.finish();
  }
  {
    StrictObj o(top.section("lm_data"), "lm_data");
    o.get("pairs", c.lm_data.pairs);
    o.get("prompt_min", c.lm_data.prompt_min);
    o.get("prompt_max", c.lm_data.prompt_max);
    o.get("target_min", c.lm_data.target_min);
    o.get("target_max", c.lm_data.target_max);
    o.get_seed("seed", c.lm_data.seed);
    o.finish();
  }
  parse_diffusion(top.section("diffusion"), "diffusion", c.diffusion);
  {
    StrictObj o(top.section("diffusion_data"), "diffusion_data");
    o.get("examples", c.diffusion_data.examples);
    o.get_seed("seed", c.diffusion_data.seed);
    o.finish();
  }
  {
    StrictObj o(top.section("dit"), "dit");
    o.get("layers", c.dit.layers);
    o.get("width", c.dit.width);
    o.get("heads", c.dit.heads);
    o.get("mlp_hidden", c.dit.mlp_hidden);
    o.get("num_symbols", c.dit.num_symbols);
    o.get("latent_dim", c.dit.latent_dim);
    o.get("timbre_dim", c.dit.timbre_dim);
    o.get("max_len", c.dit.max_len);
    o.get("p_drop", c.dit.p_drop);
    o.get("p_timbre", c.dit.p_timbre);
    o.get("mask_lo", c.dit.mask_lo);
    o.get("mask_hi", c.dit.mask_hi);
    o.get("train_steps", c.dit.train_steps);
    o.get("batch_size", c.dit.batch_size);
    o.get("lr", c.dit.lr);
    o.get("warmup", c.dit.warmup);
    o.get_seed("seed", c.dit.seed);
    o.finish();
  }
  {
    StrictObj o(top.section("dit_data"), "dit_data");
    o.get("examples", c.dit_data.examples);
    o.get("text_min", c.dit_data.text_min);
    o.get("text_max", c.dit_data.text_max);
    o.get_seed("seed", c.dit_data.seed);
    o.finish();
  }
  parse_sampler(top.section("sampler"), "sampler", c.sampler);
  parse_sampler(top.section("eval_sampler"), "eval_sampler", c.eval_sampler);
  {
    StrictObj o(top.section("flow"), "flow");
    o.get("num_steps", c.flow.num_steps);
    o.get("guidance_scale", c.flow.guidance_scale);
    o.get_seed("seed", c.flow.seed);
    o.finish();
  }
  {
    StrictObj o(top.section("manifest"), "manifest");
    o.get_seed("seed", c.manifest_seed);
    o.get("num_cases", c.manifest.num_cases);
    o.get("min_prompt_frames", c.manifest.min_prompt_frames);
    o.get("max_prompt_frames", c.manifest.max_prompt_frames);
    o.get("min_prompt_symbols", c.manifest.min_prompt_symbols);
    o.get("max_prompt_symbols", c.manifest.max_prompt_symbols);
    o.get("min_target_symbols", c.manifest.min_target_symbols);
    o.get("max_target_symbols", c.manifest.max_target_symbols);
    o.get("num_speakers", c.manifest.num_speakers);
    o.get("noise_sigma", c.manifest.noise_sigma);
    o.finish();
  }
  {
    StrictObj o(top.section("sft"), "sft");
    o.get("speakers", c.sft.speakers);
    o.get("per_speaker", c.sft.per_speaker);
    parse_finetune(o, c.sft.finetune);
    o.get_seed("data_seed", c.sft.data_seed);
    o.get("eval_generations", c.sft.eval_generations);
    o.get("eval_seeds", c.sft.eval_seeds);
    o.finish();
  }
  {
    StrictObj o(top.section("ift"), "ift");
    o.get("per_speaker", c.ift.per_speaker);
    parse_finetune(o, c.ift.finetune);
    o.get_seed("data_seed", c.ift.data_seed);
    o.get("eval_generations", c.ift.eval_generations);
    o.finish();
  }
  {
    StrictObj o(top.section("rl"), "rl");
    o.get("kind", c.rl.kind);
    o.get("samples_per_prompt", c.rl.rl.samples_per_prompt);
    o.get("temperature", c.rl.rl.temperature);
    std::string baseline = c.rl.rl.baseline == adapt::RLConfig::Baseline::kBatchMean
                               ? "batch-mean"
                               : "leave-one-out";
    o.get("baseline", baseline);
    if (baseline == "batch-mean")
      c.rl.rl.baseline = adapt::RLConfig::Baseline::kBatchMean;
    else if (baseline == "leave-one-out")
      c.rl.rl.baseline = adapt::RLConfig::Baseline::kLeaveOneOut;
    else
      throw ValidationError("rl.baseline must be batch-mean or leave-one-out");
    o.get("kl_coeff", c.rl.rl.kl_coeff);
    o.get("steps", c.rl.rl.steps);
    o.get("prompts_per_step", c.rl.rl.prompts_per_step);
    o.get("lr", c.rl.rl.lr);
    o.get("top_k", c.rl.rl.top_k);
    o.get_seed("seed", c.rl.rl.seed);
    o.get("alpha", c.rl.alpha);
    o.get("lambda", c.rl.lambda);
    o.get("train_prompts", c.rl.train_prompts);
    o.get("eval_prompts", c.rl.eval_prompts);
    o.get("eval_samples", c.rl.eval_samples);
    o.get_seed("data_seed", c.rl.data_seed);
    o.finish();
  }
  {
    StrictObj o(top.section("distill"), "distill");
    o.get("pairs", c.distill.pairs);
    o.get("mode", c.distill.mode);
    if (c.distill.mode != "swap" && c.distill.mode != "jitter")
      throw ValidationError("distill.mode must be swap or jitter");
    o.get("jitter_angle_deg", c.distill.jitter_angle_deg);
    o.get("eval_cases", c.distill.eval_cases);
    o.get_seed("seed", c.distill.seed);
    parse_diffusion(o.section("train"), "distill.train", c.distill.train);
    o.finish();
  }
  {
    StrictObj o(top.section("stream"), "stream");
    o.get("chunk", c.stream.chunk);
    o.get("cases", c.stream.cases);
    o.get_seed("seed", c.stream.seed);
    o.finish();
  }
  {
    StrictObj o(top.section("shuffle_asr"), "shuffle_asr");
    o.get("corpus_size", c.shuffle_asr.corpus_size);
    o.get("eval_size", c.shuffle_asr.eval_size);
    o.get("clean_sigma", c.shuffle_asr.clean_sigma);
    o.get("noisy_sigma", c.shuffle_asr.noisy_sigma);
    o.get("num_speakers", c.shuffle_asr.num_speakers);
    o.get_seed("seed", c.shuffle_asr.seed);
    {
      StrictObj r(o.section("recognizer"), "shuffle_asr.recognizer");
      r.get("hidden", c.shuffle_asr.recognizer.hidden);
      r.get("train_steps", c.shuffle_asr.recognizer.train_steps);
      r.get("batch_size", c.shuffle_asr.recognizer.batch_size);
      r.get("lr", c.shuffle_asr.recognizer.lr);
      r.get_seed("seed", c.shuffle_asr.recognizer.seed);
      r.finish();
    }
    o.finish();
  }
  {
    StrictObj o(top.section("hard_set"), "hard_set");
    o.get("size", c.hard_set.size);
    o.get("max_len", c.hard_set.max_len);
    o.get_seed("seed", c.hard_set.seed);
    o.finish();
  }
  {
    StrictObj o(top.section("edit"), "edit");
    o.get("cases", c.edit.cases);
    o.get("mask_rates", c.edit.mask_rates);
    o.get_seed("seed", c.edit.seed);
    o.finish();
  }
  {
    StrictObj o(top.section("rate_edit"), "rate_edit");
    o.get("cases", c.rate_edit.cases);
    o.get("rates", c.rate_edit.rates);
    o.get_seed("seed", c.rate_edit.seed);
    o.finish();
  }
  top.finish();
  return c;
}

json RunConfig::to_json() const {
  return json{
      {"world",
       {{"seed", world_seed},
        {"frame_dim", world.dims.frame_dim},
        {"content_dim", world.dims.content_dim},
        {"speaker_dim", world.dims.speaker_dim},
        {"prosody_dim", world.dims.prosody_dim},
        {"emotion_dim", world.dims.emotion_dim},
        {"num_symbols", world.dims.num_symbols},
        {"max_symbols", world.dims.max_symbols},
        {"max_pairwise_cos", world.max_pairwise_cos},
        {"codebook_retries", world.codebook_retries}}},
      {"corpus",
       {{"seed", corpus_seed},
        {"num_utterances", corpus.num_utterances},
        {"num_speakers", corpus.num_speakers},
        {"min_text_len", corpus.min_text_len},
        {"max_text_len", corpus.max_text_len},
        {"min_rate", corpus.min_rate},
        {"max_rate", corpus.max_rate},
        {"noise_sigma", corpus.noise_sigma},
        {"uniform_emotions", corpus.uniform_emotions}}},
      {"tokenizer",
       {{"codebook_size", tokenizer.codebook_size},
        {"downsample", tokenizer.downsample},
        {"code_dim", tokenizer.code_dim},
        {"hidden", tokenizer.hidden},
        {"train_steps", tokenizer.train_steps},
        {"batch_size", tokenizer.batch_size},
        {"lr", tokenizer.lr},
        {"commitment_weight", tokenizer.commitment_weight},
        {"ema_decay", tokenizer.ema_decay},
        {"holdout_fraction", tokenizer.holdout_fraction},
        {"seed", tokenizer.seed}}},
      {"vocoder",
       {{"latent_dim", vocoder.latent_dim},
        {"hidden", vocoder.hidden},
        {"train_steps", vocoder.train_steps},
        {"batch_size", vocoder.batch_size},
        {"lr", vocoder.lr},
        {"holdout_fraction", vocoder.holdout_fraction},
        {"seed", vocoder.seed}}},
      {"lm",
       {{"layers", lm.layers},
        {"width", lm.width},
        {"heads", lm.heads},
        {"mlp_hidden", lm.mlp_hidden},
        {"context", lm.context},
        {"train_steps", lm.train_steps},
        {"batch_size", lm.batch_size},
        {"lr", lm.lr},
        {"warmup", lm.warmup},
        {"seed", lm.seed}}},
      {"lm_data",
       {{"pairs", lm_data.pairs},
        {"prompt_min", lm_data.prompt_min},
        {"prompt_max", lm_data.prompt_max},
        {"target_min", lm_data.target_min},
        {"target_max", lm_data.target_max},
        {"seed", lm_data.seed}}},
      {"diffusion", diffusion_json(diffusion)},
      {"diffusion_data",
       {{"examples", diffusion_data.examples}, {"seed", diffusion_data.seed}}},
      {"dit",
       {{"layers", dit.layers},
        {"width", dit.width},
        {"heads", dit.heads},
        {"mlp_hidden", dit.mlp_hidden},
        {"num_symbols", dit.num_symbols},
        {"latent_dim", dit.latent_dim},
        {"timbre_dim", dit.timbre_dim},
        {"max_len", dit.max_len},
        {"p_drop", dit.p_drop},
        {"p_timbre", dit.p_timbre},
        {"mask_lo", dit.mask_lo},
        {"mask_hi", dit.mask_hi},
        {"train_steps", dit.train_steps},
        {"batch_size", dit.batch_size},
        {"lr", dit.lr},
        {"warmup", dit.warmup},
        {"seed", dit.seed}}},
      {"dit_data",
       {{"examples", dit_data.examples},
        {"text_min", dit_data.text_min},
        {"text_max", dit_data.text_max},
        {"seed", dit_data.seed}}},
      {"sampler", sampler_json(sampler)},
      {"eval_sampler", sampler_json(eval_sampler)},
      {"flow",
       {{"num_steps", flow.num_steps},
        {"guidance_scale", flow.guidance_scale},
        {"seed", flow.seed}}},
      {"manifest",
       {{"seed", manifest_seed},
        {"num_cases", manifest.num_cases},
        {"min_prompt_frames", manifest.min_prompt_frames},
        {"max_prompt_frames", manifest.max_prompt_frames},
        {"min_prompt_symbols", manifest.min_prompt_symbols},
        {"max_prompt_symbols", manifest.max_prompt_symbols},
        {"min_target_symbols", manifest.min_target_symbols},
        {"max_target_symbols", manifest.max_target_symbols},
        {"num_speakers", manifest.num_speakers},
        {"noise_sigma", manifest.noise_sigma}}},
      {"sft",
       {{"speakers", sft.speakers},
        {"per_speaker", sft.per_speaker},
        {"steps", sft.finetune.steps},
        {"batch_size", sft.finetune.batch_size},
        {"lr", sft.finetune.lr},
        {"warmup", sft.finetune.warmup},
        {"seed", sft.finetune.seed},
        {"data_seed", sft.data_seed},
        {"eval_generations", sft.eval_generations},
        {"eval_seeds", sft.eval_seeds}}},
      {"ift",
       {{"per_speaker", ift.per_speaker},
        {"steps", ift.finetune.steps},
        {"batch_size", ift.finetune.batch_size},
        {"lr", ift.finetune.lr},
        {"warmup", ift.finetune.warmup},
        {"seed", ift.finetune.seed},
        {"data_seed", ift.data_seed},
        {"eval_generations", ift.eval_generations}}},
      {"rl",
       {{"kind", rl.kind},
        {"samples_per_prompt", rl.rl.samples_per_prompt},
        {"temperature", rl.rl.temperature},
        {"baseline", rl.rl.baseline == adapt::RLConfig::Baseline::kBatchMean ? "batch-mean"
                                                                             : "leave-one-out"},
        {"kl_coeff", rl.rl.kl_coeff},
        {"steps", rl.rl.steps},
        {"prompts_per_step", rl.rl.prompts_per_step},
        {"lr", rl.rl.lr},
        {"top_k", rl.rl.top_k},
        {"seed", rl.rl.seed},
        {"alpha", rl.alpha},
        {"lambda", rl.lambda},
        {"train_prompts", rl.train_prompts},
        {"eval_prompts", rl.eval_prompts},
        {"eval_samples", rl.eval_samples},
        {"data_seed", rl.data_seed}}},
      {"distill",
       {{"pairs", distill.pairs},
        {"mode", distill.mode},
        {"jitter_angle_deg", distill.jitter_angle_deg},
        {"eval_cases", distill.eval_cases},
        {"seed", distill.seed},
        {"train", diffusion_json(distill.train)}}},
      {"stream", {{"chunk", stream.chunk}, {"cases", stream.cases}, {"seed", stream.seed}}},
      {"shuffle_asr",
       {{"corpus_size", shuffle_asr.corpus_size},
        {"eval_size", shuffle_asr.eval_size},
        {"clean_sigma", shuffle_asr.clean_sigma},
        {"noisy_sigma", shuffle_asr.noisy_sigma},
        {"num_speakers", shuffle_asr.num_speakers},
        {"seed", shuffle_asr.seed},
        {"recognizer",
         {{"hidden", shuffle_asr.recognizer.hidden},
          {"train_steps", shuffle_asr.recognizer.train_steps},
          {"batch_size", shuffle_asr.recognizer.batch_size},
          {"lr", shuffle_asr.recognizer.lr},
          {"seed", shuffle_asr.recognizer.seed}}}}},
      {"hard_set",
       {{"size", hard_set.size}, {"max_len", hard_set.max_len}, {"seed", hard_set.seed}}},
      {"edit", {{"cases", edit.cases}, {"mask_rates", edit.mask_rates}, {"seed", edit.seed}}},
      {"rate_edit",
       {{"cases", rate_edit.cases}, {"rates", rate_edit.rates}, {"seed", rate_edit.seed}}}};
}

void RunConfig::apply_override(const std::string& key_eq_value) {
  const auto eq = key_eq_value.find('=');
  if (eq == std::string::npos)
    throw ValidationError("stage override must look like section.key=value");
  const std::string path = key_eq_value.substr(0, eq);
  const std::string value = key_eq_value.substr(eq + 1);
  json j = to_json();
  json* node = &j;
  size_t start = 0;
  std::vector<std::string> parts;
  while (true) {
    const auto dot = path.find('.', start);
    parts.push_back(path.substr(start, dot == std::string::npos ? dot : dot - start));
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]))
      throw ValidationError("override path not found: " + path);
    node = &(*node)[parts[i]];
  }
  if (!node->contains(parts.back()))
    throw ValidationError("override path not found: " + path);
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // plain string
  }
  (*node)[parts.back()] = parsed;
  *this = from_json(j);
}

void RunConfig::reseed(uint64_t base_seed) {
  auto derive = [base_seed](const char* tag) {
    return Rng::splitmix(base_seed ^ io::fnv1a(tag, std::string(tag).size()));
  };
  world_seed = derive("world");
  corpus_seed = derive("corpus");
  tokenizer.seed = derive("tokenizer");
  vocoder.seed = derive("vocoder");
  lm.seed = derive("lm");
  lm_data.seed = derive("lm_data");
  diffusion.seed = derive("diffusion");
  diffusion_data.seed = derive("diffusion_data");
  dit.seed = derive("dit");
  dit_data.seed = derive("dit_data");
  sampler.seed = derive("sampler");
  eval_sampler.seed = derive("eval_sampler");
  flow.seed = derive("flow");
  manifest_seed = derive("manifest");
  sft.finetune.seed = derive("sft");
  sft.data_seed = derive("sft_data");
  ift.finetune.seed = derive("ift");
  ift.data_seed = derive("ift_data");
  rl.rl.seed = derive("rl");
  rl.data_seed = derive("rl_data");
  distill.seed = derive("distill");
  distill.train.seed = derive("distill_train");
  stream.seed = derive("stream");
  shuffle_asr.seed = derive("shuffle");
  shuffle_asr.recognizer.seed = derive("shuffle_rec");
  hard_set.seed = derive("hard");
  edit.seed = derive("edit");
  rate_edit.seed = derive("rate");
}

RunConfig load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw ValidationError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_text_file(path));
  } catch (const json::exception& e) {
    throw ValidationError("config parse error in " + path.string() + ": " + e.what());
  }
  return RunConfig::from_json(j);
}

// --- Ledger -----------------------------------------------------------------------

Ledger::Ledger(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  const json j = json::parse(io::read_text_file(path_));
  for (auto it = j.at("stages").begin(); it != j.at("stages").end(); ++it) {
    LedgerEntry e;
    const json& v = it.value();
    e.config_hash = v.at("config_hash");
    e.input_hashes = v.at("inputs").get<std::map<std::string, std::string>>();
    e.output_hashes = v.at("outputs").get<std::map<std::string, std::string>>();
    e.metrics_path = v.value("metrics_path", "");
    e.wall_time_s = v.value("wall_time_s", 0.0);
    e.verified_runs = v.value("verified_runs", 0);
    stages_[it.key()] = std::move(e);
  }
}

bool Ledger::has(const std::string& stage) const { return stages_.count(stage) > 0; }

const LedgerEntry& Ledger::at(const std::string& stage) const {
  auto it = stages_.find(stage);
  if (it == stages_.end()) throw DependencyError("stage \"" + stage + "\" has not run");
  return it->second;
}

void Ledger::put(const std::string& stage, LedgerEntry entry) {
  stages_[stage] = std::move(entry);
  save();
}

void Ledger::bump_verified(const std::string& stage) {
  stages_.at(stage).verified_runs += 1;
  save();
}

void Ledger::save() const {
  json stages = json::object();
  for (const auto& [name, e] : stages_) {
    stages[name] = {{"config_hash", e.config_hash}, {"inputs", e.input_hashes},
                    {"outputs", e.output_hashes},   {"metrics_path", e.metrics_path},
                    {"wall_time_s", e.wall_time_s}, {"verified_runs", e.verified_runs}};
  }
  io::write_text_file(path_, json{{"stages", stages}}.dump(2));
}

std::string Ledger::combined_hash(const std::string& stage) const {
  const LedgerEntry& e = at(stage);
  std::string acc = e.config_hash;
  for (const auto& [p, h] : e.output_hashes) acc += p + h;
  return io::hash_bytes(acc);
}

std::vector<std::string> Ledger::find_orphans(const std::filesystem::path& root) const {
  std::set<std::string> known;
  for (const auto& [name, e] : stages_)
    for (const auto& [p, h] : e.output_hashes) known.insert(p);
  std::vector<std::string> orphans;
  if (!std::filesystem::exists(root)) return orphans;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), root).string();
    if (rel == "ledger.json" || rel == "config.json") continue;
    if (rel.rfind("reports/", 0) == 0) continue;  // metrics are ledger-referenced
    bool owned = false;
    for (const std::string& k : known) {
      if (rel == k || rel.rfind(k + "/", 0) == 0 || (k.size() > 0 && rel.rfind(k, 0) == 0 &&
                                                     k.back() == '/')) {
        owned = true;
        break;
      }
    }
    if (!owned) orphans.push_back(rel);
  }
  return orphans;
}

// --- Stage graph -------------------------------------------------------------------

const std::vector<std::string> kStageNames = {
    "world",     "train-tokenizer", "train-vocoder", "train-lm", "train-diffusion",
    "icl-eval",  "sft",             "ift",           "rl",       "distill",
    "vc",        "train-dit",       "dit-eval",      "edit",     "rate-edit",
    "stream-bench", "shuffle-asr",  "hard-set",      "report"};

const std::vector<std::string>& stage_dependencies(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> deps = {
      {"world", {}},
      {"train-tokenizer", {"world"}},
      {"train-vocoder", {"world"}},
      {"train-lm", {"world", "train-tokenizer"}},
      {"train-diffusion", {"world", "train-tokenizer", "train-vocoder"}},
      {"icl-eval", {"train-lm", "train-diffusion"}},
      {"sft", {"train-lm"}},
      {"ift", {"sft"}},
      {"rl", {"train-lm", "train-diffusion"}},
      {"distill", {"train-diffusion"}},
      {"vc", {"distill"}},
      {"train-dit", {"world", "train-vocoder"}},
      {"dit-eval", {"train-dit", "icl-eval"}},
      {"edit", {"train-dit"}},
      {"rate-edit", {"train-dit"}},
      {"stream-bench", {"train-diffusion"}},
      {"shuffle-asr", {"train-lm", "train-diffusion"}},
      {"hard-set", {"world"}},
      {"report", {}},
  };
  auto it = deps.find(stage);
  if (it == deps.end()) throw ValidationError("unknown stage \"" + stage + "\"");
  return it->second;
}

namespace {

const std::vector<std::string>& stage_sections(const std::string& stage) {
  static const std::map<std::string, std::vector<std::string>> sections = {
      {"world", {"world"}},
      {"train-tokenizer", {"world", "corpus", "tokenizer"}},
      {"train-vocoder", {"world", "corpus", "vocoder"}},
      {"train-lm", {"world", "corpus", "tokenizer", "lm", "lm_data"}},
      {"train-diffusion", {"world", "corpus", "tokenizer", "vocoder", "diffusion",
                           "diffusion_data"}},
      {"icl-eval", {"world", "manifest", "eval_sampler", "flow"}},
      {"sft", {"world", "corpus", "sft", "eval_sampler", "flow"}},
      {"ift", {"world", "corpus", "ift", "eval_sampler", "flow"}},
      {"rl", {"world", "manifest", "rl", "hard_set", "flow"}},
      {"distill", {"world", "corpus", "distill", "flow"}},
      {"vc", {"world", "corpus", "distill", "flow"}},
      {"train-dit", {"world", "corpus", "dit", "dit_data"}},
      {"dit-eval", {"world", "manifest", "dit", "flow"}},
      {"edit", {"world", "corpus", "edit", "flow"}},
      {"rate-edit", {"world", "corpus", "rate_edit", "flow"}},
      {"stream-bench", {"world", "stream", "flow"}},
      {"shuffle-asr", {"world", "shuffle_asr", "eval_sampler", "flow"}},
      {"hard-set", {"world", "hard_set"}},
      {"report", {}},
  };
  auto it = sections.find(stage);
  if (it == sections.end()) throw ValidationError("unknown stage \"" + stage + "\"");
  return it->second;
}

}  // namespace

// --- Harness core -------------------------------------------------------------------

Harness::Harness(RunConfig config, std::filesystem::path root)
    : config_(std::move(config)), root_(std::move(root)), ledger_(root_ / "ledger.json") {
  std::filesystem::create_directories(root_);
  io::write_text_file(root_ / "config.json", config_.to_json().dump(2));
}

std::string Harness::stage_config_hash(const std::string& name) const {
  const json full = config_.to_json();
  json slice = json::object();
  for (const std::string& section : stage_sections(name)) slice[section] = full.at(section);
  return io::hash_json(slice);
}

std::filesystem::path Harness::report_path(const std::string& stage) const {
  return root_ / "reports" / (stage + ".json");
}

json Harness::read_report(const std::string& stage) const {
  const auto path = report_path(stage);
  if (!std::filesystem::exists(path))
    throw DependencyError("no report for stage \"" + stage + "\"");
  return json::parse(io::read_text_file(path));
}

bool Harness::run_stage(const std::string& name) {
  stage_dependencies(name);  // validates the name
  for (const std::string& dep : stage_dependencies(name)) {
    if (!ledger_.has(dep))
      throw DependencyError("stage \"" + name + "\" needs \"" + dep + "\" to run first");
  }
  const std::string cfg_hash = stage_config_hash(name);
  std::map<std::string, std::string> inputs;
  for (const std::string& dep : stage_dependencies(name))
    inputs[dep] = ledger_.combined_hash(dep);

  if (ledger_.has(name)) {
    const LedgerEntry& prev = ledger_.at(name);
    if (prev.config_hash == cfg_hash && prev.input_hashes == inputs) {
      // Candidate no-op; verify the recorded outputs are intact.
      bool intact = true;
      for (const auto& [path, hash] : prev.output_hashes) {
        const auto full = root_ / path;
        if (!std::filesystem::exists(full)) {
          intact = false;
          break;
        }
        if (io::hash_file(full) != hash)
          throw ValidationError("stale artifact for stage \"" + name + "\": " + path +
                                " changed on disk since it was recorded");
      }
      if (intact) {
        ledger_.bump_verified(name);
        return false;
      }
    }
  }

  const auto start = std::chrono::steady_clock::now();
  StageOutcome outcome = execute(name);
  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  LedgerEntry entry;
  entry.config_hash = cfg_hash;
  entry.input_hashes = std::move(inputs);
  for (const auto& p : outcome.outputs) {
    const auto rel = std::filesystem::relative(p, root_).string();
    entry.output_hashes[rel] = io::hash_file(p);
  }
  if (!outcome.metrics.is_null()) {
    const auto rp = report_path(name);
    io::write_text_file(rp, outcome.metrics.dump(2));
    entry.metrics_path = std::filesystem::relative(rp, root_).string();
  }
  entry.wall_time_s = wall;
  ledger_.put(name, std::move(entry));
  return true;
}

Harness::StageOutcome Harness::execute(const std::string& name) {
  if (name == "world") return stage_world();
  if (name == "train-tokenizer") return stage_train_tokenizer();
  if (name == "train-vocoder") return stage_train_vocoder();
  if (name == "train-lm") return stage_train_lm();
  if (name == "train-diffusion") return stage_train_diffusion();
  if (name == "icl-eval") return stage_icl_eval();
  if (name == "sft") return stage_sft();
  if (name == "ift") return stage_ift();
  if (name == "rl") return stage_rl();
  if (name == "distill") return stage_distill();
  if (name == "vc") return stage_vc();
  if (name == "train-dit") return stage_train_dit();
  if (name == "dit-eval") return stage_dit_eval();
  if (name == "edit") return stage_edit();
  if (name == "rate-edit") return stage_rate_edit();
  if (name == "stream-bench") return stage_stream_bench();
  if (name == "shuffle-asr") return stage_shuffle_asr();
  if (name == "hard-set") return stage_hard_set();
  if (name == "report") return stage_report();
  throw ValidationError("unknown stage \"" + name + "\"");
}

}  // namespace ttslab::harness
