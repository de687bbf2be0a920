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

#include "ttslab/dit.hpp"

#include <algorithm>
#include <cmath>

namespace ttslab::dit {

using ag::Tape;
using ag::Var;

void DitCondition::validate() const {
  if (text.empty()) throw DataError("dit condition: text must be nonempty");
  if (total_duration < 1) throw ValidationError("dit condition: total_duration must be >= 1");
  if (inpaint) {
    if (inpaint->observed.rows() != total_duration ||
        static_cast<Index>(inpaint->mask.size()) != total_duration)
      throw ShapeError("dit condition: inpaint mask/observed must span total_duration");
  }
  if (prompt_latents && prompt_latents->rows() > total_duration)
    throw ShapeError("dit condition: prompt longer than total_duration");
}

void EditRequest::validate() const {
  if (kind == Kind::kContent) {
    if (frame_mask.empty()) throw ValidationError("content edit needs a frame mask");
    if (replacement_text.empty()) throw ValidationError("content edit needs replacement text");
  } else {
    if (!(rate >= 0.25 && rate <= 4.0)) throw ValidationError("rate must lie in [0.25, 4]");
  }
}

io::json EditRequest::to_json() const {
  if (kind == Kind::kContent) {
    // Serialize the mask as [start, end) spans.
    io::json spans = io::json::array();
    size_t i = 0;
    while (i < frame_mask.size()) {
      if (!frame_mask[i]) {
        ++i;
        continue;
      }
      size_t j = i;
      while (j < frame_mask.size() && frame_mask[j]) ++j;
      spans.push_back({i, j});
      i = j;
    }
    return io::json{{"kind", "content"},
                    {"mask_spans", spans},
                    {"mask_length", frame_mask.size()},
                    {"replacement_text", corpus::text_to_string(replacement_text)}};
  }
  return io::json{{"kind", "rate"}, {"rate", rate}};
}

EditRequest EditRequest::from_json(const io::json& j) {
  EditRequest r;
  const std::string kind = j.at("kind");
  if (kind == "content") {
    r.kind = Kind::kContent;
    r.replacement_text = corpus::text_from_string(j.at("replacement_text"), 1 << 20);
    r.frame_mask.assign(j.at("mask_length").get<size_t>(), 0);
    for (const auto& span : j.at("mask_spans")) {
      const size_t a = span[0], b = span[1];
      if (b > r.frame_mask.size()) throw ValidationError("edit request: span out of range");
      for (size_t i = a; i < b; ++i) r.frame_mask[i] = 1;
    }
  } else if (kind == "rate") {
    r.kind = Kind::kRate;
    r.rate = j.at("rate");
  } else {
    throw ValidationError("unknown edit kind " + kind);
  }
  r.validate();
  return r;
}

void DitConfig::validate() const {
  if (layers < 1 || width < 1 || heads < 1 || width % heads != 0)
    throw ValidationError("dit config: bad transformer shape");
  if (!(mask_lo >= 0 && mask_lo <= mask_hi && mask_hi <= 1))
    throw ValidationError("dit config: bad masking range");
}

DitModel::DitModel(const DitConfig& config) : config_(config) {
  config_.validate();
  Rng rng(Rng::splitmix(config.seed ^ 0xd17));
  text_emb_ = &params_.gaussian("text_emb", config.num_symbols + 1, config.width, rng, 0.02);
  // Text memory = embedding + positional encoding + normalized index channel.
  text_proj_ = nn::make_linear(params_, "text_proj", config.width + 1, config.width, rng);
  // Frame stream = [x_tau, observed, flag, timbre, t/T].
  const Index in_dim = config.latent_dim + config.latent_dim + 1 + config.timbre_dim + 1;
  in_proj_ = nn::make_linear(params_, "in_proj", in_dim, config.width, rng);
  nn::TransformerConfig tc;
  tc.layers = config.layers;
  tc.width = config.width;
  tc.heads = config.heads;
  tc.mlp_hidden = config.mlp_hidden;
  tc.cross_attention = true;
  tf_ = std::make_unique<nn::Transformer>(params_, tc, "dit", rng);
  head_ = nn::make_linear(params_, "head", config.width, config.latent_dim, rng);
  pos_enc_ = nn::positional_encoding(config.max_len, config.width);
}

Var DitModel::forward_velocity(Tape& tape, const Mat& x_tau, double tau,
                               const std::vector<int>& text, const Mat& observed,
                               const Vec& observed_flag, const DVec* timbre,
                               bool drop_text) const {
  const Index t = x_tau.rows();
  if (t > pos_enc_.rows()) throw ShapeError("dit sequence exceeds max_len");

  // Text memory. A dropped condition becomes a single null-symbol row.
  std::vector<int> mem_ids;
  if (drop_text) {
    mem_ids.assign(1, config_.num_symbols);
  } else {
    mem_ids = text;
    for (int s : mem_ids)
      if (s < 0 || s >= config_.num_symbols) throw VocabError("dit: unknown text symbol");
  }
  const Index l = static_cast<Index>(mem_ids.size());
  Var emb = ag::gather_rows(tape.leaf(*text_emb_), mem_ids);
  Mat mem_extra = pos_enc_.topRows(l);
  Var emb_pos = ag::add_const(emb, mem_extra);
  Mat mem_index(l, 1);
  for (Index i = 0; i < l; ++i)
    mem_index(i, 0) = l > 1 ? static_cast<Scalar>(i) / static_cast<Scalar>(l - 1) : 0.0f;
  Var memory = nn::linear(ag::concat_cols({emb_pos, tape.constant(mem_index)}), text_proj_);

  Mat timbre_rows = Mat::Zero(t, config_.timbre_dim);
  if (timbre && timbre->size() > 0) {
    if (timbre->size() != config_.timbre_dim) throw ShapeError("dit: timbre dim mismatch");
    timbre_rows.rowwise() = timbre->cast<Scalar>().transpose();
  }
  Mat progress(t, 1);
  for (Index i = 0; i < t; ++i)
    progress(i, 0) = t > 1 ? static_cast<Scalar>(i) / static_cast<Scalar>(t - 1) : 0.0f;

  Mat flag = Mat(t, 1);
  flag.col(0) = observed_flag;
  Var input = ag::concat_cols({tape.constant(x_tau), tape.constant(observed),
                               tape.constant(flag), tape.constant(timbre_rows),
                               tape.constant(progress)});
  Var x = nn::linear(input, in_proj_);
  Mat extra = pos_enc_.topRows(t);
  const Vec te = nn::scalar_time_embedding(tau, config_.width);
  extra.rowwise() += te.transpose();
  x = ag::add_const(x, extra);
  Var h = tf_->forward(tape, x, /*causal=*/false, nullptr, memory);
  return nn::linear(h, head_);
}

Mat DitModel::velocity_infer(const Mat& x_tau, double tau, const std::vector<int>& text,
                             const Mat& observed, const Vec& observed_flag, const DVec* timbre,
                             bool drop_text) const {
  Tape tape;
  Var v = const_cast<DitModel*>(this)->forward_velocity(tape, x_tau, tau, text, observed,
                                                        observed_flag, timbre, drop_text);
  return v.value();
}

DitReport DitModel::train(const std::vector<DitExample>& examples) {
  if (examples.empty()) throw DataError("dit training set is empty");
  for (const DitExample& e : examples) {
    if (e.text.empty()) throw DataError("dit example with empty text");
    if (e.latents.cols() != config_.latent_dim) throw ShapeError("dit example latent dim");
  }
  Rng rng(Rng::splitmix(config_.seed ^ 0xd172));
  nn::AdamConfig acfg;
  acfg.lr = config_.lr;
  nn::Adam opt(params_.all(), acfg);
  DitReport rep;
  double smooth = -1.0;
  for (int step = 0; step < config_.train_steps; ++step) {
    opt.zero_grads();
    double loss_sum = 0.0;
    for (int b = 0; b < config_.batch_size; ++b) {
      const DitExample& ex = examples[rng.below(examples.size())];
      const Index t = ex.latents.rows();
      const double tau = rng.uniform();
      Mat x0(t, config_.latent_dim);
      rng.fill_gaussian(x0);
      const Mat x_tau =
          (1.0f - static_cast<Scalar>(tau)) * x0 + static_cast<Scalar>(tau) * ex.latents;
      const Mat v_star = ex.latents - x0;

      // Random contiguous generate-span; half the time it is the suffix
      // (prompt-continuation mode).
      const double frac = rng.uniform(config_.mask_lo, config_.mask_hi);
      Index span = std::max<Index>(1, static_cast<Index>(std::lround(frac * t)));
      span = std::min(span, t);
      Index start;
      if (rng.uniform() < 0.5) {
        start = t - span;
      } else {
        start = static_cast<Index>(rng.below(static_cast<uint64_t>(t - span + 1)));
      }
      Mat observed = ex.latents;
      Vec flag = Vec::Ones(t);
      Vec loss_weight = Vec::Zero(t);
      for (Index i = start; i < start + span; ++i) {
        observed.row(i).setZero();
        flag(i) = 0.0f;
        loss_weight(i) = 1.0f;
      }

      const bool drop = rng.uniform() < config_.p_drop;
      const bool with_timbre = ex.timbre.size() > 0 && rng.uniform() < config_.p_timbre;

      Tape tape;
      Var v = forward_velocity(tape, x_tau, tau, ex.text, observed, flag,
                               with_timbre ? &ex.timbre : nullptr, drop);
      Var loss = ag::weighted_mse(v, v_star, loss_weight);
      loss = ag::scale(loss, 1.0f / config_.batch_size);
      loss_sum += loss.value()(0, 0) * config_.batch_size;
      tape.backward(loss);
    }
    const double loss = loss_sum / config_.batch_size;
    if (!std::isfinite(loss))
      throw TrainingError("dit loss diverged at step " + std::to_string(step));
    smooth = smooth < 0 ? loss : 0.98 * smooth + 0.02 * loss;
    if (step % 25 == 0) rep.smoothed_loss.push_back(smooth);
    rep.final_loss = smooth;
    opt.step(nn::cosine_lr_scale(step, config_.train_steps, config_.warmup));
  }
  return rep;
}

Mat DitModel::generate(const DitCondition& cond, const acoustic::FlowConfig& flow) const {
  cond.validate();
  flow.validate();
  const Index t = cond.total_duration;

  // Normalize prompt/inpaint into (observed, flag).
  Mat observed = Mat::Zero(t, config_.latent_dim);
  Vec flag = Vec::Zero(t);
  if (cond.inpaint) {
    for (Index i = 0; i < t; ++i) {
      if (!cond.inpaint->mask[static_cast<size_t>(i)]) {
        observed.row(i) = cond.inpaint->observed.row(i);
        flag(i) = 1.0f;
      }
    }
  }
  if (cond.prompt_latents) {
    const Index p = cond.prompt_latents->rows();
    observed.topRows(p) = *cond.prompt_latents;
    flag.head(p).setOnes();
  }
  bool anything_to_generate = false;
  for (Index i = 0; i < t; ++i) anything_to_generate = anything_to_generate || flag(i) == 0.0f;
  if (!anything_to_generate) {
    // Nothing masked: the output is the observed sequence exactly.
    return observed;
  }

  const DVec* timbre = cond.timbre_ref && cond.timbre_ref->size() > 0 ? &*cond.timbre_ref : nullptr;
  Mat x = acoustic::DiffusionModel::base_noise(flow.seed, t, config_.latent_dim);
  const double dt = 1.0 / flow.num_steps;
  auto clamp_observed = [&](Mat& m) {
    for (Index i = 0; i < t; ++i)
      if (flag(i) == 1.0f) m.row(i) = observed.row(i);
  };
  for (int n = 0; n < flow.num_steps; ++n) {
    clamp_observed(x);
    const double tau = static_cast<double>(n) * dt;
    Mat v = velocity_infer(x, tau, cond.text, observed, flag, timbre, /*drop_text=*/false);
    if (flow.guidance_scale != 0.0) {
      const Mat vu = velocity_infer(x, tau, cond.text, observed, flag, timbre, /*drop_text=*/true);
      v = v + static_cast<Scalar>(flow.guidance_scale) * (v - vu);
    }
    x += static_cast<Scalar>(dt) * v;
  }
  clamp_observed(x);
  return x;
}

void DitModel::save(const std::filesystem::path& path) const {
  io::Checkpoint ck;
  ck.set_config({{"kind", "dit"},
                 {"layers", config_.layers},
                 {"width", config_.width},
                 {"heads", config_.heads},
                 {"mlp_hidden", config_.mlp_hidden},
                 {"num_symbols", config_.num_symbols},
                 {"latent_dim", config_.latent_dim},
                 {"timbre_dim", config_.timbre_dim},
                 {"max_len", config_.max_len},
                 {"p_drop", config_.p_drop},
                 {"p_timbre", config_.p_timbre},
                 {"mask_lo", config_.mask_lo},
                 {"mask_hi", config_.mask_hi},
                 {"train_steps", config_.train_steps},
                 {"batch_size", config_.batch_size},
                 {"lr", config_.lr},
                 {"warmup", config_.warmup},
                 {"seed", config_.seed}});
  const_cast<nn::ParamStore&>(params_).save_into(ck);
  ck.save(path);
}

DitModel DitModel::load(const std::filesystem::path& path) {
  const io::Checkpoint ck = io::Checkpoint::load(path);
  const auto& c = ck.config();
  if (c.value("kind", "") != "dit") throw ValidationError("not a dit checkpoint: " + path.string());
  DitConfig cfg;
  cfg.layers = c.at("layers");
  cfg.width = c.at("width");
  cfg.heads = c.at("heads");
  cfg.mlp_hidden = c.at("mlp_hidden");
  cfg.num_symbols = c.at("num_symbols");
  cfg.latent_dim = c.at("latent_dim");
  cfg.timbre_dim = c.at("timbre_dim");
  cfg.max_len = c.at("max_len");
  cfg.p_drop = c.at("p_drop");
  cfg.p_timbre = c.at("p_timbre");
  cfg.mask_lo = c.at("mask_lo");
  cfg.mask_hi = c.at("mask_hi");
  cfg.train_steps = c.at("train_steps");
  cfg.batch_size = c.at("batch_size");
  cfg.lr = c.at("lr");
  cfg.warmup = c.at("warmup");
  cfg.seed = c.at("seed");
  DitModel m(cfg);
  m.params_.load_from(ck);
  return m;
}

io::json DurationStats::to_json() const {
  return io::json{{"symbol_mean", symbol_mean}, {"boundary_mean", boundary_mean}};
}

DurationStats DurationStats::from_json(const io::json& j) {
  DurationStats s;
  s.symbol_mean = j.at("symbol_mean").get<std::vector<double>>();
  s.boundary_mean = j.at("boundary_mean");
  return s;
}

DurationStats fit_duration_stats(const std::vector<corpus::Utterance>& utterances,
                                 int num_symbols) {
  if (utterances.empty()) throw DataError("duration fit needs a nonempty corpus");
  std::vector<double> sums(static_cast<size_t>(num_symbols), 0.0);
  std::vector<int64_t> counts(static_cast<size_t>(num_symbols), 0);
  double bsum = 0.0;
  int64_t bcount = 0;
  for (const corpus::Utterance& u : utterances) {
    const auto mod = corpus::emotion_modulation(u.spec.emotion);
    const double scale = u.spec.rate_factor * mod.duration_scale;
    for (const corpus::SymbolSpan& span : u.spans) {
      const double normalized = (span.end - span.start) / scale;
      if (span.symbol < num_symbols) {
        sums[static_cast<size_t>(span.symbol)] += normalized;
        counts[static_cast<size_t>(span.symbol)] += 1;
      } else {
        bsum += normalized;
        bcount += 1;
      }
    }
  }
  DurationStats stats;
  stats.symbol_mean.resize(static_cast<size_t>(num_symbols));
  double global = 0.0;
  int64_t seen = 0;
  for (size_t s = 0; s < sums.size(); ++s)
    if (counts[s] > 0) {
      global += sums[s];
      seen += counts[s];
    }
  const double fallback = seen > 0 ? global / static_cast<double>(seen) : 5.0;
  for (size_t s = 0; s < sums.size(); ++s)
    stats.symbol_mean[s] = counts[s] > 0 ? sums[s] / static_cast<double>(counts[s]) : fallback;
  stats.boundary_mean = bcount > 0 ? bsum / static_cast<double>(bcount) : 1.0;
  return stats;
}

Index estimate_total_duration(const std::vector<int>& text, double rate_hint,
                              const DurationStats& stats) {
  if (text.empty()) throw DataError("duration estimate of empty text");
  if (!(rate_hint > 0)) throw ValidationError("rate hint must be positive");
  double total = 0.0;
  for (size_t i = 0; i < text.size(); ++i) {
    if (i > 0) total += stats.boundary_mean;
    const int s = text[i];
    if (s < 0 || s >= static_cast<int>(stats.symbol_mean.size()))
      throw VocabError("duration estimate: unknown symbol " + std::to_string(s));
    total += stats.symbol_mean[static_cast<size_t>(s)];
  }
  return std::max<Index>(1, static_cast<Index>(std::lround(total * rate_hint)));
}

Mat edit_content(const Mat& original_frames, const EditRequest& request, const EditStack& stack,
                 const acoustic::FlowConfig& flow, const DVec* timbre_ref) {
  request.validate();
  if (request.kind != EditRequest::Kind::kContent)
    throw ValidationError("edit_content called with a non-content request");
  if (!stack.dit || !stack.vocoder) throw DependencyError("edit stack is missing models");
  const Index t = original_frames.rows();
  if (static_cast<Index>(request.frame_mask.size()) != t)
    throw ShapeError("edit mask length must equal the frame count");

  bool any = false;
  for (uint8_t m : request.frame_mask) any = any || m;
  if (!any) return original_frames;  // mask rate 0: identity

  DitCondition cond;
  cond.text = request.replacement_text;
  cond.total_duration = t;
  cond.inpaint = DitCondition::Inpaint{stack.vocoder->encode(original_frames),
                                       request.frame_mask};
  if (timbre_ref) cond.timbre_ref = *timbre_ref;
  const Mat latents = stack.dit->generate(cond, flow);
  Mat frames = stack.vocoder->decode(latents);
  // Unmasked frames are preserved exactly.
  for (Index i = 0; i < t; ++i)
    if (!request.frame_mask[static_cast<size_t>(i)]) frames.row(i) = original_frames.row(i);
  return frames;
}

Mat edit_rate(const Mat& original_frames, const EditRequest& request,
              const std::vector<int>& original_text, const EditStack& stack,
              const acoustic::FlowConfig& flow, const DVec& timbre_ref) {
  request.validate();
  if (request.kind != EditRequest::Kind::kRate)
    throw ValidationError("edit_rate called with a non-rate request");
  if (!stack.dit || !stack.vocoder) throw DependencyError("edit stack is missing models");
  if (original_text.empty()) throw DataError("edit_rate needs the original text");
  const Index t = original_frames.rows();
  const Index target = static_cast<Index>(std::lround(request.rate * static_cast<double>(t)));
  const Index min_renderable = static_cast<Index>(2 * original_text.size() - 1);
  if (target < min_renderable)
    throw ValidationError("rate edit would need " + std::to_string(target) +
                          " frames, below the renderable minimum of " +
                          std::to_string(min_renderable));
  DitCondition cond;
  cond.text = original_text;
  cond.total_duration = target;
  cond.timbre_ref = timbre_ref;
  const Mat latents = stack.dit->generate(cond, flow);
  return stack.vocoder->decode(latents);
}

}  // namespace ttslab::dit
