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

#include "ttslab/acoustic.hpp"

#include <chrono>
#include <cmath>

namespace ttslab::acoustic {

using ag::Tape;
using ag::Var;

// --- Vocoder -------------------------------------------------------------------

namespace {

Mat gelu_mat(const Mat& x) {
  constexpr Scalar c = 0.7978845608028654f, a = 0.044715f;
  const auto xa = x.array();
  return (0.5f * xa * (1 + (c * (xa + a * xa.cube())).tanh())).matrix();
}

}  // namespace

Vocoder Vocoder::train(const std::vector<Mat>& corpus_frames, const VocoderConfig& config,
                       int frame_dim, VocoderReport* report) {
  if (corpus_frames.empty()) throw DataError("vocoder training corpus is empty");
  Index total = 0;
  for (const Mat& f : corpus_frames) {
    if (f.cols() != frame_dim) throw ShapeError("vocoder: corpus frame dim mismatch");
    total += f.rows();
  }
  Mat all(total, frame_dim);
  Index at = 0;
  for (const Mat& f : corpus_frames) {
    all.middleRows(at, f.rows()) = f;
    at += f.rows();
  }

  Vocoder voc;
  voc.config_ = config;
  voc.frame_dim_ = frame_dim;
  Rng rng(Rng::splitmix(config.seed ^ 0x0c0de));
  voc.enc1_ = nn::make_linear(voc.params_, "enc1", frame_dim, config.hidden, rng);
  voc.enc2_ = nn::make_linear(voc.params_, "enc2", config.hidden, config.latent_dim, rng);
  voc.dec1_ = nn::make_linear(voc.params_, "dec1", config.latent_dim, config.hidden, rng);
  voc.dec2_ = nn::make_linear(voc.params_, "dec2", config.hidden, frame_dim, rng);

  std::vector<int> order(static_cast<size_t>(total));
  for (Index i = 0; i < total; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
  rng.shuffle(order);
  const Index held = static_cast<Index>(std::floor(config.holdout_fraction * total));
  const Index train_count = total - held;

  nn::AdamConfig acfg;
  acfg.lr = config.lr;
  nn::Adam opt(voc.params_.all(), acfg);
  VocoderReport local;
  VocoderReport& rep = report ? *report : local;
  double smooth = -1.0;
  for (int step = 0; step < config.train_steps; ++step) {
    Mat batch(config.batch_size, frame_dim);
    for (int b = 0; b < config.batch_size; ++b)
      batch.row(b) = all.row(order[rng.below(static_cast<uint64_t>(train_count))]);
    Tape tape;
    Var x = tape.constant(batch);
    Var lat = nn::linear(ag::gelu(nn::linear(x, voc.enc1_)), voc.enc2_);
    Var recon = nn::linear(ag::gelu(nn::linear(lat, voc.dec1_)), voc.dec2_);
    Var loss = ag::weighted_mse(recon, batch, Vec::Ones(config.batch_size));
    const double v = loss.value()(0, 0);
    if (!std::isfinite(v))
      throw TrainingError("vocoder loss diverged at step " + std::to_string(step));
    smooth = smooth < 0 ? v : 0.98 * smooth + 0.02 * v;
    if (step % 50 == 0) rep.smoothed_loss.push_back(smooth);
    opt.zero_grads();
    tape.backward(loss);
    opt.step(nn::cosine_lr_scale(step, config.train_steps));
  }
  if (held > 0) {
    Mat hb(held, frame_dim);
    for (Index i = 0; i < held; ++i)
      hb.row(i) = all.row(order[static_cast<size_t>(train_count + i)]);
    const Mat recon = voc.decode(voc.encode(hb));
    rep.held_out_mse = (recon - hb).squaredNorm() / static_cast<double>(hb.size());
  }
  return voc;
}

Mat Vocoder::encode(const Mat& frames) const {
  if (frames.cols() != frame_dim_) throw ShapeError("vocoder encode: frame dim mismatch");
  return nn::linear_infer(gelu_mat(nn::linear_infer(frames, enc1_)), enc2_);
}

Mat Vocoder::decode(const Mat& latents) const {
  if (latents.cols() != config_.latent_dim) throw ShapeError("vocoder decode: latent dim mismatch");
  return nn::linear_infer(gelu_mat(nn::linear_infer(latents, dec1_)), dec2_);
}

void Vocoder::save(const std::filesystem::path& path) const {
  io::Checkpoint ck;
  ck.set_config({{"kind", "vocoder"},
                 {"latent_dim", config_.latent_dim},
                 {"hidden", config_.hidden},
                 {"train_steps", config_.train_steps},
                 {"batch_size", config_.batch_size},
                 {"lr", config_.lr},
                 {"holdout_fraction", config_.holdout_fraction},
                 {"seed", config_.seed},
                 {"frame_dim", frame_dim_}});
  const_cast<nn::ParamStore&>(params_).save_into(ck);
  ck.save(path);
}

Vocoder Vocoder::load(const std::filesystem::path& path) {
  const io::Checkpoint ck = io::Checkpoint::load(path);
  const auto& c = ck.config();
  if (c.value("kind", "") != "vocoder")
    throw ValidationError("not a vocoder checkpoint: " + path.string());
  Vocoder voc;
  voc.config_.latent_dim = c.at("latent_dim");
  voc.config_.hidden = c.at("hidden");
  voc.config_.train_steps = c.at("train_steps");
  voc.config_.batch_size = c.at("batch_size");
  voc.config_.lr = c.at("lr");
  voc.config_.holdout_fraction = c.at("holdout_fraction");
  voc.config_.seed = c.at("seed");
  voc.frame_dim_ = c.at("frame_dim");
  Rng rng(0);
  voc.enc1_ = nn::make_linear(voc.params_, "enc1", voc.frame_dim_, voc.config_.hidden, rng);
  voc.enc2_ = nn::make_linear(voc.params_, "enc2", voc.config_.hidden, voc.config_.latent_dim, rng);
  voc.dec1_ = nn::make_linear(voc.params_, "dec1", voc.config_.latent_dim, voc.config_.hidden, rng);
  voc.dec2_ = nn::make_linear(voc.params_, "dec2", voc.config_.hidden, voc.frame_dim_, rng);
  voc.params_.load_from(ck);
  return voc;
}

// --- Diffusion -----------------------------------------------------------------

void FlowConfig::validate() const {
  if (num_steps < 1) throw ValidationError("flow num_steps must be >= 1");
  if (guidance_scale < 0) throw ValidationError("guidance_scale must be >= 0");
}

void DiffusionConfig::validate() const {
  if (layers < 1 || width < 1 || heads < 1 || width % heads != 0)
    throw ValidationError("diffusion config: bad transformer shape");
  if (codebook_size < 1 || downsample < 1 || latent_dim < 1)
    throw ValidationError("diffusion config: bad data dims");
  if (!(p_drop >= 0 && p_drop <= 1) || !(p_timbre >= 0 && p_timbre <= 1) ||
      !(p_prefix >= 0 && p_prefix <= 1))
    throw ValidationError("diffusion config: probabilities must lie in [0, 1]");
}

DiffusionModel::DiffusionModel(const DiffusionConfig& config) : config_(config) {
  config_.validate();
  Rng rng(Rng::splitmix(config.seed ^ 0xd1ff));
  token_emb_ = &params_.gaussian("token_emb", config.codebook_size + 1, config.token_embed_dim,
                                 rng, 0.02);
  const Index in_dim = config.latent_dim + config.token_embed_dim + config.timbre_dim +
                       config.latent_dim + 1;
  in_proj_ = nn::make_linear(params_, "in_proj", in_dim, config.width, rng);
  nn::TransformerConfig tc;
  tc.layers = config.layers;
  tc.width = config.width;
  tc.heads = config.heads;
  tc.mlp_hidden = config.mlp_hidden;
  tf_ = std::make_unique<nn::Transformer>(params_, tc, "diff", rng);
  head_ = nn::make_linear(params_, "head", config.width, config.latent_dim, rng);
  pos_enc_ = nn::positional_encoding(config.max_len, config.width);
}

Index DiffusionModel::output_length(const DiffusionCondition& cond) const {
  return static_cast<Index>(cond.tokens.size()) * config_.downsample;
}

Mat DiffusionModel::base_noise(uint64_t seed, Index rows, Index cols) {
  Mat x(rows, cols);
  for (Index t = 0; t < rows; ++t) {
    Rng rng = Rng::fork(seed ^ 0xba5e, static_cast<uint64_t>(t));
    for (Index j = 0; j < cols; ++j) x(t, j) = static_cast<Scalar>(rng.gaussian());
  }
  return x;
}

Var DiffusionModel::forward_velocity(Tape& tape, const Mat& x_tau, double tau,
                                     const std::vector<int>& frame_tokens, const DVec* timbre,
                                     const Mat* prefix, Index prefix_rows,
                                     bool drop_tokens) const {
  const Index t = x_tau.rows();
  if (t > pos_enc_.rows()) throw ShapeError("diffusion sequence exceeds max_len");
  if (static_cast<Index>(frame_tokens.size()) != t)
    throw ShapeError("diffusion: frame token count " + std::to_string(frame_tokens.size()) +
                     " != sequence length " + std::to_string(t));

  std::vector<int> emb_ids(frame_tokens.size());
  for (size_t i = 0; i < frame_tokens.size(); ++i) {
    const int tok = frame_tokens[i];
    if (tok < 0 || tok >= config_.codebook_size)
      throw VocabError("diffusion: token " + std::to_string(tok) + " outside [0, K)");
    emb_ids[i] = drop_tokens ? config_.codebook_size : tok;  // last row = null token
  }

  Mat timbre_rows = Mat::Zero(t, config_.timbre_dim);
  if (timbre && timbre->size() > 0) {
    if (timbre->size() != config_.timbre_dim)
      throw ShapeError("diffusion: timbre dim mismatch");
    timbre_rows.rowwise() = timbre->cast<Scalar>().transpose();
  }
  Mat prefix_rows_mat = Mat::Zero(t, config_.latent_dim);
  Mat prefix_flag = Mat::Zero(t, 1);
  if (prefix && prefix_rows > 0) {
    prefix_rows_mat.topRows(prefix_rows) = prefix->topRows(prefix_rows);
    prefix_flag.topRows(prefix_rows).setConstant(1.0f);
  }

  Var emb = ag::gather_rows(tape.leaf(*token_emb_), emb_ids);
  Var input = ag::concat_cols({tape.constant(x_tau), emb, tape.constant(timbre_rows),
                               tape.constant(prefix_rows_mat), tape.constant(prefix_flag)});
  Var x = nn::linear(input, in_proj_);
  // Step embedding plus positions, added to every row.
  Mat extra = pos_enc_.topRows(t);
  const Vec te = nn::scalar_time_embedding(tau, config_.width);
  extra.rowwise() += te.transpose();
  x = ag::add_const(x, extra);
  Var h = tf_->forward(tape, x, /*causal=*/false);
  return nn::linear(h, head_);
}

Mat DiffusionModel::velocity(const Mat& x_tau, double tau, const DiffusionCondition& cond,
                             const Mat* prefix_latents, Index prefix_rows) const {
  // Upsample tokens by repetition to the frame rate.
  const Index t = x_tau.rows();
  std::vector<int> frame_tokens(static_cast<size_t>(t));
  for (Index i = 0; i < t; ++i)
    frame_tokens[static_cast<size_t>(i)] = cond.tokens[static_cast<size_t>(i / config_.downsample)];
  const DVec* timbre = cond.timbre_ref && cond.timbre_ref->size() > 0 ? &*cond.timbre_ref : nullptr;

  Tape tape;
  Var v = const_cast<DiffusionModel*>(this)->forward_velocity(
      tape, x_tau, tau, frame_tokens, timbre, prefix_latents, prefix_rows,
      cond.condition_dropout);
  return v.value();
}

Mat DiffusionModel::sample_window(const DiffusionCondition& cond, const FlowConfig& flow,
                                  Index window_rows, const Mat& clamped,
                                  Index clamped_rows) const {
  flow.validate();
  if (static_cast<Index>(cond.tokens.size()) * config_.downsample < window_rows)
    throw ShapeError("diffusion: not enough tokens for the requested window");
  Mat x = base_noise(flow.seed, window_rows, config_.latent_dim);
  DiffusionCondition window_cond = cond;
  window_cond.tokens.resize(static_cast<size_t>((window_rows + config_.downsample - 1) /
                                                config_.downsample));
  std::copy(cond.tokens.begin(), cond.tokens.begin() + window_cond.tokens.size(),
            window_cond.tokens.begin());

  const double dt = 1.0 / flow.num_steps;
  for (int n = 0; n < flow.num_steps; ++n) {
    if (clamped_rows > 0) x.topRows(clamped_rows) = clamped.topRows(clamped_rows);
    const double tau = static_cast<double>(n) * dt;
    DiffusionCondition c = window_cond;
    c.condition_dropout = false;
    Mat v = velocity(x, tau, c, clamped_rows > 0 ? &clamped : nullptr, clamped_rows);
    if (flow.guidance_scale != 0.0) {
      DiffusionCondition u = window_cond;
      u.condition_dropout = true;
      const Mat vu = velocity(x, tau, u, clamped_rows > 0 ? &clamped : nullptr, clamped_rows);
      v = v + static_cast<Scalar>(flow.guidance_scale) * (v - vu);
    }
    x += static_cast<Scalar>(dt) * v;
  }
  if (clamped_rows > 0) x.topRows(clamped_rows) = clamped.topRows(clamped_rows);
  return x;
}

Mat DiffusionModel::sample(const DiffusionCondition& cond, const FlowConfig& flow) const {
  const Index total = output_length(cond);
  Mat clamped = Mat::Zero(total, config_.latent_dim);
  Index clamped_rows = 0;
  if (cond.prompt_latents) {
    clamped_rows = cond.prompt_latents->rows();
    if (clamped_rows > total) throw ShapeError("prompt prefix longer than the output window");
    if (cond.prompt_latents->cols() != config_.latent_dim)
      throw ShapeError("prompt latent dim mismatch");
    clamped.topRows(clamped_rows) = *cond.prompt_latents;
  }
  return sample_window(cond, flow, total, clamped, clamped_rows);
}

DiffusionReport DiffusionModel::train(const std::vector<DiffusionExample>& examples) {
  if (examples.empty()) throw DataError("diffusion training set is empty");
  for (const DiffusionExample& e : examples) {
    if (e.latents.rows() != static_cast<Index>(e.tokens.size()) * config_.downsample)
      throw ShapeError("diffusion example: latents must be r * tokens long");
    if (e.latents.cols() != config_.latent_dim)
      throw ShapeError("diffusion example: latent dim mismatch");
  }
  Rng rng(Rng::splitmix(config_.seed ^ 0xd1f2));
  nn::AdamConfig acfg;
  acfg.lr = config_.lr;
  nn::Adam opt(params_.all(), acfg);
  DiffusionReport rep;
  double smooth = -1.0;
  for (int step = 0; step < config_.train_steps; ++step) {
    opt.zero_grads();
    double loss_sum = 0.0;
    for (int b = 0; b < config_.batch_size; ++b) {
      const DiffusionExample& ex = examples[rng.below(examples.size())];
      const Index t = ex.latents.rows();
      const double tau = rng.uniform();
      Mat x0(t, config_.latent_dim);
      rng.fill_gaussian(x0);
      const Mat x_tau = (1.0f - static_cast<Scalar>(tau)) * x0 +
                        static_cast<Scalar>(tau) * ex.latents;
      const Mat v_star = ex.latents - x0;

      const bool drop = rng.uniform() < config_.p_drop;
      const bool with_timbre = ex.timbre.size() > 0 && rng.uniform() < config_.p_timbre;
      Index prefix_rows = 0;
      if (rng.uniform() < config_.p_prefix && t >= 2 * config_.downsample) {
        const Index max_prefix = t / 2;
        prefix_rows = static_cast<Index>(rng.below(static_cast<uint64_t>(max_prefix))) + 1;
        prefix_rows -= prefix_rows % config_.downsample;  // align to token boundary
      }

      std::vector<int> frame_tokens(static_cast<size_t>(t));
      for (Index i = 0; i < t; ++i)
        frame_tokens[static_cast<size_t>(i)] =
            ex.tokens[static_cast<size_t>(i / config_.downsample)];

      Tape tape;
      Var v = forward_velocity(tape, x_tau, tau, frame_tokens,
                               with_timbre ? &ex.timbre : nullptr,
                               prefix_rows > 0 ? &ex.latents : nullptr, prefix_rows, drop);
      Vec weights = Vec::Ones(t);
      weights.head(prefix_rows).setZero();  // prefix rows are given, not learned
      Var loss = ag::weighted_mse(v, v_star, weights);
      loss = ag::scale(loss, 1.0f / config_.batch_size);
      loss_sum += loss.value()(0, 0) * config_.batch_size;
      tape.backward(loss);
    }
    const double loss = loss_sum / config_.batch_size;
    if (!std::isfinite(loss))
      throw TrainingError("diffusion loss diverged at step " + std::to_string(step));
    smooth = smooth < 0 ? loss : 0.98 * smooth + 0.02 * loss;
    if (step % 25 == 0) rep.smoothed_loss.push_back(smooth);
    rep.final_loss = smooth;
    opt.step(nn::cosine_lr_scale(step, config_.train_steps, config_.warmup));
  }
  return rep;
}

void DiffusionModel::save(const std::filesystem::path& path) const {
  io::Checkpoint ck;
  ck.set_config({{"kind", "diffusion"},
                 {"layers", config_.layers},
                 {"width", config_.width},
                 {"heads", config_.heads},
                 {"mlp_hidden", config_.mlp_hidden},
                 {"token_embed_dim", config_.token_embed_dim},
                 {"codebook_size", config_.codebook_size},
                 {"downsample", config_.downsample},
                 {"latent_dim", config_.latent_dim},
                 {"timbre_dim", config_.timbre_dim},
                 {"max_len", config_.max_len},
                 {"p_drop", config_.p_drop},
                 {"p_timbre", config_.p_timbre},
                 {"p_prefix", config_.p_prefix},
                 {"train_steps", config_.train_steps},
                 {"batch_size", config_.batch_size},
                 {"lr", config_.lr},
                 {"warmup", config_.warmup},
                 {"seed", config_.seed}});
  const_cast<nn::ParamStore&>(params_).save_into(ck);
  ck.save(path);
}

DiffusionModel DiffusionModel::load(const std::filesystem::path& path) {
  const io::Checkpoint ck = io::Checkpoint::load(path);
  const auto& c = ck.config();
  if (c.value("kind", "") != "diffusion")
    throw ValidationError("not a diffusion checkpoint: " + path.string());
  DiffusionConfig cfg;
  cfg.layers = c.at("layers");
  cfg.width = c.at("width");
  cfg.heads = c.at("heads");
  cfg.mlp_hidden = c.at("mlp_hidden");
  cfg.token_embed_dim = c.at("token_embed_dim");
  cfg.codebook_size = c.at("codebook_size");
  cfg.downsample = c.at("downsample");
  cfg.latent_dim = c.at("latent_dim");
  cfg.timbre_dim = c.at("timbre_dim");
  cfg.max_len = c.at("max_len");
  cfg.p_drop = c.at("p_drop");
  cfg.p_timbre = c.at("p_timbre");
  cfg.p_prefix = c.at("p_prefix");
  cfg.train_steps = c.at("train_steps");
  cfg.batch_size = c.at("batch_size");
  cfg.lr = c.at("lr");
  cfg.warmup = c.at("warmup");
  cfg.seed = c.at("seed");
  DiffusionModel m(cfg);
  m.params_.load_from(ck);
  return m;
}

// --- Streaming -------------------------------------------------------------------

io::json StreamState::timing_json() const {
  io::json rows = io::json::array();
  for (const StreamChunkTiming& t : timing)
    rows.push_back({{"chunk_index", t.chunk_index}, {"wall_time_s", t.wall_time_s}});
  return rows;
}

StreamSampler::StreamSampler(const DiffusionModel& model, DiffusionCondition cond,
                             FlowConfig flow, int chunk_size)
    : model_(model), cond_(std::move(cond)), flow_(flow) {
  if (chunk_size < 1) throw ValidationError("stream chunk size must be >= 1");
  flow_.validate();
  const int n_tokens = static_cast<int>(cond_.tokens.size());
  total_chunks_ = (n_tokens + chunk_size - 1) / chunk_size;
  state_.chunk_size = chunk_size;
  state_.emitted = Mat(0, model.config().latent_dim);
  state_.pending_tokens = cond_.tokens;
  prompt_rows_ = cond_.prompt_latents ? cond_.prompt_latents->rows() : 0;
  start_ = std::chrono::steady_clock::now();
}

bool StreamSampler::done() const { return emitted_chunks_ >= total_chunks_; }

Mat StreamSampler::next_chunk() {
  if (done()) throw ValidationError("stream exhausted");
  const int r = model_.config().downsample;
  const int n_tokens = static_cast<int>(cond_.tokens.size());
  const int end_token = std::min(n_tokens, (emitted_chunks_ + 1) * state_.chunk_size);
  const Index window_rows = static_cast<Index>(end_token) * r;
  const Index have = state_.emitted.rows();

  // Clamp = prompt prefix (first chunk) plus everything already emitted.
  Mat clamped = Mat::Zero(window_rows, model_.config().latent_dim);
  Index clamped_rows = prompt_rows_ + have;
  if (prompt_rows_ > 0) clamped.topRows(prompt_rows_) = *cond_.prompt_latents;
  if (have > 0) clamped.middleRows(prompt_rows_, have) = state_.emitted;

  const Mat window = model_.sample_window(cond_, flow_, window_rows, clamped, clamped_rows);
  const Mat chunk = window.bottomRows(window_rows - clamped_rows);
  state_.emitted.conservativeResize(have + chunk.rows(), Eigen::NoChange);
  state_.emitted.bottomRows(chunk.rows()) = chunk;
  state_.pending_tokens.erase(state_.pending_tokens.begin(),
                              state_.pending_tokens.begin() +
                                  std::min<size_t>(state_.pending_tokens.size(),
                                                   static_cast<size_t>(state_.chunk_size)));
  const auto now = std::chrono::steady_clock::now();
  state_.timing.push_back(
      {emitted_chunks_, std::chrono::duration<double>(now - start_).count()});
  ++emitted_chunks_;
  return chunk;
}

LatencyReport measure_latency_rtf(const std::vector<StreamChunkTiming>& timing,
                                  Index output_frames, double frame_rate) {
  if (timing.empty()) throw DataError("latency measurement needs a nonempty timing log");
  if (output_frames <= 0) throw ValidationError("RTF undefined for zero output frames");
  LatencyReport rep;
  rep.first_packet_latency_s = timing.front().wall_time_s;
  const double total = timing.back().wall_time_s;
  const double audio_seconds = static_cast<double>(output_frames) / frame_rate;
  rep.rtf = total / audio_seconds;
  return rep;
}

// --- Example construction ----------------------------------------------------------

Mat trim_to_multiple(const Mat& frames, int r) {
  const Index t = (frames.rows() / r) * r;
  return frames.topRows(t);
}

std::vector<DiffusionExample> make_diffusion_examples(const std::vector<Mat>& corpus_frames,
                                                      const std::vector<DVec>& timbres,
                                                      const vq::Tokenizer& tokenizer,
                                                      const Vocoder& vocoder) {
  if (!timbres.empty() && timbres.size() != corpus_frames.size())
    throw ShapeError("make_diffusion_examples: timbre count mismatch");
  std::vector<DiffusionExample> out;
  out.reserve(corpus_frames.size());
  const int r = tokenizer.config().downsample;
  for (size_t i = 0; i < corpus_frames.size(); ++i) {
    const Mat frames = trim_to_multiple(corpus_frames[i], r);
    if (frames.rows() < r) continue;
    DiffusionExample ex;
    ex.tokens = tokenizer.encode(frames).token_ids;
    ex.latents = vocoder.encode(frames);
    if (!timbres.empty()) ex.timbre = timbres[i];
    out.push_back(std::move(ex));
  }
  if (out.empty()) throw DataError("no usable diffusion examples");
  return out;
}

}  // namespace ttslab::acoustic
