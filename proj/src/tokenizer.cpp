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

#include "ttslab/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace ttslab::vq {

using ag::Tape;
using ag::Var;

void TokenizerConfig::validate() const {
  if (codebook_size < 2) throw ValidationError("codebook_size must be >= 2");
  if (downsample < 1) throw ValidationError("downsample must be >= 1");
  if (code_dim < 1 || hidden < 1) throw ValidationError("code_dim and hidden must be positive");
  if (train_steps < 1 || batch_size < 1) throw ValidationError("training sizes must be positive");
  if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0))
    throw ValidationError("holdout_fraction must lie in [0, 1)");
}

Mat Tokenizer::window_frames(const Mat& frames, int r) {
  const Index t = frames.rows();
  const Index d = frames.cols();
  const Index n = (t + r - 1) / r;
  Mat out(n, r * d);
  for (Index w = 0; w < n; ++w) {
    for (int j = 0; j < r; ++j) {
      const Index src = std::min(w * r + j, t - 1);  // pad by repeating the last frame
      out.row(w).segment(j * d, d) = frames.row(src);
    }
  }
  return out;
}

void Tokenizer::build_net(Rng& rng) {
  const Index in = static_cast<Index>(config_.downsample) * frame_dim_;
  enc1_ = nn::make_linear(params_, "enc1", in, config_.hidden, rng);
  enc2_ = nn::make_linear(params_, "enc2", config_.hidden, config_.code_dim, rng);
  dec1_ = nn::make_linear(params_, "dec1", config_.code_dim, config_.hidden, rng);
  dec2_ = nn::make_linear(params_, "dec2", config_.hidden, in, rng);
}

namespace {

Mat gelu_mat(const Mat& x) {
  constexpr Scalar c = 0.7978845608028654f;
  constexpr Scalar a = 0.044715f;
  const auto xa = x.array();
  return (0.5f * xa * (1 + (c * (xa + a * xa.cube())).tanh())).matrix();
}

// Nearest codebook row by squared distance, ties broken by lowest index.
int nearest_code(const Mat& codebook, const Eigen::RowVectorXf& v) {
  int best = 0;
  Scalar best_d = (codebook.row(0) - v).squaredNorm();
  for (Index k = 1; k < codebook.rows(); ++k) {
    const Scalar d = (codebook.row(k) - v).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

}  // namespace

Tokenizer Tokenizer::train(const std::vector<Mat>& corpus_frames, const TokenizerConfig& config,
                           int frame_dim, TokenizerReport* report) {
  config.validate();
  if (corpus_frames.empty()) throw DataError("tokenizer training corpus is empty");
  for (const Mat& f : corpus_frames)
    if (f.cols() != frame_dim) throw ShapeError("corpus frame dim mismatch");

  Tokenizer tok;
  tok.config_ = config;
  tok.frame_dim_ = frame_dim;
  Rng rng(Rng::splitmix(config.seed ^ 0x70c0de));
  tok.build_net(rng);

  // Gather all windows; hold out a deterministic slice for reporting.
  std::vector<Mat> window_sets;
  Index total = 0;
  for (const Mat& f : corpus_frames) {
    if (f.rows() < config.downsample) continue;
    window_sets.push_back(window_frames(f, config.downsample));
    total += window_sets.back().rows();
  }
  if (total < config.codebook_size)
    throw DataError("corpus has fewer windows than codebook entries");
  Mat all(total, static_cast<Index>(config.downsample) * frame_dim);
  Index at = 0;
  for (const Mat& w : window_sets) {
    all.middleRows(at, w.rows()) = w;
    at += w.rows();
  }
  std::vector<int> order(static_cast<size_t>(total));
  for (Index i = 0; i < total; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
  rng.shuffle(order);
  const Index held = static_cast<Index>(std::floor(config.holdout_fraction * total));
  const Index train_count = total - held;

  // Codebook init: encoder projections of random training windows.
  {
    Mat seed_windows(config.codebook_size, all.cols());
    for (int k = 0; k < config.codebook_size; ++k)
      seed_windows.row(k) = all.row(order[rng.below(static_cast<uint64_t>(train_count))]);
    tok.codebook_ = tok.encode_windows(seed_windows);
  }

  Vec ema_count = Vec::Ones(config.codebook_size);
  Mat ema_sum = tok.codebook_;
  std::vector<int64_t> last_used(static_cast<size_t>(config.codebook_size), 0);
  const int64_t reseed_every = std::max<int64_t>(1, train_count / config.batch_size);

  nn::AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  nn::Adam opt(tok.params_.all(), adam_cfg);

  TokenizerReport local_report;
  TokenizerReport& rep = report ? *report : local_report;
  double smooth = -1.0;

  for (int step = 0; step < config.train_steps; ++step) {
    Mat batch(config.batch_size, all.cols());
    for (int b = 0; b < config.batch_size; ++b)
      batch.row(b) = all.row(order[rng.below(static_cast<uint64_t>(train_count))]);

    Tape tape;
    Var x = tape.constant(batch);
    Var enc = nn::linear(ag::gelu(nn::linear(x, tok.enc1_)), tok.enc2_);

    Mat quantized(config.batch_size, config.code_dim);
    std::vector<int> assignment(static_cast<size_t>(config.batch_size));
    for (int b = 0; b < config.batch_size; ++b) {
      const int k = nearest_code(tok.codebook_, enc.value().row(b));
      assignment[static_cast<size_t>(b)] = k;
      quantized.row(b) = tok.codebook_.row(k);
      last_used[static_cast<size_t>(k)] = step;
    }

    // Straight-through: forward the code vector, backprop into the encoder.
    Var dec_in = ag::add_const(enc, quantized - enc.value());
    Var recon = nn::linear(ag::gelu(nn::linear(dec_in, tok.dec1_)), tok.dec2_);
    Var recon_loss = ag::weighted_mse(recon, batch, Vec::Ones(config.batch_size));
    Var commit = ag::weighted_mse(enc, quantized, Vec::Ones(config.batch_size));
    Var loss =
        ag::add(recon_loss, ag::scale(commit, static_cast<Scalar>(config.commitment_weight)));

    const double loss_v = loss.value()(0, 0);
    if (!std::isfinite(loss_v))
      throw TrainingError("tokenizer loss diverged at step " + std::to_string(step) +
                          " (last finite smoothed loss " + std::to_string(smooth) + ")");
    smooth = smooth < 0 ? loss_v : 0.98 * smooth + 0.02 * loss_v;
    if (step % 50 == 0) rep.smoothed_loss.push_back(smooth);

    opt.zero_grads();
    tape.backward(loss);
    opt.step(nn::cosine_lr_scale(step, config.train_steps));

    // EMA codebook update.
    const Scalar g = static_cast<Scalar>(config.ema_decay);
    Vec counts = Vec::Zero(config.codebook_size);
    Mat sums = Mat::Zero(config.codebook_size, config.code_dim);
    for (int b = 0; b < config.batch_size; ++b) {
      counts(assignment[static_cast<size_t>(b)]) += 1.0f;
      sums.row(assignment[static_cast<size_t>(b)]) += enc.value().row(b);
    }
    ema_count = g * ema_count + (1 - g) * counts;
    ema_sum = g * ema_sum + (1 - g) * sums;
    for (int k = 0; k < config.codebook_size; ++k)
      tok.codebook_.row(k) = ema_sum.row(k) / std::max(1e-5f, ema_count(k));

    // Reseed codes unused for a full pass over the data.
    if (step > 0 && step % reseed_every == 0) {
      for (int k = 0; k < config.codebook_size; ++k) {
        if (step - last_used[static_cast<size_t>(k)] >= reseed_every) {
          const int b = static_cast<int>(rng.below(static_cast<uint64_t>(config.batch_size)));
          tok.codebook_.row(k) = enc.value().row(b);
          ema_count(k) = 1.0f;
          ema_sum.row(k) = tok.codebook_.row(k);
          last_used[static_cast<size_t>(k)] = step;
          rep.dead_code_reseeds++;
        }
      }
    }
  }

  // Held-out reconstruction MSE and codebook utilization.
  if (held > 0) {
    Mat held_windows(held, all.cols());
    for (Index i = 0; i < held; ++i)
      held_windows.row(i) = all.row(order[static_cast<size_t>(train_count + i)]);
    const Mat enc = tok.encode_windows(held_windows);
    std::set<int> used;
    Mat codes(held, config.code_dim);
    for (Index i = 0; i < held; ++i) {
      const int k = nearest_code(tok.codebook_, enc.row(i));
      used.insert(k);
      codes.row(i) = tok.codebook_.row(k);
    }
    const Mat recon = nn::linear_infer(gelu_mat(nn::linear_infer(codes, tok.dec1_)), tok.dec2_);
    rep.held_out_mse =
        (recon - held_windows).squaredNorm() / static_cast<double>(held_windows.size());
    rep.held_out_utilization =
        static_cast<double>(used.size()) / static_cast<double>(config.codebook_size);
  }
  return tok;
}

Mat Tokenizer::encode_windows(const Mat& windows) const {
  return nn::linear_infer(gelu_mat(nn::linear_infer(windows, enc1_)), enc2_);
}

SpeechTokenSeq Tokenizer::encode(const Mat& frames) const {
  if (frames.cols() != frame_dim_)
    throw ShapeError("encode: frame dim " + std::to_string(frames.cols()) + " != " +
                     std::to_string(frame_dim_));
  if (frames.rows() < config_.downsample)
    throw ValidationError("encode: need at least " + std::to_string(config_.downsample) +
                          " frames, got " + std::to_string(frames.rows()));
  const Mat windows = window_frames(frames, config_.downsample);
  const Mat enc = encode_windows(windows);
  SpeechTokenSeq seq;
  seq.downsample = config_.downsample;
  seq.source_length = static_cast<int>(frames.rows());
  seq.token_ids.resize(static_cast<size_t>(windows.rows()));
  for (Index i = 0; i < windows.rows(); ++i)
    seq.token_ids[static_cast<size_t>(i)] = nearest_code(codebook_, enc.row(i));
  return seq;
}

Mat Tokenizer::reconstruct(const SpeechTokenSeq& tokens) const {
  Mat codes(tokens.length(), config_.code_dim);
  for (Index i = 0; i < tokens.length(); ++i) {
    const int id = tokens.token_ids[static_cast<size_t>(i)];
    if (id < 0 || id >= config_.codebook_size)
      throw VocabError("token id " + std::to_string(id) + " outside codebook of " +
                       std::to_string(config_.codebook_size));
    codes.row(i) = codebook_.row(id);
  }
  const Mat windows = nn::linear_infer(gelu_mat(nn::linear_infer(codes, dec1_)), dec2_);

  const int r = config_.downsample;
  const Index full = tokens.length() * r;
  const Index out_len =
      tokens.source_length > 0 ? std::min<Index>(tokens.source_length, full) : full;
  Mat frames(out_len, frame_dim_);
  for (Index t = 0; t < out_len; ++t)
    frames.row(t) = windows.row(t / r).segment((t % r) * frame_dim_, frame_dim_);
  return frames;
}

double Tokenizer::reconstruction_mse(const Mat& frames) const {
  const Mat recon = reconstruct(encode(frames));
  const Index n = std::min(recon.rows(), frames.rows());
  return (recon.topRows(n) - frames.topRows(n)).squaredNorm() /
         static_cast<double>(n * frames.cols());
}

void Tokenizer::save(const std::filesystem::path& path) const {
  io::Checkpoint ck;
  ck.set_config({{"kind", "tokenizer"},
                 {"codebook_size", config_.codebook_size},
                 {"downsample", config_.downsample},
                 {"code_dim", config_.code_dim},
                 {"hidden", config_.hidden},
                 {"train_steps", config_.train_steps},
                 {"batch_size", config_.batch_size},
                 {"lr", config_.lr},
                 {"commitment_weight", config_.commitment_weight},
                 {"ema_decay", config_.ema_decay},
                 {"holdout_fraction", config_.holdout_fraction},
                 {"seed", config_.seed},
                 {"frame_dim", frame_dim_}});
  const_cast<nn::ParamStore&>(params_).save_into(ck);
  ck.add("codebook", codebook_);
  ck.save(path);
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  const io::Checkpoint ck = io::Checkpoint::load(path);
  const auto& c = ck.config();
  if (c.value("kind", "") != "tokenizer")
    throw ValidationError("not a tokenizer checkpoint: " + path.string());
  Tokenizer tok;
  tok.config_.codebook_size = c.at("codebook_size");
  tok.config_.downsample = c.at("downsample");
  tok.config_.code_dim = c.at("code_dim");
  tok.config_.hidden = c.at("hidden");
  tok.config_.train_steps = c.at("train_steps");
  tok.config_.batch_size = c.at("batch_size");
  tok.config_.lr = c.at("lr");
  tok.config_.commitment_weight = c.at("commitment_weight");
  tok.config_.ema_decay = c.at("ema_decay");
  tok.config_.holdout_fraction = c.at("holdout_fraction");
  tok.config_.seed = c.at("seed");
  tok.frame_dim_ = c.at("frame_dim");
  Rng rng(0);
  tok.build_net(rng);
  tok.params_.load_from(ck);
  tok.codebook_ = ck.get("codebook");
  return tok;
}

}  // namespace ttslab::vq
