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

#include "ttslab/lm.hpp"

#include <algorithm>
#include <cmath>

namespace ttslab::lm {

using ag::Tape;
using ag::Var;
using io::json;

VocabLayout VocabLayout::build(int num_symbols, int speech_size,
                               const std::vector<std::string>& speaker_ids) {
  VocabLayout l;
  l.num_symbols = num_symbols;
  l.boundary_id = num_symbols;
  l.speech_offset = num_symbols + 1;
  l.speech_size = speech_size;
  int next = l.speech_offset + speech_size;
  l.bos = next++;
  l.eos = next++;
  l.sep = next++;
  l.speaker_offset = next;
  l.speakers = speaker_ids;
  next += static_cast<int>(speaker_ids.size());
  for (int e = 0; e < corpus::kNumEmotions; ++e) l.control_ids[static_cast<size_t>(e)] = next++;
  l.total = next;
  l.validate();
  return l;
}

void VocabLayout::validate() const {
  if (num_symbols < 1 || speech_size < 1) throw ValidationError("vocab layout: empty ranges");
  if (boundary_id != num_symbols || speech_offset != num_symbols + 1)
    throw ValidationError("vocab layout: ranges must be packed in order");
  const int after_speech = speech_offset + speech_size;
  if (bos < after_speech || eos <= bos || sep <= eos || speaker_offset <= sep)
    throw ValidationError("vocab layout: special ids overlap earlier ranges");
  for (int id : control_ids)
    if (id < speaker_offset + static_cast<int>(speakers.size()) || id >= total)
      throw ValidationError("vocab layout: control ids out of range");
}

int VocabLayout::speaker_token(const std::string& speaker_id) const {
  for (size_t i = 0; i < speakers.size(); ++i)
    if (speakers[i] == speaker_id) return speaker_offset + static_cast<int>(i);
  throw VocabError("speaker " + speaker_id + " is not registered in the vocabulary");
}

int VocabLayout::control_token(corpus::Emotion e) const {
  return control_ids[static_cast<size_t>(e)];
}

json VocabLayout::to_json() const {
  return json{{"num_symbols", num_symbols}, {"boundary_id", boundary_id},
              {"speech_offset", speech_offset}, {"speech_size", speech_size},
              {"bos", bos}, {"eos", eos}, {"sep", sep},
              {"speakers", speakers}, {"speaker_offset", speaker_offset},
              {"control_ids", control_ids}, {"total", total}};
}

VocabLayout VocabLayout::from_json(const json& j) {
  VocabLayout l;
  l.num_symbols = j.at("num_symbols");
  l.boundary_id = j.at("boundary_id");
  l.speech_offset = j.at("speech_offset");
  l.speech_size = j.at("speech_size");
  l.bos = j.at("bos");
  l.eos = j.at("eos");
  l.sep = j.at("sep");
  l.speakers = j.at("speakers").get<std::vector<std::string>>();
  l.speaker_offset = j.at("speaker_offset");
  const auto ids = j.at("control_ids").get<std::vector<int>>();
  std::copy(ids.begin(), ids.end(), l.control_ids.begin());
  l.total = j.at("total");
  l.validate();
  return l;
}

void MixedSequence::validate(const VocabLayout& layout) const {
  if (ids.size() != loss_mask.size())
    throw ShapeError("mixed sequence: ids and loss mask lengths differ");
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= layout.total)
      throw VocabError("sequence id " + std::to_string(ids[i]) + " outside the vocabulary");
    if (loss_mask[i] && !(layout.is_speech(ids[i]) || ids[i] == layout.eos))
      throw ValidationError("loss mask set on a non-speech position");
  }
}

namespace {

void check_text(const std::vector<int>& text, const VocabLayout& layout) {
  if (text.empty()) throw ValidationError("text must be nonempty");
  for (int s : text)
    if (s < 0 || s >= layout.num_symbols)
      throw VocabError("unknown text symbol " + std::to_string(s));
}

void check_tokens(const vq::SpeechTokenSeq& tokens, const VocabLayout& layout) {
  for (int id : tokens.token_ids)
    if (id < 0 || id >= layout.speech_size)
      throw VocabError("speech token " + std::to_string(id) + " outside [0, K)");
}

void check_length(size_t len, int context_window) {
  if (static_cast<int>(len) > context_window)
    throw ValidationError("sequence of " + std::to_string(len) +
                          " ids exceeds the context window of " + std::to_string(context_window));
}

}  // namespace

MixedSequence build_icl_sequence(const std::vector<int>& prompt_text,
                                 const std::vector<int>& target_text,
                                 const vq::SpeechTokenSeq& prompt_tokens,
                                 const VocabLayout& layout, int context_window) {
  check_text(prompt_text, layout);
  check_text(target_text, layout);
  check_tokens(prompt_tokens, layout);
  MixedSequence seq;
  seq.ids.reserve(3 + prompt_text.size() + target_text.size() + prompt_tokens.token_ids.size());
  auto push = [&seq](int id, bool masked) {
    seq.ids.push_back(id);
    seq.loss_mask.push_back(masked ? 1 : 0);
  };
  push(layout.bos, false);
  for (int s : prompt_text) push(s, false);
  for (int s : target_text) push(s, false);
  push(layout.sep, false);
  for (int tok : prompt_tokens.token_ids) push(layout.speech_offset + tok, true);
  check_length(seq.size(), context_window);
  return seq;
}

void append_continuation(MixedSequence& seq, const vq::SpeechTokenSeq& target_tokens,
                         const VocabLayout& layout, int context_window) {
  check_tokens(target_tokens, layout);
  for (int tok : target_tokens.token_ids) {
    seq.ids.push_back(layout.speech_offset + tok);
    seq.loss_mask.push_back(1);
  }
  seq.ids.push_back(layout.eos);
  seq.loss_mask.push_back(1);
  check_length(seq.size(), context_window);
}

MixedSequence build_speaker_sequence(int speaker_token, const std::vector<int>& text,
                                     const vq::SpeechTokenSeq& tokens, const VocabLayout& layout,
                                     int context_window) {
  check_text(text, layout);
  check_tokens(tokens, layout);
  if (speaker_token < layout.speaker_offset ||
      speaker_token >= layout.speaker_offset + static_cast<int>(layout.speakers.size()))
    throw VocabError("speaker token " + std::to_string(speaker_token) + " is not registered");
  MixedSequence seq;
  auto push = [&seq](int id, bool masked) {
    seq.ids.push_back(id);
    seq.loss_mask.push_back(masked ? 1 : 0);
  };
  push(layout.bos, false);
  push(speaker_token, false);
  for (int s : text) push(s, false);
  push(layout.sep, false);
  for (int tok : tokens.token_ids) push(layout.speech_offset + tok, true);
  push(layout.eos, true);
  check_length(seq.size(), context_window);
  return seq;
}

MixedSequence build_instruction_sequence(int speaker_token, int control_token,
                                         const std::vector<int>& text,
                                         const vq::SpeechTokenSeq& tokens,
                                         const VocabLayout& layout, int context_window) {
  const bool known_control =
      std::find(layout.control_ids.begin(), layout.control_ids.end(), control_token) !=
      layout.control_ids.end();
  if (!known_control)
    throw VocabError("control token " + std::to_string(control_token) + " is not registered");
  MixedSequence seq = build_speaker_sequence(speaker_token, text, tokens, layout, context_window);
  // Control token slots in right after the speaker index.
  seq.ids.insert(seq.ids.begin() + 2, control_token);
  seq.loss_mask.insert(seq.loss_mask.begin() + 2, 0);
  check_length(seq.size(), context_window);
  return seq;
}

void LmConfig::validate() const {
  if (layers < 1 || width < 1 || heads < 1 || width % heads != 0)
    throw ValidationError("lm config: bad transformer shape");
  if (context < 8) throw ValidationError("lm config: context window too small");
  if (train_steps < 1 || batch_size < 1) throw ValidationError("lm config: bad training sizes");
}

void SamplerConfig::validate() const {
  if (!(temperature > 0)) throw ValidationError("sampler temperature must be > 0");
  if (top_k < 1) throw ValidationError("sampler top_k must be >= 1");
  if (max_new_tokens < 0) throw ValidationError("sampler max_new_tokens must be >= 0");
}

TokenLm::TokenLm(const VocabLayout& layout, const LmConfig& config)
    : layout_(layout), config_(config) {
  config_.validate();
  layout_.validate();
  Rng rng(Rng::splitmix(config.seed ^ 0x11a0));
  tok_emb_ = &params_.gaussian("tok_emb", layout_.total, config_.width, rng, 0.02);
  nn::TransformerConfig tc;
  tc.layers = config_.layers;
  tc.width = config_.width;
  tc.heads = config_.heads;
  tc.mlp_hidden = config_.mlp_hidden;
  tf_ = std::make_unique<nn::Transformer>(params_, tc, "lm", rng);
  head_ = nn::make_linear(params_, "head", config_.width, layout_.total, rng);
  pos_enc_ = nn::positional_encoding(config_.context, config_.width);
}

TokenLm::TokenLm(const TokenLm& other) : TokenLm(other.layout_, other.config_) {
  io::Checkpoint ck;
  other.params_.save_into(ck);
  params_.load_from(ck);
}

Var TokenLm::forward_logits(Tape& tape, const std::vector<int>& inputs) {
  Var emb = ag::gather_rows(tape.leaf(*tok_emb_), inputs);
  Var x = ag::add_const(emb, pos_enc_.topRows(static_cast<Index>(inputs.size())));
  Var h = tf_->forward(tape, x, /*causal=*/true);
  return nn::linear(h, head_);
}

Mat TokenLm::legal_bias_rows(Index rows) const {
  Mat bias = Mat::Constant(rows, layout_.total, -1e30f);
  bias.middleCols(layout_.speech_offset, layout_.speech_size).setZero();
  bias.col(layout_.eos).setZero();
  return bias;
}

double TokenLm::batch_loss(const std::vector<int>& inputs, const std::vector<int>& targets,
                           const std::vector<uint8_t>& target_mask, bool backprop, double scale) {
  if (inputs.size() != targets.size() || inputs.size() != target_mask.size())
    throw ShapeError("batch_loss: length mismatch");
  check_length(inputs.size(), config_.context);
  Scalar masked = 0;
  for (uint8_t m : target_mask) masked += m ? 1 : 0;
  if (masked == 0) return 0.0;

  Tape tape;
  Var logits = forward_logits(tape, inputs);
  // Constrain the support to speech tokens + EOS.
  Var constrained = ag::add_const(logits, legal_bias_rows(logits.rows()));
  Vec weights(static_cast<Index>(target_mask.size()));
  for (size_t i = 0; i < target_mask.size(); ++i)
    weights(static_cast<Index>(i)) = target_mask[i] ? static_cast<Scalar>(scale) : 0.0f;
  Var loss = ag::weighted_cross_entropy(constrained, targets, weights, masked);
  const double v = loss.value()(0, 0);
  if (backprop) tape.backward(loss);
  return v;
}

namespace {

// Shifts a sequence into next-token (inputs, targets, mask-on-targets) form.
struct ShiftedBatch {
  std::vector<int> inputs, targets;
  std::vector<uint8_t> mask;
};

ShiftedBatch shift(const MixedSequence& seq) {
  if (seq.size() < 2) throw ValidationError("sequence too short to train on");
  ShiftedBatch b;
  b.inputs.assign(seq.ids.begin(), seq.ids.end() - 1);
  b.targets.assign(seq.ids.begin() + 1, seq.ids.end());
  b.mask.assign(seq.loss_mask.begin() + 1, seq.loss_mask.end());
  return b;
}

}  // namespace

double TokenLm::accumulate_loss(const MixedSequence& seq, double scale) {
  seq.validate(layout_);
  const ShiftedBatch b = shift(seq);
  return batch_loss(b.inputs, b.targets, b.mask, /*backprop=*/true, scale);
}

TrainStats TokenLm::train(const std::vector<MixedSequence>& sequences) {
  return train(sequences, config_.train_steps, config_.lr, config_.batch_size, config_.seed,
               config_.warmup);
}

TrainStats TokenLm::train(const std::vector<MixedSequence>& sequences, int steps, double lr,
                          int batch_size, uint64_t seed, int warmup) {
  if (sequences.empty()) throw DataError("lm training set is empty");
  for (const MixedSequence& s : sequences) {
    s.validate(layout_);
    check_length(s.size(), config_.context);
  }
  Rng rng(Rng::splitmix(seed ^ 0x11a1));
  nn::AdamConfig acfg;
  acfg.lr = lr;
  nn::Adam opt(params_.all(), acfg);
  TrainStats stats;
  double smooth = -1.0;
  for (int step = 0; step < steps; ++step) {
    opt.zero_grads();
    double loss_sum = 0.0;
    for (int b = 0; b < batch_size; ++b) {
      const MixedSequence& seq = sequences[rng.below(sequences.size())];
      const ShiftedBatch sb = shift(seq);
      loss_sum += batch_loss(sb.inputs, sb.targets, sb.mask, /*backprop=*/true, 1.0 / batch_size);
    }
    const double loss = loss_sum / batch_size;
    if (!std::isfinite(loss))
      throw TrainingError("lm loss diverged at step " + std::to_string(step) +
                          " (last finite smoothed loss " + std::to_string(smooth) + ")");
    smooth = smooth < 0 ? loss : 0.98 * smooth + 0.02 * loss;
    if (step % 25 == 0) stats.smoothed_loss.push_back(smooth);
    opt.step(nn::cosine_lr_scale(step, steps, warmup));
    stats.final_loss = smooth;
  }
  return stats;
}

double TokenLm::reinforce_accumulate(const MixedSequence& seq, double pg_weight,
                                     const Mat& base_logits, double kl_weight, double* kl_value) {
  seq.validate(layout_);
  const ShiftedBatch b = shift(seq);
  if (base_logits.rows() != static_cast<Index>(b.inputs.size()))
    throw ShapeError("reinforce: base logits row count mismatch");

  Tape tape;
  Var logits = forward_logits(tape, b.inputs);
  Var constrained = ag::add_const(logits, legal_bias_rows(logits.rows()));
  Vec pg_rows(static_cast<Index>(b.mask.size()));
  Vec kl_rows(static_cast<Index>(b.mask.size()));
  for (size_t i = 0; i < b.mask.size(); ++i) {
    pg_rows(static_cast<Index>(i)) = b.mask[i] ? static_cast<Scalar>(pg_weight) : 0.0f;
    kl_rows(static_cast<Index>(i)) = b.mask[i] ? 1.0f : 0.0f;
  }
  Var pg = ag::weighted_cross_entropy(constrained, b.targets, pg_rows, 1.0f);
  Var kl = ag::kl_to_const(constrained, base_logits, kl_rows);
  Var loss = ag::add(pg, ag::scale(kl, static_cast<Scalar>(kl_weight)));
  if (kl_value) *kl_value = kl.value()(0, 0);
  tape.backward(loss);
  return pg.value()(0, 0);
}

double TokenLm::sequence_logprob(const MixedSequence& seq) const {
  seq.validate(layout_);
  if (seq.size() < 2) return 0.0;
  const Mat logits = const_cast<TokenLm*>(this)->constrained_logits(seq.ids);
  const Mat logp = ag::log_softmax_rows(logits);
  double total = 0.0;
  for (size_t t = 1; t < seq.size(); ++t) {
    if (!seq.loss_mask[t]) continue;
    total += logp(static_cast<Index>(t - 1), seq.ids[t]);
  }
  return std::min(0.0, total);
}

Mat TokenLm::constrained_logits(const std::vector<int>& ids) const {
  check_length(ids.size(), config_.context);
  TokenLm* self = const_cast<TokenLm*>(this);
  Tape tape;
  Var logits = self->forward_logits(tape, ids);
  return logits.value() + legal_bias_rows(logits.rows());
}

vq::SpeechTokenSeq TokenLm::generate(const MixedSequence& prefix, const SamplerConfig& sampler,
                                     int downsample) const {
  sampler.validate();
  prefix.validate(layout_);
  if (prefix.ids.empty() || prefix.ids.back() == layout_.eos)
    throw ValidationError("generation prefix must end at the speech-continuation position");
  if (static_cast<int>(prefix.size()) + sampler.max_new_tokens > config_.context)
    throw ValidationError("prefix plus continuation budget exceeds the context window");

  Rng rng(Rng::splitmix(sampler.seed ^ 0x9e4));
  auto cache = tf_->make_cache();
  // Prime the cache with the whole prefix.
  const Index plen = static_cast<Index>(prefix.size());
  Mat emb(plen, config_.width);
  for (Index i = 0; i < plen; ++i)
    emb.row(i) = tok_emb_->value.row(prefix.ids[static_cast<size_t>(i)]) + pos_enc_.row(i);
  Mat h = tf_->forward_incremental(emb, cache);

  vq::SpeechTokenSeq out;
  out.downsample = downsample;
  std::vector<int> legal(static_cast<size_t>(layout_.speech_size) + 1);
  for (int k = 0; k < layout_.speech_size; ++k)
    legal[static_cast<size_t>(k)] = layout_.speech_offset + k;
  legal.back() = layout_.eos;

  for (int step = 0; step < sampler.max_new_tokens; ++step) {
    const Eigen::RowVectorXf logits = nn::linear_infer(h.bottomRows(1), head_).row(0);
    // Top-k over the legal set, temperature softmax, then sample.
    std::vector<std::pair<Scalar, int>> scored;
    scored.reserve(legal.size());
    for (int id : legal) scored.emplace_back(logits(id), id);
    const size_t k = std::min<size_t>(static_cast<size_t>(sampler.top_k), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<long>(k), scored.end(),
                      [](const auto& a, const auto& b) {
                        return a.first != b.first ? a.first > b.first : a.second < b.second;
                      });
    double mx = scored.front().first;
    std::vector<double> probs(k);
    double z = 0.0;
    for (size_t i = 0; i < k; ++i) {
      probs[i] = std::exp((scored[i].first - mx) / sampler.temperature);
      z += probs[i];
    }
    double u = rng.uniform() * z;
    int picked = scored[k - 1].second;
    for (size_t i = 0; i < k; ++i) {
      u -= probs[i];
      if (u <= 0) {
        picked = scored[i].second;
        break;
      }
    }
    if (picked == layout_.eos) break;
    out.token_ids.push_back(picked - layout_.speech_offset);
    const Index pos = plen + step;
    if (pos >= config_.context)
      throw ValidationError("generation ran past the context window");
    Mat e(1, config_.width);
    e.row(0) = tok_emb_->value.row(picked) + pos_enc_.row(pos);
    h = tf_->forward_incremental(e, cache);
  }
  out.source_length = static_cast<int>(out.token_ids.size()) * downsample;
  return out;
}

double TokenLm::masked_accuracy(const std::vector<MixedSequence>& sequences) const {
  int64_t hits = 0, total = 0;
  for (const MixedSequence& seq : sequences) {
    if (seq.size() < 2) continue;
    const Mat logits = constrained_logits(seq.ids);
    for (size_t t = 1; t < seq.size(); ++t) {
      if (!seq.loss_mask[t]) continue;
      Index arg = 0;
      logits.row(static_cast<Index>(t - 1)).maxCoeff(&arg);
      hits += (static_cast<int>(arg) == seq.ids[t]) ? 1 : 0;
      ++total;
    }
  }
  return total > 0 ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

void TokenLm::save(const std::filesystem::path& path) const {
  io::Checkpoint ck;
  ck.set_config({{"kind", "token_lm"},
                 {"layers", config_.layers},
                 {"width", config_.width},
                 {"heads", config_.heads},
                 {"mlp_hidden", config_.mlp_hidden},
                 {"context", config_.context},
                 {"train_steps", config_.train_steps},
                 {"batch_size", config_.batch_size},
                 {"lr", config_.lr},
                 {"warmup", config_.warmup},
                 {"seed", config_.seed}});
  const_cast<nn::ParamStore&>(params_).save_into(ck);
  ck.save(path);
  // The vocabulary layout travels as a sidecar; a checkpoint without it is
  // unusable.
  io::write_text_file(path.string() + ".vocab.json", layout_.to_json().dump(2));
}

TokenLm TokenLm::load(const std::filesystem::path& path) {
  const auto vocab_path = path.string() + ".vocab.json";
  if (!std::filesystem::exists(vocab_path))
    throw ValidationError("checkpoint is invalid without its vocabulary layout: missing " +
                          vocab_path);
  const VocabLayout layout = VocabLayout::from_json(json::parse(io::read_text_file(vocab_path)));
  const io::Checkpoint ck = io::Checkpoint::load(path);
  const auto& c = ck.config();
  if (c.value("kind", "") != "token_lm")
    throw ValidationError("not a token LM checkpoint: " + path.string());
  LmConfig cfg;
  cfg.layers = c.at("layers");
  cfg.width = c.at("width");
  cfg.heads = c.at("heads");
  cfg.mlp_hidden = c.at("mlp_hidden");
  cfg.context = c.at("context");
  cfg.train_steps = c.at("train_steps");
  cfg.batch_size = c.at("batch_size");
  cfg.lr = c.at("lr");
  cfg.warmup = c.at("warmup");
  cfg.seed = c.at("seed");
  TokenLm lm(layout, cfg);
  lm.params_.load_from(ck);
  return lm;
}

}  // namespace ttslab::lm
