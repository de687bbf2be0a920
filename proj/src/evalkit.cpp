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

#include "ttslab/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace ttslab::eval {

using corpus::Utterance;
using corpus::UtteranceSpec;
using corpus::WorldBasis;
using io::json;

int64_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int64_t sub = prev[j - 1] + (a[i - 1] != b[j - 1] ? 1 : 0);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double wer_proxy(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
  if (reference.empty())
    throw ValidationError("wer_proxy: reference transcript must be nonempty");
  return static_cast<double>(edit_distance(reference, hypothesis)) /
         static_cast<double>(reference.size());
}

double sim_metric(const DVec& a, const DVec& b) {
  if (a.size() != b.size()) throw ShapeError("sim_metric: embedding dims differ");
  const double na = a.norm(), nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) throw DataError("sim_metric: zero-norm embedding");
  return a.dot(b) / (na * nb);
}

CmosAggregate cmos_aggregate(const std::vector<CmosRecord>& records) {
  if (records.empty()) throw DataError("cmos_aggregate: no records");
  CmosAggregate agg;
  double sum = 0.0;
  int win = 0, tie = 0, loss = 0;
  for (const CmosRecord& r : records) {
    if (r.rating < -2 || r.rating > 2)
      throw ValidationError("cmos rating " + std::to_string(r.rating) + " out of scale for case " +
                            r.case_id + " rater " + r.rater_id);
    const int canonical = r.order == PresentationOrder::kHumanFirst ? -r.rating : r.rating;
    sum += canonical;
    if (canonical > 0)
      ++win;
    else if (canonical == 0)
      ++tie;
    else
      ++loss;
  }
  agg.count = static_cast<int>(records.size());
  agg.cmos = sum / agg.count;
  agg.win = static_cast<double>(win) / agg.count;
  agg.tie = static_cast<double>(tie) / agg.count;
  agg.loss = static_cast<double>(loss) / agg.count;
  agg.significant = std::abs(agg.cmos) >= 0.1;
  return agg;
}

std::vector<CmosRecord> read_cmos_csv(const std::filesystem::path& path) {
  std::istringstream in(io::read_text_file(path));
  std::vector<CmosRecord> records;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("case_id", 0) == 0) continue;  // header
    std::istringstream row(line);
    CmosRecord r;
    std::string rating, order;
    if (!std::getline(row, r.case_id, ',') || !std::getline(row, r.rater_id, ',') ||
        !std::getline(row, rating, ',') || !std::getline(row, order))
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": bad CMOS row");
    r.rating = std::stoi(rating);
    if (order == "system-first")
      r.order = PresentationOrder::kSystemFirst;
    else if (order == "human-first")
      r.order = PresentationOrder::kHumanFirst;
    else
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": unknown presentation order " + order);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<EvalCaseData> make_icl_manifest(const WorldBasis& world, const ManifestConfig& config,
                                            uint64_t seed) {
  if (config.num_cases <= 0) throw ValidationError("manifest needs a positive case count");
  Rng rng = Rng::fork(seed, 0xe5a1);
  std::vector<corpus::SpeakerProfile> speakers;
  for (int k = 0; k < config.num_speakers; ++k) speakers.push_back(corpus::make_speaker(world, k));

  std::vector<EvalCaseData> cases;
  cases.reserve(static_cast<size_t>(config.num_cases));
  for (int i = 0; i < config.num_cases; ++i) {
    const corpus::SpeakerProfile& spk = speakers[rng.below(speakers.size())];
    const auto emotion = config.emotion_controlled
                             ? static_cast<corpus::Emotion>(1 + i % 4)  // skip neutral
                             : corpus::Emotion::kNeutral;

    UtteranceSpec prompt_spec;
    prompt_spec.speaker = spk;
    prompt_spec.emotion = emotion;
    prompt_spec.rate_factor = 1.0;
    prompt_spec.noise_sigma = config.noise_sigma;
    // Rejection keeps the prompt duration within the configured bounds.
    Utterance prompt;
    for (int attempt = 0; attempt < 64; ++attempt) {
      const int len = rng.uniform_int(config.min_prompt_symbols, config.max_prompt_symbols);
      prompt_spec.text.resize(static_cast<size_t>(len));
      for (int& s : prompt_spec.text) s = rng.uniform_int(0, world.dims.num_symbols - 1);
      prompt_spec.utterance_seed = rng.next_u64();
      prompt = corpus::render_utterance(prompt_spec, world);
      if (prompt.length() >= config.min_prompt_frames &&
          prompt.length() <= config.max_prompt_frames)
        break;
      if (attempt == 63)
        throw Error("could not fit the prompt duration bounds; widen the symbol range");
    }

    UtteranceSpec target_spec = prompt_spec;
    const int tlen = rng.uniform_int(config.min_target_symbols, config.max_target_symbols);
    target_spec.text.resize(static_cast<size_t>(tlen));
    for (int& s : target_spec.text) s = rng.uniform_int(0, world.dims.num_symbols - 1);
    target_spec.utterance_seed = rng.next_u64();
    const Utterance reference = corpus::render_utterance(target_spec, world);

    EvalCaseData c;
    c.meta.id = "case" + std::to_string(i);
    c.meta.prompt_text = corpus::text_to_string(prompt_spec.text);
    c.meta.target_text = corpus::text_to_string(target_spec.text);
    c.meta.speaker_id = spk.speaker_id;
    c.meta.emotion = corpus::emotion_name(emotion);
    c.meta.prompt_frames_path = "frames/" + c.meta.id + "_prompt.msf";
    c.meta.reference_frames_path = "frames/" + c.meta.id + "_ref.msf";
    c.prompt_frames = prompt.frames;
    c.reference_frames = reference.frames;
    cases.push_back(std::move(c));
  }
  return cases;
}

void save_manifest(const std::vector<EvalCaseData>& cases, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "frames");
  std::vector<json> rows;
  rows.reserve(cases.size());
  for (const EvalCaseData& c : cases) {
    io::write_msf1(dir / c.meta.prompt_frames_path, c.prompt_frames);
    io::write_msf1(dir / c.meta.reference_frames_path, c.reference_frames);
    rows.push_back({{"id", c.meta.id},
                    {"prompt_frames_path", c.meta.prompt_frames_path},
                    {"prompt_text", c.meta.prompt_text},
                    {"target_text", c.meta.target_text},
                    {"reference_frames_path", c.meta.reference_frames_path},
                    {"speaker_id", c.meta.speaker_id},
                    {"emotion", c.meta.emotion}});
  }
  io::write_jsonl(dir / "manifest.jsonl", rows);
}

std::vector<EvalCaseData> load_manifest(const std::filesystem::path& dir) {
  const auto rows = io::read_jsonl(dir / "manifest.jsonl");
  std::vector<EvalCaseData> cases;
  cases.reserve(rows.size());
  for (const json& r : rows) {
    EvalCaseData c;
    c.meta.id = r.at("id");
    c.meta.prompt_frames_path = r.at("prompt_frames_path");
    c.meta.prompt_text = r.at("prompt_text");
    c.meta.target_text = r.at("target_text");
    c.meta.reference_frames_path = r.at("reference_frames_path");
    c.meta.speaker_id = r.at("speaker_id");
    c.meta.emotion = r.value("emotion", "neutral");
    c.prompt_frames = io::read_msf1(dir / c.meta.prompt_frames_path);
    c.reference_frames = io::read_msf1(dir / c.meta.reference_frames_path);
    cases.push_back(std::move(c));
  }
  return cases;
}

std::string manifest_hash(const std::vector<EvalCaseData>& cases) {
  std::string acc;
  for (const EvalCaseData& c : cases) {
    acc += c.meta.id;
    acc += '|';
    acc += c.meta.prompt_text;
    acc += '|';
    acc += c.meta.target_text;
    acc += '|';
    acc += c.meta.speaker_id;
    acc += '|';
    acc += c.meta.emotion;
    acc += '\n';
  }
  return io::hash_bytes(acc);
}

json MetricReport::to_json() const {
  json per_case = json::array();
  for (const CaseResult& r : cases)
    per_case.push_back({{"id", r.id},
                        {"wer", r.wer},
                        {"sim", r.sim},
                        {"emotion_ok", r.emotion_ok},
                        {"failed", r.failed}});
  return json{{"system", system},
              {"manifest_hash", manifest_hash},
              {"cases", per_case},
              {"mean_wer", mean_wer},
              {"mean_sim", mean_sim},
              {"emotion_accuracy", emotion_accuracy},
              {"failed_cases", failed_cases}};
}

MetricReport MetricReport::from_json(const json& j) {
  MetricReport r;
  r.system = j.at("system");
  r.manifest_hash = j.at("manifest_hash");
  for (const json& c : j.at("cases")) {
    CaseResult cr;
    cr.id = c.at("id");
    cr.wer = c.at("wer");
    cr.sim = c.at("sim");
    cr.emotion_ok = c.at("emotion_ok");
    cr.failed = c.at("failed");
    r.cases.push_back(std::move(cr));
  }
  r.mean_wer = j.at("mean_wer");
  r.mean_sim = j.at("mean_sim");
  r.emotion_accuracy = j.at("emotion_accuracy");
  r.failed_cases = j.at("failed_cases");
  return r;
}

void MetricReport::finalize() {
  double wer_sum = 0.0, sim_sum = 0.0;
  int ok = 0, emo = 0;
  failed_cases = 0;
  for (const CaseResult& r : cases) {
    if (r.failed) {
      ++failed_cases;
      continue;
    }
    wer_sum += r.wer;
    sim_sum += r.sim;
    emo += r.emotion_ok ? 1 : 0;
    ++ok;
  }
  mean_wer = ok > 0 ? wer_sum / ok : 0.0;
  mean_sim = ok > 0 ? sim_sum / ok : 0.0;
  emotion_accuracy = ok > 0 ? static_cast<double>(emo) / ok : 0.0;
}

MetricReport run_icl_eval(const std::vector<EvalCaseData>& cases, const IclSystem& system,
                          const WorldBasis& world) {
  MetricReport report;
  report.system = system.name;
  report.manifest_hash = manifest_hash(cases);
  for (const EvalCaseData& c : cases) {
    CaseResult r;
    r.id = c.meta.id;
    try {
      const Mat out = system.synthesize(c);
      const auto target = corpus::text_from_string(c.meta.target_text, world.dims.num_symbols);
      r.wer = wer_proxy(target, corpus::oracle_decode_text(out, world));
      r.sim = sim_metric(corpus::oracle_speaker_embedding(out, world),
                         corpus::oracle_speaker_embedding(c.prompt_frames, world));
      r.emotion_ok = corpus::emotion_name(corpus::oracle_emotion_classify(out, world)) ==
                     c.meta.emotion;
    } catch (const std::exception&) {
      r.failed = true;
    }
    report.cases.push_back(std::move(r));
  }
  report.finalize();
  return report;
}

std::vector<std::vector<int>> make_hard_set(const HardSetConfig& config, int num_symbols) {
  if (config.size <= 0 || config.max_len <= 1)
    throw ValidationError("hard set config sizes must be positive");
  Rng rng = Rng::fork(config.seed, 0xa2d);
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<size_t>(config.size));
  for (int i = 0; i < config.size; ++i) {
    std::vector<int> text;
    switch (i % 4) {
      case 0: {  // long single-symbol run
        const int sym = rng.uniform_int(0, num_symbols - 1);
        text.assign(static_cast<size_t>(rng.uniform_int(config.max_len / 2, config.max_len)), sym);
        break;
      }
      case 1: {  // repeated n-gram
        const int n = rng.uniform_int(2, 3);
        std::vector<int> gram(static_cast<size_t>(n));
        for (int& s : gram) s = rng.uniform_int(0, num_symbols - 1);
        while (static_cast<int>(text.size()) + n <= config.max_len)
          text.insert(text.end(), gram.begin(), gram.end());
        break;
      }
      case 2: {  // alternating two-symbol twister
        const int a = rng.uniform_int(0, num_symbols - 1);
        int b = rng.uniform_int(0, num_symbols - 1);
        if (b == a) b = (a + 1) % num_symbols;
        for (int k = 0; k < config.max_len; ++k) text.push_back(k % 2 == 0 ? a : b);
        break;
      }
      default: {  // maximal-length random text
        text.resize(static_cast<size_t>(config.max_len));
        for (int& s : text) s = rng.uniform_int(0, num_symbols - 1);
        break;
      }
    }
    out.push_back(std::move(text));
  }
  return out;
}

FrameRecognizer FrameRecognizer::train(const std::vector<Mat>& utterance_frames,
                                       const std::vector<std::vector<int>>& frame_labels,
                                       int frame_dim, int num_classes,
                                       const FrameRecognizerConfig& config) {
  if (utterance_frames.empty()) throw DataError("recognizer training set is empty");
  if (utterance_frames.size() != frame_labels.size())
    throw ShapeError("recognizer: frames/labels count mismatch");
  Index total = 0;
  for (size_t i = 0; i < utterance_frames.size(); ++i) {
    if (static_cast<size_t>(utterance_frames[i].rows()) != frame_labels[i].size())
      throw ShapeError("recognizer: per-frame label length mismatch");
    total += utterance_frames[i].rows();
  }
  Mat x(total, frame_dim);
  std::vector<int> y(static_cast<size_t>(total));
  Index at = 0;
  for (size_t i = 0; i < utterance_frames.size(); ++i) {
    x.middleRows(at, utterance_frames[i].rows()) = utterance_frames[i];
    for (Index t = 0; t < utterance_frames[i].rows(); ++t)
      y[static_cast<size_t>(at + t)] = frame_labels[i][static_cast<size_t>(t)];
    at += utterance_frames[i].rows();
  }

  FrameRecognizer rec;
  rec.num_classes_ = num_classes;
  Rng rng(Rng::splitmix(config.seed ^ 0xa5a5));
  rec.l1_ = nn::make_linear(rec.params_, "r1", frame_dim, config.hidden, rng);
  rec.l2_ = nn::make_linear(rec.params_, "r2", config.hidden, num_classes, rng);
  nn::AdamConfig acfg;
  acfg.lr = config.lr;
  nn::Adam opt(rec.params_.all(), acfg);

  for (int step = 0; step < config.train_steps; ++step) {
    Mat batch(config.batch_size, frame_dim);
    std::vector<int> targets(static_cast<size_t>(config.batch_size));
    for (int b = 0; b < config.batch_size; ++b) {
      const auto idx = rng.below(static_cast<uint64_t>(total));
      batch.row(b) = x.row(static_cast<Index>(idx));
      targets[static_cast<size_t>(b)] = y[idx];
    }
    ag::Tape tape;
    ag::Var logits = nn::linear(ag::gelu(nn::linear(tape.constant(batch), rec.l1_)), rec.l2_);
    ag::Var loss = ag::weighted_cross_entropy(logits, targets, Vec::Ones(config.batch_size),
                                              static_cast<Scalar>(config.batch_size));
    if (!std::isfinite(loss.value()(0, 0)))
      throw TrainingError("recognizer loss diverged at step " + std::to_string(step));
    opt.zero_grads();
    tape.backward(loss);
    opt.step(nn::cosine_lr_scale(step, config.train_steps));
  }
  return rec;
}

std::vector<int> FrameRecognizer::transcribe(const Mat& frames) const {
  Mat h = nn::linear_infer(frames, l1_);
  constexpr Scalar c = 0.7978845608028654f, a = 0.044715f;
  h = (0.5f * h.array() * (1 + (c * (h.array() + a * h.array().cube())).tanh())).matrix();
  const Mat logits = nn::linear_infer(h, l2_);
  std::vector<int> out;
  int prev = -1;
  const int boundary = num_classes_ - 1;  // last class is the boundary symbol
  for (Index t = 0; t < logits.rows(); ++t) {
    Index arg = 0;
    logits.row(t).maxCoeff(&arg);
    const int s = static_cast<int>(arg);
    if (s != prev && s != boundary) out.push_back(s);
    prev = s;
  }
  return out;
}

json ShuffledAsrReport::to_json() const {
  return json{{"real_clean_wer", real_clean_wer},
              {"real_noisy_wer", real_noisy_wer},
              {"synthetic_clean_wer", synthetic_clean_wer},
              {"synthetic_noisy_wer", synthetic_noisy_wer},
              {"derangement_fixed_points", derangement_fixed_points}};
}

namespace {

std::vector<std::vector<int>> span_labels(const Utterance& u) {
  std::vector<int> labels(static_cast<size_t>(u.length()));
  for (const corpus::SymbolSpan& span : u.spans)
    for (int t = span.start; t < span.end; ++t) labels[static_cast<size_t>(t)] = span.symbol;
  return {labels};
}

double corpus_wer(const FrameRecognizer& rec, const std::vector<Utterance>& eval_set) {
  double sum = 0.0;
  for (const Utterance& u : eval_set) sum += wer_proxy(u.spec.text, rec.transcribe(u.frames));
  return sum / static_cast<double>(eval_set.size());
}

}  // namespace

ShuffledAsrReport shuffled_asr_experiment(const WorldBasis& world, const ShuffledAsrConfig& config,
                                          const PromptedSynthesisFn& synthesize) {
  if (config.corpus_size < 2)
    throw DataError("shuffled ASR needs at least 2 utterances for a derangement");

  corpus::CorpusConfig ccfg;
  ccfg.num_utterances = config.corpus_size;
  ccfg.num_speakers = config.num_speakers;
  ccfg.noise_sigma = config.clean_sigma;
  const corpus::Corpus train = corpus::sample_corpus(world, ccfg, config.seed);

  // Rotation by one position is a derangement: utterance i speaks the text of
  // utterance i+1. Text and speaker multisets are conserved by construction.
  const size_t n = train.utterances.size();
  ShuffledAsrReport report;
  std::vector<Mat> synth_frames(n);
  std::vector<std::vector<int>> synth_labels(n);
  for (size_t i = 0; i < n; ++i) {
    const size_t j = (i + 1) % n;
    if (j == i) ++report.derangement_fixed_points;
    const Mat out = synthesize(train.utterances[i], train.utterances[j].spec.text);
    synth_frames[i] = out;
    // Frame labels for synthetic audio come from the exact frame analyzer
    // (the forced-alignment stand-in).
    synth_labels[i] = corpus::oracle_frame_symbols(out, world);
  }

  std::vector<Mat> real_frames(n);
  std::vector<std::vector<int>> real_labels(n);
  for (size_t i = 0; i < n; ++i) {
    real_frames[i] = train.utterances[i].frames;
    real_labels[i] = span_labels(train.utterances[i])[0];
  }

  const int num_classes = world.dims.num_symbols + 1;
  const FrameRecognizer real_rec = FrameRecognizer::train(real_frames, real_labels,
                                                          world.dims.frame_dim, num_classes,
                                                          config.recognizer);
  const FrameRecognizer synth_rec = FrameRecognizer::train(synth_frames, synth_labels,
                                                           world.dims.frame_dim, num_classes,
                                                           config.recognizer);

  corpus::CorpusConfig eval_cfg = ccfg;
  eval_cfg.num_utterances = config.eval_size;
  eval_cfg.noise_sigma = config.clean_sigma;
  const corpus::Corpus clean = corpus::sample_corpus(world, eval_cfg, config.seed + 1);
  eval_cfg.noise_sigma = config.noisy_sigma;
  const corpus::Corpus noisy = corpus::sample_corpus(world, eval_cfg, config.seed + 2);

  report.real_clean_wer = corpus_wer(real_rec, clean.utterances);
  report.real_noisy_wer = corpus_wer(real_rec, noisy.utterances);
  report.synthetic_clean_wer = corpus_wer(synth_rec, clean.utterances);
  report.synthetic_noisy_wer = corpus_wer(synth_rec, noisy.utterances);
  return report;
}

std::vector<ProjectionRow> project_embeddings(const std::vector<DVec>& embeddings,
                                              const std::vector<std::string>& speaker_ids,
                                              const std::vector<std::string>& sources) {
  if (embeddings.size() < 2) throw DataError("projection needs at least 2 embeddings");
  if (embeddings.size() != speaker_ids.size() || embeddings.size() != sources.size())
    throw ShapeError("projection: label count mismatch");
  const Index n = static_cast<Index>(embeddings.size());
  const Index d = embeddings.front().size();
  DMat x(n, d);
  for (Index i = 0; i < n; ++i) x.row(i) = embeddings[static_cast<size_t>(i)].transpose();
  const DVec mean = x.colwise().mean().transpose();
  x.rowwise() -= mean.transpose();
  const DMat cov = x.transpose() * x / static_cast<double>(n - 1);
  if (cov.cwiseAbs().maxCoeff() < 1e-12)
    throw DataError("projection: all embeddings identical (rank-deficient input)");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  DMat components(d, 2);
  components.col(0) = solver.eigenvectors().col(d - 1);
  components.col(1) = solver.eigenvectors().col(d >= 2 ? d - 2 : d - 1);
  // Sign convention: the largest-magnitude coordinate of each component is
  // positive.
  for (int c = 0; c < 2; ++c) {
    Index arg = 0;
    components.col(c).cwiseAbs().maxCoeff(&arg);
    if (components(arg, c) < 0) components.col(c) *= -1.0;
  }
  const DMat projected = x * components;
  std::vector<ProjectionRow> rows(static_cast<size_t>(n));
  for (Index i = 0; i < n; ++i) {
    rows[static_cast<size_t>(i)] = {speaker_ids[static_cast<size_t>(i)],
                                    sources[static_cast<size_t>(i)], projected(i, 0),
                                    projected(i, 1)};
  }
  return rows;
}

void write_projection_csv(const std::vector<ProjectionRow>& rows,
                          const std::filesystem::path& path) {
  std::string out = "speaker_id,source,x,y\n";
  char buf[64];
  for (const ProjectionRow& r : rows) {
    out += r.speaker_id;
    out += ',';
    out += r.source;
    std::snprintf(buf, sizeof(buf), ",%.9g,%.9g\n", r.x, r.y);
    out += buf;
  }
  io::write_text_file(path, out);
}

}  // namespace ttslab::eval
