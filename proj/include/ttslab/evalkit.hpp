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

#ifndef TTSLAB_EVALKIT_HPP_
#define TTSLAB_EVALKIT_HPP_

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ttslab/corpus.hpp"
#include "ttslab/io.hpp"
#include "ttslab/nn.hpp"

namespace ttslab::eval {

// --- Metrics -----------------------------------------------------------------

// Symbol-level edit distance over the synthetic alphabet, normalized by the
// reference length. Can exceed 1.
double wer_proxy(const std::vector<int>& reference, const std::vector<int>& hypothesis);
int64_t edit_distance(const std::vector<int>& a, const std::vector<int>& b);

// Cosine similarity of two nonzero embeddings.
double sim_metric(const DVec& a, const DVec& b);

// --- CMOS bookkeeping ---------------------------------------------------------

enum class PresentationOrder { kSystemFirst, kHumanFirst };

struct CmosRecord {
  std::string case_id;
  std::string rater_id;
  int rating = 0;  // -2..+2
  PresentationOrder order = PresentationOrder::kSystemFirst;
};

struct CmosAggregate {
  double cmos = 0.0;       // mean of canonical (system-first) ratings
  double win = 0.0;        // fraction > 0
  double tie = 0.0;        // fraction == 0
  double loss = 0.0;       // fraction < 0
  int count = 0;
  bool significant = false;  // |cmos| >= 0.1, reported as an annotation only
};

CmosAggregate cmos_aggregate(const std::vector<CmosRecord>& records);
std::vector<CmosRecord> read_cmos_csv(const std::filesystem::path& path);

// --- Manifests and reports -----------------------------------------------------

struct EvalCase {
  std::string id;
  std::string prompt_frames_path;
  std::string prompt_text;
  std::string target_text;
  std::string reference_frames_path;  // ground-truth target rendering
  std::string speaker_id;
  std::string emotion = "neutral";
};

struct EvalCaseData {
  EvalCase meta;
  Mat prompt_frames;
  Mat reference_frames;
};

struct ManifestConfig {
  int num_cases = 200;
  int min_prompt_frames = 150;
  int max_prompt_frames = 1000;
  int min_prompt_symbols = 26;
  int max_prompt_symbols = 40;
  int min_target_symbols = 5;
  int max_target_symbols = 12;
  int num_speakers = 40;
  double noise_sigma = 0.05;
  bool emotion_controlled = false;  // round-robin emotions + matching prompts
};

// Prompt and reference share a speaker; prompt duration is kept within the
// configured bounds by construction.
std::vector<EvalCaseData> make_icl_manifest(const corpus::WorldBasis& world,
                                            const ManifestConfig& config, uint64_t seed);

void save_manifest(const std::vector<EvalCaseData>& cases, const std::filesystem::path& dir);
std::vector<EvalCaseData> load_manifest(const std::filesystem::path& dir);
std::string manifest_hash(const std::vector<EvalCaseData>& cases);

struct CaseResult {
  std::string id;
  double wer = 0.0;
  double sim = 0.0;
  bool emotion_ok = false;
  bool failed = false;
};

struct MetricReport {
  std::string system;
  std::string manifest_hash;
  std::vector<CaseResult> cases;
  double mean_wer = 0.0;
  double mean_sim = 0.0;
  double emotion_accuracy = 0.0;
  int failed_cases = 0;

  io::json to_json() const;
  static MetricReport from_json(const io::json& j);
  // Recomputes aggregates from the per-case records.
  void finalize();
};

// A system maps an eval case to synthesized target frames.
using SynthesisFn = std::function<Mat(const EvalCaseData&)>;

struct IclSystem {
  std::string name;
  SynthesisFn synthesize;
};

// Runs one system over the manifest: WER against the target text, SIM against
// the prompt speaker, emotion match against the case label. Failed cases are
// recorded, never skipped.
MetricReport run_icl_eval(const std::vector<EvalCaseData>& cases, const IclSystem& system,
                          const corpus::WorldBasis& world);

// --- Hard set -------------------------------------------------------------------

struct HardSetConfig {
  int size = 400;
  int max_len = 12;
  uint64_t seed = 97;
};

// Deterministic stress texts: long single-symbol runs, repeated n-grams,
// two-symbol tongue twisters, maximal-length strings.
std::vector<std::vector<int>> make_hard_set(const HardSetConfig& config, int num_symbols);

// --- Speech-understanding experiment ----------------------------------------------

struct FrameRecognizerConfig {
  int hidden = 64;
  int train_steps = 1500;
  int batch_size = 512;
  double lr = 2e-3;
  uint64_t seed = 11;
};

// Toy ASR: per-frame classifier over symbols (incl. boundary), run-length
// collapse decoding.
class FrameRecognizer {
 public:
  static FrameRecognizer train(const std::vector<Mat>& utterance_frames,
                               const std::vector<std::vector<int>>& frame_labels,
                               int frame_dim, int num_classes,
                               const FrameRecognizerConfig& config);
  std::vector<int> transcribe(const Mat& frames) const;  // boundary dropped

 private:
  FrameRecognizer() = default;
  int num_classes_ = 0;
  nn::ParamStore params_;
  nn::LinearP l1_, l2_;
};

struct ShuffledAsrConfig {
  int corpus_size = 400;
  int eval_size = 120;
  double clean_sigma = 0.05;
  double noisy_sigma = 0.2;
  int num_speakers = 40;
  FrameRecognizerConfig recognizer;
  uint64_t seed = 1234;
};

struct ShuffledAsrReport {
  double real_clean_wer = 0.0;
  double real_noisy_wer = 0.0;
  double synthetic_clean_wer = 0.0;
  double synthetic_noisy_wer = 0.0;
  int derangement_fixed_points = 0;  // must be 0
  io::json to_json() const;
};

// Synthesizes a shuffled twin of a fresh corpus via `synthesize(prompt, text)`,
// trains one recognizer per corpus with identical hyperparameters, and
// evaluates both on clean and noisy sets.
using PromptedSynthesisFn =
    std::function<Mat(const corpus::Utterance& prompt, const std::vector<int>& text)>;
ShuffledAsrReport shuffled_asr_experiment(const corpus::WorldBasis& world,
                                          const ShuffledAsrConfig& config,
                                          const PromptedSynthesisFn& synthesize);

// --- Embedding projection ------------------------------------------------------------

struct ProjectionRow {
  std::string speaker_id;
  std::string source;  // "real" or "synthesized"
  double x = 0.0;
  double y = 0.0;
};

// Top-2 PCA with the sign convention that each component's
// largest-magnitude coordinate is positive.
std::vector<ProjectionRow> project_embeddings(const std::vector<DVec>& embeddings,
                                              const std::vector<std::string>& speaker_ids,
                                              const std::vector<std::string>& sources);
void write_projection_csv(const std::vector<ProjectionRow>& rows,
                          const std::filesystem::path& path);

}  // namespace ttslab::eval

#endif  // TTSLAB_EVALKIT_HPP_
