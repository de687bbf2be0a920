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

#ifndef TTSLAB_HARNESS_HPP_
#define TTSLAB_HARNESS_HPP_

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "ttslab/adapt.hpp"
#include "ttslab/dit.hpp"
#include "ttslab/evalkit.hpp"
#include "ttslab/factorize.hpp"
#include "ttslab/pipeline.hpp"

// Experiment orchestration: validated run configuration, the append-only
// run ledger, and the stage graph covering every supported experiment.
namespace ttslab::harness {

using io::json;

struct RunConfig {
  corpus::WorldConfig world;
  uint64_t world_seed = 7;

  corpus::CorpusConfig corpus;
  uint64_t corpus_seed = 100;

  vq::TokenizerConfig tokenizer;
  acoustic::VocoderConfig vocoder;

  lm::LmConfig lm;
  struct LmData {
    int pairs = 2600;
    int prompt_min = 4;
    int prompt_max = 34;
    int target_min = 3;
    int target_max = 12;
    uint64_t seed = 300;
  } lm_data;

  acoustic::DiffusionConfig diffusion;
  struct DiffusionData {
    int examples = 2200;
    uint64_t seed = 301;
  } diffusion_data;

  dit::DitConfig dit;
  struct DitData {
    int examples = 2200;
    int text_min = 6;
    int text_max = 44;
    uint64_t seed = 302;
  } dit_data;

  lm::SamplerConfig sampler;       // default sampler (temperature 0.9, top_k 16)
  lm::SamplerConfig eval_sampler;  // deployment sampler used by the Table-1 analogs
  acoustic::FlowConfig flow;

  eval::ManifestConfig manifest;
  uint64_t manifest_seed = 900;

  struct SftStage {
    int speakers = 5;
    int per_speaker = 80;
    adapt::FinetuneConfig finetune;
    uint64_t data_seed = 400;
    int eval_generations = 100;
    int eval_seeds = 3;
  } sft;

  struct IftStage {
    int per_speaker = 60;
    adapt::FinetuneConfig finetune;
    uint64_t data_seed = 401;
    int eval_generations = 100;
  } ift;

  struct RlStage {
    std::string kind = "sim_wer";  // or "ser"
    adapt::RLConfig rl;
    double alpha = 1.0;
    double lambda = 0.5;
    int train_prompts = 24;
    int eval_prompts = 32;
    int eval_samples = 2;  // rollouts per eval prompt
    uint64_t data_seed = 402;
  } rl;

  struct DistillStage {
    int pairs = 220;
    std::string mode = "swap";
    double jitter_angle_deg = 75.0;
    acoustic::DiffusionConfig train;
    int eval_cases = 40;
    uint64_t seed = 500;
  } distill;

  struct StreamStage {
    int chunk = 8;
    int cases = 8;
    uint64_t seed = 600;
  } stream;

  eval::ShuffledAsrConfig shuffle_asr;
  eval::HardSetConfig hard_set;

  struct EditStage {
    int cases = 25;
    std::vector<double> mask_rates = {0.2, 0.4, 0.6};
    uint64_t seed = 700;
  } edit;

  struct RateStage {
    int cases = 20;
    std::vector<double> rates = {0.5, 1.0, 1.5, 2.0};
    uint64_t seed = 701;
  } rate_edit;

  static RunConfig defaults();
  // Strict parse: unknown keys are rejected with their path; missing keys
  // take defaults; explicit seeds are required to be nonnegative.
  static RunConfig from_json(const json& j);
  json to_json() const;
  // Dotted-path override, e.g. "lm.train_steps=400".
  void apply_override(const std::string& key_eq_value);
  // Re-derives every stage seed from one base seed.
  void reseed(uint64_t base_seed);
};

RunConfig load_config(const std::filesystem::path& path);

// --- Ledger ----------------------------------------------------------------------

struct LedgerEntry {
  std::string config_hash;
  std::map<std::string, std::string> input_hashes;    // dependency stage -> hash
  std::map<std::string, std::string> output_hashes;   // artifact path -> hash
  std::string metrics_path;
  double wall_time_s = 0.0;
  int verified_runs = 0;
};

class Ledger {
 public:
  explicit Ledger(std::filesystem::path path);
  bool has(const std::string& stage) const;
  const LedgerEntry& at(const std::string& stage) const;
  void put(const std::string& stage, LedgerEntry entry);
  void bump_verified(const std::string& stage);
  void save() const;
  // Every artifact under the root must be reachable from the ledger.
  std::vector<std::string> find_orphans(const std::filesystem::path& root) const;
  std::string combined_hash(const std::string& stage) const;

 private:
  std::filesystem::path path_;
  std::map<std::string, LedgerEntry> stages_;
};

// --- Stages ----------------------------------------------------------------------

extern const std::vector<std::string> kStageNames;
const std::vector<std::string>& stage_dependencies(const std::string& stage);

class Harness {
 public:
  Harness(RunConfig config, std::filesystem::path root);

  // Executes the stage (or verifies the cached result). Returns true when
  // work was done, false for a verified no-op.
  bool run_stage(const std::string& name);

  const RunConfig& config() const { return config_; }
  const std::filesystem::path& root() const { return root_; }
  Ledger& ledger() { return ledger_; }

  // Lazy artifact accessors; throw DependencyError when the producing stage
  // has not run.
  const corpus::WorldBasis& world();
  const vq::Tokenizer& tokenizer();
  const acoustic::Vocoder& vocoder();
  const lm::TokenLm& base_lm();
  const lm::TokenLm& sft_lm();
  const lm::TokenLm& ift_lm();
  const lm::TokenLm& rl_lm();
  const acoustic::DiffusionModel& diffusion();
  const acoustic::DiffusionModel& distilled_diffusion();
  const dit::DitModel& dit_model();
  const dit::DurationStats& duration_stats();
  pipeline::SynthStack stack();

  std::filesystem::path report_path(const std::string& stage) const;
  json read_report(const std::string& stage) const;

  // Shared data builders (also used by the acceptance suite).
  corpus::Corpus training_corpus();
  std::vector<lm::MixedSequence> build_icl_training_sequences();
  std::vector<eval::EvalCaseData> icl_manifest();
  adapt::SpeakerRegistry registry() const;
  std::vector<std::string> registered_speaker_ids() const;

  Mat synthesize_icl_case(const eval::EvalCaseData& c, const lm::TokenLm& model,
                          const lm::SamplerConfig& sampler, uint64_t seed);

  // Experiment drivers shared by the stages and the acceptance suite.
  json run_rl_experiment(const std::string& kind, uint64_t seed, adapt::RlReport* log,
                         std::unique_ptr<lm::TokenLm>& tuned_out);
  json run_sft_eval(const lm::TokenLm& sft_model, uint64_t seed);
  json run_ift_eval(const lm::TokenLm& ift_model, const lm::TokenLm& sft_model, uint64_t seed);
  json run_vc_experiment();
  json run_dit_eval();
  json run_edit_experiment();
  json run_rate_edit_experiment();
  json run_stream_bench();
  json run_shuffle_asr();
  std::vector<adapt::RlPrompt> build_rl_prompts(const std::string& kind, bool eval_split,
                                                int count, uint64_t seed);
  json evaluate_rl_policy(const lm::TokenLm& policy, const std::string& kind,
                          const std::vector<adapt::RlPrompt>& prompts, uint64_t seed);

 private:
  struct StageOutcome {
    json metrics;
    std::vector<std::filesystem::path> outputs;
  };
  StageOutcome execute(const std::string& name);
  std::string stage_config_hash(const std::string& name) const;

  StageOutcome stage_world();
  StageOutcome stage_train_tokenizer();
  StageOutcome stage_train_vocoder();
  StageOutcome stage_train_lm();
  StageOutcome stage_train_diffusion();
  StageOutcome stage_icl_eval();
  StageOutcome stage_sft();
  StageOutcome stage_ift();
  StageOutcome stage_rl();
  StageOutcome stage_distill();
  StageOutcome stage_vc();
  StageOutcome stage_train_dit();
  StageOutcome stage_dit_eval();
  StageOutcome stage_edit();
  StageOutcome stage_rate_edit();
  StageOutcome stage_stream_bench();
  StageOutcome stage_shuffle_asr();
  StageOutcome stage_hard_set();
  StageOutcome stage_report();

  RunConfig config_;
  std::filesystem::path root_;
  Ledger ledger_;

  // caches
  std::unique_ptr<corpus::WorldBasis> world_;
  std::unique_ptr<corpus::Corpus> corpus_cache_;
  std::unique_ptr<vq::Tokenizer> tokenizer_;
  std::unique_ptr<acoustic::Vocoder> vocoder_;
  std::unique_ptr<lm::TokenLm> base_lm_, sft_lm_, ift_lm_, rl_lm_;
  std::unique_ptr<acoustic::DiffusionModel> diffusion_, distilled_;
  std::unique_ptr<dit::DitModel> dit_;
  std::unique_ptr<dit::DurationStats> duration_stats_;
  std::unique_ptr<std::vector<eval::EvalCaseData>> manifest_cache_;
};

}  // namespace ttslab::harness

#endif  // TTSLAB_HARNESS_HPP_
