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

#ifndef TTSLAB_FACTORIZE_HPP_
#define TTSLAB_FACTORIZE_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "ttslab/acoustic.hpp"
#include "ttslab/corpus.hpp"

// Self-distillation for timbre disentanglement: perturb the diffusion timbre
// condition to build (original, timbre-shifted) pairs sharing content, retrain
// the diffusion decoder on them, and run zero-shot voice conversion.
namespace ttslab::factorize {

struct AcousticStack {
  const vq::Tokenizer* tokenizer = nullptr;
  const acoustic::Vocoder* vocoder = nullptr;
  const acoustic::DiffusionModel* diffusion = nullptr;

  void require() const;
};

struct PerturbConfig {
  enum class Mode { kSwap, kJitter };
  Mode mode = Mode::kSwap;
  double jitter_angle_deg = 75.0;
  acoustic::FlowConfig flow;          // resynthesis settings
  double max_content_wer = 0.05;      // pair invariant: content preserved
  double max_timbre_cos = 0.5;        // pair invariant: timbre actually shifted
  uint64_t seed = 43;
};

struct DistillPair {
  // S_ori
  Mat ori_frames;
  Mat ori_latents;
  std::vector<int> ori_tokens;
  DVec timbre_ref;  // oracle embedding of the original
  // S_alt: same content and token length, shifted timbre
  Mat alt_frames;
  Mat alt_latents;
  std::vector<int> alt_tokens;
  // provenance
  std::string source_id;
  uint64_t perturb_seed = 0;
};

struct PerturbOutcome {
  bool accepted = false;
  std::string rejection_reason;  // empty when accepted
  double content_wer = 0.0;
  double timbre_cos = 0.0;
  DistillPair pair;  // fully populated only when accepted
};

// Resynthesizes one utterance through the base diffusion with a perturbed
// timbre reference. Swap mode replaces the reference with another speaker's
// embedding from `timbre_pool`; jitter rotates it by the configured angle.
PerturbOutcome perturb_timbre_generate(const corpus::Utterance& utterance,
                                       const PerturbConfig& config, const AcousticStack& stack,
                                       const std::vector<DVec>& timbre_pool,
                                       const corpus::WorldBasis& world, uint64_t pair_seed);

struct DistillSetStats {
  int attempted = 0;
  int accepted = 0;
  int rejected_content = 0;
  int rejected_timbre = 0;
  double acceptance_rate() const {
    return attempted > 0 ? static_cast<double>(accepted) / attempted : 0.0;
  }
};

// Draws utterances until `target_pairs` valid pairs exist (every emitted pair
// re-checked against the invariants). Throws with statistics when the corpus
// cannot yield enough.
std::vector<DistillPair> build_distill_set(const std::vector<corpus::Utterance>& utterances,
                                           const PerturbConfig& config,
                                           const AcousticStack& stack,
                                           const corpus::WorldBasis& world, int target_pairs,
                                           DistillSetStats* stats = nullptr);

// Re-validates one pair against the content/timbre invariants.
bool validate_pair(const DistillPair& pair, const PerturbConfig& config,
                   const corpus::WorldBasis& world, double* content_wer = nullptr,
                   double* timbre_cos = nullptr);

// Retrains a diffusion model from scratch on (tokens of S_alt, timbre of
// S_ori) -> latents of S_ori. The returned model relies on the explicit
// timbre reference. `fine_tune_from` warm-starts from the base instead.
acoustic::DiffusionModel train_distilled_diffusion(const std::vector<DistillPair>& pairs,
                                                   acoustic::DiffusionConfig config,
                                                   const acoustic::DiffusionModel* fine_tune_from =
                                                       nullptr);

// Zero-shot VC: tokenize source, run the (distilled) diffusion with the
// target's oracle timbre embedding, vocoder-decode. Output length equals the
// source length exactly.
Mat voice_convert(const Mat& source_frames, const Mat& target_reference_frames,
                  const AcousticStack& stack, const corpus::WorldBasis& world,
                  const acoustic::FlowConfig& flow);

// Manifest persistence: JSON Lines index plus MSF1 blobs per pair.
void save_distill_set(const std::vector<DistillPair>& pairs, const std::filesystem::path& dir);
std::vector<DistillPair> load_distill_set(const std::filesystem::path& dir);

}  // namespace ttslab::factorize

#endif  // TTSLAB_FACTORIZE_HPP_
