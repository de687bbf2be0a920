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

#ifndef TTSLAB_DIT_HPP_
#define TTSLAB_DIT_HPP_

#include <filesystem>
#include <optional>
#include <vector>

#include "ttslab/acoustic.hpp"
#include "ttslab/corpus.hpp"
#include "ttslab/nn.hpp"

// Fully diffusion-based variant: text to vocoder latents end-to-end with an
// externally supplied total duration, no token LM and no per-symbol duration
// inputs anywhere. Alignment is learned through cross-attention.
namespace ttslab::dit {

struct DitCondition {
  std::vector<int> text;  // symbol ids
  std::optional<Mat> prompt_latents;  // prefix sugar for inpainting
  Index total_duration = 0;  // frames; the only duration input
  struct Inpaint {
    Mat observed;                    // total_duration x d_l
    std::vector<uint8_t> mask;       // true = to generate
  };
  std::optional<Inpaint> inpaint;
  std::optional<DVec> timbre_ref;

  void validate() const;
};

struct EditRequest {
  enum class Kind { kContent, kRate };
  Kind kind = Kind::kContent;
  // Content editing
  std::vector<int> replacement_text;  // full-utterance text after the edit
  std::vector<uint8_t> frame_mask;    // true = regenerate
  // Rate editing
  double rate = 1.0;

  void validate() const;
  io::json to_json() const;
  static EditRequest from_json(const io::json& j);
};

struct DitConfig {
  int layers = 4;
  int width = 128;
  int heads = 4;
  int mlp_hidden = 512;
  int num_symbols = 24;
  int latent_dim = 16;
  int timbre_dim = 4;
  int max_len = 1100;
  double p_drop = 0.1;    // text dropout for CFG
  double p_timbre = 0.5;
  double mask_lo = 0.1;   // masked-span fraction range during training
  double mask_hi = 0.7;
  int train_steps = 3000;
  int batch_size = 8;
  double lr = 1e-3;
  int warmup = 50;
  uint64_t seed = 31;

  void validate() const;
};

struct DitExample {
  std::vector<int> text;
  Mat latents;
  DVec timbre;  // may be empty
};

struct DitReport {
  std::vector<double> smoothed_loss;
  double final_loss = 0.0;
};

class DitModel {
 public:
  explicit DitModel(const DitConfig& config);

  DitReport train(const std::vector<DitExample>& examples);

  // Output has exactly cond.total_duration rows; observed positions are
  // overwritten with their given values in the final output.
  Mat generate(const DitCondition& cond, const acoustic::FlowConfig& flow) const;

  const DitConfig& config() const { return config_; }
  void save(const std::filesystem::path& path) const;
  static DitModel load(const std::filesystem::path& path);

 private:
  ag::Var forward_velocity(ag::Tape& tape, const Mat& x_tau, double tau,
                           const std::vector<int>& text, const Mat& observed,
                           const Vec& observed_flag, const DVec* timbre, bool drop_text) const;
  Mat velocity_infer(const Mat& x_tau, double tau, const std::vector<int>& text,
                     const Mat& observed, const Vec& observed_flag, const DVec* timbre,
                     bool drop_text) const;

  DitConfig config_;
  nn::ParamStore params_;
  ag::Param* text_emb_ = nullptr;  // V+1 rows; last is the null (dropped) text
  nn::LinearP text_proj_;
  nn::LinearP in_proj_;
  std::unique_ptr<nn::Transformer> tf_;
  nn::LinearP head_;
  Mat pos_enc_;
};

// --- Duration statistics ---------------------------------------------------------

struct DurationStats {
  std::vector<double> symbol_mean;  // per symbol, at rate 1 / neutral
  double boundary_mean = 1.0;

  io::json to_json() const;
  static DurationStats from_json(const io::json& j);
};

// Averages observed span lengths, normalized by each utterance's rate and
// emotion duration scale.
DurationStats fit_duration_stats(const std::vector<corpus::Utterance>& utterances,
                                 int num_symbols);

// round(rate_hint * (sum of symbol means + boundary means)); always >= 1.
Index estimate_total_duration(const std::vector<int>& text, double rate_hint,
                              const DurationStats& stats);

// --- Editing pipelines -------------------------------------------------------------

struct EditStack {
  const DitModel* dit = nullptr;
  const acoustic::Vocoder* vocoder = nullptr;
};

// Latent-encode, mask, regenerate, decode. Unmasked frames come back exactly;
// an all-false mask returns the original untouched. A 100% mask degenerates to
// plain generation (allowed).
Mat edit_content(const Mat& original_frames, const EditRequest& request, const EditStack& stack,
                 const acoustic::FlowConfig& flow, const DVec* timbre_ref = nullptr);

// Full regeneration at round(rate * T) frames, conditioned on the original
// text and a timbre reference taken from the original.
Mat edit_rate(const Mat& original_frames, const EditRequest& request,
              const std::vector<int>& original_text, const EditStack& stack,
              const acoustic::FlowConfig& flow, const DVec& timbre_ref);

}  // namespace ttslab::dit

#endif  // TTSLAB_DIT_HPP_
