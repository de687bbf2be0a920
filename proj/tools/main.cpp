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

#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <iostream>

#include "ttslab/harness.hpp"

namespace {

using ttslab::harness::Harness;
using ttslab::harness::RunConfig;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitDependency = 3;
constexpr int kExitTraining = 4;
constexpr int kExitAcceptance = 5;

struct CommonOpts {
  std::string config_path;
  std::string root = "artifacts";
  int64_t seed = -1;
  std::vector<std::string> overrides;
};

RunConfig make_config(const CommonOpts& opts) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig::defaults()
                                           : ttslab::harness::load_config(opts.config_path);
  for (const std::string& ov : opts.overrides) cfg.apply_override(ov);
  if (opts.seed >= 0) cfg.reseed(static_cast<uint64_t>(opts.seed));
  return cfg;
}

bool any_failed_check(const ttslab::io::json& j) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (it.key() == "pass" && it.value().is_boolean() && !it.value().get<bool>()) return true;
      if (any_failed_check(it.value())) return true;
    }
  } else if (j.is_array()) {
    for (const auto& v : j)
      if (any_failed_check(v)) return true;
  }
  return false;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ttslab: synthetic-domain TTS modeling stack"};
  app.require_subcommand(1);

  CommonOpts opts;
  app.add_option("--config", opts.config_path, "JSON run configuration");
  app.add_option("--root", opts.root, "artifact root directory");
  app.add_option("--seed", opts.seed, "base seed; rederives every stage seed");
  app.add_option("--stage-override", opts.overrides,
                 "dotted config override, e.g. lm.train_steps=500");

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"world", "build the synthetic world basis"},
      {"train-tokenizer", "train the VQ speech tokenizer"},
      {"train-vocoder", "train the frame vocoder"},
      {"train-lm", "train the speech-token language model"},
      {"train-diffusion", "train the token-conditioned flow decoder"},
      {"icl-eval", "zero-shot continuation benchmark"},
      {"sft", "speaker fine-tuning"},
      {"ift", "instruction (emotion) fine-tuning"},
      {"rl", "REINFORCE post-training"},
      {"distill", "build timbre-shifted pairs and retrain the decoder"},
      {"vc", "zero-shot voice conversion benchmark"},
      {"train-dit", "train the duration-conditioned text-to-latent model"},
      {"dit-eval", "duration-conditioned model benchmark"},
      {"edit", "content editing benchmark"},
      {"rate-edit", "speaking-rate editing benchmark"},
      {"stream-bench", "streaming equivalence and latency benchmark"},
      {"shuffle-asr", "recognizer trained on shuffled synthetic speech"},
      {"hard-set", "emit the stress-text list"},
      {"report", "aggregate all stage reports"},
  };

  std::string requested;
  bool check_reports = false;
  for (const auto& [name, desc] : stages) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->fallthrough();  // common flags may follow the subcommand
    if (name == "report")
      sub->add_flag("--check", check_reports, "exit 5 when any recorded check failed");
    sub->callback([&requested, name = name]() { requested = name; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = make_config(opts);
    Harness harness(cfg, opts.root);
    const bool executed = harness.run_stage(requested);
    std::fprintf(stderr, "[%s] %s\n", requested.c_str(),
                 executed ? "done" : "verified (no-op)");
    if (requested == "report" && check_reports) {
      const auto summary = harness.read_report("report");
      if (any_failed_check(summary)) {
        std::fprintf(stderr, "[report] recorded checks contain failures\n");
        return kExitAcceptance;
      }
    }
    return kExitOk;
  } catch (const ttslab::TrainingError& e) {
    std::fprintf(stderr, "training error: %s\n", e.what());
    return kExitTraining;
  } catch (const ttslab::DependencyError& e) {
    std::fprintf(stderr, "dependency error: %s\n", e.what());
    return kExitDependency;
  } catch (const ttslab::ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  }
}
