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

#include <doctest.h>

#include <cmath>

#include "ttslab/acoustic.hpp"

using namespace ttslab;
using acoustic::DiffusionCondition;
using acoustic::DiffusionConfig;
using acoustic::DiffusionExample;
using acoustic::DiffusionModel;
using acoustic::FlowConfig;
using acoustic::Vocoder;
using acoustic::VocoderConfig;

namespace {

DiffusionConfig small_diffusion() {
  DiffusionConfig cfg;
  cfg.layers = 2;
  cfg.width = 32;
  cfg.heads = 2;
  cfg.mlp_hidden = 64;
  cfg.token_embed_dim = 8;
  cfg.codebook_size = 8;
  cfg.latent_dim = 4;
  cfg.timbre_dim = 3;
  cfg.max_len = 64;
  cfg.train_steps = 60;
  cfg.batch_size = 4;
  return cfg;
}

std::vector<DiffusionExample> toy_examples(const DiffusionConfig& cfg, int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<DiffusionExample> out;
  for (int i = 0; i < n; ++i) {
    DiffusionExample ex;
    const int tokens = rng.uniform_int(4, 12);
    ex.tokens.resize(static_cast<size_t>(tokens));
    for (int& t : ex.tokens) t = rng.uniform_int(0, cfg.codebook_size - 1);
    ex.latents = Mat(tokens * cfg.downsample, cfg.latent_dim);
    rng.fill_gaussian(ex.latents);
    ex.timbre = rng.unit_vector<double>(cfg.timbre_dim);
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

TEST_CASE("vocoder round trip on a constant signal is near-exact") {
  Mat constant(60, 16);
  constant.setConstant(0.7f);
  VocoderConfig cfg;
  cfg.train_steps = 400;
  cfg.batch_size = 64;
  cfg.holdout_fraction = 0.0;
  const Vocoder voc = Vocoder::train({constant}, cfg, 16);
  const Mat latents = voc.encode(constant);
  CHECK(latents.rows() == constant.rows());
  CHECK(latents.cols() == cfg.latent_dim);
  const Mat recon = voc.decode(latents);
  CHECK((recon - constant).squaredNorm() / constant.size() <= 1e-3);
}

TEST_CASE("vocoder checkpoint round trip") {
  Rng rng(4);
  Mat data(200, 16);
  rng.fill_gaussian(data);
  VocoderConfig cfg;
  cfg.train_steps = 100;
  const Vocoder voc = Vocoder::train({data}, cfg, 16);
  const auto dir = std::filesystem::temp_directory_path() / "ttslab_voc_test";
  std::filesystem::create_directories(dir);
  voc.save(dir / "voc.msc");
  const Vocoder back = Vocoder::load(dir / "voc.msc");
  CHECK((voc.encode(data) - back.encode(data)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("initial velocity loss sits near the variance of x1 - x0") {
  // For unit-variance targets and a near-zero initial network output, the
  // expected per-entry squared error of v* = x1 - x0 is 2.
  DiffusionConfig cfg = small_diffusion();
  cfg.train_steps = 1;
  cfg.warmup = 1;
  cfg.lr = 0.0;
  const auto examples = toy_examples(cfg, 64, 99);
  DiffusionModel model(cfg);
  acoustic::DiffusionReport rep = model.train(examples);
  CHECK(rep.final_loss == doctest::Approx(2.0).epsilon(0.15));
}

TEST_CASE("boundary dropout configs train without error") {
  for (double p : {0.0, 1.0}) {
    DiffusionConfig cfg = small_diffusion();
    cfg.p_drop = p;
    cfg.train_steps = 20;
    DiffusionModel model(cfg);
    CHECK_NOTHROW(model.train(toy_examples(cfg, 16, 7)));
  }
}

TEST_CASE("sampling length law and single-step integrator definition") {
  DiffusionConfig cfg = small_diffusion();
  DiffusionModel model(cfg);
  model.train(toy_examples(cfg, 16, 11));

  DiffusionCondition cond;
  cond.tokens = {1, 2, 3, 4, 5};
  FlowConfig flow;
  flow.num_steps = 4;
  flow.guidance_scale = 0.0;
  flow.seed = 5;
  const Mat out = model.sample(cond, flow);
  CHECK(out.rows() == 10);  // r = 2 upsampling
  CHECK(out.cols() == cfg.latent_dim);

  // N=1: out = x0 + v(x0, 0).
  flow.num_steps = 1;
  const Mat x0 = DiffusionModel::base_noise(flow.seed, 10, cfg.latent_dim);
  const Mat v = model.velocity(x0, 0.0, cond, nullptr, 0);
  const Mat one_step = model.sample(cond, flow);
  CHECK((one_step - (x0 + v)).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("guidance zero is independent of the unconditional branch") {
  DiffusionConfig cfg = small_diffusion();
  DiffusionModel model(cfg);
  model.train(toy_examples(cfg, 16, 13));
  DiffusionCondition cond;
  cond.tokens = {1, 1, 2, 2};
  FlowConfig flow;
  flow.num_steps = 2;
  flow.guidance_scale = 0.0;
  flow.seed = 9;
  const Mat a = model.sample(cond, flow);
  // Re-sample after perturbing nothing conditional: with g=0 the
  // unconditional branch is never evaluated, so the result only depends on
  // the conditional field; this checks determinism of that path.
  const Mat b = model.sample(cond, flow);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("prompt prefix is preserved exactly in the output") {
  DiffusionConfig cfg = small_diffusion();
  DiffusionModel model(cfg);
  model.train(toy_examples(cfg, 16, 17));
  DiffusionCondition cond;
  cond.tokens = {0, 1, 2, 3, 4, 5};
  Mat prefix(4, cfg.latent_dim);
  Rng rng(21);
  rng.fill_gaussian(prefix);
  cond.prompt_latents = prefix;
  FlowConfig flow;
  flow.num_steps = 3;
  flow.seed = 2;
  const Mat out = model.sample(cond, flow);
  CHECK(out.rows() == 12);
  CHECK((out.topRows(4) - prefix).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("integrator deviation shrinks as steps double") {
  DiffusionConfig cfg = small_diffusion();
  cfg.train_steps = 250;
  DiffusionModel model(cfg);
  model.train(toy_examples(cfg, 32, 23));
  DiffusionCondition cond;
  cond.tokens = {1, 2, 3, 4, 5, 6};
  auto run = [&](int n) {
    FlowConfig flow;
    flow.num_steps = n;
    flow.guidance_scale = 0.0;
    flow.seed = 77;
    return model.sample(cond, flow);
  };
  const Mat x8 = run(8), x16 = run(16), x32 = run(32);
  const double d1 = (x16 - x8).cwiseAbs().maxCoeff();
  const double d2 = (x32 - x16).cwiseAbs().maxCoeff();
  CHECK(d2 < d1);
}

TEST_CASE("streaming chunks cover the sequence and degenerate chunking is bit-exact") {
  DiffusionConfig cfg = small_diffusion();
  DiffusionModel model(cfg);
  model.train(toy_examples(cfg, 16, 29));
  DiffusionCondition cond;
  cond.tokens = {0, 1, 2, 3, 4, 5, 6, 7, 0, 1};  // 10 tokens
  FlowConfig flow;
  flow.num_steps = 3;
  flow.guidance_scale = 0.0;
  flow.seed = 31;

  acoustic::StreamSampler stream(model, cond, flow, 4);
  CHECK(stream.total_chunks() == 3);
  std::vector<Index> sizes;
  Mat collected(0, cfg.latent_dim);
  while (!stream.done()) {
    const Mat chunk = stream.next_chunk();
    sizes.push_back(chunk.rows());
    collected.conservativeResize(collected.rows() + chunk.rows(), Eigen::NoChange);
    collected.bottomRows(chunk.rows()) = chunk;
  }
  CHECK(sizes == std::vector<Index>{8, 8, 4});
  CHECK(stream.state().timing.size() == 3);

  const Mat offline = model.sample(cond, flow);
  CHECK(collected.rows() == offline.rows());

  acoustic::StreamSampler degenerate(model, cond, flow, 16);
  const Mat single = degenerate.next_chunk();
  CHECK(degenerate.done());
  CHECK((single - offline).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("latency and RTF definitions") {
  std::vector<acoustic::StreamChunkTiming> timing = {{0, 0.1}, {1, 1.0}, {2, 2.0}};
  const auto rep = acoustic::measure_latency_rtf(timing, 100, 50.0);
  CHECK(rep.first_packet_latency_s == doctest::Approx(0.1));
  CHECK(rep.rtf == doctest::Approx(1.0));  // 2 s wall / 2 s of frames

  const auto offline = acoustic::measure_latency_rtf({{0, 2.0}}, 100, 50.0);
  CHECK(offline.first_packet_latency_s == doctest::Approx(2.0));
  CHECK_THROWS_AS(acoustic::measure_latency_rtf({}, 100, 50.0), DataError);
  CHECK_THROWS_AS(acoustic::measure_latency_rtf(timing, 0, 50.0), ValidationError);
}

TEST_CASE("diffusion checkpoint round trip preserves sampling") {
  DiffusionConfig cfg = small_diffusion();
  DiffusionModel model(cfg);
  model.train(toy_examples(cfg, 16, 37));
  const auto dir = std::filesystem::temp_directory_path() / "ttslab_diff_test";
  std::filesystem::create_directories(dir);
  model.save(dir / "diff.msc");
  const DiffusionModel back = DiffusionModel::load(dir / "diff.msc");
  DiffusionCondition cond;
  cond.tokens = {3, 1, 4};
  FlowConfig flow;
  flow.num_steps = 2;
  flow.seed = 3;
  CHECK((model.sample(cond, flow) - back.sample(cond, flow)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("example construction aligns tokens and latents") {
  Mat frames(11, 16);
  Rng rng(41);
  rng.fill_gaussian(frames);
  CHECK(acoustic::trim_to_multiple(frames, 2).rows() == 10);

  vq::TokenizerConfig tcfg;
  tcfg.train_steps = 100;
  tcfg.batch_size = 32;
  tcfg.codebook_size = 8;
  Mat big(200, 16);
  rng.fill_gaussian(big);
  const vq::Tokenizer tok = vq::Tokenizer::train({big}, tcfg, 16);
  VocoderConfig vcfg;
  vcfg.train_steps = 50;
  const Vocoder voc = Vocoder::train({big}, vcfg, 16);
  const auto examples = acoustic::make_diffusion_examples({frames}, {}, tok, voc);
  REQUIRE(examples.size() == 1);
  CHECK(examples[0].latents.rows() ==
        static_cast<Index>(examples[0].tokens.size()) * tcfg.downsample);
}
