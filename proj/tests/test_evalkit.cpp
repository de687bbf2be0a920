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

#include "ttslab/evalkit.hpp"

using namespace ttslab;
using eval::CmosRecord;
using eval::PresentationOrder;

namespace {
std::vector<int> sym(const std::string& s) { return corpus::text_from_string(s, 26); }
}  // namespace

TEST_CASE("wer_proxy matches the worked examples") {
  CHECK(eval::wer_proxy(sym("abc"), sym("abc")) == 0.0);
  CHECK(eval::wer_proxy(sym("abc"), sym("axc")) == doctest::Approx(1.0 / 3.0));
  CHECK(eval::wer_proxy(sym("ab"), {}) == 1.0);
  CHECK(eval::wer_proxy(sym("ab"), sym("abcd")) == 1.0);  // can exceed ref len
  CHECK_THROWS_AS(eval::wer_proxy({}, sym("a")), ValidationError);
}

TEST_CASE("unnormalized edit distance satisfies the triangle inequality") {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    auto draw = [&rng]() {
      std::vector<int> v(static_cast<size_t>(rng.uniform_int(0, 8)));
      for (int& s : v) s = rng.uniform_int(0, 3);
      return v;
    };
    const auto a = draw(), b = draw(), c = draw();
    CHECK(eval::edit_distance(a, c) <= eval::edit_distance(a, b) + eval::edit_distance(b, c));
    CHECK(eval::edit_distance(a, b) == eval::edit_distance(b, a));
  }
}

TEST_CASE("sim_metric matches cosine identities and is scale invariant") {
  DVec a(3), b(3);
  a << 1, 0, 0;
  b << 1, 0, 0;
  CHECK(eval::sim_metric(a, b) == doctest::Approx(1.0));
  CHECK(eval::sim_metric(a, -b) == doctest::Approx(-1.0));
  DVec c(3);
  c << std::cos(M_PI / 3), std::sin(M_PI / 3), 0;  // 60 degrees
  CHECK(eval::sim_metric(a, c) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(eval::sim_metric(a, 7.0 * c) == doctest::Approx(eval::sim_metric(a, c)));
  DVec zero = DVec::Zero(3);
  CHECK_THROWS_AS(eval::sim_metric(a, zero), DataError);
  DVec wrong(2);
  wrong << 1, 0;
  CHECK_THROWS_AS(eval::sim_metric(a, wrong), ShapeError);
}

TEST_CASE("cmos aggregation canonicalizes the presentation order") {
  const std::vector<CmosRecord> records = {
      {"c1", "r1", +1, PresentationOrder::kSystemFirst},
      {"c2", "r1", -1, PresentationOrder::kHumanFirst},
  };
  const auto agg = eval::cmos_aggregate(records);
  CHECK(agg.cmos == doctest::Approx(1.0));
  CHECK(agg.win == doctest::Approx(1.0));
  CHECK(agg.tie == 0.0);

  const std::vector<CmosRecord> zeros = {{"c", "r", 0, PresentationOrder::kSystemFirst},
                                         {"c", "r2", 0, PresentationOrder::kHumanFirst}};
  const auto z = eval::cmos_aggregate(zeros);
  CHECK(z.cmos == 0.0);
  CHECK(z.tie == 1.0);
  CHECK_FALSE(z.significant);

  CHECK_THROWS_AS(eval::cmos_aggregate({{"c", "r", 3, PresentationOrder::kSystemFirst}}),
                  ValidationError);
  CHECK_THROWS_AS(eval::cmos_aggregate({}), DataError);
}

TEST_CASE("cmos invariant: flipping every order and negating ratings changes nothing") {
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<CmosRecord> records(static_cast<size_t>(rng.uniform_int(1, 12)));
    for (auto& r : records) {
      r.case_id = "c";
      r.rater_id = "r";
      r.rating = rng.uniform_int(-2, 2);
      r.order = rng.uniform() < 0.5 ? PresentationOrder::kSystemFirst
                                    : PresentationOrder::kHumanFirst;
    }
    std::vector<CmosRecord> flipped = records;
    for (auto& r : flipped) {
      r.rating = -r.rating;
      r.order = r.order == PresentationOrder::kSystemFirst ? PresentationOrder::kHumanFirst
                                                           : PresentationOrder::kSystemFirst;
    }
    const auto a = eval::cmos_aggregate(records);
    const auto b = eval::cmos_aggregate(flipped);
    CHECK(a.cmos == doctest::Approx(b.cmos));
    CHECK(a.win == doctest::Approx(b.win));
    CHECK(a.loss == doctest::Approx(b.loss));
  }
}

TEST_CASE("cmos csv ingestion") {
  const auto dir = std::filesystem::temp_directory_path() / "ttslab_eval_test";
  std::filesystem::create_directories(dir);
  io::write_text_file(dir / "ratings.csv",
                      "case_id,rater_id,rating,order\n"
                      "c1,r1,2,system-first\n"
                      "c1,r2,-1,human-first\n");
  const auto records = eval::read_cmos_csv(dir / "ratings.csv");
  REQUIRE(records.size() == 2);
  CHECK(records[1].rating == -1);
  CHECK(records[1].order == PresentationOrder::kHumanFirst);
}

TEST_CASE("hard set is deterministic, sized, and in-vocabulary") {
  eval::HardSetConfig cfg;
  const auto a = eval::make_hard_set(cfg, 24);
  const auto b = eval::make_hard_set(cfg, 24);
  CHECK(a.size() == 400);
  CHECK(a == b);
  bool has_run = false, has_alternation = false;
  for (const auto& text : a) {
    CHECK(!text.empty());
    for (int s : text) CHECK((s >= 0 && s < 24));
    bool run = text.size() >= 4;
    for (size_t i = 1; i < text.size() && run; ++i) run = text[i] == text[0];
    has_run = has_run || run;
    if (text.size() >= 4) {
      bool alt = text[0] != text[1];
      for (size_t i = 2; i < text.size() && alt; ++i) alt = text[i] == text[i - 2];
      has_alternation = has_alternation || (alt && text[0] != text[1]);
    }
  }
  CHECK(has_run);
  CHECK(has_alternation);
}

TEST_CASE("manifest construction honors the prompt bounds and speaker pairing") {
  corpus::WorldConfig wcfg;
  const auto world = corpus::build_world(wcfg, 7);
  eval::ManifestConfig mcfg;
  mcfg.num_cases = 6;
  mcfg.num_speakers = 8;
  const auto cases = eval::make_icl_manifest(world, mcfg, 42);
  REQUIRE(cases.size() == 6);
  for (const auto& c : cases) {
    CHECK(c.prompt_frames.rows() >= mcfg.min_prompt_frames);
    CHECK(c.prompt_frames.rows() <= mcfg.max_prompt_frames);
    // Prompt and reference share a speaker: oracle embeddings nearly match.
    const auto pe = corpus::oracle_speaker_embedding(c.prompt_frames, world);
    const auto re = corpus::oracle_speaker_embedding(c.reference_frames, world);
    CHECK(eval::sim_metric(pe, re) > 0.99);
  }
  // Deterministic rebuild, save/load round trip, stable hash.
  const auto again = eval::make_icl_manifest(world, mcfg, 42);
  CHECK(eval::manifest_hash(cases) == eval::manifest_hash(again));
  const auto dir = std::filesystem::temp_directory_path() / "ttslab_manifest_test";
  std::filesystem::remove_all(dir);
  eval::save_manifest(cases, dir);
  const auto loaded = eval::load_manifest(dir);
  CHECK(eval::manifest_hash(loaded) == eval::manifest_hash(cases));
  CHECK((loaded[2].prompt_frames - cases[2].prompt_frames).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("icl eval scores a passthrough system at zero WER and unit SIM") {
  corpus::WorldConfig wcfg;
  const auto world = corpus::build_world(wcfg, 7);
  eval::ManifestConfig mcfg;
  mcfg.num_cases = 4;
  const auto cases = eval::make_icl_manifest(world, mcfg, 5);
  eval::IclSystem human{"human", [](const eval::EvalCaseData& c) { return c.reference_frames; }};
  const auto report = eval::run_icl_eval(cases, human, world);
  CHECK(report.mean_wer == 0.0);
  CHECK(report.mean_sim > 0.99);
  CHECK(report.failed_cases == 0);

  eval::IclSystem broken{"broken", [](const eval::EvalCaseData&) -> Mat {
                           throw DataError("boom");
                         }};
  const auto failed = eval::run_icl_eval(cases, broken, world);
  CHECK(failed.failed_cases == 4);
  REQUIRE(failed.cases.size() == 4);  // recorded, never skipped

  // Aggregates equal recomputation from per-case records.
  eval::MetricReport copy = report;
  copy.mean_wer = 123;
  copy.finalize();
  CHECK(copy.mean_wer == report.mean_wer);

  const auto back = eval::MetricReport::from_json(report.to_json());
  CHECK(back.to_json() == report.to_json());
}

TEST_CASE("projection export separates orthogonal clusters deterministically") {
  std::vector<DVec> embeddings;
  std::vector<std::string> speakers, sources;
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    DVec v = DVec::Zero(4);
    v(i < 5 ? 0 : 1) = 1.0;
    for (Index d = 0; d < 4; ++d) v(d) += 0.01 * rng.gaussian();
    embeddings.push_back(v / v.norm());
    speakers.push_back(i < 5 ? "spkA" : "spkB");
    sources.push_back(i % 2 == 0 ? "real" : "synthesized");
  }
  const auto rows = eval::project_embeddings(embeddings, speakers, sources);
  REQUIRE(rows.size() == 10);
  double ax = 0, bx = 0;
  for (size_t i = 0; i < rows.size(); ++i) (i < 5 ? ax : bx) += rows[i].x;
  CHECK(std::abs(ax / 5 - bx / 5) > 0.5);

  const auto rows2 = eval::project_embeddings(embeddings, speakers, sources);
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].x == rows2[i].x);  // deterministic sign convention
    CHECK(rows[i].y == rows2[i].y);
  }

  std::vector<DVec> identical(3, embeddings[0]);
  CHECK_THROWS_AS(eval::project_embeddings(identical, {"a", "b", "c"}, {"real", "real", "real"}),
                  DataError);

  const auto dir = std::filesystem::temp_directory_path() / "ttslab_eval_test";
  std::filesystem::create_directories(dir);
  eval::write_projection_csv(rows, dir / "proj.csv");
  const std::string csv = io::read_text_file(dir / "proj.csv");
  CHECK(csv.rfind("speaker_id,source,x,y\n", 0) == 0);
}

TEST_CASE("frame recognizer learns the oracle decision on clean data") {
  corpus::WorldConfig wcfg;
  const auto world = corpus::build_world(wcfg, 7);
  corpus::CorpusConfig ccfg;
  ccfg.num_utterances = 60;
  ccfg.num_speakers = 6;
  const auto c = corpus::sample_corpus(world, ccfg, 21);
  std::vector<Mat> frames;
  std::vector<std::vector<int>> labels;
  for (const auto& u : c.utterances) {
    frames.push_back(u.frames);
    std::vector<int> l(static_cast<size_t>(u.length()));
    for (const auto& span : u.spans)
      for (int t = span.start; t < span.end; ++t) l[static_cast<size_t>(t)] = span.symbol;
    labels.push_back(std::move(l));
  }
  eval::FrameRecognizerConfig rcfg;
  rcfg.train_steps = 800;
  const auto rec = eval::FrameRecognizer::train(frames, labels, 16, 25, rcfg);
  double wer = 0.0;
  for (size_t i = 0; i < 20; ++i)
    wer += eval::wer_proxy(c.utterances[i].spec.text, rec.transcribe(c.utterances[i].frames));
  CHECK(wer / 20 < 0.1);
}

TEST_CASE("shuffled ASR rejects corpora too small for a derangement") {
  corpus::WorldConfig wcfg;
  const auto world = corpus::build_world(wcfg, 7);
  eval::ShuffledAsrConfig cfg;
  cfg.corpus_size = 1;
  CHECK_THROWS_AS(eval::shuffled_asr_experiment(
                      world, cfg,
                      [](const corpus::Utterance& u, const std::vector<int>&) {
                        return u.frames;
                      }),
                  DataError);
}
