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

#include <cstring>
#include <filesystem>

#include "ttslab/io.hpp"
#include "ttslab/rng.hpp"

using namespace ttslab;

namespace {
std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "ttslab_io_test";
  std::filesystem::create_directories(dir);
  return dir;
}
}  // namespace

TEST_CASE("msf1 round trip preserves bytes and header layout") {
  Rng rng(42);
  Mat m(7, 5);
  rng.fill_gaussian(m);
  const auto path = temp_dir() / "m.msf";
  io::write_msf1(path, m);

  const std::string raw = io::read_text_file(path);
  REQUIRE(raw.size() == 16 + 7 * 5 * sizeof(float));
  CHECK(raw.compare(0, 4, "MSF1") == 0);
  uint32_t rows = 0, cols = 0;
  std::memcpy(&rows, raw.data() + 4, 4);
  std::memcpy(&cols, raw.data() + 8, 4);
  CHECK(rows == 7);
  CHECK(cols == 5);

  const Mat back = io::read_msf1(path);
  CHECK(back.rows() == 7);
  CHECK((back - m).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("msf1 rejects corrupt input") {
  const auto path = temp_dir() / "bad.msf";
  io::write_text_file(path, "MSXX____________");
  CHECK_THROWS_AS(io::read_msf1(path), ValidationError);
  io::write_text_file(path, "MS");
  CHECK_THROWS_AS(io::read_msf1(path), ValidationError);
}

TEST_CASE("checkpoint stores config and named sections") {
  Rng rng(7);
  Mat a(3, 4), b(2, 2);
  rng.fill_gaussian(a);
  rng.fill_gaussian(b);
  io::Checkpoint ck;
  ck.set_config({{"k", 256}, {"note", "unit"}});
  ck.add("enc.w", a);
  ck.add("dec.w", b);
  const auto path = temp_dir() / "model.ckpt";
  ck.save(path);

  const io::Checkpoint back = io::Checkpoint::load(path);
  CHECK(back.config().at("k") == 256);
  CHECK((back.get("enc.w") - a).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((back.get("dec.w") - b).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(back.has("enc.w"));
  CHECK_FALSE(back.has("missing"));
  CHECK_THROWS_AS(back.get("missing"), ValidationError);
}

TEST_CASE("jsonl round trip") {
  const auto path = temp_dir() / "rows.jsonl";
  std::vector<io::json> rows = {{{"id", 1}, {"t", "ab"}}, {{"id", 2}, {"t", "cd"}}};
  io::write_jsonl(path, rows);
  const auto back = io::read_jsonl(path);
  REQUIRE(back.size() == 2);
  CHECK(back[1].at("t") == "cd");
}

TEST_CASE("hashes are stable and content sensitive") {
  CHECK(io::hash_bytes("abc") == io::hash_bytes("abc"));
  CHECK(io::hash_bytes("abc") != io::hash_bytes("abd"));
  CHECK(io::hash_json({{"a", 1}}) == io::hash_json({{"a", 1}}));
}

TEST_CASE("rng streams are deterministic and distinct") {
  Rng a(1), b(1), c(2);
  CHECK(a.next_u64() == b.next_u64());
  CHECK(a.next_u64() != c.next_u64());
  Rng f1 = Rng::fork(9, 0), f2 = Rng::fork(9, 1);
  CHECK(f1.next_u64() != f2.next_u64());

  // Gaussian moments sanity.
  Rng g(123);
  double sum = 0, sum2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = g.gaussian();
    sum += x;
    sum2 += x * x;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}
