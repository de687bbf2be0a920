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

#ifndef TTSLAB_IO_HPP_
#define TTSLAB_IO_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "ttslab/common.hpp"

namespace ttslab::io {

using json = nlohmann::json;

// MSF1: 16-byte header ("MSF1" magic, u32 rows, u32 cols, u32 reserved=0,
// all little-endian) followed by rows*cols little-endian f32, row-major.
void write_msf1(const std::filesystem::path& path, const Mat& m);
Mat read_msf1(const std::filesystem::path& path);

// In-memory variants, used by the checkpoint container.
void append_msf1(std::string& out, const Mat& m);
Mat parse_msf1(const uint8_t* data, size_t size, size_t* consumed);

// Versioned single-file checkpoint: a JSON head (format version, config echo,
// named-section table of contents with byte offsets) followed by MSF1 blobs.
class Checkpoint {
 public:
  Checkpoint() = default;

  void set_config(const json& config) { config_ = config; }
  const json& config() const { return config_; }

  void add(const std::string& name, const Mat& m);
  const Mat& get(const std::string& name) const;
  bool has(const std::string& name) const;
  std::vector<std::string> names() const;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

 private:
  json config_;
  std::vector<std::pair<std::string, Mat>> sections_;
};

// Text helpers.
std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::vector<json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows);

// FNV-1a 64-bit, printed as 16 hex chars. Used for ledger integrity and
// manifest identity, not security.
uint64_t fnv1a(const void* data, size_t size);
std::string hash_bytes(const std::string& bytes);
std::string hash_file(const std::filesystem::path& path);
std::string hash_json(const json& j);

}  // namespace ttslab::io

#endif  // TTSLAB_IO_HPP_
