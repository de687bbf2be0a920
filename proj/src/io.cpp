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

#include "ttslab/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ttslab::io {

namespace {

static_assert(std::endian::native == std::endian::little,
              "MSF1 serialization assumes a little-endian host");

constexpr char kMagic[4] = {'M', 'S', 'F', '1'};

void put_u32(std::string& out, uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

uint32_t get_u32(const uint8_t* p) {
  uint32_t v;
  std::memcpy(&v, p, 4);
  return v;
}

}  // namespace

void append_msf1(std::string& out, const Mat& m) {
  out.append(kMagic, 4);
  put_u32(out, static_cast<uint32_t>(m.rows()));
  put_u32(out, static_cast<uint32_t>(m.cols()));
  put_u32(out, 0u);  // reserved
  const size_t bytes = sizeof(float) * static_cast<size_t>(m.size());
  out.append(reinterpret_cast<const char*>(m.data()), bytes);
}

Mat parse_msf1(const uint8_t* data, size_t size, size_t* consumed) {
  if (size < 16 || std::memcmp(data, kMagic, 4) != 0)
    throw ValidationError("MSF1: bad magic or truncated header");
  const uint32_t rows = get_u32(data + 4);
  const uint32_t cols = get_u32(data + 8);
  const size_t bytes = sizeof(float) * static_cast<size_t>(rows) * cols;
  if (size < 16 + bytes) throw ValidationError("MSF1: truncated payload");
  Mat m(rows, cols);
  std::memcpy(m.data(), data + 16, bytes);
  if (consumed) *consumed = 16 + bytes;
  return m;
}

void write_msf1(const std::filesystem::path& path, const Mat& m) {
  std::string buf;
  buf.reserve(16 + sizeof(float) * static_cast<size_t>(m.size()));
  append_msf1(buf, m);
  write_text_file(path, buf);
}

Mat read_msf1(const std::filesystem::path& path) {
  const std::string buf = read_text_file(path);
  size_t consumed = 0;
  Mat m = parse_msf1(reinterpret_cast<const uint8_t*>(buf.data()), buf.size(), &consumed);
  if (consumed != buf.size()) throw ValidationError("MSF1: trailing bytes in " + path.string());
  return m;
}

void Checkpoint::add(const std::string& name, const Mat& m) {
  for (auto& [n, _] : sections_)
    if (n == name) throw ValidationError("checkpoint: duplicate section " + name);
  sections_.emplace_back(name, m);
}

const Mat& Checkpoint::get(const std::string& name) const {
  for (auto& [n, m] : sections_)
    if (n == name) return m;
  throw ValidationError("checkpoint: missing section " + name);
}

bool Checkpoint::has(const std::string& name) const {
  for (auto& [n, _] : sections_)
    if (n == name) return true;
  return false;
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  out.reserve(sections_.size());
  for (auto& [n, _] : sections_) out.push_back(n);
  return out;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::string body;
  json toc = json::array();
  for (auto& [name, m] : sections_) {
    toc.push_back({{"name", name}, {"offset", body.size()}});
    append_msf1(body, m);
  }
  json head{{"format", "ttslab-checkpoint"},
            {"version", 1},
            {"config", config_},
            {"sections", toc}};
  const std::string head_str = head.dump();
  std::string out;
  out.append("TTSC");
  put_u32(out, static_cast<uint32_t>(head_str.size()));
  out += head_str;
  out += body;
  write_text_file(path, out);
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const std::string buf = read_text_file(path);
  if (buf.size() < 8 || buf.compare(0, 4, "TTSC") != 0)
    throw ValidationError("checkpoint: bad magic in " + path.string());
  const uint32_t head_len = get_u32(reinterpret_cast<const uint8_t*>(buf.data()) + 4);
  if (buf.size() < 8u + head_len) throw ValidationError("checkpoint: truncated head");
  json head = json::parse(buf.substr(8, head_len));
  if (head.value("version", 0) != 1)
    throw ValidationError("checkpoint: unsupported version in " + path.string());
  Checkpoint ck;
  ck.config_ = head.value("config", json::object());
  const uint8_t* body = reinterpret_cast<const uint8_t*>(buf.data()) + 8 + head_len;
  const size_t body_size = buf.size() - 8 - head_len;
  for (const auto& entry : head.at("sections")) {
    const size_t off = entry.at("offset").get<size_t>();
    if (off >= body_size) throw ValidationError("checkpoint: bad section offset");
    size_t consumed = 0;
    ck.sections_.emplace_back(entry.at("name").get<std::string>(),
                              parse_msf1(body + off, body_size - off, &consumed));
  }
  return ck;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw ValidationError("short write to " + path.string());
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump();
    out += '\n';
  }
  write_text_file(path, out);
}

uint64_t fnv1a(const void* data, size_t size) {
  uint64_t h = 0xcbf29ce484222325ull;
  const uint8_t* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hash_bytes(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a(bytes.data(), bytes.size())));
  return std::string(buf);
}

std::string hash_file(const std::filesystem::path& path) {
  return hash_bytes(read_text_file(path));
}

std::string hash_json(const json& j) { return hash_bytes(j.dump()); }

}  // namespace ttslab::io
