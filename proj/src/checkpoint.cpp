// Copyright 2026 The maskedsum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "maskedsum/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

#include "maskedsum/errors.hpp"

namespace maskedsum {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.write(buf, sizeof(T));
}

template <typename T>
bool get(std::istream& in, T& value) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) return false;
  std::memcpy(&value, buf, sizeof(T));
  return true;
}

template <typename T>
T require(std::istream& in, const char* what) {
  T value{};
  if (!get(in, value)) throw DataError(std::string("truncated parameter record: missing ") + what);
  return value;
}

}  // namespace

void write_parameters(std::ostream& out, const std::vector<const ParameterSet*>& sets) {
  put<std::uint32_t>(out, kParameterFormatVersion);
  for (const auto* set : sets) {
    for (const auto& p : *set) {
      put<std::uint64_t>(out, p.name.size());
      out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
      put<std::uint64_t>(out, p.value.rank());
      for (auto d : p.value.shape()) put<std::uint64_t>(out, d);
      for (double x : p.value.data()) put<double>(out, x);
    }
  }
  if (!out) throw DataError("failed writing parameters");
}

std::vector<ParameterRecord> read_parameters(std::istream& in) {
  std::uint32_t version = 0;
  if (!get(in, version)) throw DataError("parameter blob is empty");
  if (version != kParameterFormatVersion) {
    throw DataError("unsupported parameter format version " + std::to_string(version));
  }
  std::vector<ParameterRecord> records;
  std::uint64_t name_len = 0;
  while (get(in, name_len)) {
    if (name_len > (1u << 20)) throw DataError("implausible parameter name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name_len))) throw DataError("truncated parameter name");
    const auto rank = require<std::uint64_t>(in, "rank");
    if (rank > 8) throw DataError("implausible rank for parameter " + name);
    Shape shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(require<std::uint64_t>(in, "dimension"));
    std::vector<double> data(numel(shape));
    for (auto& x : data) x = require<double>(in, "value");
    records.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return records;
}

void assign_parameters(ParameterSet& params, const std::vector<ParameterRecord>& records) {
  for (auto& p : params) {
    const ParameterRecord* found = nullptr;
    for (const auto& r : records) {
      if (r.name == p.name) {
        found = &r;
        break;
      }
    }
    if (found == nullptr) throw DataError("checkpoint lacks parameter " + p.name);
    if (found->value.shape() != p.value.shape()) {
      throw DataError("checkpoint parameter " + p.name + " has shape " + shape_string(found->value.shape()) +
                      ", expected " + shape_string(p.value.shape()));
    }
    p.value = found->value;
  }
}

}  // namespace maskedsum

#include <fstream>

namespace maskedsum {
namespace {
constexpr const char* kMagic = "maskedsum-checkpoint";
constexpr const char* kEndHeader = "end-header";
}  // namespace

KeyValues parse_key_values(std::istream& in, const std::string& source_name) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(source_name + ":" + std::to_string(lineno) + ": expected key=value");
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

void write_key_values(std::ostream& out, const KeyValues& kv) {
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
}

void save_checkpoint(const std::filesystem::path& path, const KeyValues& header,
                     const std::vector<const ParameterSet*>& sets) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << kMagic << '\n';
  write_key_values(out, header);
  out << kEndHeader << '\n';
  write_parameters(out, sets);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw DataError(path.string() + " is not a checkpoint");
  std::string header_text;
  bool ended = false;
  while (std::getline(in, line)) {
    if (line == kEndHeader) {
      ended = true;
      break;
    }
    header_text += line + '\n';
  }
  if (!ended) throw DataError(path.string() + ": checkpoint header not terminated");
  std::istringstream header_in(header_text);
  Checkpoint ckpt;
  ckpt.header = parse_key_values(header_in, path.string());
  ckpt.records = read_parameters(in);
  return ckpt;
}

}  // namespace maskedsum
