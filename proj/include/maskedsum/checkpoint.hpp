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

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "maskedsum/autograd.hpp"

namespace maskedsum {

inline constexpr std::uint32_t kParameterFormatVersion = 1;

/// Binary parameter blob:
///   u32 format version
///   repeated until end of stream:
///     u64 name length, name bytes, u64 rank, rank x u64 dims,
///     numel x f64 values
/// All integers and floats little-endian.
void write_parameters(std::ostream& out, const std::vector<const ParameterSet*>& sets);

struct ParameterRecord {
  std::string name;
  Tensor value;
};

std::vector<ParameterRecord> read_parameters(std::istream& in);

/// Copies records into `params` by name. Every parameter of the set must be
/// present with a matching shape; records not in the set are ignored.
void assign_parameters(ParameterSet& params, const std::vector<ParameterRecord>& records);

}  // namespace maskedsum

#include <filesystem>
#include <map>

namespace maskedsum {

/// Flat key=value settings, kept sorted so that serialisation is canonical.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in, const std::string& source_name);
void write_key_values(std::ostream& out, const KeyValues& kv);

/// Checkpoint file:
///   "maskedsum-checkpoint\n", key=value lines, "end-header\n",
///   then the binary parameter blob.
struct Checkpoint {
  KeyValues header;
  std::vector<ParameterRecord> records;
};

void save_checkpoint(const std::filesystem::path& path, const KeyValues& header,
                     const std::vector<const ParameterSet*>& sets);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace maskedsum
