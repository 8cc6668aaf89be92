// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "wmoe/config.hpp"
#include "wmoe/model.hpp"

namespace wmoe::checkpoint {

// Binary container, little-endian:
//   magic "WMOECKPT", version u32, config as length-prefixed (u32) UTF-8 JSON,
//   tensor count u32, then per tensor: path length u16, path bytes, rank u8,
//   extents u32 each, float64 data. A trailing CRC32 covers every payload
//   byte after the magic.
void save(const std::string& path, const RunConfig& config, const NamedParamSet& params);

struct Loaded {
  RunConfig config;
  NamedParamSet params;
};
Loaded load(const std::string& path);

// Rebuilds the model described by the checkpoint's config snapshot and
// restores every tensor bit-exactly.
Model load_model(const std::string& path);

// Copies checkpoint tensors into an existing model; the checkpoint's config
// must describe the same architecture (first mismatching field is named).
void restore_into(Model& model, const Loaded& loaded);

std::uint32_t crc32(const unsigned char* data, std::size_t len);

}  // namespace wmoe::checkpoint
