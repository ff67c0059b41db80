#pragma once

// Model checkpoints: "FSSD1" magic, u32 layer count, (u32 fan_out, u32 fan_in)
// per layer, then every coefficient as f64 in canonical order. All integers
// and floats little-endian.

#include "fedssd/nn.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fedssd {

inline constexpr char kCheckpointMagic[] = "FSSD1";

std::vector<unsigned char> encode_checkpoint(const ModelParams& params);
ModelParams decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);

// sha256 of encode_checkpoint(params).
std::string params_digest(const ModelParams& params);

}  // namespace fedssd
