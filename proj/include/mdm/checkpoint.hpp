#pragma once

#include "mdm/nn.hpp"

#include <filesystem>
#include <span>
#include <vector>

namespace mdm::nn {

// Binary layout:
//   "MDM1" | u32 version
//   repeated until EOF:
//     u32 name_len | name bytes (UTF-8) | u32 rank | u32 dims[rank] | f64 payload[prod(dims)]
// All integers and floats little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params);
std::vector<Parameter> load_checkpoint(const std::filesystem::path& path);

/// Copies loaded values into `params` by name. Throws LoadError when a
/// parameter is missing or its shape differs.
void assign_parameters(std::span<const Parameter> loaded, std::span<Parameter* const> params);

}  // namespace mdm::nn
