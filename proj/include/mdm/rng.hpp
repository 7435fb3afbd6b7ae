#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mdm {

using Rng = std::mt19937_64;

/// Independent generator for a named purpose ("data", "init", "shuffle",
/// "dropout", ...). Streams with different names never share draws, so
/// toggling one component leaves the others untouched.
Rng make_stream(std::uint64_t seed, std::string_view name);

/// Stable 64-bit FNV-1a hash.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ull);

}  // namespace mdm
