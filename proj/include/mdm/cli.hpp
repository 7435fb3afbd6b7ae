#pragma once

#include <ostream>

namespace mdm::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Entry point for the `mdm` tool. Subcommands: gaussian-bench, gen-data,
/// train, eval-drop, score.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mdm::cli
