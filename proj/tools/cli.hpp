#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace solarmap::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Runs one command line (without the program name) and returns the exit
/// code. Diagnostics go to `err`, progress to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Names of every accepted configuration key, sorted.
std::vector<std::string> config_keys();

/// 64-bit FNV-1a, as printed in manifests.
std::uint64_t fnv1a(std::string_view bytes);

}  // namespace solarmap::cli
