#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sidrec/config.hpp"

namespace sidrec::cli {

inline constexpr const char* kToolVersion = "sidrec 0.1.0";

// Executes one pipeline subcommand ("all" runs every stage in order) and
// returns the process exit status: 0 ok, 1 validation error, 2 runtime error.
int run_command(const std::string& subcommand, const std::string& config_path,
                const std::vector<std::string>& overrides,
                std::optional<uint64_t> seed_override = std::nullopt,
                std::optional<std::string> run_dir_override = std::nullopt);

}  // namespace sidrec::cli
