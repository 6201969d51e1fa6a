#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "moeisr/train.hpp"

namespace moeisr::cli {

/// Bad configuration: unknown key, wrong type or invalid value. Exit code 2.
class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

struct TrainSettings {
    TrainConfig train;
    std::filesystem::path dataset;
    std::filesystem::path checkpoint = "model.ckpt";
};

/// Applies flat JSON keys onto `s`. Throws ConfigError naming the key.
void apply_config(TrainSettings& s, const nlohmann::json& config);

/// Every effective value, one `key value` pair per entry.
nlohmann::json effective_config(const TrainSettings& s);

/// Parses "HxW".
std::pair<std::size_t, std::size_t> parse_size(const std::string& text);

/// Runs the command line; returns the process exit code
/// (0 ok, 1 runtime failure, 2 configuration error).
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace moeisr::cli
