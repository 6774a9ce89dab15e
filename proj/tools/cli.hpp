#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace docmamba::cli {

using nlohmann::json;

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsageError = 2 };

/// Bad command line or configuration; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  UsageError(const std::string& what, std::string path = {})
      : std::runtime_error(what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

const std::vector<std::string>& command_names();

/// Default configuration of a command; every accepted key appears here.
json default_config(const std::string& command);

/// Overlays `layer` onto `base`. Keys absent from `base` are rejected;
/// nested objects merge recursively, other values replace.
void merge_config(json& base, const json& layer, const std::string& prefix = "");

/// Applies one "dotted.key=value" override. The value is read as JSON when
/// it parses and the target is not a string, else taken verbatim.
void apply_override(json& config, const std::string& assignment);

/// Reads a JSON config file; a missing or unreadable file is a UsageError
/// naming the path.
json read_config_file(const std::string& path);

/// Single-line error record for stderr.
std::string error_json(const std::string& kind, const std::string& message,
                       const std::string& path = {});

/// Runs the command line. Results go to `out`, the error record to `err`.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

/// Executes a resolved configuration and returns the exit code. Config
/// values that fail validation raise UsageError.
int run_command(const std::string& command, const json& config, std::ostream& out);

}  // namespace docmamba::cli
