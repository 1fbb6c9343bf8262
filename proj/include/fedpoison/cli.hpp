#pragma once

#include <filesystem>
#include <string>

namespace fedpoison {

/// Entry point of the `fedpoison` command line tool. Returns the exit code.
/// 0 success, 1 runtime failure, 2 usage or configuration error.
int cli_main(int argc, char** argv);

/// Output directory for a run: explicit flag, then config output_dir, then
/// $FEDPOISON_OUTPUT_ROOT (default "runs") / <config file stem>.
std::filesystem::path resolve_output_dir(const std::string& flag, const std::string& config_dir,
                                         const std::filesystem::path& config_path);

}  // namespace fedpoison
