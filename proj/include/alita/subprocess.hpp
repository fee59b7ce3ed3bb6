#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

namespace alita::subprocess {

inline constexpr std::size_t kStreamCapBytes = 256 * 1024;
inline constexpr const char* kTruncationMarker = "\n...[truncated at 256 KiB]";

struct CommandResult {
    int exit_code = -1;          // meaningless when timed_out
    bool timed_out = false;
    std::string stdout_text;
    std::string stderr_text;
    double duration_seconds = 0.0;
};

// Runs `command` through /bin/sh -c in its own process group with cwd set
// to `cwd`. On timeout the whole group is SIGKILLed. Streams are captured
// and truncated at kStreamCapBytes with a marker appended.
CommandResult run_shell(const std::string& command,
                        const std::filesystem::path& cwd,
                        double timeout_seconds);

// Quote one argv token for safe embedding in a /bin/sh command line.
std::string shell_quote(const std::string& token);

// Join argv tokens into a shell command line, quoting where needed.
std::string shell_join(const std::vector<std::string>& argv);

} // namespace alita::subprocess
