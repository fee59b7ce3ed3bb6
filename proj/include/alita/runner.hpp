#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "alita/envman.hpp"
#include "alita/error.hpp"
#include "alita/scriptgen.hpp"
#include "alita/toolspec.hpp"
#include "alita/transcript.hpp"

namespace alita::runner {

struct SpawnError : Error {
    explicit SpawnError(const std::string& m) : Error("SpawnError", m) {}
};

struct ToolSynthesisFailed : Error {
    ToolSynthesisFailed(const std::string& m, std::vector<AttemptReport> reports_)
        : Error("ToolSynthesisFailed", m), reports(std::move(reports_)) {}
    std::vector<AttemptReport> reports;
};

enum class ExecStatus { success, error, timeout };
const char* to_string(ExecStatus status);

struct ExecutionResult {
    ExecStatus status = ExecStatus::error;
    std::optional<int> exit_code; // absent on timeout
    std::string stdout_text;      // capped at 256 KiB with marker
    std::string stderr_text;
    double duration_seconds = 0.0;
};

nlohmann::json to_json(const ExecutionResult& result);

struct Verdict {
    bool pass = false;
    std::string report;
};

// Pure predicate over an ExecutionResult per the validation kind.
Verdict validate(const ExecutionResult& result, const ValidationSpec& spec);

inline constexpr int kMaxSynthesisAttempts = 3;
inline constexpr double kDefaultExecTimeoutSeconds = 120.0;
inline constexpr std::size_t kErrorContextChars = 2000;

class Runner {
public:
    Runner(envman::EnvManager& envs, scriptgen::ScriptGenerator& generator,
           std::filesystem::path workdir, TranscriptSink* sink = nullptr,
           double default_timeout_seconds = kDefaultExecTimeoutSeconds);

    // Materializes the tool script into the env scratch dir and runs
    // entry_command + args through the provider's run-in-env path.
    // Throws EnvGone when the handle's root is missing and SpawnError
    // when the shell cannot start the entry (exit 126/127).
    ExecutionResult execute(const scriptgen::ScriptBundle& bundle, const envman::EnvHandle& env,
                            const std::vector<std::string>& args, double timeout_seconds);

    struct SynthesisOutcome {
        scriptgen::ScriptBundle bundle;
        envman::EnvProfile profile; // post-recovery state
        ExecutionResult smoke;
        std::vector<AttemptReport> reports; // failed attempts before success
        std::filesystem::path bundle_dir;
    };

    // generate -> plan -> provision (recovery ladder inside) -> smoke run
    // -> validate, at most kMaxSynthesisAttempts rounds. On success the
    // artifacts come back for registration; after the budget,
    // ToolSynthesisFailed carries every AttemptReport.
    SynthesisOutcome synthesize_tool(const ToolSpec& spec,
                                     const std::vector<scriptgen::RetrievedContext>& retrieved,
                                     const std::string& task_id, const std::string& source_key);

    double default_timeout_seconds() const { return default_timeout_; }
    envman::EnvManager& envs() { return envs_; }
    void set_sink(TranscriptSink* sink) { sink_ = sink; }

private:
    envman::EnvManager& envs_;
    scriptgen::ScriptGenerator& generator_;
    std::filesystem::path workdir_;
    TranscriptSink* sink_;
    double default_timeout_;
};

// Smoke-run argv: "--name value" for every input parameter with a
// default, in schema order; empty when none have defaults.
std::vector<std::string> smoke_arguments(const ToolSpec& spec);

} // namespace alita::runner
