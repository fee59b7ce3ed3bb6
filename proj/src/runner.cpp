#include "alita/runner.hpp"

#include "alita/subprocess.hpp"

#include <fstream>
#include <regex>
#include <sstream>

namespace alita::runner {

using nlohmann::json;

const char* to_string(ExecStatus status) {
    switch (status) {
        case ExecStatus::success: return "success";
        case ExecStatus::error: return "error";
        case ExecStatus::timeout: return "timeout";
    }
    return "error";
}

json to_json(const ExecutionResult& result) {
    json j;
    j["status"] = to_string(result.status);
    if (result.exit_code) j["exit_code"] = *result.exit_code;
    j["stdout"] = result.stdout_text;
    j["stderr"] = result.stderr_text;
    j["duration_seconds"] = result.duration_seconds;
    return j;
}

Verdict validate(const ExecutionResult& result, const ValidationSpec& spec) {
    Verdict verdict;
    switch (spec.kind) {
        case ValidationKind::exit_zero:
            verdict.pass = result.status == ExecStatus::success;
            verdict.report = verdict.pass
                                 ? "exit_zero: process exited 0"
                                 : std::string("exit_zero: expected exit 0, got status ") +
                                       to_string(result.status) +
                                       (result.exit_code
                                            ? " (exit " + std::to_string(*result.exit_code) + ")"
                                            : "");
            break;
        case ValidationKind::nonempty_stdout: {
            bool has_content =
                result.stdout_text.find_first_not_of(" \t\r\n") != std::string::npos;
            verdict.pass = result.status != ExecStatus::timeout && has_content;
            verdict.report = verdict.pass ? "nonempty_stdout: output present"
                                          : "nonempty_stdout: stdout is empty";
            break;
        }
        case ValidationKind::stdout_matches: {
            bool matched = false;
            try {
                std::regex pattern(spec.pattern);
                matched = std::regex_search(result.stdout_text, pattern);
            } catch (const std::regex_error&) {
                matched = false;
            }
            verdict.pass = result.status != ExecStatus::timeout && matched;
            verdict.report = verdict.pass
                                 ? "stdout_matches: pattern '" + spec.pattern + "' matched"
                                 : "stdout_matches: pattern '" + spec.pattern + "' not found";
            break;
        }
    }
    if (result.status == ExecStatus::timeout) {
        verdict.report += " (execution timed out)";
    }
    return verdict;
}

std::vector<std::string> smoke_arguments(const ToolSpec& spec) {
    std::vector<std::string> args;
    for (const auto& param : spec.input_schema) {
        if (!param.has_default) continue;
        args.push_back("--" + param.name);
        args.push_back(param.default_value);
    }
    return args;
}

Runner::Runner(envman::EnvManager& envs, scriptgen::ScriptGenerator& generator,
               std::filesystem::path workdir, TranscriptSink* sink,
               double default_timeout_seconds)
    : envs_(envs),
      generator_(generator),
      workdir_(std::move(workdir)),
      sink_(sink),
      default_timeout_(default_timeout_seconds) {}

ExecutionResult Runner::execute(const scriptgen::ScriptBundle& bundle,
                                const envman::EnvHandle& env,
                                const std::vector<std::string>& args, double timeout_seconds) {
    if (!std::filesystem::exists(env.root_path)) {
        throw envman::EnvGone("env root vanished: " + env.root_path.string());
    }
    const auto scratch = env.root_path / "scratch";
    std::filesystem::create_directories(scratch);
    {
        std::ofstream tool(scratch / scriptgen::tool_script_filename(bundle),
                           std::ios::binary | std::ios::trunc);
        tool << bundle.tool_script;
    }

    std::vector<std::string> argv = bundle.entry_command;
    argv.insert(argv.end(), args.begin(), args.end());
    const std::string command = subprocess::shell_join(argv);

    auto step = envs_.run_in_env(env, command, scratch, timeout_seconds);

    if (!step.timed_out && (step.exit_code == 126 || step.exit_code == 127)) {
        throw SpawnError("entry command could not be started (exit " +
                         std::to_string(step.exit_code) + "): " + command);
    }

    ExecutionResult result;
    if (step.timed_out) {
        result.status = ExecStatus::timeout;
    } else {
        result.status = step.exit_code == 0 ? ExecStatus::success : ExecStatus::error;
        result.exit_code = step.exit_code;
    }
    result.stdout_text = step.stdout_text;
    result.stderr_text = step.stderr_text;
    result.duration_seconds = step.duration_seconds;
    return result;
}

Runner::SynthesisOutcome Runner::synthesize_tool(
    const ToolSpec& spec, const std::vector<scriptgen::RetrievedContext>& retrieved,
    const std::string& task_id, const std::string& source_key) {
    std::vector<AttemptReport> reports;

    // README-like excerpts double as environment metadata.
    std::vector<std::pair<std::string, std::string>> metadata_sources;
    for (const auto& ctx : retrieved) {
        std::string filename = std::filesystem::path(ctx.source_url).filename().string();
        if (ctx.kind == scriptgen::ContextKind::readme && filename.find("readme") == std::string::npos &&
            filename.find("README") == std::string::npos) {
            filename = "README.md";
        }
        metadata_sources.emplace_back(filename, ctx.excerpt);
    }
    const auto metadata = envs_.inspect_metadata(metadata_sources);

    for (int attempt = 1; attempt <= kMaxSynthesisAttempts; ++attempt) {
        auto fail_attempt = [&](const std::string& summary,
                                std::optional<RecoveryStrategyKind> strategy) {
            AttemptReport report;
            report.attempt_no = attempt;
            report.error_summary = summary;
            report.strategy_applied = strategy;
            reports.push_back(report);
            if (sink_) {
                json payload{{"phase", "synthesis_attempt_failed"},
                             {"tool", spec.name},
                             {"attempt", attempt},
                             {"error_summary", summary}};
                if (strategy) payload["strategy_applied"] = to_string(*strategy);
                sink_->record(Actor::runner, EventKind::observation, payload);
            }
        };

        scriptgen::GenerationContext context{spec, retrieved, reports};
        scriptgen::ScriptBundle bundle;
        try {
            bundle = generator_.generate(context);
        } catch (const scriptgen::BundleParseError& e) {
            fail_attempt(std::string("bundle parse failed: ") + e.what(), std::nullopt);
            continue;
        }

        if (auto issues = scriptgen::validate_bundle(bundle); !issues.empty()) {
            std::string joined;
            for (const auto& issue : issues) {
                if (!joined.empty()) joined += ", ";
                joined += issue;
            }
            fail_attempt("bundle failed static checks: " + joined, std::nullopt);
            continue;
        }

        const auto bundle_dir = workdir_ / "bundles" / spec.name;
        scriptgen::save_bundle(bundle, bundle_dir);

        envman::EnvProfile profile = envs_.plan_env(metadata, bundle, task_id, source_key);
        std::optional<RecoveryStrategyKind> strategy;
        envman::EnvHandle handle;
        try {
            auto provisioned = envs_.provision_with_recovery(std::move(profile),
                                                             bundle.tool_script, &strategy);
            handle = std::move(provisioned.first);
            profile = std::move(provisioned.second);
        } catch (const envman::RecoveryExhausted& e) {
            fail_attempt(std::string("environment recovery exhausted: ") + e.what(),
                         RecoveryStrategyKind::discard);
            continue;
        }

        ExecutionResult smoke;
        try {
            smoke = execute(bundle, handle, smoke_arguments(spec), default_timeout_);
        } catch (const Error& e) {
            envs_.destroy(handle);
            fail_attempt(std::string("smoke run failed to start: ") + e.what(), strategy);
            continue;
        }

        auto verdict = validate(smoke, spec.validation_hint);
        if (sink_) {
            sink_->record(Actor::runner, EventKind::observation,
                          json{{"phase", "smoke_run"},
                               {"tool", spec.name},
                               {"attempt", attempt},
                               {"result", to_json(smoke)},
                               {"verdict", verdict.pass ? "pass" : "fail"},
                               {"verdict_report", verdict.report}});
        }

        if (verdict.pass) {
            // The smoke env only existed to validate; invocation paths
            // re-provision lazily from the stored profile.
            try {
                envs_.destroy(handle);
            } catch (const envman::TeardownError&) {
            }
            SynthesisOutcome outcome;
            outcome.bundle = std::move(bundle);
            outcome.profile = std::move(profile);
            outcome.smoke = std::move(smoke);
            outcome.reports = std::move(reports);
            outcome.bundle_dir = bundle_dir;
            return outcome;
        }

        std::string stderr_tail = smoke.stderr_text.size() > kErrorContextChars
                                      ? smoke.stderr_text.substr(smoke.stderr_text.size() -
                                                                 kErrorContextChars)
                                      : smoke.stderr_text;
        std::ostringstream summary;
        summary << "validation failed: " << verdict.report;
        if (!stderr_tail.empty()) summary << "; stderr: " << stderr_tail;
        try {
            envs_.destroy(handle);
        } catch (const envman::TeardownError&) {
            // Already logged by envman; the root stays for gc.
        }
        fail_attempt(summary.str(), strategy);
    }

    throw ToolSynthesisFailed("tool synthesis failed for '" + spec.name + "' after " +
                                  std::to_string(kMaxSynthesisAttempts) + " attempts",
                              std::move(reports));
}

} // namespace alita::runner
