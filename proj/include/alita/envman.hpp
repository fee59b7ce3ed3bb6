#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "alita/error.hpp"
#include "alita/scriptgen.hpp"
#include "alita/toolspec.hpp"
#include "alita/transcript.hpp"

namespace alita::envman {

struct PlanError : Error {
    explicit PlanError(const std::string& m) : Error("PlanError", m) {}
};
struct ProvisionError : Error {
    ProvisionError(int step, int exit_code_, std::string stderr_tail_, const std::string& m)
        : Error("ProvisionError", m),
          step_index(step),
          exit_code(exit_code_),
          stderr_tail(std::move(stderr_tail_)) {}
    int step_index;
    int exit_code;
    std::string stderr_tail;
};
struct RecoveryExhausted : Error {
    explicit RecoveryExhausted(const std::string& m) : Error("RecoveryExhausted", m) {}
};
struct TeardownError : Error {
    explicit TeardownError(const std::string& m) : Error("TeardownError", m) {}
};
struct EnvGone : Error {
    explicit EnvGone(const std::string& m) : Error("EnvGone", m) {}
};

// Version constraint grammar: empty (unpinned), ==X.Y.Z, ~=X.Y, >=X, <=X.
struct Dependency {
    std::string name;
    std::string constraint;

    std::string spec() const { return name + constraint; }
    bool operator==(const Dependency&) const = default;
};

// Parses "name", "name==1.2.3", "name~=1.2", "name>=1", "name<=1".
std::optional<Dependency> parse_dependency(const std::string& token);

struct MetadataBundle {
    std::optional<std::string> readme_text;
    std::optional<std::string> requirements_text;
    std::vector<std::string> shell_script_texts;

    bool empty() const {
        return !readme_text && !requirements_text && shell_script_texts.empty();
    }
};

struct EnvProfile {
    std::string env_name;
    std::vector<Dependency> dependencies;
    std::vector<std::string> setup_steps; // "env-create", "env-install <specs>", residual lines
    std::vector<std::string> provenance;
    int recovery_round = 0; // <= 2
};

nlohmann::json to_json(const EnvProfile& profile);
EnvProfile env_profile_from_json(const nlohmann::json& j);

struct EnvHandle {
    std::string env_name;
    std::filesystem::path root_path;
    std::string created_at;
    std::string provider_id;
};

struct StepResult {
    int exit_code = 0;
    std::string stdout_text;
    std::string stderr_text;
    bool timed_out = false;
    double duration_seconds = 0.0;

    bool ok() const { return exit_code == 0 && !timed_out; }
};

// Execution backend behind four command shapes: create, install,
// run-in-env, teardown.
class EnvProvider {
public:
    virtual ~EnvProvider() = default;
    virtual std::string id() const = 0;
    virtual StepResult create_env(const std::string& env_name,
                                  const std::filesystem::path& root) = 0;
    virtual StepResult install(const std::string& env_name, const std::filesystem::path& root,
                               const std::vector<std::string>& packages) = 0;
    virtual StepResult run_in_env(const std::string& env_name, const std::filesystem::path& root,
                                  const std::string& command, const std::filesystem::path& cwd,
                                  double timeout_seconds) = 0;
    virtual StepResult teardown(const std::string& env_name,
                                const std::filesystem::path& root) = 0;
};

// Command templates with {env_name}, {root}, {packages}, {command}
// placeholders, executed through /bin/sh.
struct ProviderTemplates {
    std::string create;
    std::string install;
    std::string run;
    std::string teardown;

    // Mirrors conda usage: conda create/install/run/env remove.
    static ProviderTemplates conda_defaults();
};

class TemplateProvider : public EnvProvider {
public:
    explicit TemplateProvider(ProviderTemplates templates, double setup_timeout_seconds = 600.0);

    std::string id() const override { return "template"; }
    StepResult create_env(const std::string& env_name,
                          const std::filesystem::path& root) override;
    StepResult install(const std::string& env_name, const std::filesystem::path& root,
                       const std::vector<std::string>& packages) override;
    StepResult run_in_env(const std::string& env_name, const std::filesystem::path& root,
                          const std::string& command, const std::filesystem::path& cwd,
                          double timeout_seconds) override;
    StepResult teardown(const std::string& env_name,
                        const std::filesystem::path& root) override;

private:
    ProviderTemplates templates_;
    double setup_timeout_;
};

// Filesystem-only provider for hermetic tests and offline runs: create
// and install only touch the env root; run-in-env executes the command
// on the host with cwd inside the env. A failure rule can be injected
// to simulate provisioning errors: it receives (step kind, detail) and
// returns an error message to fail that step.
class StubProvider : public EnvProvider {
public:
    using FailureRule =
        std::function<std::optional<std::string>(const std::string& step_kind,
                                                 const std::string& detail)>;

    StubProvider() = default;
    void set_failure_rule(FailureRule rule) { failure_rule_ = std::move(rule); }

    std::string id() const override { return "stub"; }
    StepResult create_env(const std::string& env_name,
                          const std::filesystem::path& root) override;
    StepResult install(const std::string& env_name, const std::filesystem::path& root,
                       const std::vector<std::string>& packages) override;
    StepResult run_in_env(const std::string& env_name, const std::filesystem::path& root,
                          const std::string& command, const std::filesystem::path& cwd,
                          double timeout_seconds) override;
    StepResult teardown(const std::string& env_name,
                        const std::filesystem::path& root) override;

private:
    std::optional<std::string> check_failure(const std::string& kind, const std::string& detail);
    FailureRule failure_rule_;
};

// "alita-" + first 12 lowercase hex of SHA-256 over task_id, newline,
// source_key. Pure and deterministic.
std::string derive_env_name(const std::string& task_id, const std::string& source_key);

class EnvManager {
public:
    EnvManager(std::filesystem::path workdir, std::shared_ptr<EnvProvider> provider,
               TranscriptSink* sink = nullptr);

    // Classifies (path, content) pairs by filename convention: README*,
    // requirements*, *.sh. Unknown files are ignored.
    MetadataBundle inspect_metadata(
        const std::vector<std::pair<std::string, std::string>>& sources) const;

    // Dependency extraction: non-comment requirements lines plus
    // "<installer> install <names...>" lines from the env setup script
    // and metadata shell scripts. Environment-lifecycle lines (conda
    // create/activate, venv creation) are realized by the planner and
    // dropped; other non-install lines of the env setup script are kept
    // as verbatim setup steps.
    EnvProfile plan_env(const MetadataBundle& metadata, const scriptgen::ScriptBundle& bundle,
                        const std::string& task_id, const std::string& source_key) const;

    // Executes setup_steps through the provider in order. Throws
    // ProvisionError carrying the failing step index, exit code and
    // stderr tail. Concurrent provisioning of distinct env_names is safe;
    // per-name work is serialized by <root>/.lock. An env_name that is
    // already live (or whose on-disk manifest matches the profile) is
    // shared rather than rebuilt; destroy() tears it down once the last
    // holder lets go.
    EnvHandle provision(const EnvProfile& profile);

    // Recovery ladder: round 0 -> 1 relaxes version constraints
    // (==X.Y.Z -> ~=X.Y, ~=X.Y -> unpinned); round 1 -> 2 keeps only
    // dependencies whose normalized names appear as import/require
    // tokens in the tool script. Round 2 -> RecoveryExhausted.
    EnvProfile recover(const EnvProfile& profile, const ProvisionError& error,
                       const std::string& tool_script) const;

    // provision + recover until success or RecoveryExhausted. Reports the
    // last strategy applied (if any) through last_strategy.
    std::pair<EnvHandle, EnvProfile> provision_with_recovery(
        EnvProfile profile, const std::string& tool_script,
        std::optional<RecoveryStrategyKind>* last_strategy = nullptr);

    // Provider teardown + root removal; idempotent. A teardown failure
    // marks the root orphaned (picked up by gc) and throws TeardownError.
    void destroy(EnvHandle& handle);

    StepResult run_in_env(const EnvHandle& handle, const std::string& command,
                          const std::filesystem::path& cwd, double timeout_seconds);

    // Removes unreferenced env roots older than ttl_hours. Returns the
    // number removed; paths that could not be removed are appended to
    // failures when given.
    int gc(double ttl_hours, const std::set<std::string>& referenced_env_names,
           std::vector<std::string>* failures = nullptr);

    const std::filesystem::path& workdir() const { return workdir_; }
    std::filesystem::path env_root(const std::string& env_name) const;
    EnvProvider& provider() { return *provider_; }

    // Transcript wiring is per task; the owner points this at the
    // current task's writer and clears it afterwards.
    void set_sink(TranscriptSink* sink) { sink_ = sink; }

private:
    std::filesystem::path workdir_;
    std::shared_ptr<EnvProvider> provider_;
    TranscriptSink* sink_;
    std::mutex live_mutex_;
    std::map<std::string, std::pair<EnvHandle, int>> live_envs_; // name -> (handle, holders)
};

// Tokens a dependency name is matched against for minimal_deps: first
// segments of python import/from statements and javascript require/import
// specifiers, normalized (lowercase, hyphens to underscores).
std::set<std::string> import_tokens(const std::string& tool_script);

} // namespace alita::envman
