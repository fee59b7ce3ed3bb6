#pragma once

#include <optional>
#include <string>
#include <vector>

namespace alita {

struct ToolParam {
    std::string name;
    std::string type; // semantic type label: string, integer, number, url, path, ...
    std::string default_value;
    bool has_default = false;
};

enum class ValidationKind { exit_zero, nonempty_stdout, stdout_matches };

const char* to_string(ValidationKind kind);
std::optional<ValidationKind> validation_kind_from_string(const std::string& name);

struct ValidationSpec {
    ValidationKind kind = ValidationKind::exit_zero;
    std::string pattern; // set iff kind == stdout_matches; must compile as a regex
};

// A brainstormed specification of a missing capability.
struct ToolSpec {
    std::string name; // lowercase, underscore-separated identifier
    std::string purpose;
    std::vector<ToolParam> input_schema;
    std::string output_description;
    std::vector<std::string> suggested_sources;
    ValidationSpec validation_hint;
};

enum class RecoveryStrategyKind { relax_versions, minimal_deps, discard };

const char* to_string(RecoveryStrategyKind kind);

// One round of the synthesize/refine loop that did not produce a
// validated tool.
struct AttemptReport {
    int attempt_no = 1; // 1-based, capped at the synthesis budget
    std::string error_summary;
    std::optional<RecoveryStrategyKind> strategy_applied;
};

inline const char* to_string(ValidationKind kind) {
    switch (kind) {
        case ValidationKind::exit_zero: return "exit_zero";
        case ValidationKind::nonempty_stdout: return "nonempty_stdout";
        case ValidationKind::stdout_matches: return "stdout_matches";
    }
    return "exit_zero";
}

inline std::optional<ValidationKind> validation_kind_from_string(const std::string& name) {
    if (name == "exit_zero") return ValidationKind::exit_zero;
    if (name == "nonempty_stdout") return ValidationKind::nonempty_stdout;
    if (name == "stdout_matches") return ValidationKind::stdout_matches;
    return std::nullopt;
}

inline const char* to_string(RecoveryStrategyKind kind) {
    switch (kind) {
        case RecoveryStrategyKind::relax_versions: return "relax_versions";
        case RecoveryStrategyKind::minimal_deps: return "minimal_deps";
        case RecoveryStrategyKind::discard: return "discard";
    }
    return "discard";
}

} // namespace alita
