#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "alita/error.hpp"
#include "alita/gateway.hpp"
#include "alita/toolspec.hpp"

namespace alita::scriptgen {

struct BundleParseError : Error {
    explicit BundleParseError(const std::string& m) : Error("BundleParseError", m) {}
};

enum class ContextKind { readme, code, webpage };
const char* to_string(ContextKind kind);

inline constexpr std::size_t kExcerptCap = 16384;
inline constexpr std::size_t kScriptSizeCap = 64 * 1024;

struct RetrievedContext {
    std::string source_url;
    ContextKind kind = ContextKind::webpage;
    std::string excerpt; // non-empty, capped at kExcerptCap with a marker
    std::string fetched_at;
};

// Builds a RetrievedContext, truncating the excerpt at the cap.
RetrievedContext make_retrieved_context(std::string source_url, ContextKind kind,
                                        const std::string& text);

struct ScriptBundle {
    std::string tool_script;
    std::string env_setup_script;
    std::string cleanup_script;
    std::vector<std::string> entry_command; // argv tokens, references the tool script
    std::string language_hint;              // python, sh, javascript or text
};

struct GenerationContext {
    ToolSpec tool_spec;
    std::vector<RetrievedContext> retrieved;
    std::vector<AttemptReport> prior_attempts; // ordered by attempt number
};

// Filename the tool script is materialized under: tool.<ext> derived
// from the language hint.
std::string tool_script_filename(const ScriptBundle& bundle);

// Substituted when the model omits the CLEANUP block: tears down the
// tool environment and removes its scratch files.
extern const char* const kDefaultCleanupScript;

// Parses a model reply of the form
//   TOOL / ENV / CLEANUP headers, each followed by a fenced code block,
//   plus one "ENTRY: <command line>" line.
// CLEANUP may be omitted (default substituted); TOOL, ENV and ENTRY are
// mandatory and named in the error when missing.
ScriptBundle parse_bundle_reply(const std::string& reply);

// Static checks only; returns issue ids (possibly empty):
//   tool_script_empty, env_setup_empty, entry_not_referencing_tool,
//   dangerous_path_operation, oversized_script.
std::vector<std::string> validate_bundle(const ScriptBundle& bundle);

// On-disk layout: <dir>/{tool.<ext>, env_setup.sh, cleanup.sh, entry.txt}.
void save_bundle(const ScriptBundle& bundle, const std::filesystem::path& dir);
ScriptBundle load_bundle(const std::filesystem::path& dir);

class ScriptGenerator {
public:
    explicit ScriptGenerator(gateway::Gateway& gw);

    // One query to the scriptgen role slot with the spec, retrieved
    // excerpts and prior error summaries; one structured re-ask if the
    // reply does not parse.
    ScriptBundle generate(const GenerationContext& context);

private:
    gateway::Gateway& gateway_;
};

} // namespace alita::scriptgen
