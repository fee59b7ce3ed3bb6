#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "alita/brainstorm.hpp"
#include "alita/error.hpp"
#include "alita/gateway.hpp"
#include "alita/mcpbox.hpp"
#include "alita/mcphost.hpp"
#include "alita/runner.hpp"
#include "alita/task.hpp"
#include "alita/transcript.hpp"
#include "alita/webagent.hpp"

namespace alita::manager {

struct ActionParseError : Error {
    explicit ActionParseError(const std::string& m) : Error("ActionParseError", m) {}
};
struct LoopBudgetExceeded : Error {
    explicit LoopBudgetExceeded(const std::string& m) : Error("LoopBudgetExceeded", m) {}
};

struct AugmentedPrompt {
    std::string task_id;
    std::string system_preamble;
    std::string framework_description; // capability list + registry summary
    std::string user_query;            // contains Task.query verbatim
};

enum class ActionKind { think, call_tool, final_answer };

struct AgentAction {
    ActionKind kind = ActionKind::think;
    std::string tool_name;                        // when call_tool
    std::map<std::string, std::string> arguments; // key=value args
    std::string text;                             // thought text or final answer
};

struct FinalAnswer {
    std::string task_id;
    std::string answer_text;
    std::vector<std::uint64_t> supporting_event_seqs;
};

// Built-in dispatch table; call_mcp bridges to registered records.
const std::set<std::string>& dispatch_table();

// Single-action plain-text protocol:
//   THOUGHT: <text>
//   ACTION: <tool> key=value key2="quoted value"
//   FINAL: <answer, rest of reply>
// Exactly one action per reply; returns nullopt with a reason when the
// reply does not fit the grammar or names an unknown tool.
std::optional<AgentAction> parse_action(const std::string& reply, std::string* reason);

struct ManagerConfig {
    int loop_budget = 12;
    double reuse_threshold = mcpbox::kReuseThreshold;
    double exec_timeout_seconds = runner::kDefaultExecTimeoutSeconds;
    int max_tokens = 4096;
    std::map<std::string, std::string> model_ids; // role slot name -> model id (provenance)
};

class Manager {
public:
    Manager(gateway::Gateway& gw, brainstorm::Brainstormer& brainstormer, web::WebAgent& web,
            runner::Runner& run, mcpbox::Registry& registry, mcphost::McpInvoker& invoker,
            std::filesystem::path workdir, ManagerConfig config = {});

    // Embeds the query verbatim, the framework self-description, and the
    // registry summary.
    AugmentedPrompt build_augmented_prompt(const Task& task,
                                           const std::string& registry_summary) const;

    // One model turn: renders history, queries the manager slot, parses
    // the reply (one structured re-ask), enforces the loop budget.
    AgentAction step(const std::vector<TranscriptEvent>& history, const AugmentedPrompt& prompt);

    // The full pipeline: brainstorm first, dispatched actions, tool
    // synthesis and registration, final aggregation. The transcript at
    // <workdir>/transcripts/<task_id>.jsonl is flushed on every event,
    // including on error paths.
    FinalAnswer run_task(const Task& task);

private:
    void dispatch(const Task& task, const AgentAction& action, TranscriptWriter& transcript);

    gateway::Gateway& gateway_;
    brainstorm::Brainstormer& brainstormer_;
    web::WebAgent& web_;
    runner::Runner& runner_;
    mcpbox::Registry& registry_;
    mcphost::McpInvoker& invoker_;
    std::filesystem::path workdir_;
    ManagerConfig config_;

    // Per-task state, reset by run_task.
    int steps_taken_ = 0;
    std::vector<ToolSpec> pending_proposals_;
    std::vector<scriptgen::RetrievedContext> retrieved_;
    std::optional<web::PageView> current_page_;
};

} // namespace alita::manager
