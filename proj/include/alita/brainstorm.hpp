#pragma once

#include <string>
#include <vector>

#include "alita/error.hpp"
#include "alita/gateway.hpp"
#include "alita/task.hpp"
#include "alita/toolspec.hpp"

namespace alita::brainstorm {

struct BrainstormParseError : Error {
    explicit BrainstormParseError(const std::string& m) : Error("BrainstormParseError", m) {}
};

struct CapabilityAssessment {
    bool gap_found = false;
    std::string rationale;
    std::vector<ToolSpec> proposals; // non-empty iff gap_found
};

// At most this many proposals survive one assessment; extras are dropped.
inline constexpr std::size_t kMaxProposals = 3;

// Parses the fenced ```assessment block out of a model reply. Enforces
// the gap_found <=> proposals-non-empty invariant and identifier rules;
// throws BrainstormParseError with the reason on any violation.
CapabilityAssessment parse_assessment(const std::string& reply);

// Compiled-in copy of assets/prompts/brainstorm/assess_v1.txt.
const std::string& default_prompt_template();

class Brainstormer {
public:
    Brainstormer(gateway::Gateway& gw, std::string prompt_template = default_prompt_template());

    // Queries the brainstorm role slot with the task, framework
    // description, and registry summary; re-asks once if the reply does
    // not parse, then throws BrainstormParseError.
    CapabilityAssessment assess(const std::string& task_query,
                                const std::string& framework_description,
                                const std::string& registry_summary);

private:
    gateway::Gateway& gateway_;
    std::string template_;
};

} // namespace alita::brainstorm
