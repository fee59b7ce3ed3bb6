#include "alita/brainstorm.hpp"

#include <regex>
#include <set>
#include <sstream>

namespace alita::brainstorm {

namespace {

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

bool valid_tool_name(const std::string& name) {
    if (name.empty()) return false;
    if (!std::islower(static_cast<unsigned char>(name[0]))) return false;
    for (unsigned char c : name) {
        if (!(std::islower(c) || std::isdigit(c) || c == '_')) return false;
    }
    return true;
}

std::string strip_quotes(const std::string& s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\''))) {
        return s.substr(1, s.size() - 2);
    }
    return s;
}

} // namespace

CapabilityAssessment parse_assessment(const std::string& reply) {
    // Locate the fenced assessment block.
    std::istringstream in(reply);
    std::string line;
    bool in_block = false;
    std::vector<std::string> block;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (!in_block) {
            if (t == "```assessment") in_block = true;
            continue;
        }
        if (t.rfind("```", 0) == 0) {
            in_block = false;
            break;
        }
        block.push_back(t);
    }
    if (in_block) throw BrainstormParseError("unterminated assessment block");
    if (block.empty()) throw BrainstormParseError("no ```assessment block found");

    CapabilityAssessment assessment;
    bool gap_seen = false;
    std::vector<ToolSpec> proposals;
    ToolSpec* current = nullptr;

    for (const auto& raw : block) {
        if (raw.empty()) continue;
        auto colon = raw.find(':');
        if (colon == std::string::npos) {
            throw BrainstormParseError("line is not 'key: value': " + raw);
        }
        std::string key = trim(raw.substr(0, colon));
        std::string value = trim(raw.substr(colon + 1));

        if (key == "gap_found") {
            std::string v = value;
            for (auto& c : v) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            if (v == "yes" || v == "true") assessment.gap_found = true;
            else if (v == "no" || v == "false") assessment.gap_found = false;
            else throw BrainstormParseError("gap_found must be yes or no, got: " + value);
            gap_seen = true;
        } else if (key == "rationale") {
            assessment.rationale = value;
        } else if (key == "proposal") {
            proposals.emplace_back();
            current = &proposals.back();
        } else if (current == nullptr) {
            throw BrainstormParseError("field '" + key + "' outside a proposal section");
        } else if (key == "name") {
            if (!valid_tool_name(value)) {
                throw BrainstormParseError("invalid tool name: '" + value + "'");
            }
            current->name = value;
        } else if (key == "purpose") {
            current->purpose = value;
        } else if (key == "input") {
            std::istringstream words(value);
            ToolParam param;
            words >> param.name >> param.type;
            if (param.name.empty() || param.type.empty()) {
                throw BrainstormParseError("input line needs '<name> <type>': " + value);
            }
            std::string rest;
            std::getline(words, rest);
            rest = trim(rest);
            if (!rest.empty()) {
                param.default_value = strip_quotes(rest);
                param.has_default = true;
            }
            current->input_schema.push_back(std::move(param));
        } else if (key == "output") {
            current->output_description = value;
        } else if (key == "source") {
            if (!value.empty()) current->suggested_sources.push_back(value);
        } else if (key == "validation") {
            std::istringstream words(value);
            std::string kind_name;
            words >> kind_name;
            auto kind = validation_kind_from_string(kind_name);
            if (!kind) throw BrainstormParseError("unknown validation kind: " + kind_name);
            current->validation_hint.kind = *kind;
            if (*kind == ValidationKind::stdout_matches) {
                std::string pattern;
                std::getline(words, pattern);
                pattern = trim(pattern);
                if (pattern.empty()) {
                    throw BrainstormParseError("stdout_matches requires a pattern");
                }
                try {
                    std::regex probe(pattern);
                } catch (const std::regex_error&) {
                    throw BrainstormParseError("validation pattern does not compile: " + pattern);
                }
                current->validation_hint.pattern = pattern;
            }
        } else {
            throw BrainstormParseError("unknown key '" + key + "'");
        }
    }

    if (!gap_seen) throw BrainstormParseError("missing gap_found field");

    std::set<std::string> names;
    for (const auto& p : proposals) {
        if (p.name.empty()) throw BrainstormParseError("proposal missing name");
        if (p.purpose.empty()) throw BrainstormParseError("proposal missing purpose");
        if (!names.insert(p.name).second) {
            throw BrainstormParseError("duplicate proposal name: " + p.name);
        }
        std::set<std::string> param_names;
        for (const auto& param : p.input_schema) {
            if (!param_names.insert(param.name).second) {
                throw BrainstormParseError("duplicate parameter '" + param.name +
                                           "' in proposal " + p.name);
            }
        }
    }

    if (assessment.gap_found && proposals.empty()) {
        throw BrainstormParseError("gap_found is yes but no proposals given");
    }
    if (!assessment.gap_found && !proposals.empty()) {
        throw BrainstormParseError("gap_found is no but proposals given");
    }
    if (proposals.size() > kMaxProposals) proposals.resize(kMaxProposals);
    assessment.proposals = std::move(proposals);
    return assessment;
}

const std::string& default_prompt_template() {
    static const std::string text = R"(You are the capability assessor of an autonomous agent runtime. Decide
whether the agent, as currently equipped, can solve the task, and specify
the missing tools when it cannot.

Models tend to overestimate what they can answer from built-in knowledge.
Be skeptical: if the task needs data the agent cannot reach or an
operation it cannot perform with the capabilities listed below, that is a
capability gap. If a registered MCP already covers the need, there is no
gap for that need.

Current framework:
{{framework_description}}

Registry summary:
{{registry_summary}}

Task:
{{task_query}}

Reply with exactly one fenced block in this format:

```assessment
gap_found: yes|no
rationale: <one line>
proposal:
name: <lowercase_underscore_identifier>
purpose: <one line>
input: <param_name> <type> [<default value>]
output: <one line>
source: <search query or URL>
validation: exit_zero|nonempty_stdout|stdout_matches <pattern>
```

Rules: omit all proposal sections when gap_found is no; at most 3
proposals; one input line per parameter; one source line per suggestion.
)";
    return text;
}

Brainstormer::Brainstormer(gateway::Gateway& gw, std::string prompt_template)
    : gateway_(gw), template_(std::move(prompt_template)) {}

CapabilityAssessment Brainstormer::assess(const std::string& task_query,
                                          const std::string& framework_description,
                                          const std::string& registry_summary) {
    std::string prompt = template_;
    prompt = replace_all(prompt, "{{task_query}}", task_query);
    prompt = replace_all(prompt, "{{framework_description}}", framework_description);
    prompt = replace_all(prompt, "{{registry_summary}}", registry_summary);

    gateway::LLMRequest request;
    request.role_slot = gateway::RoleSlot::brainstorm;
    request.messages.push_back({gateway::Role::user, prompt});

    auto response = gateway_.complete(request);
    try {
        return parse_assessment(response.content);
    } catch (const BrainstormParseError& first) {
        request.messages.push_back({gateway::Role::assistant, response.content});
        request.messages.push_back(
            {gateway::Role::user,
             std::string("Your reply could not be parsed: ") + first.what() +
                 ". Respond again with exactly one ```assessment fenced block in the "
                 "documented format."});
        auto retry = gateway_.complete(request);
        return parse_assessment(retry.content);
    }
}

} // namespace alita::brainstorm
