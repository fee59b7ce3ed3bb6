#include "alita/manager.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <sstream>

namespace alita::manager {

using nlohmann::json;

const std::set<std::string>& dispatch_table() {
    static const std::set<std::string> table = {
        "mcp_brainstorming", "web_search",      "visit_page", "page_up",
        "page_down",         "synthesize_tool", "call_mcp",
    };
    return table;
}

namespace {

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

// key=value args; values may be double-quoted to carry spaces.
bool parse_arguments(const std::string& text, std::map<std::string, std::string>& out,
                     std::string* reason) {
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        while (i < n && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        if (i >= n) break;

        std::size_t key_start = i;
        while (i < n && (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_')) ++i;
        if (i == key_start || i >= n || text[i] != '=') {
            *reason = "malformed argument near '" + text.substr(key_start, 20) + "'";
            return false;
        }
        std::string key = text.substr(key_start, i - key_start);
        ++i; // '='

        std::string value;
        if (i < n && text[i] == '"') {
            ++i;
            while (i < n && text[i] != '"') {
                if (text[i] == '\\' && i + 1 < n) ++i;
                value.push_back(text[i]);
                ++i;
            }
            if (i >= n) {
                *reason = "unterminated quoted value for '" + key + "'";
                return false;
            }
            ++i; // closing quote
        } else {
            while (i < n && !std::isspace(static_cast<unsigned char>(text[i]))) {
                value.push_back(text[i]);
                ++i;
            }
        }
        if (out.count(key)) {
            *reason = "duplicate argument '" + key + "'";
            return false;
        }
        out[key] = value;
    }
    return true;
}

std::string render_history(const std::vector<TranscriptEvent>& history) {
    std::ostringstream out;
    for (const auto& event : history) {
        out << "[" << event.seq << "] " << to_string(event.actor) << " "
            << to_string(event.kind) << ": " << event.payload.dump() << "\n";
    }
    return out.str();
}

json arguments_json(const std::map<std::string, std::string>& args) {
    json j = json::object();
    for (const auto& [k, v] : args) j[k] = v;
    return j;
}

scriptgen::ContextKind context_kind_for_url(const std::string& url) {
    std::string lower = url;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    static const char* code_exts[] = {".py", ".js", ".ts", ".c", ".cc", ".cpp", ".rs", ".go"};
    for (const char* ext : code_exts) {
        if (lower.size() >= std::strlen(ext) &&
            lower.compare(lower.size() - std::strlen(ext), std::strlen(ext), ext) == 0) {
            return scriptgen::ContextKind::code;
        }
    }
    if (lower.find("readme") != std::string::npos) return scriptgen::ContextKind::readme;
    if (lower.find("github.com/") != std::string::npos) return scriptgen::ContextKind::readme;
    return scriptgen::ContextKind::webpage;
}

json page_payload(const web::PageView& view) {
    return json{{"url", view.url},
                {"viewport_index", view.viewport_index},
                {"total_viewports", view.total_viewports},
                {"at_start", view.at_start},
                {"at_end", view.at_end},
                {"status", view.status == web::PageStatus::ok ? "ok" : "http_error"},
                {"content", view.content}};
}

} // namespace

std::optional<AgentAction> parse_action(const std::string& reply, std::string* reason) {
    std::istringstream in(reply);
    std::string line;
    std::optional<AgentAction> action;
    std::size_t reply_offset = 0;
    int markers = 0;

    while (std::getline(in, line)) {
        reply_offset += line.size() + 1;
        std::string t = trim(line);

        const char* marker = nullptr;
        if (t.rfind("THOUGHT:", 0) == 0) marker = "THOUGHT";
        else if (t.rfind("ACTION:", 0) == 0) marker = "ACTION";
        else if (t.rfind("FINAL:", 0) == 0) marker = "FINAL";
        if (!marker) continue;

        ++markers;
        if (markers > 1) {
            *reason = "more than one action marker in reply";
            return std::nullopt;
        }

        if (std::string(marker) == "THOUGHT") {
            AgentAction a;
            a.kind = ActionKind::think;
            a.text = trim(t.substr(8));
            if (a.text.empty()) {
                *reason = "THOUGHT requires text";
                return std::nullopt;
            }
            action = a;
        } else if (std::string(marker) == "ACTION") {
            std::string rest = trim(t.substr(7));
            std::istringstream words(rest);
            AgentAction a;
            a.kind = ActionKind::call_tool;
            words >> a.tool_name;
            if (a.tool_name.empty()) {
                *reason = "ACTION requires a tool name";
                return std::nullopt;
            }
            if (!dispatch_table().count(a.tool_name)) {
                *reason = "unknown tool '" + a.tool_name + "'";
                return std::nullopt;
            }
            std::string args_text;
            std::getline(words, args_text);
            if (!parse_arguments(args_text, a.arguments, reason)) return std::nullopt;
            action = a;
        } else {
            AgentAction a;
            a.kind = ActionKind::final_answer;
            // FINAL consumes the rest of the reply.
            std::string answer = trim(t.substr(6));
            std::string remainder = reply.substr(std::min(reply_offset, reply.size()));
            remainder = trim(remainder);
            if (!remainder.empty()) {
                // Later marker lines would have tripped the counter above
                // on their own turn, so scan them before absorbing.
                std::istringstream rest_in(remainder);
                std::string rest_line;
                while (std::getline(rest_in, rest_line)) {
                    std::string rt = trim(rest_line);
                    if (rt.rfind("THOUGHT:", 0) == 0 || rt.rfind("ACTION:", 0) == 0 ||
                        rt.rfind("FINAL:", 0) == 0) {
                        *reason = "more than one action marker in reply";
                        return std::nullopt;
                    }
                }
                answer += answer.empty() ? remainder : "\n" + remainder;
            }
            if (answer.empty()) {
                *reason = "FINAL requires an answer";
                return std::nullopt;
            }
            a.text = answer;
            action = a;
            break;
        }
    }

    if (!action) {
        *reason = "no THOUGHT:/ACTION:/FINAL: marker found";
        return std::nullopt;
    }
    return action;
}

// ── Manager ─────────────────────────────────────────────────────────────

Manager::Manager(gateway::Gateway& gw, brainstorm::Brainstormer& brainstormer,
                 web::WebAgent& web, runner::Runner& run, mcpbox::Registry& registry,
                 mcphost::McpInvoker& invoker, std::filesystem::path workdir,
                 ManagerConfig config)
    : gateway_(gw),
      brainstormer_(brainstormer),
      web_(web),
      runner_(run),
      registry_(registry),
      invoker_(invoker),
      workdir_(std::move(workdir)),
      config_(std::move(config)) {}

AugmentedPrompt Manager::build_augmented_prompt(const Task& task,
                                                const std::string& registry_summary) const {
    AugmentedPrompt prompt;
    prompt.task_id = task.id;

    prompt.system_preamble =
        "You are the manager agent of a self-evolving tool-building runtime. You solve\n"
        "tasks by iterating: read the transcript so far, then emit exactly ONE action.\n"
        "When a capability is missing, a brainstormed tool proposal will appear in the\n"
        "transcript; search for reference material, then synthesize the tool and use it.\n"
        "Prefer a registered MCP over synthesizing a new tool when one matches.\n"
        "\n"
        "Action grammar (exactly one per reply):\n"
        "  THOUGHT: <reasoning step>\n"
        "  ACTION: <tool> key=value key2=\"value with spaces\"\n"
        "  FINAL: <answer>\n"
        "\n"
        "Tools:\n"
        "  web_search query=<text> source=web|code_host\n"
        "  visit_page url=<url>\n"
        "  page_up / page_down\n"
        "  synthesize_tool name=<proposal name>\n"
        "  call_mcp name=<registered MCP name> <tool arguments...>\n"
        "  mcp_brainstorming";

    std::string registry_section = registry_summary;
    if (registry_section != "Registered MCPs: none") {
        registry_section = "Registered MCPs:\n" + registry_section;
    }
    prompt.framework_description =
        "Capabilities: open-web and code-host search, paged text browsing, tool synthesis\n"
        "with isolated environments and automated recovery, a persistent registry of\n"
        "validated tools (MCP Box), and MCP serving over stdio.\n" +
        registry_section;

    prompt.user_query = task.query;
    if (!task.attachments.empty()) {
        prompt.user_query += "\n\nAttachments:";
        for (const auto& path : task.attachments) {
            prompt.user_query += "\n- " + path.string();
        }
    }
    return prompt;
}

AgentAction Manager::step(const std::vector<TranscriptEvent>& history,
                          const AugmentedPrompt& prompt) {
    if (steps_taken_ >= config_.loop_budget) {
        throw LoopBudgetExceeded("loop budget of " + std::to_string(config_.loop_budget) +
                                 " steps exhausted for task " + prompt.task_id);
    }
    ++steps_taken_;

    gateway::LLMRequest request;
    request.role_slot = gateway::RoleSlot::manager;
    request.max_tokens = config_.max_tokens;
    request.messages.push_back(
        {gateway::Role::system, prompt.system_preamble + "\n\n" + prompt.framework_description});
    request.messages.push_back(
        {gateway::Role::user, prompt.user_query + "\n\n## Transcript so far\n" +
                                  render_history(history) +
                                  "\nReply with exactly one action."});

    auto response = gateway_.complete(request);
    std::string reason;
    if (auto action = parse_action(response.content, &reason)) return *action;

    // One structured re-ask before giving up.
    request.messages.push_back({gateway::Role::assistant, response.content});
    request.messages.push_back(
        {gateway::Role::user, "Your reply was not a valid action (" + reason +
                                  "). Reply again with exactly one of THOUGHT:/ACTION:/FINAL: "
                                  "following the grammar."});
    auto retry = gateway_.complete(request);
    if (auto action = parse_action(retry.content, &reason)) return *action;
    throw ActionParseError("manager reply unparseable after re-ask: " + reason);
}

void Manager::dispatch(const Task& task, const AgentAction& action,
                       TranscriptWriter& transcript) {
    const auto& args = action.arguments;
    auto arg_or = [&](const std::string& key, const std::string& fallback) {
        auto it = args.find(key);
        return it == args.end() ? fallback : it->second;
    };

    if (action.tool_name == "mcp_brainstorming") {
        auto summary = registry_.summarize();
        auto prompt = build_augmented_prompt(task, summary);
        auto assessment = brainstormer_.assess(task.query, prompt.framework_description, summary);
        pending_proposals_ = assessment.proposals;
        json proposals = json::array();
        for (const auto& p : assessment.proposals) {
            proposals.push_back({{"name", p.name}, {"purpose", p.purpose}});
        }
        transcript.record(Actor::brainstorm, EventKind::observation,
                          json{{"phase", "assessment"},
                               {"gap_found", assessment.gap_found},
                               {"rationale", assessment.rationale},
                               {"proposals", proposals}});
        return;
    }

    if (action.tool_name == "web_search") {
        const std::string query = arg_or("query", "");
        if (query.empty()) {
            transcript.record(Actor::webagent, EventKind::observation,
                              json{{"tool", "web_search"}, {"error", "query argument missing"}});
            return;
        }
        const auto source = arg_or("source", "web") == "code_host" ? web::SearchSource::code_host
                                                                   : web::SearchSource::web;
        try {
            auto results = web_.search(query, source);
            json items = json::array();
            for (const auto& r : results) {
                items.push_back({{"title", r.title}, {"url", r.url}, {"snippet", r.snippet}});
            }
            transcript.record(Actor::webagent, EventKind::observation,
                              json{{"tool", "web_search"},
                                   {"query", query},
                                   {"source", web::to_string(source)},
                                   {"results", items}});
        } catch (const Error& e) {
            transcript.record(Actor::webagent, EventKind::observation,
                              json{{"tool", "web_search"}, {"query", query}, {"error", e.what()}});
        }
        return;
    }

    if (action.tool_name == "visit_page") {
        const std::string url = arg_or("url", "");
        if (url.empty()) {
            transcript.record(Actor::webagent, EventKind::observation,
                              json{{"tool", "visit_page"}, {"error", "url argument missing"}});
            return;
        }
        try {
            auto view = web_.visit(url);
            current_page_ = view;
            if (view.status == web::PageStatus::ok) {
                retrieved_.push_back(scriptgen::make_retrieved_context(
                    url, context_kind_for_url(url), view.full_text));
                retrieved_.back().fetched_at = iso_timestamp_now();
            }
            transcript.record(Actor::webagent, EventKind::observation, page_payload(view));
        } catch (const Error& e) {
            transcript.record(Actor::webagent, EventKind::observation,
                              json{{"tool", "visit_page"}, {"url", url}, {"error", e.what()}});
        }
        return;
    }

    if (action.tool_name == "page_up" || action.tool_name == "page_down") {
        if (!current_page_) {
            transcript.record(Actor::webagent, EventKind::observation,
                              json{{"tool", action.tool_name}, {"error", "no page visited yet"}});
            return;
        }
        current_page_ = web_.page_move(*current_page_, action.tool_name == "page_down"
                                                           ? web::PageDirection::down
                                                           : web::PageDirection::up);
        transcript.record(Actor::webagent, EventKind::observation, page_payload(*current_page_));
        return;
    }

    if (action.tool_name == "synthesize_tool") {
        const std::string name = arg_or("name", "");
        const ToolSpec* spec = nullptr;
        for (const auto& p : pending_proposals_) {
            if (p.name == name) spec = &p;
        }
        if (!spec) {
            transcript.record(Actor::runner, EventKind::observation,
                              json{{"tool", "synthesize_tool"},
                                   {"error", "no pending proposal named '" + name + "'"}});
            return;
        }
        const std::string source_key =
            retrieved_.empty() ? spec->name : retrieved_.front().source_url;

        auto outcome = runner_.synthesize_tool(*spec, retrieved_, task.id, source_key);

        mcpbox::McpRecord record;
        record.name = spec->name;
        record.description = spec->purpose;
        record.input_schema = spec->input_schema;
        record.bundle_ref = outcome.bundle_dir.string();
        record.env_profile = outcome.profile;
        record.provenance.task_id = task.id;
        record.provenance.model_ids = config_.model_ids;
        const std::string id = registry_.register_record(record);

        transcript.record(Actor::mcpbox, EventKind::observation,
                          json{{"phase", "registered"},
                               {"id", id},
                               {"name", spec->name},
                               {"failed_attempts", outcome.reports.size()},
                               {"smoke_stdout", outcome.smoke.stdout_text}});
        return;
    }

    if (action.tool_name == "call_mcp") {
        const std::string name = arg_or("name", "");
        if (name.empty()) {
            transcript.record(Actor::mcphost, EventKind::observation,
                              json{{"tool", "call_mcp"}, {"error", "name argument missing"}});
            return;
        }
        std::map<std::string, std::string> call_args = args;
        call_args.erase("name");
        auto outcome = invoker_.call(name, call_args);
        if (outcome.ok) {
            transcript.record(Actor::mcphost, EventKind::observation,
                              json{{"tool", name}, {"output", outcome.output}});
        } else {
            transcript.record(Actor::mcphost, EventKind::observation,
                              json{{"tool", name}, {"error", outcome.error}});
        }
        return;
    }

    transcript.record(Actor::manager, EventKind::observation,
                      json{{"tool", action.tool_name}, {"error", "tool not wired"}});
}

FinalAnswer Manager::run_task(const Task& task) {
    if (task.query.empty()) throw Error("InvalidTask", "task query is empty");

    steps_taken_ = 0;
    pending_proposals_.clear();
    retrieved_.clear();
    current_page_.reset();

    TranscriptWriter transcript(workdir_ / "transcripts" / (task.id + ".jsonl"));
    runner_.set_sink(&transcript);
    runner_.envs().set_sink(&transcript);
    struct SinkReset {
        runner::Runner& r;
        ~SinkReset() {
            r.set_sink(nullptr);
            r.envs().set_sink(nullptr);
        }
    } sink_reset{runner_};

    try {
        const auto registry_summary = registry_.summarize();
        const auto prompt = build_augmented_prompt(task, registry_summary);

        // Capability assessment always runs before any other tool.
        transcript.record(Actor::manager, EventKind::tool_call,
                          json{{"tool", "mcp_brainstorming"}, {"arguments", json::object()}});
        auto assessment =
            brainstormer_.assess(task.query, prompt.framework_description, registry_summary);
        pending_proposals_ = assessment.proposals;
        {
            json proposals = json::array();
            for (const auto& p : assessment.proposals) {
                json sources = json::array();
                for (const auto& s : p.suggested_sources) sources.push_back(s);
                proposals.push_back(
                    {{"name", p.name}, {"purpose", p.purpose}, {"sources", sources}});
            }
            transcript.record(Actor::brainstorm, EventKind::observation,
                              json{{"phase", "assessment"},
                                   {"gap_found", assessment.gap_found},
                                   {"rationale", assessment.rationale},
                                   {"proposals", proposals}});
        }

        // Reuse before generate: surface matching registered MCPs.
        for (const auto& proposal : pending_proposals_) {
            auto matches =
                registry_.lookup(proposal.name + " " + proposal.purpose, config_.reuse_threshold);
            if (matches.empty()) continue;
            const auto* existing = registry_.find_by_id(matches.front().first);
            if (!existing) continue;
            transcript.record(Actor::mcpbox, EventKind::observation,
                              json{{"phase", "reuse_candidate"},
                                   {"proposal", proposal.name},
                                   {"existing", existing->name},
                                   {"id", existing->id},
                                   {"score", matches.front().second},
                                   {"note", "call it with ACTION: call_mcp name=" +
                                                existing->name}});
        }

        for (;;) {
            AgentAction action = step(transcript.events(), prompt);
            if (action.kind == ActionKind::think) {
                transcript.record(Actor::manager, EventKind::thought, json{{"text", action.text}});
                continue;
            }
            if (action.kind == ActionKind::final_answer) {
                FinalAnswer answer;
                answer.task_id = task.id;
                answer.answer_text = action.text;
                for (const auto& event : transcript.events()) {
                    if (event.kind == EventKind::observation) {
                        answer.supporting_event_seqs.push_back(event.seq);
                    }
                }
                transcript.record(Actor::manager, EventKind::final_answer,
                                  json{{"answer", action.text},
                                       {"supporting_event_seqs", answer.supporting_event_seqs}});
                return answer;
            }
            transcript.record(Actor::manager, EventKind::tool_call,
                              json{{"tool", action.tool_name},
                                   {"arguments", arguments_json(action.arguments)}});
            dispatch(task, action, transcript);
        }
    } catch (const Error& e) {
        transcript.record(Actor::manager, EventKind::error,
                          json{{"error_kind", e.kind()}, {"message", e.what()}});
        throw;
    } catch (const std::exception& e) {
        transcript.record(Actor::manager, EventKind::error,
                          json{{"error_kind", "unexpected"}, {"message", e.what()}});
        throw;
    }
}

} // namespace alita::manager
