#include "alita/mcphost.hpp"

#include "alita/scriptgen.hpp"

#include <istream>
#include <ostream>

namespace alita::mcphost {

using nlohmann::json;

namespace {

std::string json_schema_type(const std::string& semantic_type) {
    if (semantic_type == "integer" || semantic_type == "int") return "integer";
    if (semantic_type == "number" || semantic_type == "float") return "number";
    if (semantic_type == "boolean" || semantic_type == "bool") return "boolean";
    return "string"; // url, path, text, ... all ride as strings
}

} // namespace

json tool_descriptor(const mcpbox::McpRecord& record) {
    json properties = json::object();
    json required = json::array();
    for (const auto& param : record.input_schema) {
        json prop{{"type", json_schema_type(param.type)}};
        if (param.has_default) prop["default"] = param.default_value;
        properties[param.name] = std::move(prop);
        if (!param.has_default) required.push_back(param.name);
    }
    return json{{"name", record.name},
                {"description", record.description},
                {"inputSchema",
                 {{"type", "object"}, {"properties", properties}, {"required", required}}}};
}

// ── McpInvoker ──────────────────────────────────────────────────────────

McpInvoker::McpInvoker(mcpbox::Registry& registry, envman::EnvManager& envs,
                       runner::Runner& run, double exec_timeout_seconds)
    : registry_(registry), envs_(envs), runner_(run), exec_timeout_(exec_timeout_seconds) {}

McpInvoker::~McpInvoker() {
    shutdown();
}

void McpInvoker::shutdown() {
    for (auto& [name, handle] : live_envs_) {
        try {
            envs_.destroy(handle);
        } catch (const Error&) {
            // Orphan marking already happened inside envman.
        }
    }
    live_envs_.clear();
}

McpInvoker::CallOutcome McpInvoker::call(const std::string& name_or_id,
                                         const std::map<std::string, std::string>& arguments) {
    CallOutcome outcome;
    const mcpbox::McpRecord* record = registry_.find_by_name(name_or_id);
    if (!record) record = registry_.find_by_id(name_or_id);
    if (!record) {
        outcome.error = "no registered MCP named '" + name_or_id + "'";
        return outcome;
    }

    for (const auto& [key, value] : arguments) {
        bool known = false;
        for (const auto& param : record->input_schema) {
            if (param.name == key) {
                known = true;
                break;
            }
        }
        if (!known) {
            outcome.error = "unknown argument '" + key + "' for tool " + record->name;
            return outcome;
        }
    }

    scriptgen::ScriptBundle bundle;
    try {
        bundle = scriptgen::load_bundle(registry_.root() / record->bundle_ref);
    } catch (const Error& e) {
        outcome.error = std::string("bundle unreadable: ") + e.what();
        return outcome;
    }

    // Lazy provisioning, one live env per record environment.
    auto it = live_envs_.find(record->env_profile.env_name);
    if (it == live_envs_.end() || !std::filesystem::exists(it->second.root_path)) {
        try {
            auto provisioned =
                envs_.provision_with_recovery(record->env_profile, bundle.tool_script);
            it = live_envs_.insert_or_assign(record->env_profile.env_name,
                                             std::move(provisioned.first))
                     .first;
        } catch (const Error& e) {
            outcome.error = std::string("environment provisioning failed: ") + e.what();
            return outcome;
        }
    }

    std::vector<std::string> args;
    for (const auto& param : record->input_schema) {
        auto arg = arguments.find(param.name);
        if (arg == arguments.end()) continue;
        args.push_back("--" + param.name);
        args.push_back(arg->second);
    }

    runner::ExecutionResult result;
    try {
        result = runner_.execute(bundle, it->second, args, exec_timeout_);
    } catch (const Error& e) {
        outcome.error = std::string("execution failed: ") + e.what();
        return outcome;
    }

    if (result.status == runner::ExecStatus::success) {
        outcome.ok = true;
        outcome.output = result.stdout_text;
        registry_.increment_usage(record->id);
    } else if (result.status == runner::ExecStatus::timeout) {
        outcome.error = "tool execution timed out";
    } else {
        std::string stderr_tail = result.stderr_text.size() > 2000
                                      ? result.stderr_text.substr(result.stderr_text.size() - 2000)
                                      : result.stderr_text;
        outcome.error = "tool exited " + std::to_string(result.exit_code.value_or(-1)) +
                        (stderr_tail.empty() ? "" : ": " + stderr_tail);
    }
    return outcome;
}

// ── serve loop ──────────────────────────────────────────────────────────

namespace {

json error_response(const json& id, int code, const std::string& message) {
    return json{{"jsonrpc", "2.0"},
                {"id", id},
                {"error", {{"code", code}, {"message", message}}}};
}

json result_response(const json& id, json result) {
    return json{{"jsonrpc", "2.0"}, {"id", id}, {"result", std::move(result)}};
}

} // namespace

int serve(mcpbox::Registry& registry, envman::EnvManager& envs, runner::Runner& run,
          const std::string& record_name_or_id, std::istream& in, std::ostream& out,
          double exec_timeout_seconds) {
    const mcpbox::McpRecord* record = registry.find_by_name(record_name_or_id);
    if (!record) record = registry.find_by_id(record_name_or_id);
    if (!record) {
        throw mcpbox::InvalidRecord("cannot serve unknown record '" + record_name_or_id + "'");
    }
    const std::string record_name = record->name;

    McpInvoker invoker(registry, envs, run, exec_timeout_seconds);

    auto emit = [&](const json& message) {
        out << message.dump() << "\n";
        out.flush();
    };

    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;

        json message = json::parse(line, nullptr, false);
        if (message.is_discarded()) {
            emit(error_response(nullptr, kParseError, "parse error"));
            continue;
        }
        if (!message.is_object() || message.value("jsonrpc", "") != "2.0" ||
            !message.contains("method") || !message["method"].is_string()) {
            emit(error_response(message.is_object() ? message.value("id", json(nullptr))
                                                    : json(nullptr),
                                kInvalidRequest, "invalid request"));
            continue;
        }

        const std::string method = message["method"].get<std::string>();
        const bool is_notification = !message.contains("id") || message["id"].is_null();
        const json id = message.value("id", json(nullptr));

        if (method == "initialize") {
            if (is_notification) continue;
            emit(result_response(id, json{{"protocolVersion", kProtocolVersion},
                                          {"capabilities", {{"tools", json::object()}}},
                                          {"serverInfo",
                                           {{"name", kServerName},
                                            {"version", kServerVersion}}}}));
        } else if (method == "notifications/initialized") {
            // Client handshake note; nothing to answer.
        } else if (method == "tools/list") {
            if (is_notification) continue;
            const auto* current = registry.find_by_name(record_name);
            emit(result_response(id, json{{"tools", json::array({tool_descriptor(*current)})}}));
        } else if (method == "tools/call") {
            if (is_notification) continue;
            const json params = message.value("params", json::object());
            if (!params.is_object() || !params.contains("name") ||
                !params["name"].is_string()) {
                emit(error_response(id, kInvalidParams, "params.name is required"));
                continue;
            }
            const std::string tool_name = params["name"].get<std::string>();
            if (tool_name != record_name) {
                emit(error_response(id, kInvalidParams,
                                    "this session serves tool '" + record_name + "'"));
                continue;
            }
            std::map<std::string, std::string> arguments;
            if (params.contains("arguments")) {
                if (!params["arguments"].is_object()) {
                    emit(error_response(id, kInvalidParams, "params.arguments must be an object"));
                    continue;
                }
                for (auto it = params["arguments"].begin(); it != params["arguments"].end();
                     ++it) {
                    arguments[it.key()] = it.value().is_string()
                                              ? it.value().get<std::string>()
                                              : it.value().dump();
                }
            }
            auto outcome = invoker.call(record_name, arguments);
            json content = json::array(
                {json{{"type", "text"}, {"text", outcome.ok ? outcome.output : outcome.error}}});
            emit(result_response(
                id, json{{"content", std::move(content)}, {"isError", !outcome.ok}}));
        } else {
            if (is_notification) continue;
            emit(error_response(id, kMethodNotFound, "method not found: " + method));
        }
    }
    return 0;
}

} // namespace alita::mcphost
