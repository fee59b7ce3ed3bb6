#pragma once

#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "alita/envman.hpp"
#include "alita/mcpbox.hpp"
#include "alita/runner.hpp"

namespace alita::mcphost {

inline constexpr const char* kProtocolVersion = "2024-11-05";
inline constexpr const char* kServerName = "alita-mcphost";
inline constexpr const char* kServerVersion = "0.1.0";

// JSON-RPC error codes used on the wire.
inline constexpr int kParseError = -32700;
inline constexpr int kInvalidRequest = -32600;
inline constexpr int kMethodNotFound = -32601;
inline constexpr int kInvalidParams = -32602;
inline constexpr int kInternalError = -32603;

// JSON-schema-style descriptor derived 1:1 from a record.
nlohmann::json tool_descriptor(const mcpbox::McpRecord& record);

// Executes registered records: provisions the record's environment
// lazily (recovery ladder included), maps arguments onto the entry
// command, and bumps usage_count once per successful call. Shared by
// the stdio server below and the manager's in-process dispatch.
class McpInvoker {
public:
    McpInvoker(mcpbox::Registry& registry, envman::EnvManager& envs, runner::Runner& run,
               double exec_timeout_seconds = runner::kDefaultExecTimeoutSeconds);
    ~McpInvoker();

    struct CallOutcome {
        bool ok = false;
        std::string output; // stdout on success
        std::string error;  // failure note otherwise
    };

    // name_or_id matches record name first, then id. Unknown arguments
    // are rejected; known ones become "--name value" pairs in schema
    // order.
    CallOutcome call(const std::string& name_or_id,
                     const std::map<std::string, std::string>& arguments);

    // Tears down environments provisioned by this invoker.
    void shutdown();

private:
    mcpbox::Registry& registry_;
    envman::EnvManager& envs_;
    runner::Runner& runner_;
    double exec_timeout_;
    std::map<std::string, envman::EnvHandle> live_envs_; // env_name -> handle
};

// Single-session JSON-RPC loop over newline-delimited messages:
// initialize, tools/list, tools/call. Unknown methods answer -32601;
// per-request failures are returned in-band. Returns when input closes.
int serve(mcpbox::Registry& registry, envman::EnvManager& envs, runner::Runner& run,
          const std::string& record_name_or_id, std::istream& in, std::ostream& out,
          double exec_timeout_seconds = runner::kDefaultExecTimeoutSeconds);

} // namespace alita::mcphost
