#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "alita/error.hpp"

namespace alita::gateway {

enum class Role { system, user, assistant };
enum class RoleSlot { manager, webagent, brainstorm, scriptgen };

const char* to_string(Role role);
const char* to_string(RoleSlot slot);
std::optional<RoleSlot> role_slot_from_string(const std::string& name);

struct ChatMessage {
    Role role = Role::user;
    std::string content;
};

struct LLMRequest {
    RoleSlot role_slot = RoleSlot::manager;
    std::vector<ChatMessage> messages;
    int max_tokens = 4096;
    double temperature = 0.0; // reproducibility default
};

struct TokenUsage {
    int prompt_tokens = 0;
    int completion_tokens = 0;
};

struct LLMResponse {
    std::string content;
    std::string model_id;
    int attempt_count = 1;
    std::optional<TokenUsage> usage;
};

struct InvalidRequest : Error {
    explicit InvalidRequest(const std::string& m) : Error("InvalidRequest", m) {}
};
struct ScriptExhausted : Error {
    explicit ScriptExhausted(const std::string& m) : Error("ScriptExhausted", m) {}
};
struct ProviderError : Error {
    explicit ProviderError(const std::string& m) : Error("ProviderError", m) {}
};
struct ReplayParseError : Error {
    ReplayParseError(int line, const std::string& m)
        : Error("ParseError", "replay line " + std::to_string(line) + ": " + m), line_no(line) {}
    int line_no;
};
struct DigestMismatch : Error {
    explicit DigestMismatch(const std::string& m) : Error("DigestMismatch", m) {}
};

struct ReplayEntry {
    RoleSlot role_slot = RoleSlot::manager;
    std::optional<std::string> prompt_digest;
    std::string response;
};

struct ReplayScript {
    std::vector<ReplayEntry> entries;
};

// Replay file: UTF-8 line-delimited JSON records with fields
// role_slot, prompt_digest (optional), response.
ReplayScript load_replay(const std::filesystem::path& source);

// Canonical prompt text a digest is computed over: one "role: content"
// line per message, joined with newlines.
std::string render_prompt(const LLMRequest& request);

// Throws InvalidRequest on violated invariants (empty message list,
// empty system/user content, non-positive max_tokens, negative temperature).
void validate_request(const LLMRequest& request);

class Backend {
public:
    virtual ~Backend() = default;
    virtual LLMResponse complete(const LLMRequest& request) = 0;
};

// Deterministic scripted backend. Entries are consumed strictly
// sequentially per role_slot; an entry that carries a prompt_digest is
// asserted against the incoming request (mismatch is a hard error).
class ReplayBackend : public Backend {
public:
    explicit ReplayBackend(ReplayScript script,
                           std::map<RoleSlot, std::string> model_ids = {},
                           bool capture_prompts = false);

    LLMResponse complete(const LLMRequest& request) override;

    struct CapturedPrompt {
        RoleSlot slot;
        std::string prompt_text;
        std::string digest;
    };
    std::vector<CapturedPrompt> captured_prompts() const;

private:
    ReplayScript script_;
    std::map<RoleSlot, std::string> model_ids_;
    bool capture_;
    mutable std::mutex mutex_;
    std::map<RoleSlot, std::vector<std::size_t>> per_slot_;
    std::map<RoleSlot, std::size_t> cursor_;
    std::vector<CapturedPrompt> captured_;
};

struct RetryPolicy {
    int max_attempts = 4;
    double base_delay_seconds = 0.5; // delay for attempt k: uniform(0, base * 2^k)
    double connect_timeout_seconds = 10.0;
    double read_timeout_seconds = 60.0;
};

struct HttpEndpoint {
    std::string url;     // full chat-completions endpoint URL
    std::string api_key; // sent as a bearer token
    std::string model_id;
};

// Endpoint/key per role slot from ALITA_PROVIDER_URL / ALITA_PROVIDER_KEY,
// with role-suffixed variants (e.g. ALITA_PROVIDER_URL_MANAGER) taking
// precedence. Model ids come from the caller's configuration.
std::map<RoleSlot, HttpEndpoint> endpoints_from_env(
    const std::map<RoleSlot, std::string>& model_ids);

// Live backend speaking the OpenAI-style chat-completions JSON shape.
// Transient failures (429, 5xx, transport errors) are retried with
// exponential backoff and full jitter up to the policy budget. A global
// in-flight cap bounds concurrent outbound requests.
class HttpBackend : public Backend {
public:
    HttpBackend(std::map<RoleSlot, HttpEndpoint> endpoints,
                RetryPolicy policy = {},
                int max_in_flight = 4);
    ~HttpBackend() override;

    LLMResponse complete(const LLMRequest& request) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Thin front door: validates the request, then delegates to the backend.
class Gateway {
public:
    explicit Gateway(std::unique_ptr<Backend> backend);

    LLMResponse complete(const LLMRequest& request);

    Backend& backend() { return *backend_; }

private:
    std::unique_ptr<Backend> backend_;
};

} // namespace alita::gateway
