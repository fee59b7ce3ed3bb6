#include "alita/gateway.hpp"

#include "alita/digest.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <random>
#include <thread>

namespace alita::gateway {

using nlohmann::json;

const char* to_string(Role role) {
    switch (role) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

const char* to_string(RoleSlot slot) {
    switch (slot) {
        case RoleSlot::manager: return "manager";
        case RoleSlot::webagent: return "webagent";
        case RoleSlot::brainstorm: return "brainstorm";
        case RoleSlot::scriptgen: return "scriptgen";
    }
    return "manager";
}

std::optional<RoleSlot> role_slot_from_string(const std::string& name) {
    if (name == "manager") return RoleSlot::manager;
    if (name == "webagent") return RoleSlot::webagent;
    if (name == "brainstorm") return RoleSlot::brainstorm;
    if (name == "scriptgen") return RoleSlot::scriptgen;
    return std::nullopt;
}

void validate_request(const LLMRequest& request) {
    if (request.messages.empty()) throw InvalidRequest("messages must be non-empty");
    for (const auto& msg : request.messages) {
        if (msg.content.empty() && msg.role != Role::assistant) {
            throw InvalidRequest(std::string("empty content for role ") + to_string(msg.role));
        }
    }
    if (request.max_tokens <= 0) throw InvalidRequest("max_tokens must be positive");
    if (request.temperature < 0.0) throw InvalidRequest("temperature must be non-negative");
}

std::string render_prompt(const LLMRequest& request) {
    std::string text;
    for (const auto& msg : request.messages) {
        if (!text.empty()) text += '\n';
        text += to_string(msg.role);
        text += ": ";
        text += msg.content;
    }
    return text;
}

ReplayScript load_replay(const std::filesystem::path& source) {
    std::ifstream in(source);
    if (!in) throw Error("IoError", "cannot open replay file: " + source.string());

    ReplayScript script;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            throw ReplayParseError(line_no, e.what());
        }
        if (!record.is_object()) throw ReplayParseError(line_no, "record is not an object");
        if (!record.contains("role_slot") || !record["role_slot"].is_string()) {
            throw ReplayParseError(line_no, "missing role_slot field");
        }
        auto slot = role_slot_from_string(record["role_slot"].get<std::string>());
        if (!slot) {
            throw ReplayParseError(line_no, "unknown role_slot: " +
                                                record["role_slot"].get<std::string>());
        }
        if (!record.contains("response") || !record["response"].is_string()) {
            throw ReplayParseError(line_no, "missing response field");
        }
        ReplayEntry entry;
        entry.role_slot = *slot;
        entry.response = record["response"].get<std::string>();
        if (record.contains("prompt_digest")) {
            if (!record["prompt_digest"].is_string()) {
                throw ReplayParseError(line_no, "prompt_digest must be a string");
            }
            entry.prompt_digest = record["prompt_digest"].get<std::string>();
        }
        script.entries.push_back(std::move(entry));
    }
    return script;
}

// ── ReplayBackend ───────────────────────────────────────────────────────

ReplayBackend::ReplayBackend(ReplayScript script,
                             std::map<RoleSlot, std::string> model_ids,
                             bool capture_prompts)
    : script_(std::move(script)), model_ids_(std::move(model_ids)), capture_(capture_prompts) {
    for (std::size_t i = 0; i < script_.entries.size(); ++i) {
        per_slot_[script_.entries[i].role_slot].push_back(i);
    }
}

LLMResponse ReplayBackend::complete(const LLMRequest& request) {
    validate_request(request);
    const std::string prompt = render_prompt(request);
    const std::string actual_digest = digest::prompt_digest(prompt);

    std::lock_guard<std::mutex> lock(mutex_);
    if (capture_) {
        captured_.push_back({request.role_slot, prompt, actual_digest});
    }
    auto& indices = per_slot_[request.role_slot];
    auto& cursor = cursor_[request.role_slot];
    if (cursor >= indices.size()) {
        throw ScriptExhausted(std::string("no replay entry left for role_slot ") +
                              to_string(request.role_slot));
    }
    const ReplayEntry& entry = script_.entries[indices[cursor]];
    if (entry.prompt_digest && *entry.prompt_digest != actual_digest) {
        throw DigestMismatch(std::string("prompt digest mismatch for role_slot ") +
                             to_string(request.role_slot) + ": fixture " +
                             *entry.prompt_digest + " vs actual " + actual_digest);
    }
    ++cursor;

    LLMResponse response;
    response.content = entry.response;
    auto it = model_ids_.find(request.role_slot);
    response.model_id = (it != model_ids_.end() && !it->second.empty()) ? it->second : "replay";
    response.attempt_count = 1;
    return response;
}

std::vector<ReplayBackend::CapturedPrompt> ReplayBackend::captured_prompts() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return captured_;
}

// ── HttpBackend ─────────────────────────────────────────────────────────

namespace {

// std::counting_semaphore needs a compile-time max; a tiny cv-based
// semaphore keeps the cap runtime-configurable.
class Semaphore {
public:
    explicit Semaphore(int count) : count_(count) {}
    void acquire() {
        std::unique_lock<std::mutex> lock(m_);
        cv_.wait(lock, [&] { return count_ > 0; });
        --count_;
    }
    void release() {
        {
            std::lock_guard<std::mutex> lock(m_);
            ++count_;
        }
        cv_.notify_one();
    }

private:
    std::mutex m_;
    std::condition_variable cv_;
    int count_;
};

struct ParsedUrl {
    std::string base;
    std::string path;
};

ParsedUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw ProviderError("endpoint URL missing scheme: " + url);
    }
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

std::string env_or_empty(const std::string& name) {
    const char* value = std::getenv(name.c_str());
    return value ? value : "";
}

std::string upper(const std::string& s) {
    std::string out = s;
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

bool is_retryable_status(int status) {
    return status == 429 || (status >= 500 && status <= 599);
}

} // namespace

std::map<RoleSlot, HttpEndpoint> endpoints_from_env(
    const std::map<RoleSlot, std::string>& model_ids) {
    std::map<RoleSlot, HttpEndpoint> endpoints;
    const std::string base_url = env_or_empty("ALITA_PROVIDER_URL");
    const std::string base_key = env_or_empty("ALITA_PROVIDER_KEY");
    for (RoleSlot slot : {RoleSlot::manager, RoleSlot::webagent, RoleSlot::brainstorm,
                          RoleSlot::scriptgen}) {
        const std::string suffix = "_" + upper(to_string(slot));
        HttpEndpoint ep;
        ep.url = env_or_empty("ALITA_PROVIDER_URL" + suffix);
        if (ep.url.empty()) ep.url = base_url;
        ep.api_key = env_or_empty("ALITA_PROVIDER_KEY" + suffix);
        if (ep.api_key.empty()) ep.api_key = base_key;
        auto it = model_ids.find(slot);
        if (it != model_ids.end()) ep.model_id = it->second;
        endpoints[slot] = std::move(ep);
    }
    return endpoints;
}

struct HttpBackend::Impl {
    std::map<RoleSlot, HttpEndpoint> endpoints;
    RetryPolicy policy;
    Semaphore in_flight;

    Impl(std::map<RoleSlot, HttpEndpoint> eps, RetryPolicy pol, int cap)
        : endpoints(std::move(eps)), policy(pol), in_flight(cap > 0 ? cap : 1) {}
};

HttpBackend::HttpBackend(std::map<RoleSlot, HttpEndpoint> endpoints, RetryPolicy policy,
                         int max_in_flight)
    : impl_(std::make_unique<Impl>(std::move(endpoints), policy, max_in_flight)) {}

HttpBackend::~HttpBackend() = default;

LLMResponse HttpBackend::complete(const LLMRequest& request) {
    validate_request(request);
    auto it = impl_->endpoints.find(request.role_slot);
    if (it == impl_->endpoints.end() || it->second.url.empty()) {
        throw ProviderError(std::string("no endpoint configured for role_slot ") +
                            to_string(request.role_slot));
    }
    const HttpEndpoint& endpoint = it->second;
    if (endpoint.model_id.empty()) {
        throw ProviderError(std::string("no model id configured for role_slot ") +
                            to_string(request.role_slot));
    }

    json body;
    body["model"] = endpoint.model_id;
    body["messages"] = json::array();
    for (const auto& msg : request.messages) {
        body["messages"].push_back({{"role", to_string(msg.role)}, {"content", msg.content}});
    }
    body["max_tokens"] = request.max_tokens;
    body["temperature"] = request.temperature;
    const std::string payload = body.dump();

    auto [base, path] = split_url(endpoint.url);

    impl_->in_flight.acquire();
    struct Release {
        Semaphore& sem;
        ~Release() { sem.release(); }
    } release{impl_->in_flight};

    thread_local std::mt19937_64 rng{std::random_device{}()};
    std::string last_failure = "no attempt made";

    for (int attempt = 0; attempt < impl_->policy.max_attempts; ++attempt) {
        if (attempt > 0) {
            const double ceiling =
                impl_->policy.base_delay_seconds * static_cast<double>(1u << (attempt - 1));
            std::uniform_real_distribution<double> jitter(0.0, ceiling);
            std::this_thread::sleep_for(std::chrono::duration<double>(jitter(rng)));
        }

        httplib::Client client(base);
        client.set_connection_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::duration<double>(impl_->policy.connect_timeout_seconds)));
        client.set_read_timeout(std::chrono::duration_cast<std::chrono::milliseconds>(
            std::chrono::duration<double>(impl_->policy.read_timeout_seconds)));
        httplib::Headers headers;
        if (!endpoint.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + endpoint.api_key);
        }

        auto res = client.Post(path, headers, payload, "application/json");
        if (!res) {
            last_failure = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 200 && res->status < 300) {
            json parsed;
            try {
                parsed = json::parse(res->body);
            } catch (const json::exception& e) {
                throw ProviderError(std::string("malformed provider response: ") + e.what());
            }
            if (!parsed.contains("choices") || !parsed["choices"].is_array() ||
                parsed["choices"].empty() ||
                !parsed["choices"][0].contains("message") ||
                !parsed["choices"][0]["message"].contains("content")) {
                throw ProviderError("provider response missing choices[0].message.content");
            }
            LLMResponse response;
            response.content = parsed["choices"][0]["message"]["content"].get<std::string>();
            response.model_id = parsed.value("model", endpoint.model_id);
            response.attempt_count = attempt + 1;
            if (parsed.contains("usage") && parsed["usage"].is_object()) {
                TokenUsage usage;
                usage.prompt_tokens = parsed["usage"].value("prompt_tokens", 0);
                usage.completion_tokens = parsed["usage"].value("completion_tokens", 0);
                response.usage = usage;
            }
            return response;
        }
        if (!is_retryable_status(res->status)) {
            throw ProviderError("provider returned status " + std::to_string(res->status) +
                                ": " + res->body.substr(0, 512));
        }
        last_failure = "status " + std::to_string(res->status);
    }
    throw ProviderError("retry budget exhausted after " +
                        std::to_string(impl_->policy.max_attempts) +
                        " attempts; last failure: " + last_failure);
}

// ── Gateway ─────────────────────────────────────────────────────────────

Gateway::Gateway(std::unique_ptr<Backend> backend) : backend_(std::move(backend)) {}

LLMResponse Gateway::complete(const LLMRequest& request) {
    validate_request(request);
    return backend_->complete(request);
}

} // namespace alita::gateway
