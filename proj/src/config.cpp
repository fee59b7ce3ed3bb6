#include "alita/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>

namespace alita::cli {

namespace {

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::string unquote(const std::string& s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') ||
                          (s.front() == '\'' && s.back() == '\''))) {
        return s.substr(1, s.size() - 2);
    }
    return s;
}

bool parse_bool(const std::string& value, const std::string& key) {
    std::string v = value;
    std::transform(v.begin(), v.end(), v.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (v == "true" || v == "yes" || v == "1" || v == "on") return true;
    if (v == "false" || v == "no" || v == "0" || v == "off") return false;
    throw ConfigError("boolean expected for " + key + ", got: " + value);
}

double parse_number(const std::string& value, const std::string& key) {
    try {
        std::size_t consumed = 0;
        double parsed = std::stod(value, &consumed);
        if (consumed != value.size()) throw std::invalid_argument(value);
        return parsed;
    } catch (const std::exception&) {
        throw ConfigError("number expected for " + key + ", got: " + value);
    }
}

// every known key, for env-override iteration
const char* kKnownKeys[] = {
    "workdir",        "registry",        "fixtures",          "assets",
    "offline",        "replay",          "loop_budget",       "viewport_size",
    "exec_timeout_seconds",              "setup_timeout_seconds",
    "reuse_threshold",                   "gc_ttl_hours",
    "retry.max_attempts",                "retry.base_delay_seconds",
    "gateway.in_flight",                 "provider",
    "provider.create",                   "provider.install",
    "provider.run",                      "provider.teardown",
    "model.manager",  "model.webagent",  "model.brainstorm",  "model.scriptgen",
    "search.web",     "search.code_host",
};

} // namespace

void apply_config_value(RunConfig& config, const std::string& key, const std::string& value) {
    if (key == "workdir") config.workdir = value;
    else if (key == "registry") config.registry = value;
    else if (key == "fixtures") config.fixtures = value;
    else if (key == "assets") config.assets = value;
    else if (key == "offline") config.offline = parse_bool(value, key);
    else if (key == "replay") config.replay = std::filesystem::path(value);
    else if (key == "loop_budget") config.loop_budget = static_cast<int>(parse_number(value, key));
    else if (key == "viewport_size") config.viewport_size = static_cast<int>(parse_number(value, key));
    else if (key == "exec_timeout_seconds") config.exec_timeout_seconds = parse_number(value, key);
    else if (key == "setup_timeout_seconds") config.setup_timeout_seconds = parse_number(value, key);
    else if (key == "reuse_threshold") config.reuse_threshold = parse_number(value, key);
    else if (key == "gc_ttl_hours") config.gc_ttl_hours = parse_number(value, key);
    else if (key == "retry.max_attempts") config.retry_max_attempts = static_cast<int>(parse_number(value, key));
    else if (key == "retry.base_delay_seconds") config.retry_base_delay_seconds = parse_number(value, key);
    else if (key == "gateway.in_flight") config.gateway_in_flight = static_cast<int>(parse_number(value, key));
    else if (key == "provider") {
        if (value != "conda" && value != "stub" && value != "template") {
            throw ConfigError("provider must be conda, stub or template, got: " + value);
        }
        config.provider_kind = value;
    } else if (key == "provider.create") config.templates.create = value;
    else if (key == "provider.install") config.templates.install = value;
    else if (key == "provider.run") config.templates.run = value;
    else if (key == "provider.teardown") config.templates.teardown = value;
    else if (key == "model.manager") config.model_ids["manager"] = value;
    else if (key == "model.webagent") config.model_ids["webagent"] = value;
    else if (key == "model.brainstorm") config.model_ids["brainstorm"] = value;
    else if (key == "model.scriptgen") config.model_ids["scriptgen"] = value;
    else if (key == "search.web") config.search_endpoints[web::SearchSource::web] = value;
    else if (key == "search.code_host") config.search_endpoints[web::SearchSource::code_host] = value;
    else throw ConfigError("unknown config key: " + key);
}

RunConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());

    RunConfig config;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(line_no) +
                              " is not 'key = value': " + t);
        }
        apply_config_value(config, trim(t.substr(0, eq)), unquote(trim(t.substr(eq + 1))));
    }
    return config;
}

void apply_env_overrides(RunConfig& config) {
    for (const char* key : kKnownKeys) {
        std::string env_name = "ALITA_";
        for (const char* p = key; *p; ++p) {
            char c = *p == '.' ? '_' : *p;
            env_name.push_back(static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
        }
        if (const char* value = std::getenv(env_name.c_str())) {
            apply_config_value(config, key, value);
        }
    }
}

void validate(const RunConfig& config) {
    if (config.offline) {
        if (!config.replay) throw ConfigError("offline mode requires a replay script");
        if (config.fixtures.empty()) {
            throw ConfigError("offline mode requires webagent fixtures");
        }
    }
    if (config.loop_budget <= 0) throw ConfigError("loop_budget must be positive");
    if (config.viewport_size <= 0) throw ConfigError("viewport_size must be positive");
    if (config.exec_timeout_seconds <= 0) throw ConfigError("exec_timeout_seconds must be positive");
    if (config.setup_timeout_seconds <= 0) throw ConfigError("setup_timeout_seconds must be positive");
    if (config.retry_max_attempts <= 0) throw ConfigError("retry.max_attempts must be positive");
    if (config.retry_base_delay_seconds <= 0) throw ConfigError("retry.base_delay_seconds must be positive");
    if (config.gateway_in_flight <= 0) throw ConfigError("gateway.in_flight must be positive");
    if (config.gc_ttl_hours <= 0) throw ConfigError("gc_ttl_hours must be positive");
    if (config.reuse_threshold < 0.0 || config.reuse_threshold > 1.0) {
        throw ConfigError("reuse_threshold must be within [0, 1]");
    }
}

} // namespace alita::cli
