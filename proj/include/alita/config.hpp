#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "alita/envman.hpp"
#include "alita/error.hpp"
#include "alita/webagent.hpp"

namespace alita::cli {

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("ConfigError", m) {}
};

struct RunConfig {
    std::filesystem::path workdir = "alita-work";
    std::filesystem::path registry; // defaults to <workdir>/registry
    std::filesystem::path fixtures; // webagent fixture root (offline mode)
    std::filesystem::path assets = "assets";

    bool offline = false;
    std::optional<std::filesystem::path> replay;

    int loop_budget = 12;
    int viewport_size = 8192;
    double exec_timeout_seconds = 120.0;
    double setup_timeout_seconds = 600.0;
    double reuse_threshold = 0.35;
    double gc_ttl_hours = 72.0;

    int retry_max_attempts = 4;
    double retry_base_delay_seconds = 0.5;
    int gateway_in_flight = 4;

    std::string provider_kind = "conda"; // conda | stub | template
    envman::ProviderTemplates templates = envman::ProviderTemplates::conda_defaults();

    std::map<std::string, std::string> model_ids; // role slot name -> model id
    std::map<web::SearchSource, std::string> search_endpoints;

    std::filesystem::path registry_path() const {
        return registry.empty() ? workdir / "registry" : registry;
    }
};

// Key/value config document: `key = value` lines, # comments, dotted keys
// (model.manager, provider.create, search.web, retry.max_attempts).
RunConfig load_config_file(const std::filesystem::path& path);

// Applies one "key = value" assignment; shared by the file parser, env
// overrides and CLI flags. Throws ConfigError on unknown keys or
// unparseable values.
void apply_config_value(RunConfig& config, const std::string& key, const std::string& value);

// ALITA_<KEY> env vars (dots become underscores) override file values.
void apply_env_overrides(RunConfig& config);

// Enforces config invariants: offline runs need a replay script and web
// fixtures; numeric settings must be positive.
void validate(const RunConfig& config);

} // namespace alita::cli
