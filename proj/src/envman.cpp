#include "alita/envman.hpp"

#include "alita/digest.hpp"
#include "alita/lockfile.hpp"
#include "alita/subprocess.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <regex>
#include <sstream>

namespace alita::envman {

using nlohmann::json;

namespace {

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool valid_version(const std::string& v) {
    if (v.empty()) return false;
    bool digit_seen = false;
    bool last_dot = true;
    for (char c : v) {
        if (c == '.') {
            if (last_dot) return false;
            last_dot = true;
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            digit_seen = true;
            last_dot = false;
        } else {
            return false;
        }
    }
    return digit_seen && !last_dot;
}

bool valid_package_name(const std::string& name) {
    if (name.empty()) return false;
    for (unsigned char c : name) {
        if (!(std::isalnum(c) || c == '-' || c == '_' || c == '.')) return false;
    }
    return std::isalnum(static_cast<unsigned char>(name.front())) != 0;
}

std::vector<std::string> version_parts(const std::string& v) {
    std::vector<std::string> parts;
    std::string current;
    for (char c : v) {
        if (c == '.') {
            parts.push_back(current);
            current.clear();
        } else {
            current.push_back(c);
        }
    }
    parts.push_back(current);
    return parts;
}

std::string normalize_pkg_name(const std::string& name) {
    std::string out = lower(name);
    std::replace(out.begin(), out.end(), '-', '_');
    return out;
}

std::string tail(const std::string& text, std::size_t n) {
    return text.size() <= n ? text : text.substr(text.size() - n);
}

// Lines already realized by the planner: the env is created and
// activated by the provider templates, not by replaying these.
bool is_env_lifecycle_line(const std::string& line) {
    static const std::regex patterns[] = {
        std::regex(R"(^\s*conda\s+(create|activate|deactivate)\b)"),
        std::regex(R"(^\s*conda\s+env\s+(create|remove)\b)"),
        std::regex(R"(^\s*source\s+\S*activate\b)"),
        std::regex(R"(^\s*(python3?|py)\s+-m\s+venv\b)"),
        std::regex(R"(^\s*virtualenv\b)"),
    };
    for (const auto& re : patterns) {
        if (std::regex_search(line, re)) return true;
    }
    return false;
}

// "<installer> install <args...>" -> package tokens, or nullopt when the
// line is not an install command. Installer options and their values are
// skipped.
std::optional<std::vector<std::string>> parse_install_line(const std::string& line) {
    std::istringstream in(line);
    std::string installer, verb;
    in >> installer >> verb;
    if (installer.empty() || verb != "install") return std::nullopt;

    static const std::set<std::string> value_options = {"-n", "--name", "-c", "--channel",
                                                        "-r", "--requirement", "-t", "--target"};
    std::vector<std::string> packages;
    std::string token;
    bool skip_next = false;
    while (in >> token) {
        if (skip_next) {
            skip_next = false;
            continue;
        }
        if (!token.empty() && token[0] == '-') {
            if (value_options.count(token)) skip_next = true;
            continue;
        }
        packages.push_back(token);
    }
    return packages;
}

} // namespace

std::optional<Dependency> parse_dependency(const std::string& token) {
    static const char* operators[] = {"==", "~=", ">=", "<="};
    for (const char* op : operators) {
        auto pos = token.find(op);
        if (pos == std::string::npos) continue;
        Dependency dep;
        dep.name = token.substr(0, pos);
        dep.constraint = token.substr(pos);
        const std::string version = token.substr(pos + 2);
        if (!valid_package_name(dep.name) || !valid_version(version)) return std::nullopt;
        const auto parts = version_parts(version).size();
        if (std::string(op) == "~=" && parts < 2) return std::nullopt;
        return dep;
    }
    if (!valid_package_name(token)) return std::nullopt;
    return Dependency{token, ""};
}

json to_json(const EnvProfile& profile) {
    json deps = json::array();
    for (const auto& dep : profile.dependencies) {
        deps.push_back({{"name", dep.name}, {"constraint", dep.constraint}});
    }
    return json{{"env_name", profile.env_name},
                {"dependencies", deps},
                {"setup_steps", profile.setup_steps},
                {"provenance", profile.provenance},
                {"recovery_round", profile.recovery_round}};
}

EnvProfile env_profile_from_json(const json& j) {
    EnvProfile profile;
    profile.env_name = j.at("env_name").get<std::string>();
    for (const auto& dep : j.at("dependencies")) {
        profile.dependencies.push_back(
            {dep.at("name").get<std::string>(), dep.at("constraint").get<std::string>()});
    }
    profile.setup_steps = j.at("setup_steps").get<std::vector<std::string>>();
    profile.provenance = j.at("provenance").get<std::vector<std::string>>();
    profile.recovery_round = j.at("recovery_round").get<int>();
    return profile;
}

// ── Providers ───────────────────────────────────────────────────────────

ProviderTemplates ProviderTemplates::conda_defaults() {
    ProviderTemplates t;
    t.create = "conda create -y -n {env_name} python";
    t.install = "conda run -n {env_name} pip install {packages}";
    t.run = "conda run -n {env_name} {command}";
    t.teardown = "conda env remove -y -n {env_name}";
    return t;
}

namespace {

std::string fill_template(std::string tpl, const std::map<std::string, std::string>& values) {
    for (const auto& [key, value] : values) {
        const std::string placeholder = "{" + key + "}";
        std::size_t pos = 0;
        while ((pos = tpl.find(placeholder, pos)) != std::string::npos) {
            tpl.replace(pos, placeholder.size(), value);
            pos += value.size();
        }
    }
    return tpl;
}

StepResult from_command(const subprocess::CommandResult& c) {
    StepResult r;
    r.exit_code = c.timed_out ? -1 : c.exit_code;
    r.stdout_text = c.stdout_text;
    r.stderr_text = c.stderr_text;
    r.timed_out = c.timed_out;
    r.duration_seconds = c.duration_seconds;
    return r;
}

} // namespace

TemplateProvider::TemplateProvider(ProviderTemplates templates, double setup_timeout_seconds)
    : templates_(std::move(templates)), setup_timeout_(setup_timeout_seconds) {}

StepResult TemplateProvider::create_env(const std::string& env_name,
                                        const std::filesystem::path& root) {
    auto command = fill_template(templates_.create,
                                 {{"env_name", env_name}, {"root", root.string()}});
    return from_command(subprocess::run_shell(command, root, setup_timeout_));
}

StepResult TemplateProvider::install(const std::string& env_name,
                                     const std::filesystem::path& root,
                                     const std::vector<std::string>& packages) {
    auto command = fill_template(templates_.install, {{"env_name", env_name},
                                                      {"root", root.string()},
                                                      {"packages", subprocess::shell_join(packages)}});
    return from_command(subprocess::run_shell(command, root, setup_timeout_));
}

StepResult TemplateProvider::run_in_env(const std::string& env_name,
                                        const std::filesystem::path& root,
                                        const std::string& command,
                                        const std::filesystem::path& cwd,
                                        double timeout_seconds) {
    auto line = fill_template(templates_.run, {{"env_name", env_name},
                                               {"root", root.string()},
                                               {"command", command}});
    return from_command(subprocess::run_shell(line, cwd, timeout_seconds));
}

StepResult TemplateProvider::teardown(const std::string& env_name,
                                      const std::filesystem::path& root) {
    auto command = fill_template(templates_.teardown,
                                 {{"env_name", env_name}, {"root", root.string()}});
    return from_command(subprocess::run_shell(command, root, setup_timeout_));
}

std::optional<std::string> StubProvider::check_failure(const std::string& kind,
                                                       const std::string& detail) {
    if (!failure_rule_) return std::nullopt;
    return failure_rule_(kind, detail);
}

StepResult StubProvider::create_env(const std::string& env_name,
                                    const std::filesystem::path& root) {
    if (auto failure = check_failure("create", env_name)) {
        return {1, "", *failure, false, 0.0};
    }
    std::filesystem::create_directories(root / "scratch");
    std::ofstream marker(root / "env.marker");
    marker << env_name << "\n";
    StepResult r;
    r.stdout_text = "created " + env_name;
    return r;
}

StepResult StubProvider::install(const std::string& env_name, const std::filesystem::path& root,
                                 const std::vector<std::string>& packages) {
    std::string joined;
    for (const auto& p : packages) {
        if (!joined.empty()) joined += ' ';
        joined += p;
    }
    if (auto failure = check_failure("install", joined)) {
        return {1, "", *failure, false, 0.0};
    }
    std::ofstream log(root / "install.log", std::ios::app);
    log << joined << "\n";
    StepResult r;
    r.stdout_text = "installed " + joined;
    (void)env_name;
    return r;
}

StepResult StubProvider::run_in_env(const std::string& env_name,
                                    const std::filesystem::path& root,
                                    const std::string& command, const std::filesystem::path& cwd,
                                    double timeout_seconds) {
    if (auto failure = check_failure("run", command)) {
        return {1, "", *failure, false, 0.0};
    }
    (void)env_name;
    (void)root;
    return from_command(subprocess::run_shell(command, cwd, timeout_seconds));
}

StepResult StubProvider::teardown(const std::string& env_name,
                                  const std::filesystem::path& root) {
    if (auto failure = check_failure("teardown", env_name)) {
        return {1, "", *failure, false, 0.0};
    }
    (void)root;
    return {};
}

// ── Planning ────────────────────────────────────────────────────────────

std::string derive_env_name(const std::string& task_id, const std::string& source_key) {
    return "alita-" + digest::sha256_hex_prefix(task_id + "\n" + source_key, 12);
}

MetadataBundle EnvManager::inspect_metadata(
    const std::vector<std::pair<std::string, std::string>>& sources) const {
    MetadataBundle bundle;
    for (const auto& [path, content] : sources) {
        const std::string name = lower(std::filesystem::path(path).filename().string());
        if (name.rfind("readme", 0) == 0) {
            if (!bundle.readme_text) bundle.readme_text = content;
            else *bundle.readme_text += "\n" + content;
        } else if (name.rfind("requirements", 0) == 0) {
            if (!bundle.requirements_text) bundle.requirements_text = content;
            else *bundle.requirements_text += "\n" + content;
        } else if (name.size() > 3 && name.compare(name.size() - 3, 3, ".sh") == 0) {
            bundle.shell_script_texts.push_back(content);
        } else if (sink_) {
            sink_->record(Actor::envman, EventKind::observation,
                          json{{"phase", "inspect_metadata"},
                               {"note", "ignored unrecognized file"},
                               {"file", path}});
        }
    }
    return bundle;
}

EnvProfile EnvManager::plan_env(const MetadataBundle& metadata,
                                const scriptgen::ScriptBundle& bundle,
                                const std::string& task_id,
                                const std::string& source_key) const {
    EnvProfile profile;
    profile.env_name = derive_env_name(task_id, source_key);

    std::vector<Dependency> deps;
    auto add_dep = [&](const Dependency& dep) {
        for (const auto& existing : deps) {
            if (existing.name == dep.name) return; // first occurrence wins
        }
        deps.push_back(dep);
    };

    if (metadata.requirements_text) {
        std::istringstream in(*metadata.requirements_text);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            auto dep = parse_dependency(t);
            if (!dep) {
                throw PlanError("requirements line " + std::to_string(line_no) +
                                " fails the constraint grammar: " + t);
            }
            add_dep(*dep);
        }
        profile.provenance.push_back("requirements");
    }

    std::vector<std::string> residual_steps;
    auto scan_script = [&](const std::string& script, bool keep_residuals) {
        std::istringstream in(script);
        std::string line;
        while (std::getline(in, line)) {
            std::string t = trim(line);
            if (t.empty() || t[0] == '#') continue;
            if (auto packages = parse_install_line(t)) {
                for (const auto& token : *packages) {
                    auto dep = parse_dependency(token);
                    if (!dep) {
                        throw PlanError("install token fails the constraint grammar: " + token);
                    }
                    add_dep(*dep);
                }
                continue;
            }
            if (is_env_lifecycle_line(t)) continue;
            if (keep_residuals) residual_steps.push_back(t);
        }
    };

    scan_script(bundle.env_setup_script, /*keep_residuals=*/true);
    profile.provenance.push_back("env_setup_script");
    for (const auto& shell : metadata.shell_script_texts) {
        scan_script(shell, /*keep_residuals=*/false);
    }
    if (!metadata.shell_script_texts.empty()) profile.provenance.push_back("shell_scripts");
    profile.provenance.push_back("source:" + source_key);

    profile.dependencies = std::move(deps);
    profile.setup_steps.push_back("env-create");
    if (!profile.dependencies.empty()) {
        std::string specs;
        for (const auto& dep : profile.dependencies) {
            if (!specs.empty()) specs += ' ';
            specs += dep.spec();
        }
        profile.setup_steps.push_back("env-install " + specs);
    }
    for (auto& step : residual_steps) profile.setup_steps.push_back(std::move(step));
    return profile;
}

// ── Provision / recover / destroy ───────────────────────────────────────

EnvManager::EnvManager(std::filesystem::path workdir, std::shared_ptr<EnvProvider> provider,
                       TranscriptSink* sink)
    : workdir_(std::move(workdir)), provider_(std::move(provider)), sink_(sink) {}

std::filesystem::path EnvManager::env_root(const std::string& env_name) const {
    return workdir_ / "envs" / env_name;
}

EnvHandle EnvManager::provision(const EnvProfile& profile) {
    {
        std::lock_guard<std::mutex> lock(live_mutex_);
        auto it = live_envs_.find(profile.env_name);
        if (it != live_envs_.end()) {
            ++it->second.second;
            return it->second.first;
        }
    }
    const auto root = env_root(profile.env_name);
    std::filesystem::create_directories(root);
    FileLock lock(root / ".lock");

    {
        // Another holder (thread racing past the check above, or a prior
        // session in this workdir) may have completed this exact env; an
        // intact manifest matching the profile means it can be shared.
        std::lock_guard<std::mutex> live(live_mutex_);
        auto it = live_envs_.find(profile.env_name);
        if (it != live_envs_.end()) {
            ++it->second.second;
            return it->second.first;
        }
    }
    const auto manifest_path = root / "env.json";
    if (std::filesystem::exists(manifest_path)) {
        std::ifstream manifest(manifest_path);
        json existing = json::parse(manifest, nullptr, false);
        if (!existing.is_discarded() && existing == to_json(profile)) {
            std::filesystem::create_directories(root / "scratch");
            EnvHandle handle;
            handle.env_name = profile.env_name;
            handle.root_path = root;
            handle.created_at = iso_timestamp_now();
            handle.provider_id = provider_->id();
            {
                std::lock_guard<std::mutex> live(live_mutex_);
                live_envs_.emplace(profile.env_name, std::make_pair(handle, 1));
            }
            if (sink_) {
                sink_->record(Actor::envman, EventKind::observation,
                              json{{"phase", "provision_reuse"},
                                   {"env_name", profile.env_name}});
            }
            return handle;
        }
    }

    // Clear leftovers from an earlier failed or stale provision.
    for (const auto& entry : std::filesystem::directory_iterator(root)) {
        if (entry.path().filename() == ".lock") continue;
        std::filesystem::remove_all(entry.path());
    }

    for (std::size_t i = 0; i < profile.setup_steps.size(); ++i) {
        const std::string& step = profile.setup_steps[i];
        StepResult result;
        if (step == "env-create") {
            result = provider_->create_env(profile.env_name, root);
        } else if (step.rfind("env-install ", 0) == 0) {
            std::istringstream in(step.substr(12));
            std::vector<std::string> packages;
            std::string token;
            while (in >> token) packages.push_back(token);
            result = provider_->install(profile.env_name, root, packages);
        } else {
            result = provider_->run_in_env(profile.env_name, root, step, root, 600.0);
        }

        if (sink_) {
            sink_->record(Actor::envman, result.ok() ? EventKind::observation : EventKind::error,
                          json{{"phase", "provision_step"},
                               {"env_name", profile.env_name},
                               {"step_index", i},
                               {"step", step},
                               {"exit_code", result.exit_code},
                               {"stdout", result.stdout_text},
                               {"stderr", result.stderr_text}});
        }
        if (!result.ok()) {
            throw ProvisionError(static_cast<int>(i), result.exit_code,
                                 tail(result.stderr_text, 500),
                                 "provision step " + std::to_string(i) + " failed (" + step +
                                     "): " + tail(result.stderr_text, 200));
        }
    }

    std::filesystem::create_directories(root / "scratch");
    {
        std::ofstream manifest(root / "env.json");
        manifest << to_json(profile).dump(2) << "\n";
    }

    EnvHandle handle;
    handle.env_name = profile.env_name;
    handle.root_path = root;
    handle.created_at = iso_timestamp_now();
    handle.provider_id = provider_->id();
    {
        std::lock_guard<std::mutex> live(live_mutex_);
        live_envs_.emplace(profile.env_name, std::make_pair(handle, 1));
    }
    return handle;
}

std::set<std::string> import_tokens(const std::string& tool_script) {
    std::set<std::string> tokens;
    static const std::regex py_import(R"(^\s*import\s+([A-Za-z0-9_.,\s]+))");
    static const std::regex py_from(R"(^\s*from\s+([A-Za-z0-9_.]+)\s+import\b)");
    static const std::regex js_require(R"x(require\(\s*['"]([^'"]+)['"]\s*\))x");
    static const std::regex js_import(R"x(^\s*import\b[^'"]*['"]([^'"]+)['"])x");

    auto add = [&](std::string module) {
        auto dot = module.find('.');
        if (dot != std::string::npos) module = module.substr(0, dot);
        auto slash = module.find('/');
        if (slash != std::string::npos) module = module.substr(0, slash);
        module = trim(module);
        if (!module.empty()) tokens.insert(normalize_pkg_name(module));
    };

    std::istringstream in(tool_script);
    std::string line;
    while (std::getline(in, line)) {
        std::smatch m;
        if (std::regex_search(line, m, js_require)) {
            add(m[1].str());
            continue;
        }
        if (std::regex_search(line, m, js_import)) {
            add(m[1].str());
            continue;
        }
        if (std::regex_search(line, m, py_from)) {
            add(m[1].str());
        } else if (std::regex_search(line, m, py_import)) {
            std::istringstream modules(m[1].str());
            std::string module;
            while (std::getline(modules, module, ',')) {
                // "import x as y" keeps only the module token
                std::istringstream words(module);
                std::string first;
                words >> first;
                add(first);
            }
        }
    }
    return tokens;
}

EnvProfile EnvManager::recover(const EnvProfile& profile, const ProvisionError& error,
                               const std::string& tool_script) const {
    if (profile.recovery_round >= 2) {
        throw RecoveryExhausted("recovery ladder exhausted for " + profile.env_name +
                                " after: " + error.what());
    }
    EnvProfile next = profile;
    next.recovery_round = profile.recovery_round + 1;

    if (profile.recovery_round == 0) {
        // relax_versions: ==X.Y.Z -> ~=X.Y, ~=X.Y -> unpinned.
        for (auto& dep : next.dependencies) {
            if (dep.constraint.rfind("==", 0) == 0) {
                auto parts = version_parts(dep.constraint.substr(2));
                if (parts.size() >= 2) dep.constraint = "~=" + parts[0] + "." + parts[1];
                else dep.constraint.clear();
            } else if (dep.constraint.rfind("~=", 0) == 0) {
                dep.constraint.clear();
            }
        }
    } else {
        // minimal_deps: keep only dependencies the tool script imports.
        const auto tokens = import_tokens(tool_script);
        std::vector<Dependency> kept;
        for (const auto& dep : next.dependencies) {
            if (tokens.count(normalize_pkg_name(dep.name))) kept.push_back(dep);
        }
        next.dependencies = std::move(kept);
    }

    // Rewrite the install step to match the new dependency set.
    std::vector<std::string> steps;
    for (const auto& step : next.setup_steps) {
        if (step.rfind("env-install ", 0) == 0) continue;
        steps.push_back(step);
    }
    next.setup_steps.clear();
    for (auto& step : steps) {
        next.setup_steps.push_back(step);
        if (next.setup_steps.back() == "env-create" && !next.dependencies.empty()) {
            std::string specs;
            for (const auto& dep : next.dependencies) {
                if (!specs.empty()) specs += ' ';
                specs += dep.spec();
            }
            next.setup_steps.push_back("env-install " + specs);
        }
    }

    if (sink_) {
        sink_->record(Actor::envman, EventKind::observation,
                      json{{"phase", "recovery"},
                           {"env_name", next.env_name},
                           {"strategy", to_string(profile.recovery_round == 0
                                                      ? RecoveryStrategyKind::relax_versions
                                                      : RecoveryStrategyKind::minimal_deps)},
                           {"recovery_round", next.recovery_round}});
    }
    return next;
}

std::pair<EnvHandle, EnvProfile> EnvManager::provision_with_recovery(
    EnvProfile profile, const std::string& tool_script,
    std::optional<RecoveryStrategyKind>* last_strategy) {
    for (;;) {
        try {
            EnvHandle handle = provision(profile);
            return {std::move(handle), std::move(profile)};
        } catch (const ProvisionError& error) {
            // recover() throws RecoveryExhausted past round 2.
            profile = recover(profile, error, tool_script);
            if (last_strategy) {
                *last_strategy = profile.recovery_round == 1
                                     ? RecoveryStrategyKind::relax_versions
                                     : RecoveryStrategyKind::minimal_deps;
            }
        }
    }
}

void EnvManager::destroy(EnvHandle& handle) {
    {
        std::lock_guard<std::mutex> lock(live_mutex_);
        auto it = live_envs_.find(handle.env_name);
        if (it == live_envs_.end()) return; // second call is a no-op
        if (--it->second.second > 0) return; // other holders remain
        live_envs_.erase(it);
    }
    auto result = provider_->teardown(handle.env_name, handle.root_path);
    if (!result.ok()) {
        std::ofstream marker(handle.root_path / ".orphan");
        marker << iso_timestamp_now() << "\n";
        if (sink_) {
            sink_->record(Actor::envman, EventKind::error,
                          json{{"phase", "teardown"},
                               {"env_name", handle.env_name},
                               {"note", "teardown failed; env marked orphaned"},
                               {"stderr", result.stderr_text}});
        }
        throw TeardownError("teardown failed for " + handle.env_name + ": " +
                            result.stderr_text);
    }
    std::error_code ec;
    std::filesystem::remove_all(handle.root_path, ec);
}

StepResult EnvManager::run_in_env(const EnvHandle& handle, const std::string& command,
                                  const std::filesystem::path& cwd, double timeout_seconds) {
    return provider_->run_in_env(handle.env_name, handle.root_path, command, cwd,
                                 timeout_seconds);
}

int EnvManager::gc(double ttl_hours, const std::set<std::string>& referenced_env_names,
                   std::vector<std::string>* failures) {
    const auto envs_dir = workdir_ / "envs";
    if (!std::filesystem::exists(envs_dir)) return 0;

    const auto now = std::filesystem::file_time_type::clock::now();
    int removed = 0;
    for (const auto& entry : std::filesystem::directory_iterator(envs_dir)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        if (referenced_env_names.count(name)) continue;
        {
            std::lock_guard<std::mutex> lock(live_mutex_);
            if (live_envs_.count(name)) continue;
        }
        const auto age = std::chrono::duration_cast<std::chrono::seconds>(
                             now - std::filesystem::last_write_time(entry.path()))
                             .count();
        if (static_cast<double>(age) < ttl_hours * 3600.0) continue;
        std::error_code ec;
        std::filesystem::remove_all(entry.path(), ec);
        if (ec) {
            if (failures) failures->push_back(entry.path().string());
        } else {
            ++removed;
        }
    }
    return removed;
}

} // namespace alita::envman
