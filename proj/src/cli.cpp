#include "alita/cli.hpp"

#include "alita/brainstorm.hpp"
#include "alita/config.hpp"
#include "alita/digest.hpp"
#include "alita/gateway.hpp"
#include "alita/manager.hpp"
#include "alita/mcpbox.hpp"
#include "alita/mcphost.hpp"
#include "alita/runner.hpp"
#include "alita/task.hpp"
#include "alita/transcript.hpp"
#include "alita/webagent.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace alita::cli {

using nlohmann::json;

namespace {

// Everything a command needs, assembled per the run configuration.
struct Components {
    std::unique_ptr<gateway::Gateway> gateway;
    std::unique_ptr<web::WebAgent> web;
    std::shared_ptr<envman::EnvProvider> provider;
    std::unique_ptr<envman::EnvManager> envs;
    std::unique_ptr<scriptgen::ScriptGenerator> generator;
    std::unique_ptr<runner::Runner> runner;
    std::unique_ptr<mcpbox::Registry> registry;
    std::unique_ptr<mcphost::McpInvoker> invoker;
    std::unique_ptr<brainstorm::Brainstormer> brainstormer;
    std::unique_ptr<manager::Manager> manager;
};

std::string load_brainstorm_template(const RunConfig& config) {
    const auto asset = config.assets / "prompts" / "brainstorm" / "assess_v1.txt";
    if (std::filesystem::exists(asset)) {
        std::ifstream in(asset);
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }
    return brainstorm::default_prompt_template();
}

std::map<gateway::RoleSlot, std::string> model_ids_by_slot(const RunConfig& config) {
    std::map<gateway::RoleSlot, std::string> ids;
    for (const auto& [name, model] : config.model_ids) {
        if (auto slot = gateway::role_slot_from_string(name)) ids[*slot] = model;
    }
    return ids;
}

Components build_components(const RunConfig& config, bool need_gateway, bool need_web) {
    Components c;

    if (need_gateway) {
        if (config.offline) {
            auto script = gateway::load_replay(*config.replay);
            c.gateway = std::make_unique<gateway::Gateway>(std::make_unique<gateway::ReplayBackend>(
                std::move(script), model_ids_by_slot(config)));
        } else {
            gateway::RetryPolicy policy;
            policy.max_attempts = config.retry_max_attempts;
            policy.base_delay_seconds = config.retry_base_delay_seconds;
            c.gateway = std::make_unique<gateway::Gateway>(std::make_unique<gateway::HttpBackend>(
                gateway::endpoints_from_env(model_ids_by_slot(config)), policy,
                config.gateway_in_flight));
        }
    }

    if (need_web) {
        std::unique_ptr<web::WebBackend> backend;
        if (config.offline) {
            backend = std::make_unique<web::OfflineWebBackend>(config.fixtures);
        } else {
            backend = std::make_unique<web::LiveWebBackend>(config.search_endpoints);
        }
        c.web = std::make_unique<web::WebAgent>(std::move(backend), config.viewport_size);
    }

    if (config.provider_kind == "stub") {
        c.provider = std::make_shared<envman::StubProvider>();
    } else {
        c.provider = std::make_shared<envman::TemplateProvider>(config.templates,
                                                                config.setup_timeout_seconds);
    }
    c.envs = std::make_unique<envman::EnvManager>(config.workdir, c.provider);
    if (c.gateway) {
        c.generator = std::make_unique<scriptgen::ScriptGenerator>(*c.gateway);
        c.runner = std::make_unique<runner::Runner>(*c.envs, *c.generator, config.workdir,
                                                    nullptr, config.exec_timeout_seconds);
    }
    c.registry = std::make_unique<mcpbox::Registry>(config.registry_path());
    if (c.runner) {
        c.invoker = std::make_unique<mcphost::McpInvoker>(*c.registry, *c.envs, *c.runner,
                                                          config.exec_timeout_seconds);
    }
    if (c.gateway) {
        c.brainstormer = std::make_unique<brainstorm::Brainstormer>(
            *c.gateway, load_brainstorm_template(config));
    }
    if (c.gateway && c.web && c.runner && c.invoker) {
        manager::ManagerConfig mc;
        mc.loop_budget = config.loop_budget;
        mc.reuse_threshold = config.reuse_threshold;
        mc.exec_timeout_seconds = config.exec_timeout_seconds;
        mc.model_ids = config.model_ids;
        c.manager = std::make_unique<manager::Manager>(*c.gateway, *c.brainstormer, *c.web,
                                                       *c.runner, *c.registry, *c.invoker,
                                                       config.workdir, mc);
    }
    return c;
}

Task task_from_text(const std::string& text) {
    Task task;
    task.query = text;
    task.id = "task-" + digest::sha256_hex_prefix(text, 8);
    task.created_at = iso_timestamp_now();
    return task;
}

Task task_from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open task file: " + path.string());
    json parsed = json::parse(in, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object() || !parsed.contains("query")) {
        throw ConfigError("task file must be a JSON object with a query field: " + path.string());
    }
    Task task;
    task.query = parsed["query"].get<std::string>();
    task.id = parsed.value("id", "task-" + digest::sha256_hex_prefix(task.query, 8));
    for (const auto& attachment : parsed.value("attachments", json::array())) {
        task.attachments.emplace_back(attachment.get<std::string>());
    }
    task.created_at = iso_timestamp_now();
    return task;
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"alita: self-evolving agent runtime"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand

    RunConfig config;
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> flag_overrides;

    app.add_option("--config", config_path, "config file (key = value lines)");
    auto add_override = [&](const std::string& key) {
        return [&flag_overrides, key](const std::string& value) {
            flag_overrides.emplace_back(key, value);
        };
    };
    app.add_option_function<std::string>("--workdir", add_override("workdir"), "working directory");
    app.add_option_function<std::string>("--registry", add_override("registry"), "registry root");
    app.add_option_function<std::string>("--provider", add_override("provider"),
                                         "env provider: conda|stub|template");

    // run
    auto* run_cmd = app.add_subcommand("run", "run one task through the pipeline");
    std::string task_text, task_file;
    run_cmd->add_option("--task", task_text, "task query text");
    run_cmd->add_option("--task-file", task_file, "task JSON file (id, query, attachments)");
    bool offline_flag = false;
    run_cmd->add_flag("--offline", offline_flag, "offline mode: replay LLM + web fixtures");
    std::string replay_path, fixtures_path;
    run_cmd->add_option("--replay", replay_path, "LLM replay script (JSONL)");
    run_cmd->add_option("--fixtures", fixtures_path, "webagent fixture root");

    // mcp
    auto* mcp_cmd = app.add_subcommand("mcp", "inspect and serve the MCP registry");
    mcp_cmd->require_subcommand(1);
    auto* mcp_list = mcp_cmd->add_subcommand("list", "list registered MCPs");
    bool list_json = false;
    mcp_list->add_flag("--json", list_json, "machine-readable output");
    auto* mcp_serve = mcp_cmd->add_subcommand("serve", "serve one record over stdio JSON-RPC");
    std::string serve_target;
    mcp_serve->add_option("record", serve_target, "record name or id")->required();
    auto* mcp_export = mcp_cmd->add_subcommand("export", "export records to a pack");
    bool export_all = false;
    std::vector<std::string> export_ids;
    std::string export_dest;
    mcp_export->add_flag("--all", export_all, "export every record");
    mcp_export->add_option("--id", export_ids, "record id (repeatable)");
    mcp_export->add_option("dest", export_dest, "pack path (.tgz)")->required();
    auto* mcp_import = mcp_cmd->add_subcommand("import", "import records from a pack");
    std::string import_src;
    mcp_import->add_option("src", import_src, "pack path")->required();

    // env-gc
    auto* gc_cmd = app.add_subcommand("env-gc", "remove stale, unreferenced env roots");
    double ttl_hours = -1.0;
    gc_cmd->add_option("--ttl-hours", ttl_hours, "age threshold in hours");

    // transcript
    auto* transcript_cmd = app.add_subcommand("transcript", "transcript utilities");
    transcript_cmd->require_subcommand(1);
    auto* transcript_show = transcript_cmd->add_subcommand("show", "print a task transcript");
    std::string show_task_id;
    transcript_show->add_option("task_id", show_task_id, "task id")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << e.what() << "\n";
        err << "Run with --help for usage.\n";
        return 2;
    }

    try {
        if (!config_path.empty()) config = load_config_file(config_path);
        apply_env_overrides(config);
        for (const auto& [key, value] : flag_overrides) apply_config_value(config, key, value);
        if (offline_flag) config.offline = true;
        if (!replay_path.empty()) config.replay = replay_path;
        if (!fixtures_path.empty()) config.fixtures = fixtures_path;
        // Offline runs default to the hermetic provider.
        if (config.offline && config.provider_kind == "conda") config.provider_kind = "stub";
        validate(config);
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (run_cmd->parsed()) {
            if (task_text.empty() == task_file.empty()) {
                err << "usage error: exactly one of --task or --task-file is required\n";
                return 2;
            }
            Task task;
            try {
                task = task_file.empty() ? task_from_text(task_text) : task_from_file(task_file);
            } catch (const ConfigError& e) {
                err << "config error: " << e.what() << "\n";
                return 2;
            }
            auto components = build_components(config, true, true);
            const auto transcript_path =
                config.workdir / "transcripts" / (task.id + ".jsonl");
            try {
                auto answer = components.manager->run_task(task);
                out << answer.answer_text << "\n";
                err << "transcript: " << transcript_path.string() << "\n";
                return 0;
            } catch (const Error& e) {
                err << "pipeline error [" << e.kind() << "]: " << e.what() << "\n";
                err << "transcript: " << transcript_path.string() << "\n";
                return 1;
            }
        }

        if (mcp_list->parsed()) {
            mcpbox::Registry registry(config.registry_path());
            auto records = registry.records();
            if (list_json) {
                json out_json{{"count", records.size()}, {"records", json::array()}};
                for (const auto& record : records) {
                    out_json["records"].push_back({{"id", record.id},
                                                   {"name", record.name},
                                                   {"usage_count", record.usage_count}});
                }
                out << out_json.dump(2) << "\n";
            } else {
                out << records.size() << " MCPs\n";
                for (const auto& record : records) {
                    out << record.id << "\t" << record.name << "\tusage=" << record.usage_count
                        << "\n";
                }
            }
            return 0;
        }

        if (mcp_serve->parsed()) {
            // Serving runs registered tools only; no LLM involved. The
            // runner still wants a generator reference, so an empty
            // replay gateway stands in (it is never queried).
            auto components = build_components(config, false, false);
            gateway::Gateway null_gateway(
                std::make_unique<gateway::ReplayBackend>(gateway::ReplayScript{}));
            scriptgen::ScriptGenerator generator(null_gateway);
            runner::Runner serve_runner(*components.envs, generator, config.workdir, nullptr,
                                        config.exec_timeout_seconds);
            try {
                return mcphost::serve(*components.registry, *components.envs, serve_runner,
                                      serve_target, std::cin, out,
                                      config.exec_timeout_seconds);
            } catch (const Error& e) {
                err << "serve error: " << e.what() << "\n";
                return 1;
            }
        }

        if (mcp_export->parsed()) {
            mcpbox::Registry registry(config.registry_path());
            std::vector<std::string> ids = export_ids;
            if (export_all) {
                ids.clear();
                for (const auto& record : registry.records()) ids.push_back(record.id);
            }
            if (ids.empty()) {
                err << "usage error: export needs --all or at least one --id\n";
                return 2;
            }
            try {
                int count = registry.export_pack(ids, export_dest);
                out << "exported " << count << " to " << export_dest << "\n";
                return 0;
            } catch (const Error& e) {
                err << "export error: " << e.what() << "\n";
                return 1;
            }
        }

        if (mcp_import->parsed()) {
            mcpbox::Registry registry(config.registry_path());
            try {
                auto result = registry.import_pack(import_src);
                out << "imported " << result.imported << "\n";
                if (result.partial()) {
                    for (const auto& note : result.invalid) {
                        err << "skipped: " << note << "\n";
                    }
                    return 1;
                }
                return 0;
            } catch (const Error& e) {
                err << "import error: " << e.what() << "\n";
                return 1;
            }
        }

        if (gc_cmd->parsed()) {
            mcpbox::Registry registry(config.registry_path());
            std::set<std::string> referenced;
            for (const auto& record : registry.records()) {
                referenced.insert(record.env_profile.env_name);
            }
            auto provider = std::make_shared<envman::StubProvider>();
            envman::EnvManager envs(config.workdir, provider);
            std::vector<std::string> failures;
            int removed =
                envs.gc(ttl_hours > 0 ? ttl_hours : config.gc_ttl_hours, referenced, &failures);
            out << removed << "\n";
            if (!failures.empty()) {
                for (const auto& path : failures) err << "could not remove: " << path << "\n";
                return 1;
            }
            return 0;
        }

        if (transcript_show->parsed()) {
            const auto path = config.workdir / "transcripts" / (show_task_id + ".jsonl");
            std::ifstream in(path);
            if (!in) {
                err << "no transcript for task " << show_task_id << " at " << path.string()
                    << "\n";
                return 1;
            }
            out << in.rdbuf();
            return 0;
        }
    } catch (const Error& e) {
        err << "error [" << e.kind() << "]: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }

    err << "no command matched\n";
    return 2;
}

} // namespace alita::cli
