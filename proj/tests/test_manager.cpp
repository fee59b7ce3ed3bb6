#include <doctest.h>

#include "alita/manager.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace alita;
using namespace alita::manager;
using gateway::ReplayScript;
using gateway::RoleSlot;
using nlohmann::json;

namespace {

// Full component stack over a replay script and offline fixtures.
struct Stack {
    fs::path workdir;
    std::unique_ptr<gateway::Gateway> gw;
    std::unique_ptr<brainstorm::Brainstormer> brainstormer;
    std::unique_ptr<web::WebAgent> web_agent;
    std::shared_ptr<envman::StubProvider> provider;
    std::unique_ptr<envman::EnvManager> envs;
    std::unique_ptr<scriptgen::ScriptGenerator> generator;
    std::unique_ptr<runner::Runner> runner;
    std::unique_ptr<mcpbox::Registry> registry;
    std::unique_ptr<mcphost::McpInvoker> invoker;
    std::unique_ptr<Manager> mgr;

    explicit Stack(const fs::path& replay_file, fs::path registry_root = {},
                   ManagerConfig config = {}) {
        static std::atomic<int> counter{0};
        workdir = fs::temp_directory_path() /
                  ("alita-manager-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(workdir);
        fs::create_directories(workdir);
        if (registry_root.empty()) registry_root = workdir / "registry";

        ReplayScript script;
        if (!replay_file.empty()) script = gateway::load_replay(replay_file);
        gw = std::make_unique<gateway::Gateway>(
            std::make_unique<gateway::ReplayBackend>(std::move(script)));
        brainstormer = std::make_unique<brainstorm::Brainstormer>(*gw);
        web_agent = std::make_unique<web::WebAgent>(
            std::make_unique<web::OfflineWebBackend>(fs::path(ALITA_FIXTURES_DIR) / "web"), 8192);
        provider = std::make_shared<envman::StubProvider>();
        envs = std::make_unique<envman::EnvManager>(workdir, provider);
        generator = std::make_unique<scriptgen::ScriptGenerator>(*gw);
        runner = std::make_unique<runner::Runner>(*envs, *generator, workdir, nullptr, 15.0);
        registry = std::make_unique<mcpbox::Registry>(registry_root);
        invoker = std::make_unique<mcphost::McpInvoker>(*registry, *envs, *runner, 15.0);
        config.model_ids = {{"manager", "model-m"}, {"brainstorm", "model-b"}};
        mgr = std::make_unique<Manager>(*gw, *brainstormer, *web_agent, *runner, *registry,
                                        *invoker, workdir, config);
    }
    ~Stack() { fs::remove_all(workdir); }
};

Task case_a_task() {
    std::ifstream in(fs::path(ALITA_FIXTURES_DIR) / "tasks" / "case_a.task");
    json parsed = json::parse(in);
    Task task;
    task.id = parsed["id"];
    task.query = parsed["query"];
    return task;
}

fs::path replay(const std::string& name) {
    return fs::path(ALITA_FIXTURES_DIR) / "replay" / name;
}

ReplayScript manager_replies(std::vector<std::string> replies) {
    ReplayScript script;
    for (auto& reply : replies) {
        script.entries.push_back({RoleSlot::manager, std::nullopt, std::move(reply)});
    }
    return script;
}

} // namespace

TEST_CASE("action grammar: FINAL") {
    std::string reason;
    auto action = parse_action("FINAL: 42", &reason);
    REQUIRE(action.has_value());
    CHECK(action->kind == ActionKind::final_answer);
    CHECK(action->text == "42");

    auto multiline = parse_action("FINAL: line one\nline two", &reason);
    REQUIRE(multiline.has_value());
    CHECK(multiline->text == "line one\nline two");
}

TEST_CASE("action grammar: ACTION with quoted arguments") {
    std::string reason;
    auto action =
        parse_action("ACTION: web_search query=\"youtube transcript api\" source=code_host",
                     &reason);
    REQUIRE(action.has_value());
    CHECK(action->kind == ActionKind::call_tool);
    CHECK(action->tool_name == "web_search");
    CHECK(action->arguments.at("query") == "youtube transcript api");
    CHECK(action->arguments.at("source") == "code_host");
}

TEST_CASE("action grammar: THOUGHT") {
    std::string reason;
    auto action = parse_action("THOUGHT: let me think about this", &reason);
    REQUIRE(action.has_value());
    CHECK(action->kind == ActionKind::think);
    CHECK(action->text == "let me think about this");
}

TEST_CASE("action grammar rejections carry reasons") {
    std::string reason;
    CHECK_FALSE(parse_action("no marker here", &reason).has_value());
    CHECK(reason.find("marker") != std::string::npos);

    CHECK_FALSE(parse_action("ACTION: made_up_tool x=1", &reason).has_value());
    CHECK(reason.find("made_up_tool") != std::string::npos);

    CHECK_FALSE(parse_action("THOUGHT: a\nACTION: web_search query=x", &reason).has_value());
    CHECK(reason.find("more than one") != std::string::npos);

    CHECK_FALSE(parse_action("FINAL:", &reason).has_value());
    CHECK_FALSE(parse_action("ACTION: web_search query", &reason).has_value());
}

TEST_CASE("augmented prompt embeds the query verbatim") {
    Stack stack({});
    Task task;
    task.id = "t-1";
    task.query = "What is X?";
    auto prompt = stack.mgr->build_augmented_prompt(task, "Registered MCPs: none");
    CHECK(prompt.user_query.find("What is X?") != std::string::npos);
    CHECK(prompt.task_id == "t-1");
}

TEST_CASE("empty registry shows the literal none section") {
    Stack stack({});
    Task task;
    task.id = "t-2";
    task.query = "q";
    auto prompt = stack.mgr->build_augmented_prompt(task, stack.registry->summarize());
    CHECK(prompt.framework_description.find("Registered MCPs: none") != std::string::npos);
}

TEST_CASE("registry records appear by name in the framework description") {
    Stack stack({});
    for (const auto& name : {"tool_alpha", "tool_beta"}) {
        auto bundle_dir = stack.workdir / "seed" / name;
        fs::create_directories(bundle_dir);
        std::ofstream(bundle_dir / "tool.sh") << "echo hi\n";
        std::ofstream(bundle_dir / "env_setup.sh") << "true\n";
        std::ofstream(bundle_dir / "cleanup.sh") << "true\n";
        std::ofstream(bundle_dir / "entry.txt") << "sh tool.sh\n";
        mcpbox::McpRecord record;
        record.name = name;
        record.description = std::string("description of ") + name;
        record.bundle_ref = bundle_dir.string();
        record.env_profile.env_name = std::string("alita-") + name;
        record.env_profile.setup_steps = {"env-create"};
        stack.registry->register_record(record);
    }
    Task task;
    task.id = "t-3";
    task.query = "q";
    auto prompt = stack.mgr->build_augmented_prompt(task, stack.registry->summarize());
    CHECK(prompt.framework_description.find("tool_alpha") != std::string::npos);
    CHECK(prompt.framework_description.find("tool_beta") != std::string::npos);
}

TEST_CASE("step parses a scripted tool call") {
    Stack stack({});
    ReplayScript script = manager_replies({"ACTION: web_search query=\"abc\" source=web"});
    gateway::Gateway gw(std::make_unique<gateway::ReplayBackend>(std::move(script)));
    brainstorm::Brainstormer bs(gw);
    Manager mgr(gw, bs, *stack.web_agent, *stack.runner, *stack.registry, *stack.invoker,
                stack.workdir, {});

    AugmentedPrompt prompt;
    prompt.task_id = "t";
    prompt.user_query = "q";
    auto action = mgr.step({}, prompt);
    CHECK(action.kind == ActionKind::call_tool);
    CHECK(action.tool_name == "web_search");
}

TEST_CASE("step re-asks once then raises ActionParseError") {
    Stack stack({});
    ReplayScript script = manager_replies({"garbage", "FINAL: saved"});
    gateway::Gateway gw(std::make_unique<gateway::ReplayBackend>(std::move(script)));
    brainstorm::Brainstormer bs(gw);
    Manager mgr(gw, bs, *stack.web_agent, *stack.runner, *stack.registry, *stack.invoker,
                stack.workdir, {});
    AugmentedPrompt prompt;
    prompt.task_id = "t";
    prompt.user_query = "q";
    auto recovered = mgr.step({}, prompt);
    CHECK(recovered.kind == ActionKind::final_answer);

    ReplayScript bad = manager_replies({"garbage", "still garbage"});
    gateway::Gateway gw2(std::make_unique<gateway::ReplayBackend>(std::move(bad)));
    brainstorm::Brainstormer bs2(gw2);
    Manager mgr2(gw2, bs2, *stack.web_agent, *stack.runner, *stack.registry, *stack.invoker,
                 stack.workdir, {});
    CHECK_THROWS_AS(mgr2.step({}, prompt), ActionParseError);
}

TEST_CASE("golden run: answer, registration, transcript shape") {
    Stack stack(replay("case_a.jsonl"));
    auto task = case_a_task();

    auto answer = stack.mgr->run_task(task);
    CHECK(answer.answer_text == "100000000");
    CHECK(answer.task_id == task.id);
    CHECK_FALSE(answer.supporting_event_seqs.empty());

    // exactly one MCP registered under the proposed name
    auto records = stack.registry->records();
    REQUIRE(records.size() == 1);
    CHECK(records[0].name == "youtube_subtitle_crawler");
    bool has_yt_dep = false;
    for (const auto& dep : records[0].env_profile.dependencies) {
        if (dep.name == "youtube-transcript-api") has_yt_dep = true;
    }
    CHECK(has_yt_dep);

    auto events = read_transcript(stack.workdir / "transcripts" / (task.id + ".jsonl"));
    REQUIRE_FALSE(events.empty());

    // brainstorm-first invariant
    for (const auto& event : events) {
        if (event.kind == EventKind::tool_call) {
            CHECK(event.payload.at("tool") == "mcp_brainstorming");
            break;
        }
    }
    // seq numbers strictly increasing, gap-free, one final event
    int finals = 0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        CHECK(events[i].seq == i + 1);
        if (events[i].kind == EventKind::final_answer) ++finals;
    }
    CHECK(finals == 1);
    // supporting seqs all exist
    for (auto seq : answer.supporting_event_seqs) {
        CHECK(seq >= 1);
        CHECK(seq <= events.size());
    }
}

TEST_CASE("second run reuses the registered tool with zero scriptgen calls") {
    const auto shared_registry =
        fs::temp_directory_path() / ("alita-reuse-registry-" + std::to_string(::getpid()));
    fs::remove_all(shared_registry);

    {
        Stack first(replay("case_a.jsonl"), shared_registry);
        auto answer = first.mgr->run_task(case_a_task());
        CHECK(answer.answer_text == "100000000");
        CHECK(first.registry->find_by_name("youtube_subtitle_crawler")->usage_count == 0);
    }
    {
        Stack second(replay("case_a_rerun.jsonl"), shared_registry);
        auto task = case_a_task();
        auto answer = second.mgr->run_task(task);
        CHECK(answer.answer_text == "100000000");

        auto events = read_transcript(second.workdir / "transcripts" / (task.id + ".jsonl"));
        int scriptgen_calls = 0;
        int scriptgen_actor_events = 0;
        bool reuse_hint_seen = false;
        for (const auto& event : events) {
            if (event.kind == EventKind::tool_call &&
                event.payload.value("tool", "") == "synthesize_tool") {
                ++scriptgen_calls;
            }
            if (event.actor == Actor::scriptgen) ++scriptgen_actor_events;
            if (event.payload.value("phase", "") == "reuse_candidate") reuse_hint_seen = true;
        }
        CHECK(scriptgen_calls == 0);
        CHECK(scriptgen_actor_events == 0);
        CHECK(reuse_hint_seen);
        CHECK(second.registry->find_by_name("youtube_subtitle_crawler")->usage_count == 1);
    }
    fs::remove_all(shared_registry);
}

TEST_CASE("no-gap shortcut answers directly with zero synthesis") {
    ReplayScript script;
    script.entries.push_back({RoleSlot::brainstorm, std::nullopt,
                              "```assessment\ngap_found: no\nrationale: answerable directly\n```"});
    script.entries.push_back({RoleSlot::manager, std::nullopt, "FINAL: direct answer"});

    Stack stack({});
    gateway::Gateway gw(std::make_unique<gateway::ReplayBackend>(std::move(script)));
    brainstorm::Brainstormer bs(gw);
    Manager mgr(gw, bs, *stack.web_agent, *stack.runner, *stack.registry, *stack.invoker,
                stack.workdir, {});

    Task task;
    task.id = "t-shortcut";
    task.query = "trivial question";
    auto answer = mgr.run_task(task);
    CHECK(answer.answer_text == "direct answer");

    auto events = read_transcript(stack.workdir / "transcripts" / (task.id + ".jsonl"));
    for (const auto& event : events) {
        CHECK(event.actor != Actor::scriptgen);
        if (event.kind == EventKind::tool_call) {
            CHECK(event.payload.at("tool") == "mcp_brainstorming");
        }
    }
}

TEST_CASE("a replay that never finals hits the loop budget at step 12") {
    ReplayScript script;
    script.entries.push_back({RoleSlot::brainstorm, std::nullopt,
                              "```assessment\ngap_found: no\nrationale: r\n```"});
    for (int i = 0; i < 12; ++i) {
        script.entries.push_back(
            {RoleSlot::manager, std::nullopt, "THOUGHT: still thinking " + std::to_string(i)});
    }

    Stack stack({});
    gateway::Gateway gw(std::make_unique<gateway::ReplayBackend>(std::move(script)));
    brainstorm::Brainstormer bs(gw);
    Manager mgr(gw, bs, *stack.web_agent, *stack.runner, *stack.registry, *stack.invoker,
                stack.workdir, {});

    Task task;
    task.id = "t-budget";
    task.query = "spin forever";
    CHECK_THROWS_AS(mgr.run_task(task), LoopBudgetExceeded);

    auto events = read_transcript(stack.workdir / "transcripts" / (task.id + ".jsonl"));
    int thoughts = 0;
    bool error_event = false;
    for (const auto& event : events) {
        if (event.kind == EventKind::thought) ++thoughts;
        if (event.kind == EventKind::error) error_event = true;
    }
    CHECK(thoughts == 12); // exactly the budget, no 13th step
    CHECK(error_event);    // transcript records the failure before propagating
}

TEST_CASE("transcript survives mid-run replay exhaustion") {
    ReplayScript script;
    script.entries.push_back({RoleSlot::brainstorm, std::nullopt,
                              "```assessment\ngap_found: no\nrationale: r\n```"});
    script.entries.push_back({RoleSlot::manager, std::nullopt, "THOUGHT: about to starve"});
    // no further manager entries: next step raises ScriptExhausted

    Stack stack({});
    gateway::Gateway gw(std::make_unique<gateway::ReplayBackend>(std::move(script)));
    brainstorm::Brainstormer bs(gw);
    Manager mgr(gw, bs, *stack.web_agent, *stack.runner, *stack.registry, *stack.invoker,
                stack.workdir, {});

    Task task;
    task.id = "t-starve";
    task.query = "q";
    CHECK_THROWS_AS(mgr.run_task(task), gateway::ScriptExhausted);

    auto events = read_transcript(stack.workdir / "transcripts" / (task.id + ".jsonl"));
    REQUIRE_FALSE(events.empty());
    CHECK(events.back().kind == EventKind::error);
    CHECK(events.back().payload.at("error_kind") == "ScriptExhausted");
    for (std::size_t i = 0; i < events.size(); ++i) CHECK(events[i].seq == i + 1);
}

TEST_CASE("tool-level failures become observations the loop can recover from") {
    ReplayScript script;
    script.entries.push_back({RoleSlot::brainstorm, std::nullopt,
                              "```assessment\ngap_found: no\nrationale: r\n```"});
    // Walk the error-observation paths, then the paging path, then finish.
    script.entries.push_back({RoleSlot::manager, std::nullopt, "ACTION: web_search"});
    script.entries.push_back({RoleSlot::manager, std::nullopt, "ACTION: page_down"});
    script.entries.push_back(
        {RoleSlot::manager, std::nullopt, "ACTION: call_mcp name=not_registered"});
    script.entries.push_back(
        {RoleSlot::manager, std::nullopt,
         "ACTION: visit_page url=https://github.com/jdepoix/youtube-transcript-api"});
    script.entries.push_back({RoleSlot::manager, std::nullopt, "ACTION: page_down"});
    script.entries.push_back({RoleSlot::manager, std::nullopt, "ACTION: mcp_brainstorming"});
    script.entries.push_back({RoleSlot::brainstorm, std::nullopt,
                              "```assessment\ngap_found: no\nrationale: second look\n```"});
    script.entries.push_back({RoleSlot::manager, std::nullopt, "FINAL: recovered"});

    Stack stack({});
    gateway::Gateway gw(std::make_unique<gateway::ReplayBackend>(std::move(script)));
    brainstorm::Brainstormer bs(gw);
    Manager mgr(gw, bs, *stack.web_agent, *stack.runner, *stack.registry, *stack.invoker,
                stack.workdir, {});

    Task task;
    task.id = "t-recover";
    task.query = "q";
    auto answer = mgr.run_task(task);
    CHECK(answer.answer_text == "recovered");

    auto events = read_transcript(stack.workdir / "transcripts" / (task.id + ".jsonl"));
    int error_observations = 0;
    int assessments = 0;
    bool page_view_seen = false;
    for (const auto& event : events) {
        if (event.kind == EventKind::observation && event.payload.contains("error")) {
            ++error_observations;
        }
        if (event.payload.value("phase", "") == "assessment") ++assessments;
        if (event.payload.contains("viewport_index")) page_view_seen = true;
        CHECK(event.kind != EventKind::error);
    }
    CHECK(error_observations == 3); // missing query, no page yet, unknown MCP
    CHECK(assessments == 2);        // initial + explicit re-run
    CHECK(page_view_seen);
}

TEST_CASE("failed tasks still produce gap-free transcripts") {
    // Brainstorm proposes a tool; synthesis fails all 3 attempts.
    ReplayScript script;
    script.entries.push_back(
        {RoleSlot::brainstorm, std::nullopt,
         "```assessment\ngap_found: yes\nrationale: r\nproposal:\nname: doomed_tool\npurpose: "
         "always fails\nvalidation: nonempty_stdout\n```"});
    script.entries.push_back(
        {RoleSlot::manager, std::nullopt, "ACTION: synthesize_tool name=doomed_tool"});
    const std::string silent_bundle =
        "TOOL\n```sh\ntrue\n```\nENV\n```sh\ntrue\n```\nENTRY: sh tool.sh\n";
    for (int i = 0; i < 3; ++i) {
        script.entries.push_back({RoleSlot::scriptgen, std::nullopt, silent_bundle});
    }

    Stack stack({});
    gateway::Gateway gw(std::make_unique<gateway::ReplayBackend>(std::move(script)));
    brainstorm::Brainstormer bs(gw);
    runner::Runner run(*stack.envs, *stack.generator, stack.workdir, nullptr, 15.0);
    scriptgen::ScriptGenerator gen(gw);
    runner::Runner run2(*stack.envs, gen, stack.workdir, nullptr, 15.0);
    Manager mgr(gw, bs, *stack.web_agent, run2, *stack.registry, *stack.invoker, stack.workdir,
                {});

    Task task;
    task.id = "t-doomed";
    task.query = "q";
    CHECK_THROWS_AS(mgr.run_task(task), runner::ToolSynthesisFailed);

    auto events = read_transcript(stack.workdir / "transcripts" / (task.id + ".jsonl"));
    for (std::size_t i = 0; i < events.size(); ++i) CHECK(events[i].seq == i + 1);
    CHECK(events.back().kind == EventKind::error);
    CHECK(stack.registry->size() == 0);
}
