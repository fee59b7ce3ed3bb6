#include <doctest.h>

#include "alita/mcphost.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace alita;
using namespace alita::mcphost;
using nlohmann::json;

namespace {

struct HostRig {
    fs::path workdir;
    std::shared_ptr<envman::StubProvider> provider;
    std::unique_ptr<envman::EnvManager> envs;
    std::unique_ptr<gateway::Gateway> gw;
    std::unique_ptr<scriptgen::ScriptGenerator> generator;
    std::unique_ptr<runner::Runner> runner;
    std::unique_ptr<mcpbox::Registry> registry;
    std::string record_id;

    HostRig() {
        static std::atomic<int> counter{0};
        workdir = fs::temp_directory_path() /
                  ("alita-mcphost-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(workdir);
        fs::create_directories(workdir);
        provider = std::make_shared<envman::StubProvider>();
        envs = std::make_unique<envman::EnvManager>(workdir, provider);
        gw = std::make_unique<gateway::Gateway>(
            std::make_unique<gateway::ReplayBackend>(gateway::ReplayScript{}));
        generator = std::make_unique<scriptgen::ScriptGenerator>(*gw);
        runner = std::make_unique<runner::Runner>(*envs, *generator, workdir, nullptr, 10.0);
        registry = std::make_unique<mcpbox::Registry>(workdir / "registry");
        record_id = register_echo_tool();
    }
    ~HostRig() { fs::remove_all(workdir); }

    std::string register_echo_tool(const std::string& body =
                                       "if [ \"$1\" = \"--text\" ]; then printf '%s\\n' \"$2\"; fi\n") {
        auto bundle_dir = workdir / "bundles" / "echo_tool";
        fs::create_directories(bundle_dir);
        std::ofstream(bundle_dir / "tool.sh") << body;
        std::ofstream(bundle_dir / "env_setup.sh") << "true\n";
        std::ofstream(bundle_dir / "cleanup.sh") << "true\n";
        std::ofstream(bundle_dir / "entry.txt") << "sh tool.sh\n";

        mcpbox::McpRecord record;
        record.name = "echo_tool";
        record.description = "echoes the text argument back";
        record.input_schema = {{"text", "string", "", false}};
        record.bundle_ref = bundle_dir.string();
        record.env_profile.env_name = "alita-echo-tool-env";
        record.env_profile.setup_steps = {"env-create"};
        record.provenance.task_id = "task-golden";
        record.provenance.created_at = "2026-01-01T00:00:00.000Z";
        return registry->register_record(record);
    }

    std::string serve_lines(const std::string& input) {
        std::istringstream in(input);
        std::ostringstream out;
        mcphost::serve(*registry, *envs, *runner, "echo_tool", in, out, 10.0);
        return out.str();
    }
};

// Replaces every top-level response/request id with a sequence token so
// golden comparison is insensitive to concrete id values.
std::string normalize_ids(const std::string& jsonl) {
    std::istringstream in(jsonl);
    std::ostringstream out;
    std::map<std::string, std::string> mapping;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json message = json::parse(line);
        if (message.contains("id") && !message["id"].is_null()) {
            const std::string key = message["id"].dump();
            auto [it, inserted] = mapping.emplace(key, "id-" + std::to_string(mapping.size() + 1));
            message["id"] = it->second;
        }
        out << message.dump() << "\n";
    }
    return out.str();
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(bool(in), "missing fixture: " << path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace

TEST_CASE("golden session: initialize, tools/list, tools/call, unknown method") {
    HostRig rig;
    const fs::path golden_dir = fs::path(ALITA_FIXTURES_DIR) / "mcp-golden";
    const std::string requests = read_file(golden_dir / "requests.jsonl");
    const std::string actual = rig.serve_lines(requests);

    if (std::getenv("ALITA_WRITE_GOLDEN")) {
        std::ofstream out(golden_dir / "responses.jsonl", std::ios::binary);
        out << actual;
        MESSAGE("golden responses rewritten");
        return;
    }

    const std::string expected = read_file(golden_dir / "responses.jsonl");
    CHECK(normalize_ids(actual) == normalize_ids(expected));

    // Shape spot checks against the protocol:
    std::istringstream lines(actual);
    std::string line;
    REQUIRE(std::getline(lines, line));
    json init = json::parse(line);
    CHECK(init["jsonrpc"] == "2.0");
    CHECK(init["result"]["protocolVersion"] == kProtocolVersion);
    CHECK(init["result"]["capabilities"].contains("tools"));
    CHECK(init["result"]["serverInfo"]["name"] == kServerName);

    REQUIRE(std::getline(lines, line));
    json list = json::parse(line);
    REQUIRE(list["result"]["tools"].size() == 1);
    CHECK(list["result"]["tools"][0]["name"] == "echo_tool");
    CHECK(list["result"]["tools"][0]["inputSchema"]["type"] == "object");
    CHECK(list["result"]["tools"][0]["inputSchema"]["properties"].contains("text"));
    CHECK(list["result"]["tools"][0]["inputSchema"]["required"][0] == "text");

    REQUIRE(std::getline(lines, line));
    json call = json::parse(line);
    CHECK(call["result"]["isError"] == false);
    CHECK(call["result"]["content"][0]["type"] == "text");
    CHECK(call["result"]["content"][0]["text"] == "hello\n");

    REQUIRE(std::getline(lines, line));
    json unknown = json::parse(line);
    CHECK(unknown["error"]["code"] == kMethodNotFound);
}

TEST_CASE("request and response ids match one to one") {
    HostRig rig;
    const std::string requests =
        R"({"jsonrpc":"2.0","id":"alpha","method":"initialize","params":{}})"
        "\n"
        R"({"jsonrpc":"2.0","id":77,"method":"tools/list"})"
        "\n";
    auto output = rig.serve_lines(requests);
    std::istringstream lines(output);
    std::string line;
    REQUIRE(std::getline(lines, line));
    CHECK(json::parse(line)["id"] == "alpha");
    REQUIRE(std::getline(lines, line));
    CHECK(json::parse(line)["id"] == 77);
    CHECK_FALSE(std::getline(lines, line));
}

TEST_CASE("unknown method answers -32601") {
    HostRig rig;
    auto output = rig.serve_lines(R"({"jsonrpc":"2.0","id":1,"method":"resources/read"})"
                                  "\n");
    json response = json::parse(output);
    CHECK(response["error"]["code"] == -32601);
    CHECK(response["error"]["message"].get<std::string>().find("resources/read") !=
          std::string::npos);
}

TEST_CASE("malformed json answers -32700 and the loop continues") {
    HostRig rig;
    auto output = rig.serve_lines("this is not json\n"
                                  R"({"jsonrpc":"2.0","id":5,"method":"tools/list"})"
                                  "\n");
    std::istringstream lines(output);
    std::string line;
    REQUIRE(std::getline(lines, line));
    CHECK(json::parse(line)["error"]["code"] == kParseError);
    REQUIRE(std::getline(lines, line));
    CHECK(json::parse(line)["id"] == 5);
}

TEST_CASE("non-2.0 or method-less messages answer -32600") {
    HostRig rig;
    auto output = rig.serve_lines(R"({"jsonrpc":"1.0","id":1,"method":"tools/list"})"
                                  "\n"
                                  R"({"jsonrpc":"2.0","id":2})"
                                  "\n");
    std::istringstream lines(output);
    std::string line;
    REQUIRE(std::getline(lines, line));
    CHECK(json::parse(line)["error"]["code"] == kInvalidRequest);
    REQUIRE(std::getline(lines, line));
    CHECK(json::parse(line)["error"]["code"] == kInvalidRequest);
}

TEST_CASE("notifications get no response") {
    HostRig rig;
    auto output = rig.serve_lines(R"({"jsonrpc":"2.0","method":"notifications/initialized"})"
                                  "\n"
                                  R"({"jsonrpc":"2.0","method":"tools/list"})"
                                  "\n");
    CHECK(output.empty());
}

TEST_CASE("successful tools/call increments usage_count exactly once") {
    HostRig rig;
    CHECK(rig.registry->find_by_id(rig.record_id)->usage_count == 0);
    rig.serve_lines(
        R"({"jsonrpc":"2.0","id":1,"method":"tools/call","params":{"name":"echo_tool","arguments":{"text":"x"}}})"
        "\n");
    CHECK(rig.registry->find_by_id(rig.record_id)->usage_count == 1);
    rig.serve_lines(
        R"({"jsonrpc":"2.0","id":2,"method":"tools/call","params":{"name":"echo_tool","arguments":{"text":"y"}}})"
        "\n");
    CHECK(rig.registry->find_by_id(rig.record_id)->usage_count == 2);
}

TEST_CASE("failing tool execution is an in-band error and does not count as usage") {
    HostRig rig;
    // Re-register with a failing body under a different name.
    auto bundle_dir = rig.workdir / "bundles" / "broken_tool";
    fs::create_directories(bundle_dir);
    std::ofstream(bundle_dir / "tool.sh") << "echo kaboom >&2\nexit 9\n";
    std::ofstream(bundle_dir / "env_setup.sh") << "true\n";
    std::ofstream(bundle_dir / "cleanup.sh") << "true\n";
    std::ofstream(bundle_dir / "entry.txt") << "sh tool.sh\n";
    mcpbox::McpRecord record;
    record.name = "broken_tool";
    record.description = "always fails";
    record.bundle_ref = bundle_dir.string();
    record.env_profile.env_name = "alita-broken-env";
    record.env_profile.setup_steps = {"env-create"};
    auto id = rig.registry->register_record(record);

    std::istringstream in(
        R"({"jsonrpc":"2.0","id":1,"method":"tools/call","params":{"name":"broken_tool","arguments":{}}})"
        "\n");
    std::ostringstream out;
    mcphost::serve(*rig.registry, *rig.envs, *rig.runner, "broken_tool", in, out, 10.0);

    json response = json::parse(out.str());
    CHECK(response["result"]["isError"] == true);
    CHECK(response["result"]["content"][0]["text"].get<std::string>().find("kaboom") !=
          std::string::npos);
    CHECK(rig.registry->find_by_id(id)->usage_count == 0);
}

TEST_CASE("unknown tool name and unknown arguments are rejected") {
    HostRig rig;
    auto output = rig.serve_lines(
        R"({"jsonrpc":"2.0","id":1,"method":"tools/call","params":{"name":"other_tool"}})"
        "\n"
        R"({"jsonrpc":"2.0","id":2,"method":"tools/call","params":{"name":"echo_tool","arguments":{"bogus":"v"}}})"
        "\n");
    std::istringstream lines(output);
    std::string line;
    REQUIRE(std::getline(lines, line));
    CHECK(json::parse(line)["error"]["code"] == kInvalidParams);
    REQUIRE(std::getline(lines, line));
    json arg_error = json::parse(line);
    CHECK(arg_error["result"]["isError"] == true);
    CHECK(arg_error["result"]["content"][0]["text"].get<std::string>().find("bogus") !=
          std::string::npos);
}

TEST_CASE("two concurrent sessions serve independent well-formed streams") {
    HostRig rig;
    const std::string session_input =
        R"({"jsonrpc":"2.0","id":1,"method":"initialize","params":{}})"
        "\n"
        R"({"jsonrpc":"2.0","id":2,"method":"tools/call","params":{"name":"echo_tool","arguments":{"text":"ping"}}})"
        "\n";

    std::string out_a, out_b;
    std::thread a([&] { out_a = rig.serve_lines(session_input); });
    std::thread b([&] { out_b = rig.serve_lines(session_input); });
    a.join();
    b.join();

    for (const auto* output : {&out_a, &out_b}) {
        std::istringstream lines(*output);
        std::string line;
        int count = 0;
        while (std::getline(lines, line)) {
            json message = json::parse(line); // every line parses standalone
            CHECK(message["jsonrpc"] == "2.0");
            ++count;
        }
        CHECK(count == 2);
    }
    CHECK(rig.registry->find_by_id(rig.record_id)->usage_count == 2);
}
