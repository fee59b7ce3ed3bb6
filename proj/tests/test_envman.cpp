#include <doctest.h>

#include "alita/envman.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace alita;
using namespace alita::envman;

namespace {

struct Workdir {
    fs::path path;
    Workdir() {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("alita-envman-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~Workdir() { fs::remove_all(path); }
};

scriptgen::ScriptBundle bundle_with_env(const std::string& env_script,
                                        const std::string& tool_script = "print('x')\n") {
    scriptgen::ScriptBundle bundle;
    bundle.tool_script = tool_script;
    bundle.env_setup_script = env_script;
    bundle.cleanup_script = scriptgen::kDefaultCleanupScript;
    bundle.entry_command = {"python3", "tool.py"};
    bundle.language_hint = "python";
    return bundle;
}

} // namespace

TEST_CASE("inspect_metadata classifies by filename convention") {
    Workdir wd;
    EnvManager envs(wd.path, std::make_shared<StubProvider>());

    auto readme_only = envs.inspect_metadata({{"README.md", "hello"}});
    CHECK(readme_only.readme_text == "hello");
    CHECK_FALSE(readme_only.requirements_text);

    auto empty = envs.inspect_metadata({});
    CHECK(empty.empty());

    auto shells = envs.inspect_metadata({{"setup.sh", "a"}, {"install.sh", "b"}});
    REQUIRE(shells.shell_script_texts.size() == 2);
    CHECK(shells.shell_script_texts[0] == "a"); // input order preserved
    CHECK(shells.shell_script_texts[1] == "b");

    auto mixed = envs.inspect_metadata(
        {{"docs/readme.rst", "r"}, {"requirements.txt", "q==1.0.0"}, {"unknown.bin", "?"}});
    CHECK(mixed.readme_text == "r");
    CHECK(mixed.requirements_text == "q==1.0.0");
}

TEST_CASE("plan_env extracts pip install lines into dependencies") {
    Workdir wd;
    EnvManager envs(wd.path, std::make_shared<StubProvider>());

    auto profile = envs.plan_env({}, bundle_with_env("pip install youtube-transcript-api\n"),
                                 "task-1", "src");
    REQUIRE(profile.dependencies.size() == 1);
    CHECK(profile.dependencies[0].name == "youtube-transcript-api");
    CHECK(profile.dependencies[0].constraint.empty());
    REQUIRE(profile.setup_steps.size() == 2);
    CHECK(profile.setup_steps[0] == "env-create");
    CHECK(profile.setup_steps[1] == "env-install youtube-transcript-api");
}

TEST_CASE("minimal profile: no metadata and no install lines") {
    Workdir wd;
    EnvManager envs(wd.path, std::make_shared<StubProvider>());
    auto profile = envs.plan_env({}, bundle_with_env("# nothing to install\n"), "task-1", "src");
    CHECK(profile.dependencies.empty());
    REQUIRE(profile.setup_steps.size() == 1);
    CHECK(profile.setup_steps[0] == "env-create");
}

TEST_CASE("requirements text parses per the extraction rule") {
    Workdir wd;
    EnvManager envs(wd.path, std::make_shared<StubProvider>());
    MetadataBundle metadata;
    metadata.requirements_text = "a==1.2.3\n# note\nb>=2\n";

    auto profile = envs.plan_env(metadata, bundle_with_env("true\n"), "task-1", "src");
    REQUIRE(profile.dependencies.size() == 2);
    CHECK(profile.dependencies[0].spec() == "a==1.2.3");
    CHECK(profile.dependencies[1].spec() == "b>=2");
}

TEST_CASE("bad constraint lines raise PlanError") {
    Workdir wd;
    EnvManager envs(wd.path, std::make_shared<StubProvider>());
    MetadataBundle metadata;
    metadata.requirements_text = "pkg===weird\n";
    CHECK_THROWS_AS(envs.plan_env(metadata, bundle_with_env("true\n"), "t", "s"), PlanError);
}

TEST_CASE("env lifecycle lines are planner-owned, others stay verbatim") {
    Workdir wd;
    EnvManager envs(wd.path, std::make_shared<StubProvider>());
    auto profile = envs.plan_env({},
                                 bundle_with_env("conda create -n youtube_transcript\n"
                                                 "conda activate youtube_transcript\n"
                                                 "pip install youtube-transcript-api\n"
                                                 "export TOKEN=x\n"),
                                 "task-1", "src");
    REQUIRE(profile.setup_steps.size() == 3);
    CHECK(profile.setup_steps[0] == "env-create");
    CHECK(profile.setup_steps[1] == "env-install youtube-transcript-api");
    CHECK(profile.setup_steps[2] == "export TOKEN=x");
}

TEST_CASE("derive_env_name is deterministic and input-sensitive") {
    CHECK(derive_env_name("t1", "s") == derive_env_name("t1", "s"));
    CHECK(derive_env_name("t1", "s") != derive_env_name("t2", "s"));
    // Frozen oracle values (computed independently with Python hashlib).
    CHECK(derive_env_name("t1", "s") == "alita-feb08e35d1ad");
    CHECK(derive_env_name("t2", "s") == "alita-91cd7655c381");
    CHECK(derive_env_name("task-042", "github.com/jdepoix/youtube-transcript-api") ==
          "alita-ba33c463cf5d");
}

TEST_CASE("dependency grammar accepts the four operators and rejects noise") {
    CHECK(parse_dependency("pkg")->spec() == "pkg");
    CHECK(parse_dependency("pkg==1.2.3")->spec() == "pkg==1.2.3");
    CHECK(parse_dependency("pkg~=1.2")->spec() == "pkg~=1.2");
    CHECK(parse_dependency("pkg>=1")->spec() == "pkg>=1");
    CHECK(parse_dependency("pkg<=2")->spec() == "pkg<=2");
    CHECK_FALSE(parse_dependency("pkg===x").has_value());
    CHECK_FALSE(parse_dependency("pkg==").has_value());
    CHECK_FALSE(parse_dependency("pkg~=1").has_value());
    CHECK_FALSE(parse_dependency("-flag").has_value());
    CHECK_FALSE(parse_dependency("pkg==1..2").has_value());
}

TEST_CASE("provision executes steps in order and returns a live handle") {
    Workdir wd;
    EnvManager envs(wd.path, std::make_shared<StubProvider>());
    auto profile = envs.plan_env({}, bundle_with_env("pip install left-pad\n"), "t", "s");

    auto handle = envs.provision(profile);
    CHECK(handle.env_name == profile.env_name);
    CHECK(fs::exists(handle.root_path));
    CHECK(fs::exists(handle.root_path / "scratch"));
    CHECK(fs::exists(handle.root_path / "env.json"));
    envs.destroy(handle);
    CHECK_FALSE(fs::exists(handle.root_path));
}

TEST_CASE("a failing step surfaces its index and stderr") {
    Workdir wd;
    auto provider = std::make_shared<StubProvider>();
    provider->set_failure_rule([](const std::string& kind, const std::string&) {
        return kind == "install" ? std::optional<std::string>("resolver exploded") : std::nullopt;
    });
    EnvManager envs(wd.path, provider);
    auto profile = envs.plan_env({}, bundle_with_env("pip install nope\n"), "t", "s");

    try {
        envs.provision(profile);
        FAIL("expected ProvisionError");
    } catch (const ProvisionError& e) {
        CHECK(e.step_index == 1); // step 0 is env-create
        CHECK(e.stderr_tail.find("resolver exploded") != std::string::npos);
    }
}

TEST_CASE("destroy is idempotent and marks orphans on teardown failure") {
    Workdir wd;
    auto provider = std::make_shared<StubProvider>();
    EnvManager envs(wd.path, provider);

    auto profile = envs.plan_env({}, bundle_with_env("true\n"), "t-destroy", "s");
    auto handle = envs.provision(profile);
    envs.destroy(handle);
    envs.destroy(handle); // second call is a no-op

    provider->set_failure_rule([](const std::string& kind, const std::string&) {
        return kind == "teardown" ? std::optional<std::string>("device busy") : std::nullopt;
    });
    auto handle2 = envs.provision(profile);
    CHECK_THROWS_AS(envs.destroy(handle2), TeardownError);
    CHECK(fs::exists(handle2.root_path / ".orphan"));
}

TEST_CASE("relax_versions rewrites constraints exactly") {
    Workdir wd;
    EnvManager envs(wd.path, std::make_shared<StubProvider>());

    EnvProfile profile;
    profile.env_name = "alita-test";
    profile.dependencies = {{"pkg", "==1.2.3"}, {"tilde", "~=2.4"}, {"loose", ">=1"}, {"free", ""}};
    profile.setup_steps = {"env-create", "env-install pkg==1.2.3 tilde~=2.4 loose>=1 free"};

    ProvisionError error(1, 1, "boom", "boom");
    auto relaxed = envs.recover(profile, error, "import pkg\n");
    CHECK(relaxed.recovery_round == 1);
    CHECK(relaxed.dependencies[0].spec() == "pkg~=1.2");
    CHECK(relaxed.dependencies[1].spec() == "tilde");
    CHECK(relaxed.dependencies[2].spec() == "loose>=1");
    CHECK(relaxed.dependencies[3].spec() == "free");
    REQUIRE(relaxed.setup_steps.size() == 2);
    CHECK(relaxed.setup_steps[1] == "env-install pkg~=1.2 tilde loose>=1 free");
}

TEST_CASE("minimal_deps keeps only imported dependencies") {
    Workdir wd;
    EnvManager envs(wd.path, std::make_shared<StubProvider>());

    EnvProfile profile;
    profile.env_name = "alita-test";
    profile.recovery_round = 1;
    profile.dependencies = {{"used-lib", ""}, {"unused-lib", ""}};
    profile.setup_steps = {"env-create", "env-install used-lib unused-lib"};

    const std::string tool_script = "from used_lib import thing\nprint(thing)\n";
    ProvisionError error(1, 1, "boom", "boom");
    auto minimal = envs.recover(profile, error, tool_script);
    CHECK(minimal.recovery_round == 2);
    REQUIRE(minimal.dependencies.size() == 1);
    CHECK(minimal.dependencies[0].name == "used-lib");
    CHECK(minimal.setup_steps[1] == "env-install used-lib");
}

TEST_CASE("round 2 recovery is exhausted") {
    Workdir wd;
    EnvManager envs(wd.path, std::make_shared<StubProvider>());
    EnvProfile profile;
    profile.env_name = "alita-test";
    profile.recovery_round = 2;
    ProvisionError error(0, 1, "x", "x");
    CHECK_THROWS_AS(envs.recover(profile, error, ""), RecoveryExhausted);
}

TEST_CASE("import token scan understands python and javascript forms") {
    auto tokens = import_tokens("import numpy as np\n"
                                "import os, sys\n"
                                "from youtube_transcript_api import YouTubeTranscriptApi\n"
                                "const lib = require('left-pad');\n"
                                "import thing from 'some-pkg';\n");
    CHECK(tokens.count("numpy"));
    CHECK(tokens.count("os"));
    CHECK(tokens.count("sys"));
    CHECK(tokens.count("youtube_transcript_api"));
    CHECK(tokens.count("left_pad"));
    CHECK(tokens.count("some_pkg"));
    CHECK_FALSE(tokens.count("thing"));
}

TEST_CASE("provision_with_recovery walks the ladder in order") {
    Workdir wd;
    auto provider = std::make_shared<StubProvider>();
    // Fail installs until the pinned constraint disappears.
    provider->set_failure_rule([](const std::string& kind, const std::string& detail) {
        if (kind == "install" && detail.find("==") != std::string::npos) {
            return std::optional<std::string>("cannot satisfy pinned version");
        }
        return std::optional<std::string>{};
    });
    EnvManager envs(wd.path, provider);

    EnvProfile profile;
    profile.env_name = derive_env_name("ladder", "s");
    profile.dependencies = {{"pkg", "==1.2.3"}};
    profile.setup_steps = {"env-create", "env-install pkg==1.2.3"};

    std::optional<RecoveryStrategyKind> last;
    auto [handle, final_profile] = envs.provision_with_recovery(profile, "import pkg\n", &last);
    CHECK(final_profile.recovery_round == 1);
    REQUIRE(last.has_value());
    CHECK(*last == RecoveryStrategyKind::relax_versions);
    envs.destroy(handle);
}

TEST_CASE("4 concurrent provisions get distinct roots with no crosstalk") {
    Workdir wd;
    EnvManager envs(wd.path, std::make_shared<StubProvider>());

    std::vector<EnvProfile> profiles;
    for (int i = 0; i < 4; ++i) {
        EnvProfile profile;
        profile.env_name = derive_env_name("task-" + std::to_string(i), "concurrent");
        profile.setup_steps = {"env-create"};
        profiles.push_back(profile);
    }

    std::vector<EnvHandle> handles(4);
    std::vector<std::thread> workers;
    for (int i = 0; i < 4; ++i) {
        workers.emplace_back([&, i] { handles[i] = envs.provision(profiles[i]); });
    }
    for (auto& w : workers) w.join();

    std::set<std::string> names, roots;
    for (const auto& handle : handles) {
        names.insert(handle.env_name);
        roots.insert(handle.root_path.string());
        // each root carries only its own marker
        std::ifstream marker(handle.root_path / "env.marker");
        std::string content;
        std::getline(marker, content);
        CHECK(content == handle.env_name);
    }
    CHECK(names.size() == 4);
    CHECK(roots.size() == 4);
    for (auto& handle : handles) envs.destroy(handle);
}

TEST_CASE("gc removes only stale unreferenced roots") {
    Workdir wd;
    EnvManager envs(wd.path, std::make_shared<StubProvider>());

    const auto envs_dir = wd.path / "envs";
    fs::create_directories(envs_dir / "alita-old-orphan");
    fs::create_directories(envs_dir / "alita-old-referenced");
    fs::create_directories(envs_dir / "alita-fresh");

    const auto old_time = fs::file_time_type::clock::now() - std::chrono::hours(100);
    fs::last_write_time(envs_dir / "alita-old-orphan", old_time);
    fs::last_write_time(envs_dir / "alita-old-referenced", old_time);

    int removed = envs.gc(72.0, {"alita-old-referenced"});
    CHECK(removed == 1);
    CHECK_FALSE(fs::exists(envs_dir / "alita-old-orphan"));
    CHECK(fs::exists(envs_dir / "alita-old-referenced"));
    CHECK(fs::exists(envs_dir / "alita-fresh"));
}
