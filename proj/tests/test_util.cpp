#include <doctest.h>

#include "alita/digest.hpp"
#include "alita/lockfile.hpp"
#include "alita/pack_archive.hpp"
#include "alita/subprocess.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace alita;

namespace {
fs::path temp_dir(const std::string& tag) {
    auto dir = fs::temp_directory_path() / ("alita-util-" + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}
} // namespace

TEST_CASE("sha256 known vectors") {
    CHECK(digest::sha256_hex("") ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(digest::sha256_hex("abc") ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(digest::sha256_hex_prefix("abc", 12) == "ba7816bf8f01");
}

TEST_CASE("normalize_text lowers, collapses and trims") {
    CHECK(digest::normalize_text("  Mixed   CASE  ") == "mixed case");
    CHECK(digest::normalize_text("a\t b\n\nc") == "a b c");
    CHECK(digest::normalize_text("") == "");
}

TEST_CASE("prompt_digest is stable under whitespace and case noise") {
    auto a = digest::prompt_digest("user: What  is X?");
    auto b = digest::prompt_digest("USER:   what is x?\n");
    CHECK(a == b);
    CHECK(a.size() == 16);
}

TEST_CASE("pack archive round-trips entries in order") {
    auto dir = temp_dir("pack");
    const fs::path archive = dir / "roundtrip.tgz";

    std::vector<pack::Entry> entries = {
        {"manifest.json", "{\"format_version\":1}\n"},
        {"mcps/mcp-1/record.json", "{\"id\":\"mcp-1\"}"},
        {"mcps/mcp-1/bundle/tool.py", std::string(2000, 'x')},
        {"empty.txt", ""},
    };
    pack::write_archive(archive, entries);
    auto read_back = pack::read_archive(archive);

    REQUIRE(read_back.size() == entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        CHECK(read_back[i].first == entries[i].first);
        CHECK(read_back[i].second == entries[i].second);
    }
    fs::remove_all(dir);
}

TEST_CASE("pack archive rejects garbage") {
    auto dir = temp_dir("packbad");
    const fs::path bogus = dir / "bogus.tgz";
    {
        std::ofstream out(bogus, std::ios::binary);
        out << "this is not a tar archive";
    }
    CHECK_THROWS_AS(pack::read_archive(bogus), pack::PackFormatError);
    fs::remove_all(dir);
}

TEST_CASE("run_shell captures streams and exit codes") {
    auto dir = temp_dir("subproc");

    auto ok = subprocess::run_shell("printf hello; printf err >&2", dir, 10.0);
    CHECK(ok.exit_code == 0);
    CHECK_FALSE(ok.timed_out);
    CHECK(ok.stdout_text == "hello");
    CHECK(ok.stderr_text == "err");

    auto fail = subprocess::run_shell("echo boom >&2; exit 3", dir, 10.0);
    CHECK(fail.exit_code == 3);
    CHECK(fail.stderr_text.find("boom") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("run_shell kills the whole group on timeout") {
    auto dir = temp_dir("timeout");
    auto result = subprocess::run_shell("sleep 30", dir, 0.3);
    CHECK(result.timed_out);
    CHECK(result.duration_seconds >= 0.3);
    CHECK(result.duration_seconds < 5.0);
    fs::remove_all(dir);
}

TEST_CASE("run_shell truncates streams at the cap") {
    auto dir = temp_dir("trunc");
    // ~300 KiB of output, past the 256 KiB cap
    auto result = subprocess::run_shell(
        "i=0; while [ $i -lt 300 ]; do head -c 1024 /dev/zero | tr '\\0' 'x'; i=$((i+1)); done",
        dir, 30.0);
    CHECK(result.exit_code == 0);
    CHECK(result.stdout_text.size() <=
          subprocess::kStreamCapBytes + std::string(subprocess::kTruncationMarker).size());
    CHECK(result.stdout_text.find(subprocess::kTruncationMarker) != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("file lock serializes critical sections across threads") {
    auto dir = temp_dir("lock");
    const fs::path lock_path = dir / ".lock";
    std::atomic<int> inside{0};
    std::atomic<bool> collided{false};

    auto worker = [&] {
        for (int i = 0; i < 20; ++i) {
            FileLock lock(lock_path);
            if (inside.fetch_add(1) != 0) collided = true;
            std::this_thread::sleep_for(std::chrono::microseconds(200));
            inside.fetch_sub(1);
        }
    };
    std::thread a(worker), b(worker), c(worker);
    a.join();
    b.join();
    c.join();
    CHECK_FALSE(collided.load());
    fs::remove_all(dir);
}
