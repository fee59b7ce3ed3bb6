#include "alita/transcript.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

namespace alita {

using nlohmann::json;
using nlohmann::ordered_json;

const char* to_string(Actor actor) {
    switch (actor) {
        case Actor::manager: return "manager";
        case Actor::webagent: return "webagent";
        case Actor::brainstorm: return "brainstorm";
        case Actor::scriptgen: return "scriptgen";
        case Actor::envman: return "envman";
        case Actor::runner: return "runner";
        case Actor::mcpbox: return "mcpbox";
        case Actor::mcphost: return "mcphost";
    }
    return "manager";
}

const char* to_string(EventKind kind) {
    switch (kind) {
        case EventKind::thought: return "thought";
        case EventKind::tool_call: return "tool_call";
        case EventKind::observation: return "observation";
        case EventKind::final_answer: return "final";
        case EventKind::error: return "error";
    }
    return "thought";
}

std::optional<Actor> actor_from_string(const std::string& name) {
    for (Actor a : {Actor::manager, Actor::webagent, Actor::brainstorm, Actor::scriptgen,
                    Actor::envman, Actor::runner, Actor::mcpbox, Actor::mcphost}) {
        if (name == to_string(a)) return a;
    }
    return std::nullopt;
}

std::optional<EventKind> event_kind_from_string(const std::string& name) {
    for (EventKind k : {EventKind::thought, EventKind::tool_call, EventKind::observation,
                        EventKind::final_answer, EventKind::error}) {
        if (name == to_string(k)) return k;
    }
    return std::nullopt;
}

std::string iso_timestamp_now() {
    using namespace std::chrono;
    const auto now = system_clock::now();
    const auto ms = duration_cast<milliseconds>(now.time_since_epoch()) % 1000;
    const std::time_t secs = system_clock::to_time_t(now);
    std::tm tm_utc{};
    gmtime_r(&secs, &tm_utc);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                  tm_utc.tm_year + 1900, tm_utc.tm_mon + 1, tm_utc.tm_mday, tm_utc.tm_hour,
                  tm_utc.tm_min, tm_utc.tm_sec, static_cast<int>(ms.count()));
    return buf;
}

namespace {

std::string event_line(const TranscriptEvent& event) {
    ordered_json line;
    line["seq"] = event.seq;
    line["timestamp"] = event.timestamp;
    line["actor"] = to_string(event.actor);
    line["kind"] = to_string(event.kind);
    line["payload"] = event.payload;
    return line.dump();
}

} // namespace

TranscriptWriter::TranscriptWriter(std::filesystem::path path) : path_(std::move(path)) {
    std::filesystem::create_directories(path_.parent_path());
    // Truncate: a writer owns one run of one task.
    std::ofstream out(path_, std::ios::trunc);
    if (!out) throw Error("IoError", "cannot open transcript: " + path_.string());
}

std::uint64_t TranscriptWriter::record(Actor actor, EventKind kind, json payload) {
    std::lock_guard<std::mutex> lock(mutex_);
    TranscriptEvent event;
    event.seq = next_seq_++;
    event.timestamp = iso_timestamp_now();
    event.actor = actor;
    event.kind = kind;
    event.payload = std::move(payload);

    std::ofstream out(path_, std::ios::app);
    if (!out) throw Error("IoError", "cannot append to transcript: " + path_.string());
    out << event_line(event) << '\n';
    out.flush();

    events_.push_back(event);
    return event.seq;
}

std::uint64_t CollectingSink::record(Actor actor, EventKind kind, json payload) {
    std::lock_guard<std::mutex> lock(mutex_);
    TranscriptEvent event;
    event.seq = next_seq_++;
    event.timestamp = iso_timestamp_now();
    event.actor = actor;
    event.kind = kind;
    event.payload = std::move(payload);
    events_.push_back(std::move(event));
    return events_.back().seq;
}

std::vector<TranscriptEvent> read_transcript(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("IoError", "cannot open transcript: " + path.string());
    std::vector<TranscriptEvent> events;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json parsed;
        try {
            parsed = json::parse(line);
        } catch (const json::exception& e) {
            throw Error("TranscriptParseError",
                        "line " + std::to_string(line_no) + ": " + e.what());
        }
        TranscriptEvent event;
        event.seq = parsed.at("seq").get<std::uint64_t>();
        event.timestamp = parsed.at("timestamp").get<std::string>();
        auto actor = actor_from_string(parsed.at("actor").get<std::string>());
        auto kind = event_kind_from_string(parsed.at("kind").get<std::string>());
        if (!actor || !kind) {
            throw Error("TranscriptParseError",
                        "line " + std::to_string(line_no) + ": unknown actor or kind");
        }
        event.actor = *actor;
        event.kind = *kind;
        event.payload = parsed.at("payload");
        events.push_back(std::move(event));
    }
    return events;
}

} // namespace alita
