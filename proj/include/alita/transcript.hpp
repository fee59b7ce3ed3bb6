#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alita/error.hpp"

namespace alita {

enum class Actor { manager, webagent, brainstorm, scriptgen, envman, runner, mcpbox, mcphost };
enum class EventKind { thought, tool_call, observation, final_answer, error };

const char* to_string(Actor actor);
const char* to_string(EventKind kind);
std::optional<Actor> actor_from_string(const std::string& name);
std::optional<EventKind> event_kind_from_string(const std::string& name);

struct TranscriptEvent {
    std::uint64_t seq = 0;
    std::string timestamp; // ISO-8601 UTC
    Actor actor = Actor::manager;
    EventKind kind = EventKind::thought;
    nlohmann::json payload;
};

// Current UTC time as ISO-8601 with millisecond precision.
std::string iso_timestamp_now();

// Anything that accepts transcript events. Modules below the manager
// (envman, runner) log through this so their step output lands in the
// same sequence.
class TranscriptSink {
public:
    virtual ~TranscriptSink() = default;
    virtual std::uint64_t record(Actor actor, EventKind kind, nlohmann::json payload) = 0;
};

// Append-only JSONL writer; one line per event with fields
// (seq, timestamp, actor, kind, payload) in that order. Every record is
// flushed immediately so a transcript survives any failure path.
class TranscriptWriter : public TranscriptSink {
public:
    explicit TranscriptWriter(std::filesystem::path path);

    std::uint64_t record(Actor actor, EventKind kind, nlohmann::json payload) override;

    const std::vector<TranscriptEvent>& events() const { return events_; }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::mutex mutex_;
    std::uint64_t next_seq_ = 1;
    std::vector<TranscriptEvent> events_;
};

// In-memory sink for unit tests.
class CollectingSink : public TranscriptSink {
public:
    std::uint64_t record(Actor actor, EventKind kind, nlohmann::json payload) override;
    const std::vector<TranscriptEvent>& events() const { return events_; }

private:
    std::mutex mutex_;
    std::uint64_t next_seq_ = 1;
    std::vector<TranscriptEvent> events_;
};

// Parses a transcript file back into events. Throws alita::Error with
// kind "TranscriptParseError" on malformed lines.
std::vector<TranscriptEvent> read_transcript(const std::filesystem::path& path);

} // namespace alita
