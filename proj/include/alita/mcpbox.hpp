#pragma once

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "alita/envman.hpp"
#include "alita/error.hpp"
#include "alita/toolspec.hpp"

namespace alita::mcpbox {

struct InvalidRecord : Error {
    explicit InvalidRecord(const std::string& m) : Error("InvalidRecord", m) {}
};
struct StorageError : Error {
    explicit StorageError(const std::string& m) : Error("StorageError", m) {}
};

struct Provenance {
    std::string task_id;
    std::map<std::string, std::string> model_ids; // role slot -> model id
    std::string created_at;
};

struct McpRecord {
    std::string id; // content-addressed: "mcp-" + schema_hash prefix
    std::string name;
    std::string description;
    std::vector<ToolParam> input_schema;
    std::string bundle_ref; // bundle dir, registry-relative once stored
    envman::EnvProfile env_profile;
    Provenance provenance;
    int usage_count = 0;
    std::string schema_hash;
};

nlohmann::json to_json(const McpRecord& record);
McpRecord record_from_json(const nlohmann::json& j);

// SHA-256 over the canonical (name, input_schema) encoding.
std::string schema_hash(const std::string& name, const std::vector<ToolParam>& input_schema);

// Lowercase alphanumeric word set of a description; underscores and
// punctuation split words.
std::set<std::string> description_tokens(const std::string& text);

// Jaccard similarity of the two word sets (0 when both are empty).
double jaccard(const std::set<std::string>& a, const std::set<std::string>& b);

struct ImportResult {
    int imported = 0;                        // newly registered records
    std::vector<std::string> invalid;        // entries that failed validation
    bool partial() const { return !invalid.empty(); }
};

inline constexpr int kPackFormatVersion = 1;
inline constexpr double kReuseThreshold = 0.35;

// Flat-file store: <root>/mcps/<id>/record.json, <root>/mcps/<id>/bundle/*,
// <root>/index.json. Writes go through a temp dir + rename and are
// serialized by <root>/.lock; the index is rebuilt on open when stale.
class Registry {
public:
    explicit Registry(std::filesystem::path root);

    // Idempotent on schema_hash: an existing record with the same hash
    // wins and its id is returned unchanged. bundle files are copied
    // from candidate.bundle_ref into the registry.
    std::string register_record(McpRecord candidate);

    // score = Jaccard(query words, description words); results with
    // score >= threshold, descending, ties broken by older created_at.
    std::vector<std::pair<std::string, double>> lookup(const std::string& query,
                                                       double threshold) const;

    // One line per record in creation order: "name — description" with
    // the description capped at 120 chars; "Registered MCPs: none" when
    // empty.
    std::string summarize() const;

    int export_pack(const std::vector<std::string>& ids,
                    const std::filesystem::path& dest) const;
    ImportResult import_pack(const std::filesystem::path& src);

    const McpRecord* find_by_id(const std::string& id) const;
    const McpRecord* find_by_name(const std::string& name) const;
    std::vector<McpRecord> records() const; // creation order

    void increment_usage(const std::string& id);

    // Derives index.json from the record set; rebuilding twice yields
    // byte-identical output.
    void rebuild_index();
    nlohmann::json index_json() const;

    std::filesystem::path bundle_dir(const std::string& id) const;
    const std::filesystem::path& root() const { return root_; }
    std::size_t size() const { return records_.size(); }

private:
    void load();
    std::string register_locked(McpRecord candidate, const std::filesystem::path& bundle_src);

    std::filesystem::path root_;
    mutable std::mutex mutex_;
    std::map<std::string, McpRecord> records_; // id -> record
};

} // namespace alita::mcpbox
