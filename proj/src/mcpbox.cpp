#include "alita/mcpbox.hpp"

#include "alita/digest.hpp"
#include "alita/lockfile.hpp"
#include "alita/pack_archive.hpp"
#include "alita/transcript.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace alita::mcpbox {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot write " + path.string());
    out << content;
}

json params_to_json(const std::vector<ToolParam>& params) {
    json arr = json::array();
    for (const auto& p : params) {
        json item{{"name", p.name}, {"type", p.type}};
        if (p.has_default) item["default"] = p.default_value;
        arr.push_back(std::move(item));
    }
    return arr;
}

std::vector<ToolParam> params_from_json(const json& arr) {
    std::vector<ToolParam> params;
    for (const auto& item : arr) {
        ToolParam p;
        p.name = item.at("name").get<std::string>();
        p.type = item.at("type").get<std::string>();
        if (item.contains("default")) {
            p.default_value = item["default"].get<std::string>();
            p.has_default = true;
        }
        params.push_back(std::move(p));
    }
    return params;
}

bool creation_order_less(const McpRecord& a, const McpRecord& b) {
    if (a.provenance.created_at != b.provenance.created_at) {
        return a.provenance.created_at < b.provenance.created_at;
    }
    return a.id < b.id;
}

} // namespace

json to_json(const McpRecord& record) {
    json model_ids = json::object();
    for (const auto& [slot, model] : record.provenance.model_ids) model_ids[slot] = model;
    return json{{"id", record.id},
                {"name", record.name},
                {"description", record.description},
                {"input_schema", params_to_json(record.input_schema)},
                {"bundle_ref", record.bundle_ref},
                {"env_profile", envman::to_json(record.env_profile)},
                {"provenance",
                 {{"task_id", record.provenance.task_id},
                  {"model_ids", model_ids},
                  {"created_at", record.provenance.created_at}}},
                {"usage_count", record.usage_count},
                {"schema_hash", record.schema_hash}};
}

McpRecord record_from_json(const json& j) {
    McpRecord record;
    record.id = j.at("id").get<std::string>();
    record.name = j.at("name").get<std::string>();
    record.description = j.at("description").get<std::string>();
    record.input_schema = params_from_json(j.at("input_schema"));
    record.bundle_ref = j.at("bundle_ref").get<std::string>();
    record.env_profile = envman::env_profile_from_json(j.at("env_profile"));
    const auto& prov = j.at("provenance");
    record.provenance.task_id = prov.at("task_id").get<std::string>();
    for (auto it = prov.at("model_ids").begin(); it != prov.at("model_ids").end(); ++it) {
        record.provenance.model_ids[it.key()] = it.value().get<std::string>();
    }
    record.provenance.created_at = prov.at("created_at").get<std::string>();
    record.usage_count = j.at("usage_count").get<int>();
    record.schema_hash = j.at("schema_hash").get<std::string>();
    return record;
}

std::string schema_hash(const std::string& name, const std::vector<ToolParam>& input_schema) {
    json canonical{{"name", name}, {"input_schema", params_to_json(input_schema)}};
    return digest::sha256_hex(canonical.dump());
}

std::set<std::string> description_tokens(const std::string& text) {
    std::set<std::string> tokens;
    std::string current;
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
        } else if (!current.empty()) {
            tokens.insert(current);
            current.clear();
        }
    }
    if (!current.empty()) tokens.insert(current);
    return tokens;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 0.0;
    std::size_t intersection = 0;
    for (const auto& token : a) {
        if (b.count(token)) ++intersection;
    }
    const std::size_t unions = a.size() + b.size() - intersection;
    return unions == 0 ? 0.0 : static_cast<double>(intersection) / static_cast<double>(unions);
}

// ── Registry ────────────────────────────────────────────────────────────

Registry::Registry(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "mcps");
    load();
    rebuild_index();
}

void Registry::load() {
    records_.clear();
    const auto mcps = root_ / "mcps";
    for (const auto& entry : std::filesystem::directory_iterator(mcps)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        if (name.empty() || name[0] == '.') continue; // temp dirs from interrupted writes
        const auto record_path = entry.path() / "record.json";
        if (!std::filesystem::exists(record_path)) continue;
        try {
            records_.emplace(name, record_from_json(json::parse(read_file(record_path))));
        } catch (const json::exception&) {
            // Unreadable record dirs are skipped, never fatal on open.
        }
    }
}

std::filesystem::path Registry::bundle_dir(const std::string& id) const {
    return root_ / "mcps" / id / "bundle";
}

std::string Registry::register_locked(McpRecord candidate,
                                      const std::filesystem::path& bundle_src) {
    if (candidate.name.empty()) throw InvalidRecord("record name is empty");
    if (!std::filesystem::exists(bundle_src) || !std::filesystem::is_directory(bundle_src) ||
        std::filesystem::is_empty(bundle_src)) {
        throw InvalidRecord("bundle files missing at " + bundle_src.string());
    }
    if (!std::filesystem::exists(bundle_src / "entry.txt")) {
        throw InvalidRecord("bundle at " + bundle_src.string() + " is missing entry.txt");
    }

    candidate.schema_hash = schema_hash(candidate.name, candidate.input_schema);
    candidate.id = "mcp-" + candidate.schema_hash.substr(0, 12);

    for (const auto& [id, existing] : records_) {
        if (existing.schema_hash == candidate.schema_hash) return id; // dedup
    }

    if (candidate.provenance.created_at.empty()) {
        candidate.provenance.created_at = iso_timestamp_now();
    }
    candidate.bundle_ref = "mcps/" + candidate.id + "/bundle";

    // Stage the whole record dir, then rename into place.
    const auto tmp_dir = root_ / "mcps" / (".tmp-" + candidate.id);
    std::filesystem::remove_all(tmp_dir);
    std::filesystem::create_directories(tmp_dir / "bundle");
    for (const auto& f : std::filesystem::directory_iterator(bundle_src)) {
        if (f.is_regular_file()) {
            std::filesystem::copy_file(f.path(), tmp_dir / "bundle" / f.path().filename());
        }
    }
    write_file(tmp_dir / "record.json", to_json(candidate).dump(2) + "\n");

    const auto final_dir = root_ / "mcps" / candidate.id;
    std::error_code ec;
    std::filesystem::rename(tmp_dir, final_dir, ec);
    if (ec) {
        std::filesystem::remove_all(tmp_dir);
        throw StorageError("cannot commit record " + candidate.id + ": " + ec.message());
    }

    records_[candidate.id] = candidate;
    return candidate.id;
}

std::string Registry::register_record(McpRecord candidate) {
    const std::filesystem::path bundle_src = candidate.bundle_ref;
    std::lock_guard<std::mutex> guard(mutex_);
    FileLock lock(root_ / ".lock");
    auto id = register_locked(std::move(candidate), bundle_src);
    rebuild_index();
    return id;
}

std::vector<std::pair<std::string, double>> Registry::lookup(const std::string& query,
                                                             double threshold) const {
    std::lock_guard<std::mutex> guard(mutex_);
    const auto query_tokens = description_tokens(query);

    struct Scored {
        const McpRecord* record;
        double score;
    };
    std::vector<Scored> scored;
    for (const auto& [id, record] : records_) {
        double score = jaccard(query_tokens, description_tokens(record.description));
        if (score >= threshold) scored.push_back({&record, score});
    }
    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
        if (a.score != b.score) return a.score > b.score;
        return creation_order_less(*a.record, *b.record);
    });

    std::vector<std::pair<std::string, double>> out;
    out.reserve(scored.size());
    for (const auto& s : scored) out.emplace_back(s.record->id, s.score);
    return out;
}

std::vector<McpRecord> Registry::records() const {
    std::lock_guard<std::mutex> guard(mutex_);
    std::vector<McpRecord> out;
    out.reserve(records_.size());
    for (const auto& [id, record] : records_) out.push_back(record);
    std::sort(out.begin(), out.end(), creation_order_less);
    return out;
}

std::string Registry::summarize() const {
    auto ordered = records();
    if (ordered.empty()) return "Registered MCPs: none";
    std::string out;
    for (const auto& record : ordered) {
        std::string desc = record.description;
        if (desc.size() > 120) desc = desc.substr(0, 120) + "...";
        if (!out.empty()) out += '\n';
        out += record.name + " — " + desc;
    }
    return out;
}

const McpRecord* Registry::find_by_id(const std::string& id) const {
    std::lock_guard<std::mutex> guard(mutex_);
    auto it = records_.find(id);
    return it == records_.end() ? nullptr : &it->second;
}

const McpRecord* Registry::find_by_name(const std::string& name) const {
    std::lock_guard<std::mutex> guard(mutex_);
    for (const auto& [id, record] : records_) {
        if (record.name == name) return &record;
    }
    return nullptr;
}

void Registry::increment_usage(const std::string& id) {
    std::lock_guard<std::mutex> guard(mutex_);
    FileLock lock(root_ / ".lock");
    auto it = records_.find(id);
    if (it == records_.end()) throw InvalidRecord("no record with id " + id);
    it->second.usage_count += 1;

    const auto record_path = root_ / "mcps" / id / "record.json";
    const auto tmp_path = root_ / "mcps" / id / ".record.json.tmp";
    write_file(tmp_path, to_json(it->second).dump(2) + "\n");
    std::filesystem::rename(tmp_path, record_path);
}

void Registry::rebuild_index() {
    auto index = index_json();
    const auto tmp_path = root_ / ".index.json.tmp";
    write_file(tmp_path, index.dump(2) + "\n");
    std::filesystem::rename(tmp_path, root_ / "index.json");
}

json Registry::index_json() const {
    json ids = json::array();
    json tokens = json::object();
    std::vector<const McpRecord*> ordered;
    for (const auto& [id, record] : records_) ordered.push_back(&record);
    std::sort(ordered.begin(), ordered.end(),
              [](const McpRecord* a, const McpRecord* b) { return creation_order_less(*a, *b); });
    for (const auto* record : ordered) {
        ids.push_back(record->id);
        for (const auto& token : description_tokens(record->description)) {
            if (!tokens.contains(token)) tokens[token] = json::array();
            tokens[token].push_back(record->id);
        }
    }
    return json{{"format_version", 1}, {"ids", ids}, {"tokens", tokens}};
}

int Registry::export_pack(const std::vector<std::string>& ids,
                          const std::filesystem::path& dest) const {
    std::lock_guard<std::mutex> guard(mutex_);
    std::vector<pack::Entry> entries;
    json manifest_ids = json::array();

    for (const auto& id : ids) {
        auto it = records_.find(id);
        if (it == records_.end()) throw InvalidRecord("cannot export unknown id " + id);
        manifest_ids.push_back(id);
    }
    json manifest{{"format_version", kPackFormatVersion}, {"records", manifest_ids}};
    entries.emplace_back("manifest.json", manifest.dump(2) + "\n");

    for (const auto& id : ids) {
        const auto record_dir = root_ / "mcps" / id;
        entries.emplace_back("mcps/" + id + "/record.json", read_file(record_dir / "record.json"));
        const auto bundle = record_dir / "bundle";
        if (std::filesystem::exists(bundle)) {
            std::vector<std::filesystem::path> files;
            for (const auto& f : std::filesystem::directory_iterator(bundle)) {
                if (f.is_regular_file()) files.push_back(f.path());
            }
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                entries.emplace_back("mcps/" + id + "/bundle/" + f.filename().string(),
                                     read_file(f));
            }
        }
    }
    pack::write_archive(dest, entries);
    return static_cast<int>(ids.size());
}

ImportResult Registry::import_pack(const std::filesystem::path& src) {
    auto entries = pack::read_archive(src);

    const std::string* manifest_text = nullptr;
    for (const auto& [name, content] : entries) {
        if (name == "manifest.json") {
            manifest_text = &content;
            break;
        }
    }
    if (!manifest_text) throw pack::PackFormatError("pack has no manifest.json");
    json manifest = json::parse(*manifest_text, nullptr, false);
    if (manifest.is_discarded() || !manifest.contains("format_version")) {
        throw pack::PackFormatError("pack manifest is malformed");
    }
    if (manifest["format_version"].get<int>() > kPackFormatVersion) {
        throw pack::PackFormatError("pack format_version " +
                                    manifest["format_version"].dump() +
                                    " is newer than supported version " +
                                    std::to_string(kPackFormatVersion));
    }

    // Group entries per record id.
    std::map<std::string, std::map<std::string, const std::string*>> per_record;
    for (const auto& [name, content] : entries) {
        if (name.rfind("mcps/", 0) != 0) continue;
        auto rest = name.substr(5);
        auto slash = rest.find('/');
        if (slash == std::string::npos) continue;
        per_record[rest.substr(0, slash)][rest.substr(slash + 1)] = &content;
    }

    ImportResult result;
    std::lock_guard<std::mutex> guard(mutex_);
    FileLock lock(root_ / ".lock");

    for (const auto& id : manifest.value("records", json::array())) {
        const std::string record_id = id.get<std::string>();
        auto group = per_record.find(record_id);
        if (group == per_record.end() || !group->second.count("record.json")) {
            result.invalid.push_back(record_id + ": record.json missing from pack");
            continue;
        }
        json record_json = json::parse(*group->second.at("record.json"), nullptr, false);
        if (record_json.is_discarded()) {
            result.invalid.push_back(record_id + ": record.json is not valid JSON");
            continue;
        }
        McpRecord record;
        try {
            record = record_from_json(record_json);
        } catch (const json::exception& e) {
            result.invalid.push_back(record_id + ": " + e.what());
            continue;
        }

        // Materialize the bundle into a staging dir, then reuse the
        // normal registration path (inheriting dedup).
        const auto staging = root_ / ".import-staging" / record_id;
        std::filesystem::remove_all(staging);
        std::filesystem::create_directories(staging);
        bool has_bundle_file = false;
        for (const auto& [path, content] : group->second) {
            if (path.rfind("bundle/", 0) != 0) continue;
            write_file(staging / path.substr(7), *content);
            has_bundle_file = true;
        }
        if (!has_bundle_file) {
            result.invalid.push_back(record_id + ": bundle files missing from pack");
            std::filesystem::remove_all(staging);
            continue;
        }

        const std::size_t before = records_.size();
        try {
            register_locked(std::move(record), staging);
        } catch (const Error& e) {
            result.invalid.push_back(record_id + ": " + e.what());
            std::filesystem::remove_all(staging);
            continue;
        }
        if (records_.size() > before) ++result.imported;
        std::filesystem::remove_all(staging);
    }
    std::filesystem::remove_all(root_ / ".import-staging");
    rebuild_index();
    return result;
}

} // namespace alita::mcpbox
