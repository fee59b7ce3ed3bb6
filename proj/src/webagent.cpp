#include "alita/webagent.hpp"

#include "alita/digest.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

namespace alita::web {

using nlohmann::json;

const char* to_string(SearchSource source) {
    return source == SearchSource::web ? "web" : "code_host";
}

namespace {

const std::set<std::string>& block_tags() {
    static const std::set<std::string> tags = {
        "p",  "div", "br",  "li",    "ul",    "ol",     "h1",     "h2",      "h3",
        "h4", "h5",  "h6",  "tr",    "table", "thead",  "tbody",  "section", "article",
        "hr", "pre", "nav", "aside", "form",  "header", "footer", "blockquote"};
    return tags;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string decode_entity(const std::string& entity) {
    if (entity == "amp") return "&";
    if (entity == "lt") return "<";
    if (entity == "gt") return ">";
    if (entity == "quot") return "\"";
    if (entity == "apos" || entity == "#39") return "'";
    if (entity == "nbsp") return " ";
    return "&" + entity + ";";
}

} // namespace

std::string extract_text(const std::string& body) {
    std::string out;
    out.reserve(body.size());
    std::size_t i = 0;
    const std::size_t n = body.size();

    while (i < n) {
        char c = body[i];
        if (c == '<') {
            std::size_t close = body.find('>', i + 1);
            if (close == std::string::npos) break; // dangling tag: drop the rest
            std::string tag = body.substr(i + 1, close - i - 1);
            bool closing = !tag.empty() && tag[0] == '/';
            std::string name = lower(tag.substr(closing ? 1 : 0));
            auto name_end = name.find_first_of(" \t\r\n/");
            if (name_end != std::string::npos) name = name.substr(0, name_end);

            if (!closing && (name == "script" || name == "style")) {
                std::string terminator = "</" + name;
                std::size_t end = lower(body).find(terminator, close + 1);
                if (end == std::string::npos) break;
                std::size_t end_close = body.find('>', end);
                i = (end_close == std::string::npos) ? n : end_close + 1;
                continue;
            }
            if (block_tags().count(name)) out.push_back('\n');
            i = close + 1;
            continue;
        }
        if (c == '&') {
            std::size_t semi = body.find(';', i + 1);
            if (semi != std::string::npos && semi - i <= 8) {
                out += decode_entity(body.substr(i + 1, semi - i - 1));
                i = semi + 1;
                continue;
            }
        }
        out.push_back(c);
        ++i;
    }

    // Collapse space/tab runs, strip spaces around newlines, cap blank runs.
    std::string collapsed;
    collapsed.reserve(out.size());
    int pending_newlines = 0;
    bool pending_space = false;
    for (char c : out) {
        if (c == '\n' || c == '\r') {
            pending_newlines = std::min(pending_newlines + 1, 2);
            pending_space = false;
            continue;
        }
        if (c == ' ' || c == '\t') {
            pending_space = !collapsed.empty() && pending_newlines == 0;
            continue;
        }
        if (pending_newlines > 0) {
            if (!collapsed.empty()) collapsed.append(static_cast<std::size_t>(pending_newlines), '\n');
            pending_newlines = 0;
        } else if (pending_space) {
            collapsed.push_back(' ');
        }
        pending_space = false;
        collapsed.push_back(c);
    }
    return collapsed;
}

std::string normalize_query(const std::string& query) {
    return digest::normalize_text(query);
}

std::string url_digest(const std::string& url) {
    return digest::sha256_hex_prefix(url, 16);
}

std::string query_digest(const std::string& normalized_query) {
    return digest::sha256_hex_prefix(normalized_query, 16);
}

// ── OfflineWebBackend ───────────────────────────────────────────────────

OfflineWebBackend::OfflineWebBackend(std::filesystem::path fixture_root)
    : root_(std::move(fixture_root)) {
    if (!std::filesystem::exists(root_)) {
        throw BackendUnavailable("web fixture root does not exist: " + root_.string());
    }
}

WebBackend::FetchResult OfflineWebBackend::fetch(const std::string& url) {
    const std::string key = url_digest(url);
    const auto page_path = root_ / "pages" / (key + ".txt");
    if (!std::filesystem::exists(page_path)) {
        throw FetchError("no offline fixture for url: " + url);
    }
    FetchResult result;
    std::ifstream in(page_path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    result.body = buf.str();

    const auto status_path = root_ / "pages" / (key + ".status");
    if (std::filesystem::exists(status_path)) {
        std::ifstream sin(status_path);
        sin >> result.status;
        if (!sin) result.status = 200;
    }
    return result;
}

std::vector<SearchResult> OfflineWebBackend::search(const std::string& normalized_query,
                                                    SearchSource source) {
    const auto path =
        root_ / "search" / to_string(source) / (query_digest(normalized_query) + ".jsonl");
    std::vector<SearchResult> results;
    if (!std::filesystem::exists(path)) return results; // miss is not an error

    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json record = json::parse(line, nullptr, false);
        if (record.is_discarded() || !record.is_object()) continue;
        SearchResult r;
        r.title = record.value("title", "");
        r.url = record.value("url", "");
        r.snippet = record.value("snippet", "");
        r.source = source;
        results.push_back(std::move(r));
    }
    return results;
}

// ── LiveWebBackend ──────────────────────────────────────────────────────

namespace {

struct SplitUrl {
    std::string base;
    std::string path;
};

SplitUrl split_live_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw FetchError("url missing scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

LiveWebBackend::LiveWebBackend(std::map<SearchSource, std::string> search_endpoints)
    : search_endpoints_(std::move(search_endpoints)) {}

WebBackend::FetchResult LiveWebBackend::fetch(const std::string& url) {
    auto [base, path] = split_live_url(url);
    httplib::Client client(base);
    client.set_follow_location(true);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(std::chrono::seconds(30));
    auto res = client.Get(path);
    if (!res) throw FetchError("fetch failed for " + url + ": " + httplib::to_string(res.error()));
    return {res->status, res->body};
}

std::vector<SearchResult> LiveWebBackend::search(const std::string& normalized_query,
                                                 SearchSource source) {
    auto it = search_endpoints_.find(source);
    if (it == search_endpoints_.end() || it->second.empty()) {
        throw BackendUnavailable(std::string("no search endpoint configured for source ") +
                                 to_string(source));
    }
    auto [base, path] = split_live_url(it->second);
    httplib::Client client(base);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(std::chrono::seconds(30));
    httplib::Params params{{"q", normalized_query}};
    auto res = client.Get(path, params, httplib::Headers{});
    if (!res || res->status != 200) {
        throw BackendUnavailable("search backend error for query: " + normalized_query);
    }
    json parsed = json::parse(res->body, nullptr, false);
    std::vector<SearchResult> results;
    if (!parsed.is_array()) return results;
    for (const auto& record : parsed) {
        SearchResult r;
        r.title = record.value("title", "");
        r.url = record.value("url", "");
        r.snippet = record.value("snippet", "");
        r.source = source;
        results.push_back(std::move(r));
    }
    return results;
}

// ── WebAgent ────────────────────────────────────────────────────────────

WebAgent::WebAgent(std::unique_ptr<WebBackend> backend, int viewport_size)
    : backend_(std::move(backend)), viewport_size_(viewport_size > 0 ? viewport_size : 8192) {}

PageView WebAgent::view_at(PageView view, int index) const {
    const auto size = static_cast<std::size_t>(viewport_size_);
    int total = static_cast<int>((view.full_text.size() + size - 1) / size);
    if (total < 1) total = 1;
    if (index < 0) index = 0;
    if (index >= total) index = total - 1;

    view.total_viewports = total;
    view.viewport_index = index;
    view.content = view.full_text.substr(static_cast<std::size_t>(index) * size, size);
    view.at_start = index == 0;
    view.at_end = index == total - 1;
    return view;
}

PageView WebAgent::visit(const std::string& url) {
    auto fetched = backend_->fetch(url);
    PageView view;
    view.url = url;
    if (fetched.status < 200 || fetched.status >= 300) {
        view.status = PageStatus::http_error;
        view.full_text = "HTTP " + std::to_string(fetched.status) + " for " + url;
        return view_at(std::move(view), 0);
    }
    view.status = PageStatus::ok;
    view.full_text = extract_text(fetched.body);
    return view_at(std::move(view), 0);
}

PageView WebAgent::page_move(const PageView& view, PageDirection direction) const {
    const int delta = direction == PageDirection::down ? 1 : -1;
    return view_at(view, view.viewport_index + delta);
}

std::vector<SearchResult> WebAgent::search(const std::string& query, SearchSource source) {
    const std::string normalized = normalize_query(query);
    if (normalized.empty()) throw EmptyQuery("search query is empty");
    return backend_->search(normalized, source);
}

} // namespace alita::web
