#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "alita/error.hpp"

namespace alita::web {

struct FetchError : Error {
    explicit FetchError(const std::string& m) : Error("FetchError", m) {}
};
struct BackendUnavailable : Error {
    explicit BackendUnavailable(const std::string& m) : Error("BackendUnavailable", m) {}
};
struct EmptyQuery : Error {
    explicit EmptyQuery(const std::string& m) : Error("EmptyQuery", m) {}
};

enum class PageStatus { ok, http_error };

struct PageView {
    std::string url;
    int viewport_index = 0;
    int total_viewports = 1;
    std::string content; // current viewport slice
    bool at_start = true;
    bool at_end = true;
    PageStatus status = PageStatus::ok;
    std::string full_text; // whole extracted text; page_move re-slices from it
};

enum class PageDirection { up, down };

enum class SearchSource { web, code_host };
const char* to_string(SearchSource source);

struct SearchResult {
    std::string title;
    std::string url;
    std::string snippet;
    SearchSource source = SearchSource::web;
};

// Markup stripping: script/style elements dropped, block-level tags become
// newlines, remaining tags removed, common entities decoded, space runs
// collapsed, 3+ blank lines collapsed to one blank line.
std::string extract_text(const std::string& body);

// lowercase + collapse whitespace + trim; fixture keys are digests of this.
std::string normalize_query(const std::string& query);

std::string url_digest(const std::string& url);
std::string query_digest(const std::string& normalized_query);

class WebBackend {
public:
    virtual ~WebBackend() = default;

    struct FetchResult {
        int status = 200;
        std::string body;
    };
    virtual FetchResult fetch(const std::string& url) = 0;
    virtual std::vector<SearchResult> search(const std::string& normalized_query,
                                             SearchSource source) = 0;
};

// Serves fixtures from <root>/pages/<url-digest>.txt (optional sidecar
// <url-digest>.status carrying an HTTP status) and
// <root>/search/<source>/<query-digest>.jsonl. Performs no network I/O.
class OfflineWebBackend : public WebBackend {
public:
    explicit OfflineWebBackend(std::filesystem::path fixture_root);

    FetchResult fetch(const std::string& url) override;
    std::vector<SearchResult> search(const std::string& normalized_query,
                                     SearchSource source) override;

private:
    std::filesystem::path root_;
};

// Plain HTTPS/HTTP GET for pages plus one search endpoint per source
// (queried as GET <endpoint>?q=<query>, expecting a JSON array of
// {title,url,snippet} objects).
class LiveWebBackend : public WebBackend {
public:
    explicit LiveWebBackend(std::map<SearchSource, std::string> search_endpoints = {});

    FetchResult fetch(const std::string& url) override;
    std::vector<SearchResult> search(const std::string& normalized_query,
                                     SearchSource source) override;

private:
    std::map<SearchSource, std::string> search_endpoints_;
};

class WebAgent {
public:
    explicit WebAgent(std::unique_ptr<WebBackend> backend, int viewport_size = 8192);

    // Fetches, extracts text, returns viewport 0. HTTP error statuses come
    // back as an http_error PageView; transport failures and missing
    // fixtures throw FetchError.
    PageView visit(const std::string& url);

    // Moves one viewport, clamped at the boundaries. Never throws.
    PageView page_move(const PageView& view, PageDirection direction) const;

    std::vector<SearchResult> search(const std::string& query, SearchSource source);

    int viewport_size() const { return viewport_size_; }

private:
    PageView view_at(PageView view, int index) const;

    std::unique_ptr<WebBackend> backend_;
    int viewport_size_;
};

} // namespace alita::web
