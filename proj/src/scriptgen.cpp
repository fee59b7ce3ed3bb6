#include "alita/scriptgen.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace alita::scriptgen {

const char* to_string(ContextKind kind) {
    switch (kind) {
        case ContextKind::readme: return "readme";
        case ContextKind::code: return "code";
        case ContextKind::webpage: return "webpage";
    }
    return "webpage";
}

const char* const kDefaultCleanupScript =
    "#!/bin/sh\n"
    "# Default cleanup: tear down the tool environment and its scratch files.\n"
    "alita-env-teardown \"$ALITA_ENV_NAME\"\n"
    "rm -rf -- \"$ALITA_ENV_ROOT/scratch\"\n";

namespace {

std::string trim(const std::string& s) {
    auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

std::string normalize_language(std::string lang) {
    std::transform(lang.begin(), lang.end(), lang.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lang == "python" || lang == "python3" || lang == "py") return "python";
    if (lang == "sh" || lang == "bash" || lang == "shell") return "sh";
    if (lang == "javascript" || lang == "js" || lang == "node") return "javascript";
    if (lang.empty()) return "text";
    return "text";
}

std::string extension_for(const std::string& language_hint) {
    if (language_hint == "python") return "py";
    if (language_hint == "sh") return "sh";
    if (language_hint == "javascript") return "js";
    return "txt";
}

std::string language_for_extension(const std::string& ext) {
    if (ext == "py") return "python";
    if (ext == "sh") return "sh";
    if (ext == "js") return "javascript";
    return "text";
}

std::vector<std::string> tokenize_command(const std::string& line) {
    std::vector<std::string> tokens;
    std::string current;
    char quote = '\0';
    for (char c : line) {
        if (quote != '\0') {
            if (c == quote) quote = '\0';
            else current.push_back(c);
            continue;
        }
        if (c == '"' || c == '\'') {
            quote = c;
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!current.empty()) {
                tokens.push_back(current);
                current.clear();
            }
            continue;
        }
        current.push_back(c);
    }
    if (!current.empty()) tokens.push_back(current);
    return tokens;
}

struct FencedBlock {
    std::string info; // text after the opening ```
    std::string body;
};

// Reads header lines (TOOL/ENV/CLEANUP) each followed by one fenced
// block, plus the ENTRY line.
struct ReplyParts {
    std::optional<FencedBlock> tool, env, cleanup;
    std::optional<std::string> entry_line;
};

ReplyParts split_reply(const std::string& reply) {
    ReplyParts parts;
    std::istringstream in(reply);
    std::string line;
    std::string pending_header;
    bool in_fence = false;
    FencedBlock block;
    std::string body;

    auto assign = [&](const std::string& header, FencedBlock&& fb) {
        if (header == "TOOL" && !parts.tool) parts.tool = std::move(fb);
        else if (header == "ENV" && !parts.env) parts.env = std::move(fb);
        else if (header == "CLEANUP" && !parts.cleanup) parts.cleanup = std::move(fb);
    };

    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (in_fence) {
            if (t.rfind("```", 0) == 0) {
                in_fence = false;
                block.body = body;
                assign(pending_header, std::move(block));
                pending_header.clear();
                body.clear();
                block = {};
            } else {
                body += line;
                body += '\n';
            }
            continue;
        }
        if (t == "TOOL" || t == "ENV" || t == "CLEANUP") {
            pending_header = t;
            continue;
        }
        if (t.rfind("ENTRY:", 0) == 0 && !parts.entry_line) {
            parts.entry_line = trim(t.substr(6));
            continue;
        }
        if (t.rfind("```", 0) == 0 && !pending_header.empty()) {
            in_fence = true;
            block.info = trim(t.substr(3));
            body.clear();
        }
    }
    return parts;
}

bool line_is_dangerous(const std::string& collapsed) {
    static const char* kPrefixPatterns[] = {
        "rm -rf /", "rm -fr /", "rm -rf ~", "rm -fr ~",
    };
    for (const char* pattern : kPrefixPatterns) {
        auto pos = collapsed.find(pattern);
        if (pos != std::string::npos) return true;
    }
    // Redirections that write to absolute paths outside the workdir;
    // /dev/ targets (null, stdout) stay allowed.
    for (std::size_t i = 0; i + 1 < collapsed.size(); ++i) {
        if (collapsed[i] != '>') continue;
        std::size_t j = i + 1;
        if (j < collapsed.size() && collapsed[j] == '>') ++j;
        while (j < collapsed.size() && collapsed[j] == ' ') ++j;
        if (j < collapsed.size() && collapsed[j] == '/' &&
            collapsed.compare(j, 5, "/dev/") != 0) {
            return true;
        }
    }
    if (collapsed.find("dd of=/") != std::string::npos) return true;
    if (collapsed.find("mkfs") != std::string::npos) return true;
    return false;
}

bool script_has_dangerous_line(const std::string& script) {
    std::istringstream in(script);
    std::string line;
    while (std::getline(in, line)) {
        std::string collapsed;
        bool space = false;
        for (char c : line) {
            if (std::isspace(static_cast<unsigned char>(c))) {
                space = !collapsed.empty();
                continue;
            }
            if (space) collapsed.push_back(' ');
            space = false;
            collapsed.push_back(c);
        }
        if (line_is_dangerous(collapsed)) return true;
    }
    return false;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("IoError", "cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("IoError", "cannot write " + path.string());
    out << content;
}

} // namespace

RetrievedContext make_retrieved_context(std::string source_url, ContextKind kind,
                                        const std::string& text) {
    RetrievedContext ctx;
    ctx.source_url = std::move(source_url);
    ctx.kind = kind;
    if (text.size() > kExcerptCap) {
        ctx.excerpt = text.substr(0, kExcerptCap) + "\n...[excerpt truncated]";
    } else {
        ctx.excerpt = text;
    }
    if (ctx.excerpt.empty()) ctx.excerpt = "(empty)";
    return ctx;
}

std::string tool_script_filename(const ScriptBundle& bundle) {
    return "tool." + extension_for(bundle.language_hint);
}

ScriptBundle parse_bundle_reply(const std::string& reply) {
    auto parts = split_reply(reply);

    std::vector<std::string> missing;
    if (!parts.tool) missing.push_back("tool_missing");
    if (!parts.env) missing.push_back("env_setup_missing");
    if (!parts.entry_line || parts.entry_line->empty()) missing.push_back("entry_missing");
    if (!missing.empty()) {
        std::string joined;
        for (const auto& m : missing) {
            if (!joined.empty()) joined += ", ";
            joined += m;
        }
        throw BundleParseError("reply is missing mandatory sections: " + joined);
    }

    ScriptBundle bundle;
    bundle.tool_script = parts.tool->body;
    bundle.env_setup_script = parts.env->body;
    bundle.cleanup_script = parts.cleanup ? parts.cleanup->body : std::string(kDefaultCleanupScript);
    bundle.language_hint = normalize_language(parts.tool->info);
    bundle.entry_command = tokenize_command(*parts.entry_line);
    if (bundle.entry_command.empty()) {
        throw BundleParseError("reply is missing mandatory sections: entry_missing");
    }
    return bundle;
}

std::vector<std::string> validate_bundle(const ScriptBundle& bundle) {
    std::vector<std::string> issues;
    if (trim(bundle.tool_script).empty()) issues.push_back("tool_script_empty");
    if (trim(bundle.env_setup_script).empty()) issues.push_back("env_setup_empty");

    const std::string tool_file = tool_script_filename(bundle);
    bool references_tool = false;
    for (const auto& token : bundle.entry_command) {
        if (token == tool_file || (token.size() > tool_file.size() &&
                                   token.compare(token.size() - tool_file.size() - 1, 1, "/") == 0 &&
                                   token.compare(token.size() - tool_file.size(),
                                                 tool_file.size(), tool_file) == 0)) {
            references_tool = true;
            break;
        }
    }
    if (!references_tool) issues.push_back("entry_not_referencing_tool");

    if (script_has_dangerous_line(bundle.tool_script) ||
        script_has_dangerous_line(bundle.env_setup_script) ||
        script_has_dangerous_line(bundle.cleanup_script)) {
        issues.push_back("dangerous_path_operation");
    }

    if (bundle.tool_script.size() > kScriptSizeCap ||
        bundle.env_setup_script.size() > kScriptSizeCap ||
        bundle.cleanup_script.size() > kScriptSizeCap) {
        issues.push_back("oversized_script");
    }
    return issues;
}

void save_bundle(const ScriptBundle& bundle, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_file(dir / tool_script_filename(bundle), bundle.tool_script);
    write_file(dir / "env_setup.sh", bundle.env_setup_script);
    write_file(dir / "cleanup.sh", bundle.cleanup_script);
    std::string entry_line;
    for (const auto& token : bundle.entry_command) {
        if (!entry_line.empty()) entry_line += ' ';
        bool needs_quotes = token.find(' ') != std::string::npos;
        entry_line += needs_quotes ? "\"" + token + "\"" : token;
    }
    write_file(dir / "entry.txt", entry_line + "\n");
}

ScriptBundle load_bundle(const std::filesystem::path& dir) {
    ScriptBundle bundle;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        if (name.rfind("tool.", 0) == 0) {
            bundle.tool_script = read_file(entry.path());
            bundle.language_hint = language_for_extension(entry.path().extension().string().substr(1));
        }
    }
    if (bundle.tool_script.empty() && !std::filesystem::exists(dir)) {
        throw Error("IoError", "bundle directory missing: " + dir.string());
    }
    bundle.env_setup_script = read_file(dir / "env_setup.sh");
    bundle.cleanup_script = read_file(dir / "cleanup.sh");
    std::string entry_line = read_file(dir / "entry.txt");
    auto newline = entry_line.find('\n');
    if (newline != std::string::npos) entry_line = entry_line.substr(0, newline);
    bundle.entry_command = tokenize_command(entry_line);
    return bundle;
}

ScriptGenerator::ScriptGenerator(gateway::Gateway& gw) : gateway_(gw) {}

ScriptBundle ScriptGenerator::generate(const GenerationContext& context) {
    std::ostringstream prompt;
    prompt << "You build external tools for an autonomous agent. Generate a complete,\n"
              "self-contained tool for the specification below. The tool must run as a\n"
              "single script; its environment is created for it from your ENV block.\n\n";
    prompt << "Tool specification:\n";
    prompt << "name: " << context.tool_spec.name << "\n";
    prompt << "purpose: " << context.tool_spec.purpose << "\n";
    for (const auto& param : context.tool_spec.input_schema) {
        prompt << "input: " << param.name << " " << param.type;
        if (param.has_default) prompt << " (default: " << param.default_value << ")";
        prompt << "\n";
    }
    prompt << "output: " << context.tool_spec.output_description << "\n";

    if (!context.retrieved.empty()) {
        prompt << "\nRetrieved reference material:\n";
        for (const auto& ctx : context.retrieved) {
            prompt << "--- " << to_string(ctx.kind) << " from " << ctx.source_url << " ---\n";
            prompt << ctx.excerpt << "\n";
        }
    }

    if (!context.prior_attempts.empty()) {
        prompt << "\nEarlier attempts failed; fix the causes below:\n";
        for (const auto& report : context.prior_attempts) {
            prompt << "attempt " << report.attempt_no << ": " << report.error_summary << "\n";
        }
    }

    prompt << "\nReply with exactly these sections:\n"
              "TOOL\n```<language>\n<tool script>\n```\n"
              "ENV\n```sh\n<environment setup commands, one per line>\n```\n"
              "CLEANUP\n```sh\n<cleanup commands>\n```\n"
              "ENTRY: <command line that runs the tool script>\n";

    gateway::LLMRequest request;
    request.role_slot = gateway::RoleSlot::scriptgen;
    request.messages.push_back({gateway::Role::user, prompt.str()});

    auto response = gateway_.complete(request);
    try {
        return parse_bundle_reply(response.content);
    } catch (const BundleParseError& first) {
        request.messages.push_back({gateway::Role::assistant, response.content});
        request.messages.push_back(
            {gateway::Role::user, std::string("Your reply could not be parsed: ") + first.what() +
                                      ". Respond again with the exact TOOL/ENV/CLEANUP/ENTRY "
                                      "structure."});
        auto retry = gateway_.complete(request);
        return parse_bundle_reply(retry.content);
    }
}

} // namespace alita::scriptgen
