#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "alita/error.hpp"

namespace alita::pack {

struct PackFormatError : Error {
    explicit PackFormatError(const std::string& message) : Error("PackFormatError", message) {}
};

// One archived file: path inside the archive plus its raw bytes.
using Entry = std::pair<std::string, std::string>;

// Writes entries as a gzip-compressed ustar archive. Entry names must be
// relative paths under 100 chars (registry layouts stay well below that).
void write_archive(const std::filesystem::path& dest, const std::vector<Entry>& entries);

// Reads a gzip-compressed ustar archive back into (name, content) pairs
// in archive order. Throws PackFormatError on malformed input.
std::vector<Entry> read_archive(const std::filesystem::path& src);

} // namespace alita::pack
