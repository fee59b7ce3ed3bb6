#pragma once

#include <cstddef>
#include <string>
#include <string_view>

namespace alita::digest {

// Full SHA-256 as 64 lowercase hex chars.
std::string sha256_hex(std::string_view data);

// First `n` hex chars of the SHA-256 digest.
std::string sha256_hex_prefix(std::string_view data, std::size_t n);

// Lowercase, collapse every whitespace run to a single space, trim ends.
std::string normalize_text(std::string_view text);

// Digest used to pin replay fixtures to the prompt that produced them:
// normalize_text, then SHA-256, first 16 hex chars.
std::string prompt_digest(std::string_view prompt_text);

} // namespace alita::digest
