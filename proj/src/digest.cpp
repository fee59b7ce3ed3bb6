#include "alita/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <cctype>
#include <stdexcept>

namespace alita::digest {

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> raw{};
    unsigned int raw_len = 0;
    if (EVP_Digest(data.data(), data.size(), raw.data(), &raw_len,
                   EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: EVP_Digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(raw_len * 2);
    for (unsigned int i = 0; i < raw_len; ++i) {
        out.push_back(hex[raw[i] >> 4]);
        out.push_back(hex[raw[i] & 0xf]);
    }
    return out;
}

std::string sha256_hex_prefix(std::string_view data, std::size_t n) {
    return sha256_hex(data).substr(0, n);
}

std::string normalize_text(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(c)));
    }
    return out;
}

std::string prompt_digest(std::string_view prompt_text) {
    return sha256_hex_prefix(normalize_text(prompt_text), 16);
}

} // namespace alita::digest
