#include "alita/pack_archive.hpp"

#include <zlib.h>

#include <array>
#include <cstdio>
#include <cstring>
#include <memory>

namespace alita::pack {

namespace {

constexpr std::size_t kBlock = 512;

struct GzFileCloser {
    void operator()(gzFile f) const {
        if (f) gzclose(f);
    }
};

void write_octal(char* field, std::size_t width, unsigned long long value) {
    // width includes the trailing NUL
    std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1), value);
}

std::array<char, kBlock> make_header(const std::string& name, std::size_t size) {
    if (name.empty() || name.size() >= 100) {
        throw PackFormatError("archive entry name too long: " + name);
    }
    std::array<char, kBlock> h{};
    std::memcpy(h.data(), name.c_str(), name.size());
    write_octal(h.data() + 100, 8, 0644);       // mode
    write_octal(h.data() + 108, 8, 0);          // uid
    write_octal(h.data() + 116, 8, 0);          // gid
    write_octal(h.data() + 124, 12, size);      // size
    write_octal(h.data() + 136, 12, 0);         // mtime: fixed for reproducible packs
    h[156] = '0';                               // regular file
    std::memcpy(h.data() + 257, "ustar", 6);    // magic
    std::memcpy(h.data() + 263, "00", 2);       // version

    std::memset(h.data() + 148, ' ', 8);        // checksum field counts as spaces
    unsigned int sum = 0;
    for (char c : h) sum += static_cast<unsigned char>(c);
    std::snprintf(h.data() + 148, 7, "%06o", sum);
    h[155] = ' ';
    return h;
}

unsigned long long read_octal(const char* field, std::size_t width) {
    unsigned long long value = 0;
    for (std::size_t i = 0; i < width; ++i) {
        char c = field[i];
        if (c == '\0' || c == ' ') break;
        if (c < '0' || c > '7') throw PackFormatError("bad octal field in archive header");
        value = value * 8 + static_cast<unsigned long long>(c - '0');
    }
    return value;
}

} // namespace

void write_archive(const std::filesystem::path& dest, const std::vector<Entry>& entries) {
    std::filesystem::create_directories(dest.parent_path().empty()
                                            ? std::filesystem::path(".")
                                            : dest.parent_path());
    std::unique_ptr<gzFile_s, GzFileCloser> gz(gzopen(dest.c_str(), "wb"));
    if (!gz) throw PackFormatError("cannot open archive for writing: " + dest.string());

    auto put = [&](const char* data, std::size_t n) {
        if (n > 0 && gzwrite(gz.get(), data, static_cast<unsigned>(n)) != static_cast<int>(n)) {
            throw PackFormatError("archive write failed: " + dest.string());
        }
    };

    std::array<char, kBlock> zero{};
    for (const auto& [name, content] : entries) {
        auto header = make_header(name, content.size());
        put(header.data(), kBlock);
        put(content.data(), content.size());
        std::size_t pad = (kBlock - content.size() % kBlock) % kBlock;
        put(zero.data(), pad);
    }
    // Two zero blocks terminate the archive.
    put(zero.data(), kBlock);
    put(zero.data(), kBlock);
}

std::vector<Entry> read_archive(const std::filesystem::path& src) {
    std::unique_ptr<gzFile_s, GzFileCloser> gz(gzopen(src.c_str(), "rb"));
    if (!gz) throw PackFormatError("cannot open archive: " + src.string());

    std::vector<Entry> entries;
    std::array<char, kBlock> block{};
    for (;;) {
        int n = gzread(gz.get(), block.data(), kBlock);
        if (n == 0) break; // clean EOF
        if (n != static_cast<int>(kBlock)) throw PackFormatError("truncated archive header");

        bool all_zero = true;
        for (char c : block) {
            if (c != '\0') {
                all_zero = false;
                break;
            }
        }
        if (all_zero) break;

        if (std::memcmp(block.data() + 257, "ustar", 5) != 0) {
            throw PackFormatError("missing ustar magic");
        }
        std::string name(block.data(), strnlen(block.data(), 100));
        auto size = read_octal(block.data() + 124, 12);
        char type = block[156];

        std::string content;
        content.resize(size);
        std::size_t padded = (size + kBlock - 1) / kBlock * kBlock;
        std::string raw;
        raw.resize(padded);
        if (padded > 0 &&
            gzread(gz.get(), raw.data(), static_cast<unsigned>(padded)) != static_cast<int>(padded)) {
            throw PackFormatError("truncated archive entry: " + name);
        }
        content.assign(raw.data(), size);

        if (type == '0' || type == '\0') {
            entries.emplace_back(std::move(name), std::move(content));
        }
        // Directories and other types are skipped; paths imply them.
    }
    return entries;
}

} // namespace alita::pack
