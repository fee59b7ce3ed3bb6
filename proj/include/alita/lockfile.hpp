#pragma once

#include <filesystem>

namespace alita {

// Advisory exclusive lock on a file path (flock). Blocks until acquired,
// released on destruction. Works across processes and across threads in
// one process (each instance holds its own descriptor).
class FileLock {
public:
    explicit FileLock(const std::filesystem::path& path);
    ~FileLock();

    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;
    FileLock(FileLock&& other) noexcept;
    FileLock& operator=(FileLock&&) = delete;

private:
    int fd_ = -1;
};

} // namespace alita
