#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace alita {

// Base for all recoverable runtime failures. kind() is a stable
// machine-readable tag that ends up in transcripts and error events.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(message), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

} // namespace alita
