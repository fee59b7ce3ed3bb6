#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace alita {

struct Task {
    std::string id;
    std::string query;
    std::vector<std::filesystem::path> attachments;
    std::string created_at;
};

} // namespace alita
