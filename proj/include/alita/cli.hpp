#pragma once

#include <iosfwd>

namespace alita::cli {

// Exit codes: 0 success, 1 pipeline/pack failure, 2 usage or config error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

} // namespace alita::cli
