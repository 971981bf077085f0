#pragma once

// tspkit command-line frontend.
//
// Exit codes: 0 success, 1 runtime failure (including missing inputs),
// 2 usage error (unknown flag, bad value, contradictory configuration).

#include <stdexcept>
#include <string>
#include <vector>

namespace tspkit::cli {

/// Bad or contradictory flags; exit 2.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Missing or unreadable input; exit 1.
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Expands `--config FILE` (a flat JSON object) into flags placed before the
/// explicit ones, so explicit flags win. args[0] is the program name.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

int run(int argc, char** argv);

}  // namespace tspkit::cli
