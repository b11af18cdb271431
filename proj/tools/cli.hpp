#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ktpr {

/// Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ktpr
