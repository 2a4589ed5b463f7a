#pragma once

#include <iosfwd>

namespace pataplectic::cli {

/// Exit codes: 0 success, 1 usage/IO/schema error, 2 a check failed.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pataplectic::cli
