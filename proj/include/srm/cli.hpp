#pragma once

namespace srm {

// Exit codes: 0 success, 1 usage error, 2 check failure, 3 runtime error.
int run_cli(int argc, const char* const* argv);

}  // namespace srm
