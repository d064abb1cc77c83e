#pragma once

#include <string>
#include <vector>

namespace inflatenn {

// Subcommands: gen-data, window, inflate, train, eval, postprocess, describe.
// Exit codes: 0 success, 2 configuration error (incl. usage), 3 data error,
// 1 anything else.
int cli_dispatch(const std::vector<std::string>& args);
int cli_dispatch(int argc, const char* const* argv);

}  // namespace inflatenn
