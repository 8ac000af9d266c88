#pragma once

#include <string>
#include <vector>

namespace attnpain::harness {

// Subcommands: gen-data, split, train, sweep, eval, explain.
// Common flags: --config <file>, --out <dir>, --seed <n>.
// Exit codes: 0 success, 1 validation error, 2 I/O error.
int run_cli(const std::vector<std::string>& args);

}  // namespace attnpain::harness
