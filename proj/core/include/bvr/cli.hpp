#pragma once

#include <iosfwd>

namespace bvr {

// Entry point of the `bvr` tool. Subcommands: simulate, train-dac,
// train-cfc, recover, evaluate. Returns 0 on success, 2 on any error after
// printing one line "error: <reason>: <message>" to `err`.
int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace bvr
