#pragma once

// Command-line front end. Exit codes: 0 success, 1 runtime failure (or
// audit mismatches), 2 usage or configuration failure.

#include <iosfwd>
#include <string>
#include <vector>

namespace pricetree {

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace pricetree
