#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace riemobs {

// Exit codes: 0 ok (check: strong), 1 check weak, 2 config error,
// 3 numerical failure, 4 check fails.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// flat "key = value" lines, '#' comments
std::map<std::string, std::string> parse_config_text(const std::string& text);

}  // namespace riemobs
