#pragma once

#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace nlfk::csv {

/// Shortest round-trippable decimal form, '.' separator, locale independent.
std::string number(double v);

/// RFC-4180 quoting: fields containing a comma, quote or newline are quoted
/// and embedded quotes doubled.
std::string field(std::string_view s);

void write_row(std::ostream& out, const std::vector<std::string>& cells);

}  // namespace nlfk::csv
