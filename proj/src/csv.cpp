#include "nlfk/csv.hpp"

#include <fmt/format.h>

namespace nlfk::csv {

std::string number(double v) { return fmt::format("{}", v); }

std::string field(std::string_view s) {
    if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out << ',';
        out << field(cells[i]);
    }
    out << "\r\n";
}

}  // namespace nlfk::csv
