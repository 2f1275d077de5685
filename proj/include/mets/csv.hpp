#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace mets::csv {

/// Splits one CSV line (RFC 4180 quoting, no embedded newlines).
/// Returns false when quotes are unbalanced.
bool split_line(std::string_view line, std::vector<std::string>& fields);

std::string quote_if_needed(std::string_view field);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Shortest text that parses back to the same double.
std::string format_double(double value);

}  // namespace mets::csv
