#pragma once

#include <string>
#include <vector>

namespace neurodecode {

// Minimal RFC-4180-style CSV: comma separated, "\n" line endings, fields
// quoted when they contain commas, quotes or newlines.
std::string csv_escape(const std::string& field);
std::string csv_join(const std::vector<std::string>& fields);

// Parses a full document (header included) back into rows of fields.
std::vector<std::vector<std::string>> csv_parse(const std::string& text);

// Shortest decimal form that round-trips the value exactly.
std::string format_double(double v);

}  // namespace neurodecode
