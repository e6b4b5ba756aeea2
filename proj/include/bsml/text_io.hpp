#pragma once

// Small helpers shared by the tabular writers and readers.

#include <string>
#include <string_view>
#include <vector>

namespace bsml::text {

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);
long long parse_int(std::string_view s);

// C99 hexadecimal float ("0x1.8p-1"), exact.
std::string format_hex(double v);
double parse_hex(std::string_view s);

std::vector<std::string_view> split(std::string_view s, char sep);

}  // namespace bsml::text
