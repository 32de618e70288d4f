#pragma once
// Small text utilities: delimited-file splitting, strict numeric parsing, and
// deterministic (shortest round-trip) double formatting for emitted files.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace agepred {

// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

std::vector<std::string> split(std::string_view line, char delim);

// Strict parsers: the whole token must be consumed.
std::optional<std::int64_t> parse_int(std::string_view tok);
std::optional<double> parse_real(std::string_view tok);

// Guess '\t' vs ',' from a header line ('\t' wins when both present).
char sniff_delimiter(std::string_view header);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

}  // namespace agepred
