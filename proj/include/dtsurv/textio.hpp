#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dtsurv {

// Shortest decimal string that parses back to exactly the same double.
std::string format_double(double x);

// Strict numeric parsing: the whole token must be consumed. `where` names
// the file/line for the error message.
double parse_double_strict(std::string_view token, const std::string& where);
long parse_int_strict(std::string_view token, const std::string& where);

// Split one CSV line on commas. No quoting: fields must not contain commas.
std::vector<std::string_view> split_csv_line(std::string_view line);

// Write `text` to `path` atomically: write to a sibling temp file, then
// rename over the target so a crash never leaves a half-written file.
void write_file_atomic(const std::string& path, const std::string& text);

std::string read_file(const std::string& path);

}  // namespace dtsurv
