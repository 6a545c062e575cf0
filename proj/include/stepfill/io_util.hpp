#pragma once

#include <cstdint>
#include <string>
#include <vector>

// Deterministic serialization helpers. Doubles are printed with the shortest
// representation that round-trips exactly (std::to_chars), so identical
// values always produce identical bytes and files re-read losslessly.

namespace stepfill {

std::string format_double(double v);
std::string format_int(std::int64_t v);

// Parse helpers that reject trailing garbage.
double parse_double(const std::string& s, const std::string& what);
std::int64_t parse_int(const std::string& s, const std::string& what);

// Write via a temp file in the same directory followed by rename, so readers
// never observe partial output.
void atomic_write_file(const std::string& path, const std::string& content);

std::string read_file(const std::string& path);

// Split one CSV line on commas (no quoting; the formats here never need it).
std::vector<std::string> split_csv_line(const std::string& line);

std::string join_csv(const std::vector<std::string>& fields);

}  // namespace stepfill
