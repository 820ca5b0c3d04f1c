#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace bidlab {

// Shortest decimal string that round-trips the exact double ("%.17g").
// All numeric file output goes through this so that re-parsing with strtod
// reproduces the bits.
std::string fmt_double(double x);

// strtod wrapper that rejects trailing garbage.
double parse_double(const std::string& s);
long parse_long(const std::string& s);

// Splits one CSV line on commas. No quoting: none of our fields contain
// commas.
std::vector<std::string> split_csv(const std::string& line);

std::string join_csv(const std::vector<std::string>& fields);

// FNV-1a 64-bit over raw bytes; used for dataset manifests.
std::uint64_t fnv1a(const void* data, std::size_t n);
std::uint64_t fnv1a_file(const std::filesystem::path& p);
std::string hex64(std::uint64_t v);

void write_text_file(const std::filesystem::path& p, const std::string& body);
std::string read_text_file(const std::filesystem::path& p);

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace bidlab
