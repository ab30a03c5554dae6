#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace bvsviz {

/// Ordered `key = value` pairs. Text form: one pair per line, `#` starts a
/// comment, blank lines ignored.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);
void write_key_values(const std::filesystem::path& path, const KeyValues& kv);

/// Typed lookups; throw std::invalid_argument naming the key on bad input.
int get_int(const KeyValues& kv, const std::string& key, int fallback);
double get_double(const KeyValues& kv, const std::string& key, double fallback);
std::string get_string(const KeyValues& kv, const std::string& key,
                       const std::string& fallback);

/// Round-trip exact decimal form of a double.
std::string format_double(double v);

/// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace bvsviz
