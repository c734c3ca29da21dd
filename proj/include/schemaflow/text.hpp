#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace schemaflow {

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
bool starts_with(std::string_view s, std::string_view prefix);
bool ends_with(std::string_view s, std::string_view suffix);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Lowercase alphanumeric word tokens; apostrophes inside words are kept.
std::vector<std::string> word_tokens(std::string_view s);

// Case-insensitive search for `needle` in `haystack` whose match is not
// adjacent to another alphanumeric character. Returns the byte offset.
std::optional<std::size_t> find_word(std::string_view haystack, std::string_view needle,
                                     std::size_t from = 0);

std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 14695981039346656037ULL);

// Replaces every occurrence of `from` with `to`.
std::string replace_all(std::string s, std::string_view from, std::string_view to);

}  // namespace schemaflow
