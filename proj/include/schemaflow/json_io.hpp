#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace schemaflow {

using Json = nlohmann::json;

// Parses JSON text. Throws Error(MalformedJson) on syntax errors. When
// `duplicates` is non-null, every key repeated within one object is appended
// as "parent.key" (parent is empty at the top level).
Json parse_json(std::string_view text, std::vector<std::string>* duplicates = nullptr);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Sorted list of `*.json` files directly inside `dir`.
std::vector<std::filesystem::path> list_json_files(const std::filesystem::path& dir);

}  // namespace schemaflow
