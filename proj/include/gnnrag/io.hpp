#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace gnnrag {

using json = nlohmann::json;

/// Reads a text file line by line, stripping a trailing '\r'. Throws DataError
/// when the file cannot be opened.
std::vector<std::string> read_lines(const std::filesystem::path& file);
std::string read_file(const std::filesystem::path& file);
void write_file(const std::filesystem::path& file, std::string_view content);

/// Parses each non-empty line as JSON; the callback receives (1-based line, value).
void for_each_jsonl(const std::filesystem::path& file,
                    const std::function<void(std::size_t, const json&)>& fn);
void write_jsonl(const std::filesystem::path& file, const std::vector<json>& records);

std::string sha256_hex(std::string_view data);
std::string file_sha256(const std::filesystem::path& file);

}  // namespace gnnrag
