#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace moralmatch::io {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path);

/// Writes through a temporary sibling and renames it into place.
void write_file_atomic(const fs::path& path, std::string_view content);

/// Calls `fn(line_number, line)` for every line; line numbers start at 1.
/// Throws moralmatch::Error when the file cannot be opened.
void for_each_line(const fs::path& path,
                   const std::function<void(std::size_t, std::string_view)>& fn);

/// Lines with `#` comments and surrounding whitespace removed; blank lines skipped.
std::vector<std::string> read_list_file(const fs::path& path);

std::string csv_escape(std::string_view field);
std::string csv_row(const std::vector<std::string>& fields);
std::vector<std::string> parse_csv_row(std::string_view line);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};
CsvTable read_csv(const fs::path& path);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const fs::path& path);

// text helpers shared by several modules
std::string to_lower(std::string_view s);
std::string_view trim(std::string_view s);
std::vector<std::string_view> split_whitespace(std::string_view s);

}  // namespace moralmatch::io
