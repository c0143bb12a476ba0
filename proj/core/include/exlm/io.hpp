#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace exlm {

// Writes content to path atomically: the bytes land in a temp file in the
// same directory which is then renamed over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

std::string read_file(const std::filesystem::path& path);

// Reads a UTF-8 file as newline-delimited records. Trailing '\r' is
// stripped. Blank lines are dropped; their count is returned through
// blank_count when non-null.
std::vector<std::string> read_lines(const std::filesystem::path& path,
                                    std::size_t* blank_count = nullptr);

}  // namespace exlm
