#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace porenet {

/// Writes to "<path>.tmp" and renames over path, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_text_atomic(const std::filesystem::path& path, std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
std::string read_binary_file(const std::filesystem::path& path);

}  // namespace porenet
