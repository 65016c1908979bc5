#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace fewshot {

/// Writes `contents` to a sibling temp file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

/// Decimal text with 17 significant digits; reads back as the same double.
std::string format_double(double value);

}  // namespace fewshot
