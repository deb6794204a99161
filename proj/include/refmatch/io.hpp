#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "refmatch/geometry.hpp"

namespace refmatch {

using json = nlohmann::ordered_json;

/// Render JSON with insertion-ordered keys and every float printed with 17
/// significant digits, so serialize(parse(serialize(x))) is byte-identical.
/// indent <= 0 renders a single line.
std::string dump_json(const json& value, int indent = 2);

std::string format_double(double value);

/// Parse with failures reported as Parse errors naming the byte offset.
json parse_json(const std::string& text, const std::string& origin);
json load_json_file(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

/// ASCII portable graymap (P2), 255 gray levels.
void save_pgm(const Image& image, const std::filesystem::path& path);
Image load_pgm(const std::filesystem::path& path);

}  // namespace refmatch
