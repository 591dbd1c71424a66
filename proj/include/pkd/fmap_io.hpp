#pragma once

// FMP1 feature dump format (all integers unsigned 32-bit little-endian):
//
//   "FMP1" | level_count | per level: b c h w, then b*c*h*w binary32 LE
//   values, row-major with batch outermost and width innermost.
//
// The file size must match the header exactly and every value must be finite.

#include "pkd/feature.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pkd {

// Throws FormatError with the byte offset of the first problem.
FeaturePyramid decode_fmap(const std::string& bytes);
// Throws ArgumentError when a value does not fit in binary32.
std::string encode_fmap(const FeaturePyramid& pyr);

// Throws IoError on filesystem failures, FormatError on bad content.
FeaturePyramid read_fmap(const std::filesystem::path& path);
void write_fmap(const std::filesystem::path& path, const FeaturePyramid& pyr);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary and renames over path on success.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

// Binary PGM (P5, maxval 255).
std::string encode_pgm(std::size_t width, std::size_t height, const std::vector<std::uint8_t>& pixels);

} // namespace pkd
