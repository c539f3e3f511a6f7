#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "shadowsteer/grid.hpp"

namespace shadowsteer::io {

// Depth and shadow maps: single-channel 16-bit PNG, sample = round(v * 65535).
void write_scalar_png(const std::filesystem::path& path, const Grid& grid);
Grid read_scalar_png(const std::filesystem::path& path);

// Masks: 8-bit grayscale, stored as 0/255, read back thresholded at 128.
void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_mask_png(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_mask_png(const BinaryMask& mask);
BinaryMask decode_mask_png(const std::vector<std::uint8_t>& bytes);

// Images: 8-bit RGB.
void write_rgb_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_rgb_png(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_rgb_png(const RgbImage& image);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace shadowsteer::io
