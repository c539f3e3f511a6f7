#include "shadowsteer/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "shadowsteer/errors.hpp"

namespace shadowsteer::io {
namespace {

struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> samples;  // row-major, interleaved
};

void on_png_error(png_structp png, png_const_charp message) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = message;
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

std::vector<std::uint8_t> encode(const RawImage& raw) {
  std::string error;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &error, on_png_error, on_png_warning);
  if (!png) throw IoError("png: cannot allocate writer");
  png_infop info = png_create_info_struct(png);
  std::vector<std::uint8_t> out;

  const int bytes_per_sample = raw.bit_depth == 16 ? 2 : 1;
  const std::size_t row_bytes = static_cast<std::size_t>(raw.width) * raw.channels * bytes_per_sample;
  std::vector<std::uint8_t> rows(row_bytes * raw.height);
  for (std::size_t i = 0; i < raw.samples.size(); ++i) {
    if (bytes_per_sample == 2) {
      rows[2 * i] = static_cast<std::uint8_t>(raw.samples[i] >> 8);  // PNG is big-endian
      rows[2 * i + 1] = static_cast<std::uint8_t>(raw.samples[i] & 0xff);
    } else {
      rows[i] = static_cast<std::uint8_t>(raw.samples[i]);
    }
  }
  std::vector<png_bytep> row_ptrs(raw.height);
  for (int r = 0; r < raw.height; ++r) row_ptrs[r] = rows.data() + r * row_bytes;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png encode failed: " + error);
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t length) {
        auto* sink = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(p));
        sink->insert(sink->end(), data, data + length);
      },
      nullptr);
  const int color = raw.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, raw.width, raw.height, raw.bit_depth, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

RawImage decode(const std::vector<std::uint8_t>& bytes, bool to_gray) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw IoError("not a PNG stream");
  std::string error;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &error, on_png_error, on_png_warning);
  if (!png) throw IoError("png: cannot allocate reader");
  png_infop info = png_create_info_struct(png);

  struct Source {
    const std::vector<std::uint8_t>* bytes;
    std::size_t offset;
  } source{&bytes, 0};

  RawImage raw;
  std::vector<std::uint8_t> rows;
  std::vector<png_bytep> row_ptrs;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png decode failed: " + error);
  }
  png_set_read_fn(png, &source, [](png_structp p, png_bytep data, png_size_t length) {
    auto* src = static_cast<Source*>(png_get_io_ptr(p));
    if (src->offset + length > src->bytes->size()) png_error(p, "truncated PNG stream");
    std::memcpy(data, src->bytes->data() + src->offset, length);
    src->offset += length;
  });
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  const bool is_gray = color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA;
  if (to_gray && !is_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (!to_gray && is_gray) png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.channels = png_get_channels(png, info);
  raw.bit_depth = png_get_bit_depth(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  rows.resize(row_bytes * raw.height);
  row_ptrs.resize(raw.height);
  for (int r = 0; r < raw.height; ++r) row_ptrs[r] = rows.data() + r * row_bytes;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t count = static_cast<std::size_t>(raw.width) * raw.height * raw.channels;
  raw.samples.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    raw.samples[i] = raw.bit_depth == 16
                         ? static_cast<std::uint16_t>((rows[2 * i] << 8) | rows[2 * i + 1])
                         : rows[i];
  }
  return raw;
}

std::uint16_t quantize(float v, float scale) {
  const float clamped = std::clamp(std::isfinite(v) ? v : 0.0f, 0.0f, 1.0f);
  return static_cast<std::uint16_t>(std::lround(clamped * scale));
}

}  // namespace

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  return {bytes.begin(), bytes.end()};
}

void write_scalar_png(const std::filesystem::path& path, const Grid& grid) {
  RawImage raw{grid.width(), grid.height(), 1, 16, {}};
  raw.samples.reserve(grid.size());
  for (float v : grid.values()) raw.samples.push_back(quantize(v, 65535.0f));
  write_file(path, encode(raw));
}

Grid read_scalar_png(const std::filesystem::path& path) {
  RawImage raw = decode(read_file(path), true);
  const float scale = raw.bit_depth == 16 ? 65535.0f : 255.0f;
  std::vector<float> values(raw.samples.size());
  std::transform(raw.samples.begin(), raw.samples.end(), values.begin(),
                 [scale](std::uint16_t s) { return static_cast<float>(s) / scale; });
  return Grid(raw.height, raw.width, std::move(values));
}

std::vector<std::uint8_t> encode_mask_png(const BinaryMask& mask) {
  RawImage raw{mask.width(), mask.height(), 1, 8, {}};
  raw.samples.reserve(mask.size());
  for (float v : mask.values()) raw.samples.push_back(v >= 0.5f ? 255 : 0);
  return encode(raw);
}

BinaryMask decode_mask_png(const std::vector<std::uint8_t>& bytes) {
  RawImage raw = decode(bytes, true);
  const int threshold = raw.bit_depth == 16 ? 128 * 257 : 128;
  std::vector<float> values(raw.samples.size());
  std::transform(raw.samples.begin(), raw.samples.end(), values.begin(),
                 [threshold](std::uint16_t s) { return s >= threshold ? 1.0f : 0.0f; });
  return BinaryMask(Grid(raw.height, raw.width, std::move(values)));
}

void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
  write_file(path, encode_mask_png(mask));
}

BinaryMask read_mask_png(const std::filesystem::path& path) { return decode_mask_png(read_file(path)); }

std::vector<std::uint8_t> encode_rgb_png(const RgbImage& image) {
  RawImage raw{image.width(), image.height(), 3, 8, {}};
  raw.samples.reserve(image.values().size());
  for (float v : image.values()) raw.samples.push_back(quantize(v, 255.0f));
  return encode(raw);
}

void write_rgb_png(const std::filesystem::path& path, const RgbImage& image) {
  write_file(path, encode_rgb_png(image));
}

RgbImage read_rgb_png(const std::filesystem::path& path) {
  RawImage raw = decode(read_file(path), false);
  const float scale = raw.bit_depth == 16 ? 65535.0f : 255.0f;
  std::vector<float> values(raw.samples.size());
  std::transform(raw.samples.begin(), raw.samples.end(), values.begin(),
                 [scale](std::uint16_t s) { return static_cast<float>(s) / scale; });
  return RgbImage(raw.height, raw.width, std::move(values));
}

namespace {
constexpr std::string_view kAlphabet =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    std::uint32_t chunk = static_cast<std::uint32_t>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) chunk |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
    if (i + 2 < bytes.size()) chunk |= bytes[i + 2];
    out.push_back(kAlphabet[(chunk >> 18) & 63]);
    out.push_back(kAlphabet[(chunk >> 12) & 63]);
    out.push_back(i + 1 < bytes.size() ? kAlphabet[(chunk >> 6) & 63] : '=');
    out.push_back(i + 2 < bytes.size() ? kAlphabet[chunk & 63] : '=');
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  // Accept data URLs ("data:image/png;base64,...").
  if (auto comma = text.find(','); text.starts_with("data:") && comma != std::string_view::npos) {
    text.remove_prefix(comma + 1);
  }
  std::array<int, 256> lookup{};
  lookup.fill(-1);
  for (std::size_t i = 0; i < kAlphabet.size(); ++i) lookup[static_cast<unsigned char>(kAlphabet[i])] = static_cast<int>(i);

  std::vector<std::uint8_t> out;
  std::uint32_t buffer = 0;
  int bits = 0;
  for (char ch : text) {
    if (ch == '=' ) break;
    if (ch == '\n' || ch == '\r' || ch == ' ') continue;
    const int value = lookup[static_cast<unsigned char>(ch)];
    if (value < 0) throw InputError("invalid base64 character");
    buffer = (buffer << 6) | static_cast<std::uint32_t>(value);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((buffer >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace shadowsteer::io
