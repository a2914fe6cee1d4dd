#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "partdrag/core_types.hpp"

namespace partdrag {

/// [-1, 1] float to 8-bit: round((x + 1) * 127.5), clamped.
std::uint8_t to_byte(float x);
float from_byte(std::uint8_t b);

/// PNG bytes of one RGB frame.
std::vector<std::uint8_t> encode_png(const Video& video, int frame);
/// Decodes any PNG to a one-frame RGB video in [-1, 1].
Video decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::string& path, const Video& video, int frame);
Video read_png(const std::string& path);

/// Single-channel 8-bit label image, row-major.
struct LabelImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  std::uint8_t at(int h, int w) const { return labels[static_cast<std::size_t>(h) * width + w]; }
};

void write_label_png(const std::string& path, const LabelImage& image);
LabelImage read_label_png(const std::string& path);

/// Stacks single-frame videos with identical shape.
Video stack_frames(const std::vector<Video>& frames);

/// Bilinear resampling with pixel-centre alignment, applied per frame.
Video resize_bilinear(const Video& video, Resolution target);

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
/// Throws ValidationError on characters outside the standard alphabet.
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes);

}  // namespace partdrag
