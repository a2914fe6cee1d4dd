#include "partdrag/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <boost/beast/core/detail/base64.hpp>
#include <png.h>

namespace partdrag {

namespace b64 = boost::beast::detail::base64;

std::uint8_t to_byte(float x) {
  const float v = std::round((x + 1.0f) * 127.5f);
  return static_cast<std::uint8_t>(std::clamp(v, 0.0f, 255.0f));
}

float from_byte(std::uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }

namespace {

std::vector<std::uint8_t> encode_raw(const std::uint8_t* pixels, int height, int width, png_uint_32 format) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> decode_raw(const std::vector<std::uint8_t>& bytes, png_uint_32 format, int& height,
                                     int& width) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ValidationError(std::string("not a readable png: ") + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ValidationError(std::string("png decode failed: ") + image.message);
  }
  height = static_cast<int>(image.height);
  width = static_cast<int>(image.width);
  return pixels;
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Video& video, int frame) {
  if (frame < 0 || frame >= video.frames) throw ValidationError("frame index out of range");
  if (video.channels != 3) throw ValidationError("png export expects RGB frames");
  const auto src = video.frame(frame);
  std::vector<std::uint8_t> pixels(src.size());
  std::transform(src.begin(), src.end(), pixels.begin(), to_byte);
  return encode_raw(pixels.data(), video.height, video.width, PNG_FORMAT_RGB);
}

Video decode_png(const std::vector<std::uint8_t>& bytes) {
  int h = 0, w = 0;
  const auto pixels = decode_raw(bytes, PNG_FORMAT_RGB, h, w);
  Video v(1, h, w, 3);
  std::transform(pixels.begin(), pixels.end(), v.values.begin(), from_byte);
  return v;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path);
}

void write_png(const std::string& path, const Video& video, int frame) {
  write_file_bytes(path, encode_png(video, frame));
}

Video read_png(const std::string& path) { return decode_png(read_file_bytes(path)); }

void write_label_png(const std::string& path, const LabelImage& image) {
  if (image.labels.size() != static_cast<std::size_t>(image.height) * image.width) {
    throw ValidationError("label image size mismatch");
  }
  write_file_bytes(path, encode_raw(image.labels.data(), image.height, image.width, PNG_FORMAT_GRAY));
}

LabelImage read_label_png(const std::string& path) {
  LabelImage img;
  img.labels = decode_raw(read_file_bytes(path), PNG_FORMAT_GRAY, img.height, img.width);
  return img;
}

Video stack_frames(const std::vector<Video>& frames) {
  if (frames.empty()) throw ValidationError("no frames to stack");
  const Video& first = frames.front();
  Video out(static_cast<int>(frames.size()), first.height, first.width, first.channels);
  for (std::size_t n = 0; n < frames.size(); ++n) {
    const Video& f = frames[n];
    if (f.frames != 1 || f.height != first.height || f.width != first.width || f.channels != first.channels) {
      throw ValidationError("frames differ in shape");
    }
    std::copy(f.values.begin(), f.values.end(), out.frame(static_cast<int>(n)).begin());
  }
  return out;
}

Video resize_bilinear(const Video& video, Resolution target) {
  validate_resolution(target);
  if (video.resolution() == target) return video;
  Video out(video.frames, target.height, target.width, video.channels);
  const double sh = static_cast<double>(video.height) / target.height;
  const double sw = static_cast<double>(video.width) / target.width;
  for (int h = 0; h < target.height; ++h) {
    const double y = std::clamp((h + 0.5) * sh - 0.5, 0.0, video.height - 1.0);
    const int y0 = static_cast<int>(y);
    const int y1 = std::min(y0 + 1, video.height - 1);
    const double fy = y - y0;
    for (int w = 0; w < target.width; ++w) {
      const double x = std::clamp((w + 0.5) * sw - 0.5, 0.0, video.width - 1.0);
      const int x0 = static_cast<int>(x);
      const int x1 = std::min(x0 + 1, video.width - 1);
      const double fx = x - x0;
      for (int n = 0; n < video.frames; ++n) {
        for (int c = 0; c < video.channels; ++c) {
          const double top = (1 - fx) * video.at(n, y0, x0, c) + fx * video.at(n, y0, x1, c);
          const double bot = (1 - fx) * video.at(n, y1, x0, c) + fx * video.at(n, y1, x1, c);
          out.at(n, h, w, c) = static_cast<float>((1 - fy) * top + fy * bot);
        }
      }
    }
  }
  return out;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(b64::encoded_size(bytes.size()), '\0');
  out.resize(b64::encode(out.data(), bytes.data(), bytes.size()));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  std::size_t body = text.size();
  while (body > 0 && text[body - 1] == '=') --body;
  if (text.size() % 4 != 0 || text.size() - body > 2) throw ValidationError("malformed base64 length");
  std::vector<std::uint8_t> out(b64::decoded_size(text.size()));
  const auto [written, read] = b64::decode(out.data(), text.data(), text.size());
  if (read < body) throw ValidationError("invalid base64 character");
  out.resize(written);
  return out;
}

}  // namespace partdrag
