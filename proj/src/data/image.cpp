#include "fsra/data/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace fsra {

namespace {

using FilePtr = std::unique_ptr<std::FILE, int (*)(std::FILE*)>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode), &std::fclose);
  if (!f) throw std::runtime_error("cannot open '" + path.string() + "'");
  return f;
}

// libpng reports through these instead of printing to stderr.
void png_fail(png_structp png, png_const_charp) { png_longjmp(png, 1); }
void png_warn(png_structp, png_const_charp) {}

std::uint8_t to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(c * 255.0f));
}

Image read_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw std::runtime_error("libpng: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("libpng: cannot create info struct");
  }
  Image img;
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("cannot decode PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const std::size_t w = png_get_image_width(png, info);
  const std::size_t h = png_get_image_height(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  if (row_bytes != w * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unsupported PNG layout in '" + path.string() + "'");
  }
  buffer.resize(h * row_bytes);
  std::vector<png_bytep> rows(h);
  for (std::size_t y = 0; y < h; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  img = Image(w, h);
  for (std::size_t i = 0; i < buffer.size(); ++i) img.pixels[i] = buffer[i] / 255.0f;
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw std::runtime_error("libpng: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng: cannot create info struct");
  }
  std::vector<std::uint8_t> buffer(img.pixels.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = to_byte(img.pixels[i]);
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * img.width * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("cannot encode PNG '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height),
               8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("raw image: truncated header");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

Image read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  const std::size_t w = read_u32(in);
  const std::size_t h = read_u32(in);
  if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16)) {
    throw std::runtime_error("raw image '" + path.string() + "' has invalid size");
  }
  std::vector<unsigned char> bytes(w * h * 3);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()))) {
    throw std::runtime_error("raw image '" + path.string() + "' is truncated");
  }
  Image img(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0f;
  return img;
}

void write_raw(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "'");
  write_u32(out, static_cast<std::uint32_t>(img.width));
  write_u32(out, static_cast<std::uint32_t>(img.height));
  for (float v : img.pixels) out.put(static_cast<char>(to_byte(v)));
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

void check_pad(const Image& image, std::size_t width) {
  if (width >= image.width) {
    throw std::invalid_argument("pad width " + std::to_string(width) + " must be below image width " +
                                std::to_string(image.width));
  }
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".png") return read_png(path);
  if (ext == ".raw") return read_raw(path);
  throw std::runtime_error("unsupported image format '" + path.string() + "'");
}

void write_image(const std::filesystem::path& path, const Image& image) {
  if (image.pixels.size() != image.width * image.height * 3) {
    throw std::invalid_argument("write_image: pixel buffer does not match size");
  }
  const auto ext = path.extension().string();
  if (ext == ".png") return write_png(path, image);
  if (ext == ".raw") return write_raw(path, image);
  throw std::runtime_error("unsupported image format '" + path.string() + "'");
}

void write_graymap(const std::filesystem::path& path, const std::vector<double>& values,
                   std::size_t width, std::size_t height, double lo, double hi) {
  if (values.size() != width * height) throw std::invalid_argument("graymap: size mismatch");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "'");
  out << "P2\n" << width << ' ' << height << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double t = std::clamp((values[y * width + x] - lo) / span, 0.0, 1.0);
      out << std::lround(t * 255.0) << (x + 1 == width ? '\n' : ' ');
    }
  }
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Image resize_bilinear(const Image& src, std::size_t width, std::size_t height) {
  if (src.empty() || width == 0 || height == 0) throw std::invalid_argument("resize: empty image");
  if (src.width == width && src.height == height) return src;
  Image dst(width, height);
  const double sx = static_cast<double>(src.width) / static_cast<double>(width);
  const double sy = static_cast<double>(src.height) / static_cast<double>(height);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const float wy = static_cast<float>(fy - static_cast<double>(y0));
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const float wx = static_cast<float>(fx - static_cast<double>(x0));
      for (std::size_t c = 0; c < 3; ++c) {
        const float top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
        const float bot = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
        dst.at(y, x, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return dst;
}

Image black_pad(const Image& image, std::size_t width) {
  check_pad(image, width);
  Image out(image.width, image.height, 0.0f);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = width; x < image.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, x - width, c);
    }
  }
  return out;
}

Image flip_pad(const Image& image, std::size_t width) {
  auto out = black_pad(image, width);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, width - 1 - x, c);
    }
  }
  return out;
}

Tensor<float> images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: no images");
  const std::size_t w = images[0]->width, h = images[0]->height;
  std::vector<float> data;
  data.reserve(images.size() * w * h * 3);
  for (const auto* img : images) {
    if (img->width != w || img->height != h) {
      throw std::invalid_argument("images_to_tensor: image sizes differ");
    }
    for (float v : img->pixels) data.push_back(2.0f * v - 1.0f);
  }
  return Tensor<float>({images.size(), h, w, 3}, std::move(data));
}

}  // namespace fsra
