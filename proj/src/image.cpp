#include "kpt/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "kpt/errors.hpp"

namespace kpt {

Image::Image(std::size_t height, std::size_t width, float fill)
    : height_(height), width_(width), pixels_(height * width, fill) {}

float Image::sample(Vec2 p, float outside) const {
  const double fx = p.x - 0.5, fy = p.y - 0.5;
  if (fx < -0.5 || fy < -0.5 || fx > static_cast<double>(width_) - 0.5 || fy > static_cast<double>(height_) - 0.5) {
    return outside;
  }
  // Clamp to the lattice of pixel centers; the half-pixel rim replicates the edge.
  const double cx = std::clamp(fx, 0.0, static_cast<double>(width_ - 1));
  const double cy = std::clamp(fy, 0.0, static_cast<double>(height_ - 1));
  const auto x0 = static_cast<std::size_t>(std::floor(cx));
  const auto y0 = static_cast<std::size_t>(std::floor(cy));
  const std::size_t x1 = std::min(x0 + 1, width_ - 1), y1 = std::min(y0 + 1, height_ - 1);
  const double u = cx - static_cast<double>(x0), v = cy - static_cast<double>(y0);
  const double top = (1 - u) * at(y0, x0) + u * at(y0, x1);
  const double bottom = (1 - u) * at(y1, x0) + u * at(y1, x1);
  return static_cast<float>((1 - v) * top + v * bottom);
}

Image Image::crop(std::size_t row, std::size_t col, std::size_t h, std::size_t w) const {
  if (row + h > height_ || col + w > width_) throw InputError("crop window exceeds the image");
  Image out(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) out.at(r, c) = at(row + r, col + c);
  return out;
}

void RgbImage::set(std::size_t row, std::size_t col, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (row >= height || col >= width) return;
  auto* px = rgb.data() + (row * width + col) * 3;
  px[0] = r;
  px[1] = g;
  px[2] = b;
}

namespace {

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                    [](char a, char b) { return std::tolower(static_cast<unsigned char>(a)) == b; });
}

// Skips whitespace and '#' comments between netpbm header fields.
std::size_t read_pnm_int(std::istream& in) {
  int c = in.peek();
  while (c != EOF) {
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      break;
    }
    c = in.peek();
  }
  std::size_t v = 0;
  if (!(in >> v)) throw IoError("malformed PNM header");
  return v;
}

Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5" && magic != "P6") throw IoError("'" + path + "' is not a binary PGM/PPM (P5/P6)");
  const std::size_t channels = magic == "P6" ? 3 : 1;
  const std::size_t w = read_pnm_int(in), h = read_pnm_int(in), maxval = read_pnm_int(in);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw IoError("'" + path + "' has an invalid PNM header");
  in.get();  // single whitespace before the raster
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raster(w * h * channels * bytes_per);
  in.read(reinterpret_cast<char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!in) throw IoError("'" + path + "' raster is truncated");
  Image img(h, w);
  for (std::size_t i = 0; i < w * h; ++i) {
    double acc = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t at = (i * channels + c) * bytes_per;
      const unsigned v = bytes_per == 2 ? (raster[at] << 8) | raster[at + 1] : raster[at];
      acc += static_cast<double>(v) / static_cast<double>(maxval);
    }
    img.pixels()[i] = static_cast<float>(acc / static_cast<double>(channels));
  }
  return img;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

Image read_png(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open '" + path + "'");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("'" + path + "' is not a readable PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);
  const std::size_t w = png_get_image_width(png, info), h = png_get_image_height(png, info);
  const std::size_t channels = png_get_channels(png, info);
  std::vector<png_byte> raster(h * png_get_rowbytes(png, info));
  std::vector<png_bytep> rows(h);
  for (std::size_t r = 0; r < h; ++r) rows[r] = raster.data() + r * png_get_rowbytes(png, info);
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  Image img(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0;
      for (std::size_t k = 0; k < channels; ++k) acc += rows[r][c * channels + k] / 255.0;
      img.at(r, c) = static_cast<float>(acc / static_cast<double>(channels));
    }
  return img;
}

}  // namespace

Image read_image(const std::string& path) { return has_suffix(path, ".png") ? read_png(path) : read_pnm(path); }

void write_ppm(const std::string& path, const Image& img) {
  RgbImage rgb(img.height(), img.width());
  for (std::size_t i = 0; i < img.pixels().size(); ++i) {
    const auto b = to_byte(img.pixels()[i]);
    rgb.rgb[3 * i] = rgb.rgb[3 * i + 1] = rgb.rgb[3 * i + 2] = b;
  }
  write_ppm(path, rgb);
}

void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

void write_png(const std::string& path, const RgbImage& img) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open '" + path + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < img.height; ++r) {
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + r * img.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_rgb(const std::string& path, const RgbImage& img) {
  if (has_suffix(path, ".png")) {
    write_png(path, img);
  } else {
    write_ppm(path, img);
  }
}

std::vector<Vec2> read_keypoints(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open keypoints '" + path + "'");
  std::vector<Vec2> kps;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    Vec2 p;
    if (!(ls >> p.x >> p.y)) throw InputError(path + ":" + std::to_string(lineno) + ": expected \"x y\"");
    kps.push_back(p);
  }
  return kps;
}

void write_keypoints(const std::string& path, const std::vector<Vec2>& kps) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.precision(9);
  for (const auto& p : kps) out << p.x << ' ' << p.y << '\n';
}

}  // namespace kpt
