#include "mbtrack/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace mbtrack {

double ImageGray::sample(double x, double y) const {
  const int x0 = int(std::floor(x));
  const int y0 = int(std::floor(y));
  const double ax = x - x0;
  const double ay = y - y0;
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  const double v00 = at(x0, y0), v10 = at(x1, y0);
  const double v01 = at(x0, y1), v11 = at(x1, y1);
  return (1 - ay) * ((1 - ax) * v00 + ax * v10) + ay * ((1 - ax) * v01 + ax * v11);
}

ImageGray to_gray(const ImageRGB& rgb) {
  ImageGray out(rgb.width, rgb.height);
  const uint8_t* src = rgb.data.data();
  for (size_t i = 0, n = size_t(rgb.width) * rgb.height; i < n; ++i, src += 3) {
    const double y = 0.299 * src[0] + 0.587 * src[1] + 0.114 * src[2];
    out.data[i] = uint8_t(std::lround(std::min(255.0, y)));
  }
  return out;
}

namespace {

bool has_suffix(const std::string& s, const char* suf) {
  const size_t n = std::strlen(suf);
  return s.size() >= n && s.compare(s.size() - n, n, suf) == 0;
}

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw std::runtime_error(path + ": " + what);
}

// Reads one PNM token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) {
      tok.push_back(char(c));
      while ((c = in.peek()) != EOF && !std::isspace(c)) tok.push_back(char(in.get()));
      break;
    }
  }
  return tok;
}

struct PnmHeader {
  std::string magic;
  int width = 0, height = 0, maxval = 0;
};

PnmHeader read_pnm_header(std::istream& in, const std::string& path) {
  PnmHeader h;
  h.magic = pnm_token(in);
  h.width = std::stoi(pnm_token(in));
  h.height = std::stoi(pnm_token(in));
  h.maxval = std::stoi(pnm_token(in));
  if (h.width <= 0 || h.height <= 0) fail(path, "bad PNM dimensions");
  if (h.maxval != 255) fail(path, "only 8-bit PNM supported");
  in.get();  // single whitespace before raster
  return h;
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FILE* fp = nullptr;
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    if (fp) std::fclose(fp);
  }
};

// Decodes any PNG to 8-bit RGB.
ImageRGB load_png_rgb(const std::string& path) {
  PngReader r;
  r.fp = std::fopen(path.c_str(), "rb");
  if (!r.fp) fail(path, "cannot open");
  r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  r.info = png_create_info_struct(r.png);
  if (setjmp(png_jmpbuf(r.png))) fail(path, "PNG decode error");
  png_init_io(r.png, r.fp);
  png_read_info(r.png, r.info);

  png_set_expand(r.png);
  png_set_strip_16(r.png);
  png_set_strip_alpha(r.png);
  png_set_gray_to_rgb(r.png);
  png_read_update_info(r.png, r.info);

  const int w = int(png_get_image_width(r.png, r.info));
  const int h = int(png_get_image_height(r.png, r.info));
  ImageRGB img(w, h);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = img.at(0, y);
  png_read_image(r.png, rows.data());
  return img;
}

void save_png_rgb(const ImageRGB& img, const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) fail(path, "cannot open for write");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    fail(path, "PNG encode error");
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.at(0, y)));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace

ImageRGB load_rgb(const std::string& path) {
  if (has_suffix(path, ".png")) return load_png_rgb(path);
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  const PnmHeader h = read_pnm_header(in, path);
  ImageRGB img(h.width, h.height);
  if (h.magic == "P6") {
    in.read(reinterpret_cast<char*>(img.data.data()), std::streamsize(img.data.size()));
  } else if (h.magic == "P5") {
    std::vector<uint8_t> gray(size_t(h.width) * h.height);
    in.read(reinterpret_cast<char*>(gray.data()), std::streamsize(gray.size()));
    for (size_t i = 0; i < gray.size(); ++i) {
      img.data[3 * i] = img.data[3 * i + 1] = img.data[3 * i + 2] = gray[i];
    }
  } else {
    fail(path, "unsupported PNM magic " + h.magic);
  }
  if (!in) fail(path, "truncated raster");
  return img;
}

ImageGray load_gray(const std::string& path) {
  if (has_suffix(path, ".pgm")) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open");
    const PnmHeader h = read_pnm_header(in, path);
    if (h.magic != "P5") fail(path, "expected P5 magic");
    ImageGray img(h.width, h.height);
    in.read(reinterpret_cast<char*>(img.data.data()), std::streamsize(img.data.size()));
    if (!in) fail(path, "truncated raster");
    return img;
  }
  return to_gray(load_rgb(path));
}

void save_gray(const ImageGray& img, const std::string& path) {
  if (has_suffix(path, ".png")) {
    ImageRGB rgb(img.width, img.height);
    for (size_t i = 0, n = img.data.size(); i < n; ++i) {
      rgb.data[3 * i] = rgb.data[3 * i + 1] = rgb.data[3 * i + 2] = img.data[i];
    }
    save_png_rgb(rgb, path);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for write");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), std::streamsize(img.data.size()));
}

void save_rgb(const ImageRGB& img, const std::string& path) {
  if (has_suffix(path, ".png")) {
    save_png_rgb(img, path);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(path, "cannot open for write");
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()), std::streamsize(img.data.size()));
}

}  // namespace mbtrack
