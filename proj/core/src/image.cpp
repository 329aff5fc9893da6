#include "davr/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace davr {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("image I/O error for '" + path.string() + "': " + what);
}

ImageU8 read_png_file(const std::filesystem::path& path, FILE* f) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(path, "corrupt PNG");
  }
  png_init_io(png, f);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  ImageU8 img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.resize(static_cast<size_t>(w) * h * 3);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = img.pixels.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

struct JpegErrorMgr {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorMgr*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

ImageU8 read_jpeg_file(const std::filesystem::path& path, FILE* f) {
  jpeg_decompress_struct cinfo;
  JpegErrorMgr jerr;
  cinfo.err = jpeg_std_error(&jerr.pub);
  jerr.pub.error_exit = jpeg_error_exit;
  if (setjmp(jerr.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(path, "corrupt JPEG");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);

  ImageU8 img;
  img.width = static_cast<int>(cinfo.output_width);
  img.height = static_cast<int>(cinfo.output_height);
  img.pixels.resize(static_cast<size_t>(img.width) * img.height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.pixels.data() + static_cast<size_t>(cinfo.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

}  // namespace

double ImageU8::mean_brightness() const {
  if (pixels.empty()) return 0.0;
  double s = 0.0;
  for (uint8_t v : pixels) s += v;
  return s / (255.0 * static_cast<double>(pixels.size()));
}

bool is_supported_image(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

ImageU8 read_image(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) fail(path, "cannot open for reading");
  unsigned char magic[2] = {0, 0};
  if (std::fread(magic, 1, 2, f.get()) != 2) fail(path, "file too short");
  std::rewind(f.get());
  if (magic[0] == 0x89 && magic[1] == 'P') return read_png_file(path, f.get());
  if (magic[0] == 0xFF && magic[1] == 0xD8) return read_jpeg_file(path, f.get());
  fail(path, "unsupported image format (expect PNG or JPEG)");
}

void write_png(const std::filesystem::path& path, const ImageU8& img) {
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) fail(path, "cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(path, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(path, "png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(path, "PNG write failed");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // fixed settings keep output bytes reproducible
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() +
                                             static_cast<size_t>(y) * img.width * 3));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageU8 resize_bilinear(const ImageU8& img, int out_w, int out_h) {
  if (img.width == out_w && img.height == out_h) return img;
  ImageU8 out;
  out.width = out_w;
  out.height = out_h;
  out.pixels.resize(static_cast<size_t>(out_w) * out_h * 3);
  double sx = static_cast<double>(img.width) / out_w;
  double sy = static_cast<double>(img.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y1 = std::min(y0 + 1, img.height - 1);
    y0 = std::clamp(y0, 0, img.height - 1);
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x1 = std::min(x0 + 1, img.width - 1);
      x0 = std::clamp(x0, 0, img.width - 1);
      for (int c = 0; c < 3; ++c) {
        double v = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
                   wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
        out.at(y, x, c) = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
    }
  }
  return out;
}

Tensor images_to_tensor(const std::vector<ImageU8>& images) {
  if (images.empty()) return Tensor();
  int64_t n = static_cast<int64_t>(images.size());
  int64_t h = images[0].height, w = images[0].width;
  Tensor t({n, 3, h, w});
  for (int64_t i = 0; i < n; ++i) {
    const ImageU8& img = images[static_cast<size_t>(i)];
    if (img.height != h || img.width != w)
      throw std::runtime_error("images_to_tensor: mixed image sizes in one batch");
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        for (int64_t c = 0; c < 3; ++c)
          t.at4(i, c, y, x) =
              img.at(static_cast<int>(y), static_cast<int>(x), static_cast<int>(c)) / 127.5 - 1.0;
  }
  return t;
}

ImageU8 tensor_to_image(const Tensor& t, int64_t n) {
  int64_t h = t.dim(2), w = t.dim(3);
  ImageU8 img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.resize(static_cast<size_t>(w) * h * 3);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        double v = (t.at4(n, c, y, x) + 1.0) * 127.5;
        img.at(static_cast<int>(y), static_cast<int>(x), static_cast<int>(c)) =
            static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      }
  return img;
}

ImageU8 quantize_image(const ImageF& img) {
  ImageU8 out;
  out.width = img.width;
  out.height = img.height;
  out.pixels.resize(static_cast<size_t>(img.width) * img.height * 3);
  for (size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = static_cast<uint8_t>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
  return out;
}

void gaussian_blur_inplace(ImageF& img, double radius) {
  if (radius <= 0.0) return;
  double sigma = radius / 2.0;
  int half = std::max(1, static_cast<int>(std::ceil(radius)));
  std::vector<double> kernel(static_cast<size_t>(2 * half + 1));
  double sum = 0.0;
  for (int i = -half; i <= half; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + half)] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;

  ImageF tmp(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -half; i <= half; ++i) {
          int xx = std::clamp(x + i, 0, img.width - 1);
          acc += kernel[static_cast<size_t>(i + half)] * img.at(y, xx, c);
        }
        tmp.at(y, x, c) = acc;
      }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -half; i <= half; ++i) {
          int yy = std::clamp(y + i, 0, img.height - 1);
          acc += kernel[static_cast<size_t>(i + half)] * tmp.at(yy, x, c);
        }
        img.at(y, x, c) = acc;
      }
}

}  // namespace davr
