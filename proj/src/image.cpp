#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "wav2pix/check.hpp"
#include "wav2pix/image.hpp"

namespace wav2pix::img {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr f(std::fopen(path.string().c_str(), "rb"));
  require(f != nullptr, "read_png: cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, "read_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    require(false, "read_png: libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: failed to decode " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);

  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  Image image;
  image.width = static_cast<int>(png_get_image_width(png, info));
  image.height = static_cast<int>(png_get_image_height(png, info));
  image.rgb.resize(static_cast<size_t>(image.width) * image.height * 3);
  std::vector<png_bytep> rows(static_cast<size_t>(image.height));
  for (int y = 0; y < image.height; ++y)
    rows[static_cast<size_t>(y)] = image.rgb.data() + static_cast<size_t>(y) * image.width * 3;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  require(!image.empty(), "write_png: empty image");
  require(image.rgb.size() == static_cast<size_t>(image.width) * image.height * 3,
          "write_png: pixel buffer size mismatch");
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  require(f != nullptr, "write_png: cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, "write_png: libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    require(false, "write_png: libpng info init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: failed to encode " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y)
    png_write_row(png, const_cast<png_bytep>(image.rgb.data() +
                                             static_cast<size_t>(y) * image.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor<float> image_to_tensor(const Image& image) {
  require(!image.empty(), "image_to_tensor: empty image");
  Tensor<float> t({3, image.height, image.width});
  int64_t hw = static_cast<int64_t>(image.height) * image.width;
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t c = 0; c < 3; ++c)
      t[c * hw + i] = static_cast<float>(2.0 * image.rgb[static_cast<size_t>(i * 3 + c)] / 255.0 - 1.0);
  return t;
}

Image tensor_to_image(const Tensor<float>& t) {
  require(t.ndim() == 3 && t.dim(0) == 3, "tensor_to_image: expected {3,H,W}");
  Image image;
  image.height = static_cast<int>(t.dim(1));
  image.width = static_cast<int>(t.dim(2));
  image.rgb.resize(static_cast<size_t>(image.width) * image.height * 3);
  int64_t hw = static_cast<int64_t>(image.height) * image.width;
  for (int64_t i = 0; i < hw; ++i)
    for (int64_t c = 0; c < 3; ++c) {
      double v = std::round(255.0 * (static_cast<double>(t[c * hw + i]) + 1.0) / 2.0);
      image.rgb[static_cast<size_t>(i * 3 + c)] =
          static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
    }
  return image;
}

Image bilinear_resize(const Image& src, int target_w, int target_h) {
  require(!src.empty(), "bilinear_resize: empty image");
  require(target_w > 0 && target_h > 0, "bilinear_resize: invalid target size");
  Image dst;
  dst.width = target_w;
  dst.height = target_h;
  dst.rgb.resize(static_cast<size_t>(target_w) * target_h * 3);
  double sx = static_cast<double>(src.width) / target_w;
  double sy = static_cast<double>(src.height) / target_h;
  for (int y = 0; y < target_h; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, src.height - 1);
    double wy = fy - y0;
    for (int x = 0; x < target_w; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, src.width - 1);
      double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int yy, int xx) {
          return static_cast<double>(
              src.rgb[(static_cast<size_t>(yy) * src.width + xx) * 3 + static_cast<size_t>(c)]);
        };
        double top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
        double bot = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
        double v = std::round(top * (1.0 - wy) + bot * wy);
        dst.rgb[(static_cast<size_t>(y) * target_w + x) * 3 + static_cast<size_t>(c)] =
            static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
      }
    }
  }
  return dst;
}

Tensor<float> crop_and_scale_face(const Image& frame, const BBox& bbox, int target) {
  require(!frame.empty(), "crop_and_scale_face: empty frame");
  require(target == 64 || target == 128, "crop_and_scale_face: target must be 64 or 128");
  require(bbox.w > 0 && bbox.h > 0, "crop_and_scale_face: bbox must have positive size");
  int64_t x0 = std::clamp<int64_t>(bbox.x, 0, frame.width);
  int64_t y0 = std::clamp<int64_t>(bbox.y, 0, frame.height);
  int64_t x1 = std::clamp<int64_t>(bbox.x + bbox.w, 0, frame.width);
  int64_t y1 = std::clamp<int64_t>(bbox.y + bbox.h, 0, frame.height);
  require(x1 > x0 && y1 > y0, "crop_and_scale_face: bbox lies fully outside the frame");

  Image crop;
  crop.width = static_cast<int>(x1 - x0);
  crop.height = static_cast<int>(y1 - y0);
  crop.rgb.resize(static_cast<size_t>(crop.width) * crop.height * 3);
  for (int y = 0; y < crop.height; ++y) {
    const uint8_t* src =
        frame.rgb.data() + ((y0 + y) * frame.width + x0) * 3;
    std::copy(src, src + static_cast<size_t>(crop.width) * 3,
              crop.rgb.data() + static_cast<size_t>(y) * crop.width * 3);
  }
  Image resized = (crop.width == target && crop.height == target)
                      ? std::move(crop)
                      : bilinear_resize(crop, target, target);
  return image_to_tensor(resized);
}

}  // namespace wav2pix::img
