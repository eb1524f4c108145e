#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "wav2pix/tensor.hpp"

namespace wav2pix::img {

// 8-bit RGB image, row-major interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;

  bool empty() const { return width <= 0 || height <= 0; }
};

struct BBox {
  int64_t x = 0;
  int64_t y = 0;
  int64_t w = 0;
  int64_t h = 0;
};

Image read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

// {3,H,W} tensor in [-1,1]: pixel p maps to 2p/255 - 1.
Tensor<float> image_to_tensor(const Image& image);

// Inverse mapping: v -> round(255*(v+1)/2), clamped.
Image tensor_to_image(const Tensor<float>& t);

Image bilinear_resize(const Image& src, int target_w, int target_h);

// Clamps the box to the frame, crops, resizes to target x target and converts
// to a [-1,1] tensor. target must be 64 or 128.
Tensor<float> crop_and_scale_face(const Image& frame, const BBox& bbox, int target);

}  // namespace wav2pix::img
