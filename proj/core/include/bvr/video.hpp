#pragma once

#include <vector>

#include "bvr/autograd.hpp"

namespace bvr {

using ag::Matrix;

inline constexpr int kMacroblockSize = 16;

// Planar-free image: (height*width) x channels, row-major pixel order.
struct Image {
  int height = 0;
  int width = 0;
  Matrix data;

  Image() = default;
  Image(int h, int w, int c) : height(h), width(w), data(Matrix::Zero(static_cast<Eigen::Index>(h) * w, c)) {}
  Image(int h, int w, Matrix d) : height(h), width(w), data(std::move(d)) {}

  int channels() const { return static_cast<int>(data.cols()); }
  Eigen::Index pixels() const { return data.rows(); }
  double& at(int y, int x, int c) { return data(static_cast<Eigen::Index>(y) * width + x, c); }
  double at(int y, int x, int c) const { return data(static_cast<Eigen::Index>(y) * width + x, c); }
};

struct VideoSequence {
  std::vector<Image> frames;  // each H x W x 3, values in [0, 1]
  double fps = 25.0;

  int length() const { return static_cast<int>(frames.size()); }
  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int width() const { return frames.empty() ? 0 : frames.front().width; }

  // Throws ShapeError / InvalidArgument when the sequence is empty, ragged,
  // not RGB, non-finite, outside [0, 1], or not macroblock aligned.
  void validate(int macroblock = kMacroblockSize) const;
};

struct MaskSequence {
  std::vector<Image> masks;  // each H x W x 1
  bool binary = true;

  int length() const { return static_cast<int>(masks.size()); }
  void validate() const;
};

// Throws ShapeError unless `masks` pairs frame-by-frame with `video`.
void require_paired(const VideoSequence& video, const MaskSequence& masks);

// Round to the 8-bit grid k/255; used so on-disk fixtures are exact.
Image quantize8(const Image& image);

}  // namespace bvr
