#include "bvr/video.hpp"

#include <cmath>
#include <sstream>

#include "bvr/error.hpp"

namespace bvr {

void VideoSequence::validate(int macroblock) const {
  if (frames.empty()) throw InvalidArgument("video has no frames");
  if (!(fps > 0.0)) throw InvalidArgument("video fps must be positive");
  const int h = frames.front().height;
  const int w = frames.front().width;
  if (h <= 0 || w <= 0) throw ShapeError("video frames have empty extent");
  if (macroblock > 0 && (h % macroblock != 0 || w % macroblock != 0)) {
    std::ostringstream os;
    os << "frame " << w << "x" << h << " is not divisible by macroblock size " << macroblock;
    throw ShapeError(os.str());
  }
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Image& f = frames[i];
    if (f.height != h || f.width != w || f.channels() != 3 || f.pixels() != static_cast<Eigen::Index>(h) * w) {
      throw ShapeError("frame " + std::to_string(i) + " does not match the sequence shape");
    }
    if (!f.data.allFinite() || f.data.minCoeff() < 0.0 || f.data.maxCoeff() > 1.0) {
      throw InvalidArgument("frame " + std::to_string(i) + " has values outside [0, 1]");
    }
  }
}

void MaskSequence::validate() const {
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const Image& m = masks[i];
    if (m.channels() != 1) throw ShapeError("mask " + std::to_string(i) + " must have one channel");
    if (!m.data.allFinite()) throw InvalidArgument("mask " + std::to_string(i) + " is not finite");
    if (binary) {
      for (Eigen::Index k = 0; k < m.data.size(); ++k) {
        const double v = m.data.data()[k];
        if (v != 0.0 && v != 1.0) throw InvalidArgument("binary mask " + std::to_string(i) + " has non {0,1} values");
      }
    } else if (m.data.size() > 0 && (m.data.minCoeff() < 0.0 || m.data.maxCoeff() > 1.0)) {
      throw InvalidArgument("mask " + std::to_string(i) + " has values outside [0, 1]");
    }
  }
}

void require_paired(const VideoSequence& video, const MaskSequence& masks) {
  if (video.length() != masks.length()) throw ShapeError("mask count does not match frame count");
  for (int i = 0; i < video.length(); ++i) {
    if (video.frames[i].height != masks.masks[i].height || video.frames[i].width != masks.masks[i].width) {
      throw ShapeError("mask " + std::to_string(i) + " extent differs from its frame");
    }
  }
}

Image quantize8(const Image& image) {
  Image out = image;
  out.data = image.data.unaryExpr([](double v) {
    const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return std::round(c * 255.0) / 255.0;
  });
  return out;
}

}  // namespace bvr
