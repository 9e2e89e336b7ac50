#pragma once

#include <array>
#include <filesystem>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "bvr/video.hpp"

namespace bvr {

enum class PredMode { I = 0, P = 1, B = 2 };

PredMode parse_pred_mode(std::string_view text);  // throws InvalidArgument
const char* to_string(PredMode mode);

// Codec side information for one frame: one motion vector (dx, dy) in pixels
// per macroblock, stored row-major as (grid_height*grid_width) x 2.
struct SideInfo {
  int grid_height = 0;
  int grid_width = 0;
  int macroblock = kMacroblockSize;
  Matrix mv;
  PredMode mode = PredMode::I;

  static SideInfo intra(int grid_height, int grid_width, int macroblock = kMacroblockSize);
  void validate() const;
};

struct MotionVectorMap {
  Image image;  // H x W x 3 in [0, 1]
};

struct MvRenderOptions {
  double eta = 0.5;
  // Magnitude that maps to full HSV value. Infinity renders every nonzero
  // vector at full value (direction-only encoding).
  double v_max = 16.0;
};

// Fills each macroblock with the HSV color of its motion vector (hue from
// direction, value from magnitude, saturation 1) and blends it into `frame`
// as eta * mv_rgb + (1 - eta) * frame. Zero vectors render black.
MotionVectorMap render_mv_map(const SideInfo& info, const Image& frame, double eta,
                              double v_max = MvRenderOptions{}.v_max);

// One-hot (I, P, B).
std::array<double, 3> encode_pred_mode(PredMode mode);
Matrix encode_pred_mode_row(PredMode mode);  // 1 x 3

std::array<double, 3> hsv_to_rgb(double h, double s, double v);

// Sidecar format (JSON):
//   {"version": 1, "macroblock": 16, "grid": [rows, cols],
//    "frames": [{"mode": "I"}, {"mode": "P", "mv": [[dx, dy], ...]}, ...]}
// `mv` is row-major over the macroblock grid. Intra frames may omit it and
// always load as a zero field.
std::vector<SideInfo> parse_sidecar(const std::filesystem::path& path);
std::vector<SideInfo> parse_sidecar_text(std::string_view text, const std::string& origin = "<sidecar>");
std::string format_sidecar(const std::vector<SideInfo>& frames);
void write_sidecar(const std::filesystem::path& path, const std::vector<SideInfo>& frames);

}  // namespace bvr
