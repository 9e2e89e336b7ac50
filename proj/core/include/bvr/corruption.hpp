#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "bvr/video.hpp"

namespace bvr {

enum class CorruptionKind { ColorStripe, BlockShift, FreezePropagate, TextureNoise };

CorruptionKind parse_corruption_kind(std::string_view name);
const char* to_string(CorruptionKind kind);

struct CorruptionSpec {
  std::uint64_t seed = 0;
  std::vector<CorruptionKind> kinds{CorruptionKind::ColorStripe, CorruptionKind::BlockShift,
                                    CorruptionKind::FreezePropagate, CorruptionKind::TextureNoise};
  double area_fraction = 0.25;      // target corrupted share of each frame, in (0, 1)
  double residual_retention = 0.3;  // clean signal kept inside corrupted blocks, in [0, 1]
  bool horizontal_stripes = true;   // allow whole-slice macroblock rows besides rectangles
  int macroblock = kMacroblockSize;

  void validate() const;
};

struct CorruptionResult {
  VideoSequence corrupted;
  MaskSequence gt;
  // Per frame, per macroblock (row-major): true when the block is corrupted.
  std::vector<std::vector<bool>> corrupted_blocks;
};

// Paints macroblock-aligned artifacts into a copy of `clean`. Pixels outside
// the returned mask are copied bit-exactly; inside it the output is
//   clamp(r * clean + (1 - r) * artifact)  with r = residual_retention.
// Each frame corrupts exactly round(area_fraction * blocks) macroblocks
// (at least one, at most all but one).
CorruptionResult simulate_corruption(const VideoSequence& clean, const CorruptionSpec& spec);

}  // namespace bvr
