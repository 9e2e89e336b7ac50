#include "bvr/corruption.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "bvr/error.hpp"
#include "bvr/rng.hpp"
#include "bvr/sideinfo.hpp"

namespace bvr {

CorruptionKind parse_corruption_kind(std::string_view name) {
  if (name == "color_stripe") return CorruptionKind::ColorStripe;
  if (name == "block_shift") return CorruptionKind::BlockShift;
  if (name == "freeze_propagate") return CorruptionKind::FreezePropagate;
  if (name == "texture_noise") return CorruptionKind::TextureNoise;
  throw InvalidArgument("unknown corruption kind '" + std::string(name) + "'");
}

const char* to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::ColorStripe: return "color_stripe";
    case CorruptionKind::BlockShift: return "block_shift";
    case CorruptionKind::FreezePropagate: return "freeze_propagate";
    case CorruptionKind::TextureNoise: return "texture_noise";
  }
  return "?";
}

void CorruptionSpec::validate() const {
  if (kinds.empty()) throw InvalidArgument("corruption spec needs at least one kind");
  if (!(area_fraction > 0.0 && area_fraction < 1.0)) throw InvalidArgument("area_fraction must lie in (0, 1)");
  if (!(residual_retention >= 0.0 && residual_retention <= 1.0)) {
    throw InvalidArgument("residual_retention must lie in [0, 1]");
  }
  if (macroblock <= 0) throw InvalidArgument("macroblock size must be positive");
}

namespace {

constexpr int kStripeBand = 2;  // pixel rows per color band

struct Shape {
  CorruptionKind kind;
  std::uint64_t stripe_seed = 0;
  int shift_x = 0;
  int shift_y = 0;
  std::array<int, 3> channel_order{0, 1, 2};
  double gain = 1.0;
};

struct BlockRect {
  int y0, x0, h, w;
};

std::array<double, 3> stripe_color(std::uint64_t seed, int band) {
  Rng r(splitmix64(seed ^ (static_cast<std::uint64_t>(band) * 0x9e3779b97f4a7c15ULL)));
  return hsv_to_rgb(r.uniform(), 1.0, r.uniform(0.6, 1.0));
}

Shape make_shape(CorruptionKind kind, int macroblock, Rng& rng) {
  Shape s{kind};
  switch (kind) {
    case CorruptionKind::ColorStripe:
      s.stripe_seed = rng.next_u64();
      break;
    case CorruptionKind::BlockShift: {
      do {
        s.shift_x = static_cast<int>(rng.below(2 * macroblock + 1)) - macroblock;
        s.shift_y = static_cast<int>(rng.below(2 * macroblock + 1)) - macroblock;
      } while (s.shift_x == 0 && s.shift_y == 0);
      static constexpr std::array<std::array<int, 3>, 5> kPerms{
          {{0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
      s.channel_order = kPerms[rng.below(kPerms.size())];
      s.gain = rng.uniform(0.7, 1.3);
      break;
    }
    case CorruptionKind::FreezePropagate:
    case CorruptionKind::TextureNoise:
      break;
  }
  return s;
}

BlockRect make_rect(int gh, int gw, bool stripes, Rng& rng) {
  if (stripes && rng.uniform() < 0.3) {
    const int row = static_cast<int>(rng.below(gh));
    const int x0 = static_cast<int>(rng.below(gw));
    const int len = 1 + static_cast<int>(rng.below(gw - x0));
    return {row, x0, 1, len};
  }
  const int h = 1 + static_cast<int>(rng.below(std::max(1, gh / 2)));
  const int w = 1 + static_cast<int>(rng.below(std::max(1, gw / 2)));
  const int y0 = static_cast<int>(rng.below(gh - h + 1));
  const int x0 = static_cast<int>(rng.below(gw - w + 1));
  return {y0, x0, h, w};
}

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

}  // namespace

CorruptionResult simulate_corruption(const VideoSequence& clean, const CorruptionSpec& spec) {
  spec.validate();
  clean.validate(spec.macroblock);

  const int mb = spec.macroblock;
  const int height = clean.height();
  const int width = clean.width();
  const int gh = height / mb;
  const int gw = width / mb;
  const int blocks = gh * gw;
  if (blocks < 2) throw ShapeError("frame must span at least two macroblocks");
  const int target = std::clamp(static_cast<int>(std::lround(spec.area_fraction * blocks)), 1, blocks - 1);
  const double keep = spec.residual_retention;

  Rng rng = Rng::stream(spec.seed, "corruption");
  CorruptionResult result;
  result.corrupted.fps = clean.fps;
  result.gt.binary = true;

  for (int t = 0; t < clean.length(); ++t) {
    const Image& src = clean.frames[t];
    std::vector<int> owner(blocks, -1);
    std::vector<Shape> shapes;
    int count = 0;
    for (int attempt = 0; count < target && attempt < 1000; ++attempt) {
      const BlockRect r = make_rect(gh, gw, spec.horizontal_stripes, rng);
      const CorruptionKind kind = spec.kinds[rng.below(spec.kinds.size())];
      shapes.push_back(make_shape(kind, mb, rng));
      for (int y = r.y0; y < r.y0 + r.h && count < target; ++y) {
        for (int x = r.x0; x < r.x0 + r.w && count < target; ++x) {
          int& o = owner[y * gw + x];
          if (o < 0) {
            o = static_cast<int>(shapes.size()) - 1;
            ++count;
          }
        }
      }
    }
    for (int b = 0; b < blocks && count < target; ++b) {
      if (owner[b] < 0) {
        if (shapes.empty()) shapes.push_back(make_shape(spec.kinds.front(), mb, rng));
        owner[b] = 0;
        ++count;
      }
    }

    Image out = src;
    Image mask(height, width, 1);
    const Image* previous = t > 0 ? &result.corrupted.frames[t - 1] : nullptr;
    std::vector<bool> flags(blocks, false);
    for (int b = 0; b < blocks; ++b) {
      if (owner[b] < 0) continue;
      flags[b] = true;
      const Shape& s = shapes[owner[b]];
      const int by = (b / gw) * mb;
      const int bx = (b % gw) * mb;
      for (int y = by; y < by + mb; ++y) {
        std::array<double, 3> band{};
        if (s.kind == CorruptionKind::ColorStripe) band = stripe_color(s.stripe_seed, y / kStripeBand);
        for (int x = bx; x < bx + mb; ++x) {
          mask.at(y, x, 0) = 1.0;
          for (int c = 0; c < 3; ++c) {
            double artifact = 0.5;
            switch (s.kind) {
              case CorruptionKind::TextureNoise:
                artifact = rng.uniform();
                break;
              case CorruptionKind::ColorStripe:
                artifact = band[c];
                break;
              case CorruptionKind::BlockShift: {
                const int sy = ((y + s.shift_y) % height + height) % height;
                const int sx = ((x + s.shift_x) % width + width) % width;
                artifact = clamp01(s.gain * src.at(sy, sx, s.channel_order[c]));
                break;
              }
              case CorruptionKind::FreezePropagate:
                artifact = previous ? previous->at(y, x, c) : 0.5;
                break;
            }
            out.at(y, x, c) = clamp01(keep * src.at(y, x, c) + (1.0 - keep) * artifact);
          }
        }
      }
    }
    result.corrupted.frames.push_back(std::move(out));
    result.gt.masks.push_back(std::move(mask));
    result.corrupted_blocks.push_back(std::move(flags));
  }
  return result;
}

}  // namespace bvr
