#include "bvr/dataset.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "bvr/error.hpp"
#include "bvr/image_io.hpp"
#include "bvr/rng.hpp"
#include "json.hpp"

namespace bvr {

namespace fs = std::filesystem;
using json = nlohmann::json;

void VideoRecord::validate() const {
  corrupted.validate();
  clean.validate();
  gt.validate();
  if (clean.length() != corrupted.length() || clean.height() != corrupted.height() ||
      clean.width() != corrupted.width()) {
    throw ShapeError(id + ": clean and corrupted sequences differ in shape");
  }
  require_paired(corrupted, gt);
  if (static_cast<int>(sideinfo.size()) != corrupted.length()) {
    throw ShapeError(id + ": side info has " + std::to_string(sideinfo.size()) + " entries for " +
                     std::to_string(corrupted.length()) + " frames");
  }
  for (const auto& s : sideinfo) {
    s.validate();
    if (s.grid_height * s.macroblock != corrupted.height() || s.grid_width * s.macroblock != corrupted.width()) {
      throw ShapeError(id + ": side info grid does not cover the frames");
    }
  }
}

Dataset::Dataset(std::vector<VideoRecord> records) : records_(std::move(records)) {
  for (const auto& r : records_) r.validate();
}

const VideoRecord& Dataset::record(int index) const {
  if (index < 0 || index >= size()) throw InvalidArgument("clip index " + std::to_string(index) + " out of range");
  return records_[static_cast<std::size_t>(index)];
}

namespace {

struct Wave {
  double fx, fy, phase, amp;
};

double eval_waves(const std::vector<Wave>& waves, double x, double y) {
  double v = 0.0;
  for (const auto& w : waves) v += w.amp * std::sin(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
  return v;
}

std::vector<Wave> random_waves(Rng& rng, int count, double amp) {
  std::vector<Wave> waves;
  for (int i = 0; i < count; ++i) {
    waves.push_back({rng.uniform(-0.12, 0.12), rng.uniform(-0.12, 0.12), rng.uniform(0.0, 2.0 * std::numbers::pi),
                     amp * rng.uniform(0.5, 1.0)});
  }
  return waves;
}

int wrap(int v, int n) { return ((v % n) + n) % n; }

}  // namespace

VideoSequence synthesize_clean_video(Rng& rng, int frames, int height, int width, double fps,
                                     std::vector<SideInfo>* motion) {
  if (frames < 1 || height % kMacroblockSize != 0 || width % kMacroblockSize != 0 || height <= 0 || width <= 0) {
    throw InvalidArgument("synthetic video needs >= 1 frame and macroblock-aligned extent");
  }
  std::array<std::vector<Wave>, 3> background;
  std::array<double, 3> base{};
  for (int c = 0; c < 3; ++c) {
    background[c] = random_waves(rng, 3, 0.12);
    base[c] = rng.uniform(0.3, 0.7);
  }
  const int gvx = static_cast<int>(rng.below(5)) - 2;
  const int gvy = static_cast<int>(rng.below(5)) - 2;

  const int obj_w = 12 + static_cast<int>(rng.below(13));
  const int obj_h = 12 + static_cast<int>(rng.below(13));
  int ox = static_cast<int>(rng.below(width));
  int oy = static_cast<int>(rng.below(height));
  int ovx = 0, ovy = 0;
  while (ovx == 0 && ovy == 0) {
    ovx = static_cast<int>(rng.below(9)) - 4;
    ovy = static_cast<int>(rng.below(9)) - 4;
  }
  std::array<double, 3> obj_color{};
  for (auto& c : obj_color) c = rng.uniform(0.1, 0.9);
  const std::vector<Wave> obj_texture = random_waves(rng, 2, 0.1);

  const int gh = height / kMacroblockSize;
  const int gw = width / kMacroblockSize;

  VideoSequence video;
  video.fps = fps;
  for (int t = 0; t < frames; ++t) {
    Image f(height, width, 3);
    const int cx = ox + ovx * t;
    const int cy = oy + ovy * t;
    auto inside_object = [&](int x, int y) {
      return wrap(x - cx, width) < obj_w && wrap(y - cy, height) < obj_h;
    };
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        if (inside_object(x, y)) {
          const double lx = wrap(x - cx, width);
          const double ly = wrap(y - cy, height);
          const double tex = eval_waves(obj_texture, lx, ly);
          const bool edge = lx < 1 || ly < 1 || lx >= obj_w - 1 || ly >= obj_h - 1;
          for (int c = 0; c < 3; ++c) f.at(y, x, c) = std::clamp(obj_color[c] + tex - (edge ? 0.15 : 0.0), 0.0, 1.0);
        } else {
          const double sx = x - gvx * t;
          const double sy = y - gvy * t;
          for (int c = 0; c < 3; ++c) f.at(y, x, c) = std::clamp(base[c] + eval_waves(background[c], sx, sy), 0.0, 1.0);
        }
      }
    }
    video.frames.push_back(quantize8(f));

    if (motion) {
      SideInfo s = SideInfo::intra(gh, gw);
      if (t > 0) {
        s.mode = (t % 2 == 1) ? PredMode::P : PredMode::B;
        for (int by = 0; by < gh; ++by) {
          for (int bx = 0; bx < gw; ++bx) {
            const int px = bx * kMacroblockSize + kMacroblockSize / 2;
            const int py = by * kMacroblockSize + kMacroblockSize / 2;
            const bool obj = inside_object(px, py);
            s.mv(by * gw + bx, 0) = obj ? ovx : gvx;
            s.mv(by * gw + bx, 1) = obj ? ovy : gvy;
          }
        }
      }
      motion->push_back(std::move(s));
    }
  }
  return video;
}

Dataset Dataset::synthesize(const SynthesisConfig& config) {
  if (config.clips < 1) throw InvalidArgument("synthesis needs at least one clip");
  std::vector<VideoRecord> records;
  for (int k = 0; k < config.clips; ++k) {
    const std::uint64_t clip_seed = splitmix64(config.seed * 1000003ULL + static_cast<std::uint64_t>(k));
    Rng content = Rng::stream(clip_seed, "content");
    VideoRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "clip_%04d", k);
    rec.id = id;
    rec.clean = synthesize_clean_video(content, config.frames, config.height, config.width, config.fps, &rec.sideinfo);

    CorruptionSpec spec = config.corruption;
    spec.seed = clip_seed;
    CorruptionResult cr = simulate_corruption(rec.clean, spec);
    for (auto& f : cr.corrupted.frames) f = quantize8(f);
    rec.corrupted = std::move(cr.corrupted);
    rec.gt = std::move(cr.gt);

    // Damaged slices decode with garbage motion vectors.
    Rng garbage = Rng::stream(clip_seed, "sideinfo");
    for (int t = 0; t < config.frames; ++t) {
      SideInfo& s = rec.sideinfo[t];
      if (s.mode == PredMode::I) continue;
      const auto& flags = cr.corrupted_blocks[t];
      for (std::size_t b = 0; b < flags.size(); ++b) {
        if (!flags[b]) continue;
        s.mv(static_cast<Eigen::Index>(b), 0) = std::round(garbage.uniform(-16.0, 16.0));
        s.mv(static_cast<Eigen::Index>(b), 1) = std::round(garbage.uniform(-16.0, 16.0));
      }
    }
    records.push_back(std::move(rec));
  }
  return Dataset(std::move(records));
}

void Dataset::save(const fs::path& root) const {
  if (records_.empty()) throw InvalidArgument("refusing to save an empty dataset");
  fs::create_directories(root / "clips");
  json manifest;
  manifest["version"] = 1;
  manifest["height"] = records_.front().corrupted.height();
  manifest["width"] = records_.front().corrupted.width();
  manifest["fps"] = records_.front().corrupted.fps;
  json ids = json::array();
  for (const auto& r : records_) {
    ids.push_back(r.id);
    const fs::path dir = root / "clips" / r.id;
    save_video(dir / "frames", r.corrupted);
    save_video(dir / "clean", r.clean);
    save_masks(dir / "gt_masks", r.gt);
    write_sidecar(dir / "sideinfo.json", r.sideinfo);
  }
  manifest["clips"] = std::move(ids);
  std::ofstream out(root / "dataset.json", std::ios::binary);
  if (!out) throw IoError("cannot write dataset manifest under '" + root.string() + "'");
  out << manifest.dump(2) << "\n";
}

Dataset Dataset::load(const fs::path& root) {
  std::vector<std::string> ids;
  const fs::path manifest_path = root / "dataset.json";
  double fps = 25.0;
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path, std::ios::binary);
    json manifest;
    try {
      manifest = json::parse(in);
    } catch (const json::exception& e) {
      throw FormatError(manifest_path.string() + ": " + e.what());
    }
    if (!manifest.contains("clips") || !manifest["clips"].is_array()) {
      throw FormatError(manifest_path.string() + ": missing 'clips' array");
    }
    for (const auto& id : manifest["clips"]) ids.push_back(id.get<std::string>());
    if (manifest.contains("fps") && manifest["fps"].is_number()) fps = manifest["fps"].get<double>();
  } else {
    if (!fs::is_directory(root / "clips")) throw IoError("'" + root.string() + "' has no clips/ directory");
    for (const auto& entry : fs::directory_iterator(root / "clips")) {
      if (entry.is_directory()) ids.push_back(entry.path().filename().string());
    }
    std::sort(ids.begin(), ids.end());
  }
  std::vector<VideoRecord> records;
  for (const auto& id : ids) {
    const fs::path dir = root / "clips" / id;
    VideoRecord r;
    r.id = id;
    r.corrupted = load_video(dir / "frames");
    r.corrupted.fps = fps;
    if (fs::exists(dir / "clean")) {
      r.clean = load_video(dir / "clean");
    } else {
      r.clean = r.corrupted;
    }
    r.clean.fps = fps;
    r.gt = load_masks(dir / "gt_masks");
    r.sideinfo = parse_sidecar(dir / "sideinfo.json");
    records.push_back(std::move(r));
  }
  if (records.empty()) throw FormatError("'" + root.string() + "' contains no clips");
  return Dataset(std::move(records));
}

void ClipSample::validate() const {
  if (static_cast<int>(sideinfo.size()) != n_local() || gt_masks.length() != n_local() ||
      clean_frames.length() != n_local()) {
    throw ShapeError("clip sample: local side info / masks / targets must match the local frame count");
  }
  if (static_cast<int>(nonlocal_sideinfo.size()) != n_nonlocal() || nonlocal_gt_masks.length() != n_nonlocal()) {
    throw ShapeError("clip sample: non-local side info / masks must match the non-local frame count");
  }
}

ClipSample sample_clip(const Dataset& dataset, int index, int n_local, int n_nonlocal, std::uint64_t seed) {
  const VideoRecord& rec = dataset.record(index);
  const int length = rec.corrupted.length();
  if (n_local < 1 || n_nonlocal < 0) throw InvalidArgument("need N_l >= 1 and N_nl >= 0");
  if (length < n_local + n_nonlocal) {
    throw InvalidArgument(rec.id + ": video has " + std::to_string(length) + " frames, needs N_l + N_nl = " +
                          std::to_string(n_local + n_nonlocal));
  }
  Rng rng = Rng::stream(splitmix64(seed) ^ static_cast<std::uint64_t>(index), "sampling");
  const int start = static_cast<int>(rng.below(static_cast<std::uint64_t>(length - n_local + 1)));

  ClipSample s;
  s.clip_id = rec.id;
  std::vector<int> rest;
  for (int i = 0; i < length; ++i) {
    if (i >= start && i < start + n_local) {
      s.local_indices.push_back(i);
    } else {
      rest.push_back(i);
    }
  }
  rng.shuffle(rest);
  rest.resize(static_cast<std::size_t>(n_nonlocal));
  std::sort(rest.begin(), rest.end());
  s.nonlocal_indices = rest;

  s.local_frames.fps = s.nonlocal_frames.fps = s.clean_frames.fps = rec.corrupted.fps;
  for (int i : s.local_indices) {
    s.local_frames.frames.push_back(rec.corrupted.frames[i]);
    s.clean_frames.frames.push_back(rec.clean.frames[i]);
    s.gt_masks.masks.push_back(rec.gt.masks[i]);
    s.sideinfo.push_back(rec.sideinfo[i]);
  }
  for (int i : s.nonlocal_indices) {
    s.nonlocal_frames.frames.push_back(rec.corrupted.frames[i]);
    s.nonlocal_gt_masks.masks.push_back(rec.gt.masks[i]);
    s.nonlocal_sideinfo.push_back(rec.sideinfo[i]);
  }
  s.gt_masks.binary = rec.gt.binary;
  s.nonlocal_gt_masks.binary = rec.gt.binary;
  return s;
}

}  // namespace bvr
