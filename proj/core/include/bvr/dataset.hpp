#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bvr/corruption.hpp"
#include "bvr/rng.hpp"
#include "bvr/sideinfo.hpp"
#include "bvr/video.hpp"

namespace bvr {

// One stored video: the corrupted decode, its clean source, ground-truth
// corruption masks and the codec side information for every frame.
struct VideoRecord {
  std::string id;
  VideoSequence corrupted;
  VideoSequence clean;
  MaskSequence gt;
  std::vector<SideInfo> sideinfo;

  void validate() const;
};

struct SynthesisConfig {
  std::uint64_t seed = 0;
  int clips = 8;
  int frames = 8;
  int height = 64;
  int width = 64;
  double fps = 25.0;
  CorruptionSpec corruption;  // its seed is derived per clip from `seed`
};

// Directory layout:
//   <root>/dataset.json                    manifest (version, clip ids, extent)
//   <root>/clips/<id>/frames/%05d.ppm      corrupted frames
//   <root>/clips/<id>/clean/%05d.ppm       clean frames (supervision)
//   <root>/clips/<id>/gt_masks/%05d.pgm    ground-truth masks {0, 255}
//   <root>/clips/<id>/sideinfo.json        codec sidecar
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<VideoRecord> records);

  static Dataset synthesize(const SynthesisConfig& config);
  static Dataset load(const std::filesystem::path& root);
  void save(const std::filesystem::path& root) const;

  int size() const { return static_cast<int>(records_.size()); }
  const VideoRecord& record(int index) const;
  const std::vector<VideoRecord>& records() const { return records_; }

 private:
  std::vector<VideoRecord> records_;
};

// Clean synthetic footage: a scrolling textured background with one moving
// textured object. `motion` receives the per-macroblock displacement
// (dx, dy) of every frame relative to the previous one.
VideoSequence synthesize_clean_video(Rng& rng, int frames, int height, int width, double fps,
                                     std::vector<SideInfo>* motion);

// A training/evaluation sample: N_l consecutive local frames plus N_nl
// non-local references drawn without replacement from the remaining frames.
struct ClipSample {
  std::string clip_id;
  std::vector<int> local_indices;
  std::vector<int> nonlocal_indices;  // ascending
  VideoSequence local_frames;
  VideoSequence nonlocal_frames;
  MaskSequence gt_masks;  // local frames
  std::vector<SideInfo> sideinfo;  // local frames
  VideoSequence clean_frames;      // local frames
  MaskSequence nonlocal_gt_masks;
  std::vector<SideInfo> nonlocal_sideinfo;

  int n_local() const { return local_frames.length(); }
  int n_nonlocal() const { return nonlocal_frames.length(); }
  void validate() const;
};

ClipSample sample_clip(const Dataset& dataset, int index, int n_local, int n_nonlocal, std::uint64_t seed);

}  // namespace bvr
