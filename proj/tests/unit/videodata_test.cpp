#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "bvr/corruption.hpp"
#include "bvr/dataset.hpp"
#include "bvr/error.hpp"
#include "bvr/image_io.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace bvr {
namespace {

VideoSequence clean_clip(std::uint64_t seed, int frames = 4, int h = 64, int w = 64) {
  Rng rng(seed);
  return synthesize_clean_video(rng, frames, h, w, 25.0, nullptr);
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= n, mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

TEST(Corruption, UnmaskedPixelsAreCopiedExactly) {
  const VideoSequence clean = clean_clip(1);
  CorruptionSpec spec;
  spec.seed = 9;
  const CorruptionResult r = simulate_corruption(clean, spec);
  ASSERT_EQ(r.corrupted.length(), clean.length());
  for (int t = 0; t < clean.length(); ++t) {
    const Image& m = r.gt.masks[t];
    bool any_changed = false;
    for (Eigen::Index i = 0; i < m.pixels(); ++i) {
      if (m.data(i, 0) == 0.0) {
        EXPECT_TRUE(r.corrupted.frames[t].data.row(i) == clean.frames[t].data.row(i));
      } else if (r.corrupted.frames[t].data.row(i) != clean.frames[t].data.row(i)) {
        any_changed = true;
      }
    }
    EXPECT_TRUE(any_changed);
    EXPECT_GE(r.corrupted.frames[t].data.minCoeff(), 0.0);
    EXPECT_LE(r.corrupted.frames[t].data.maxCoeff(), 1.0);
  }
}

TEST(Corruption, AreaFractionWithinTenPercent) {
  const VideoSequence clean = clean_clip(2, 3, 128, 128);
  for (double fraction : {0.1, 0.25, 0.5, 0.75}) {
    CorruptionSpec spec;
    spec.area_fraction = fraction;
    spec.seed = 4;
    const CorruptionResult r = simulate_corruption(clean, spec);
    for (const Image& m : r.gt.masks) {
      const double area = m.data.mean();
      EXPECT_NEAR(area, fraction, 0.1 * fraction) << "fraction " << fraction;
    }
  }
}

TEST(Corruption, MasksAreMacroblockAligned) {
  const CorruptionResult r = simulate_corruption(clean_clip(3), CorruptionSpec{});
  for (const Image& m : r.gt.masks) {
    for (int by = 0; by < 4; ++by) {
      for (int bx = 0; bx < 4; ++bx) {
        const double v = m.at(by * 16, bx * 16, 0);
        for (int y = 0; y < 16; ++y) {
          for (int x = 0; x < 16; ++x) ASSERT_EQ(m.at(by * 16 + y, bx * 16 + x, 0), v);
        }
      }
    }
  }
}

TEST(Corruption, ZeroRetentionNoiseDecorrelates) {
  const VideoSequence clean = clean_clip(4, 4, 128, 128);
  CorruptionSpec spec;
  spec.kinds = {CorruptionKind::TextureNoise};
  spec.residual_retention = 0.0;
  spec.area_fraction = 0.3;
  const CorruptionResult r = simulate_corruption(clean, spec);
  std::vector<double> a, b;
  for (int t = 0; t < clean.length(); ++t) {
    for (Eigen::Index i = 0; i < r.gt.masks[t].pixels(); ++i) {
      if (r.gt.masks[t].data(i, 0) == 1.0) {
        for (int c = 0; c < 3; ++c) {
          a.push_back(r.corrupted.frames[t].data(i, c));
          b.push_back(clean.frames[t].data(i, c));
        }
      }
    }
  }
  EXPECT_LT(std::fabs(correlation(a, b)), 0.05);
}

TEST(Corruption, FullRetentionIsIdentity) {
  const VideoSequence clean = clean_clip(5);
  CorruptionSpec spec;
  spec.residual_retention = 1.0;
  const CorruptionResult r = simulate_corruption(clean, spec);
  for (int t = 0; t < clean.length(); ++t) {
    EXPECT_TRUE(r.corrupted.frames[t].data == clean.frames[t].data);
    EXPECT_GT(r.gt.masks[t].data.sum(), 0.0);
  }
}

TEST(Corruption, ResidualRetentionMixesLinearly) {
  const VideoSequence clean = clean_clip(6);
  CorruptionSpec spec;
  spec.kinds = {CorruptionKind::ColorStripe};
  spec.seed = 12;
  spec.residual_retention = 0.0;
  const CorruptionResult zero = simulate_corruption(clean, spec);
  spec.residual_retention = 0.4;
  const CorruptionResult mixed = simulate_corruption(clean, spec);
  for (int t = 0; t < clean.length(); ++t) {
    const Matrix expected = 0.4 * clean.frames[t].data + 0.6 * zero.corrupted.frames[t].data;
    const Image& m = mixed.gt.masks[t];
    for (Eigen::Index i = 0; i < m.pixels(); ++i) {
      if (m.data(i, 0) == 1.0) {
        for (int c = 0; c < 3; ++c) EXPECT_NEAR(mixed.corrupted.frames[t].data(i, c), expected(i, c), 1e-12);
      }
    }
  }
}

TEST(Corruption, FreezePropagateCopiesPreviousCorruptedFrame) {
  const VideoSequence clean = clean_clip(7);
  CorruptionSpec spec;
  spec.kinds = {CorruptionKind::FreezePropagate};
  spec.residual_retention = 0.0;
  const CorruptionResult r = simulate_corruption(clean, spec);
  for (int t = 1; t < clean.length(); ++t) {
    const Image& m = r.gt.masks[t];
    for (Eigen::Index i = 0; i < m.pixels(); ++i) {
      if (m.data(i, 0) == 1.0) EXPECT_TRUE(r.corrupted.frames[t].data.row(i) == r.corrupted.frames[t - 1].data.row(i));
    }
  }
}

TEST(Corruption, DeterministicForFixedSeed) {
  const VideoSequence clean = clean_clip(8);
  CorruptionSpec spec;
  spec.seed = 77;
  const CorruptionResult a = simulate_corruption(clean, spec);
  const CorruptionResult b = simulate_corruption(clean, spec);
  for (int t = 0; t < clean.length(); ++t) {
    EXPECT_TRUE(a.corrupted.frames[t].data == b.corrupted.frames[t].data);
    EXPECT_TRUE(a.gt.masks[t].data == b.gt.masks[t].data);
  }
  spec.seed = 78;
  const CorruptionResult c = simulate_corruption(clean, spec);
  EXPECT_FALSE(a.gt.masks[0].data == c.gt.masks[0].data && a.corrupted.frames[0].data == c.corrupted.frames[0].data);
}

TEST(Corruption, RejectsInvalidSpecAndExtent) {
  const VideoSequence clean = clean_clip(9);
  CorruptionSpec spec;
  for (double bad : {0.0, 1.0, -0.2, 1.5}) {
    spec.area_fraction = bad;
    EXPECT_THROW(simulate_corruption(clean, spec), InvalidArgument);
  }
  spec = CorruptionSpec{};
  spec.kinds.clear();
  EXPECT_THROW(simulate_corruption(clean, spec), InvalidArgument);

  VideoSequence odd;
  odd.frames.push_back(Image(40, 64, 3));
  EXPECT_THROW(simulate_corruption(odd, CorruptionSpec{}), ShapeError);
}

TEST(CorruptionKind, NamesRoundTrip) {
  for (auto k : {CorruptionKind::ColorStripe, CorruptionKind::BlockShift, CorruptionKind::FreezePropagate,
                 CorruptionKind::TextureNoise}) {
    EXPECT_EQ(parse_corruption_kind(to_string(k)), k);
  }
  EXPECT_THROW(parse_corruption_kind("salt"), InvalidArgument);
}

TEST(VideoSequence, ValidateRejectsBadContent) {
  VideoSequence v = clean_clip(10, 2);
  EXPECT_NO_THROW(v.validate());
  v.frames[1].at(3, 3, 1) = 1.5;
  EXPECT_THROW(v.validate(), Error);
  v.frames[1].at(3, 3, 1) = std::nan("");
  EXPECT_THROW(v.validate(), Error);
  VideoSequence empty;
  EXPECT_THROW(empty.validate(), InvalidArgument);
}

Dataset small_dataset(int frames = 8) {
  SynthesisConfig c;
  c.seed = 21;
  c.clips = 2;
  c.frames = frames;
  c.height = c.width = 32;
  return Dataset::synthesize(c);
}

TEST(SampleClip, EightFrameVideoUsesEveryFrame) {
  const Dataset ds = small_dataset(8);
  const ClipSample s = sample_clip(ds, 0, 5, 3, 4);
  EXPECT_EQ(s.n_local() + s.n_nonlocal(), 8);
  std::vector<int> all = s.local_indices;
  all.insert(all.end(), s.nonlocal_indices.begin(), s.nonlocal_indices.end());
  std::sort(all.begin(), all.end());
  for (int i = 0; i < 8; ++i) EXPECT_EQ(all[i], i);
  EXPECT_EQ(s.sideinfo.size(), 5u);
  EXPECT_EQ(s.gt_masks.length(), 5);
  EXPECT_EQ(s.clean_frames.length(), 5);
}

TEST(SampleClip, LocalFramesConsecutiveAndSeeded) {
  const Dataset ds = small_dataset(12);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ClipSample s = sample_clip(ds, 1, 4, 3, seed);
    for (int i = 1; i < 4; ++i) EXPECT_EQ(s.local_indices[i], s.local_indices[i - 1] + 1);
    EXPECT_TRUE(std::is_sorted(s.nonlocal_indices.begin(), s.nonlocal_indices.end()));
    for (int j : s.nonlocal_indices) {
      EXPECT_TRUE(std::find(s.local_indices.begin(), s.local_indices.end(), j) == s.local_indices.end());
    }
    const ClipSample again = sample_clip(ds, 1, 4, 3, seed);
    EXPECT_EQ(again.local_indices, s.local_indices);
    EXPECT_EQ(again.nonlocal_indices, s.nonlocal_indices);
    const VideoRecord& r = ds.record(1);
    for (int i = 0; i < 4; ++i) {
      EXPECT_TRUE(s.local_frames.frames[i].data == r.corrupted.frames[s.local_indices[i]].data);
      EXPECT_TRUE(s.clean_frames.frames[i].data == r.clean.frames[s.local_indices[i]].data);
    }
  }
}

TEST(SampleClip, RejectsShortVideo) {
  const Dataset ds = small_dataset(6);
  EXPECT_THROW(sample_clip(ds, 0, 5, 3, 0), InvalidArgument);
  EXPECT_THROW(sample_clip(ds, 5, 2, 1, 0), InvalidArgument);
}

TEST(VideoIo, PpmRoundTripIsLossless) {
  testing::TempDir dir("ppm");
  Rng rng(3);
  VideoSequence v;
  for (int t = 0; t < 2; ++t) v.frames.push_back(quantize8(testing::random_image(rng, 16, 16, 3)));
  save_video(dir / "frames", v);
  const VideoSequence back = load_video(dir / "frames");
  ASSERT_EQ(back.length(), 2);
  for (int t = 0; t < 2; ++t) EXPECT_EQ((back.frames[t].data - v.frames[t].data).cwiseAbs().maxCoeff(), 0.0);
}

TEST(VideoIo, RawSequenceRoundTripIsExact) {
  testing::TempDir dir("raw");
  Rng rng(4);
  VideoSequence v;
  v.fps = 29.97;
  for (int t = 0; t < 3; ++t) v.frames.push_back(testing::random_image(rng, 16, 32, 3));
  const auto path = dir / "clip.bvrseq";
  save_video(path, v);
  const VideoSequence back = load_video(path);
  EXPECT_EQ(back.fps, v.fps);
  for (int t = 0; t < 3; ++t) EXPECT_TRUE(back.frames[t].data == v.frames[t].data);
}

TEST(VideoIo, RoundTripsFullResolution) {
  testing::TempDir dir("res");
  VideoSequence v;
  v.frames.push_back(Image(240, 432, 3));
  save_video(dir / "frames", v);
  const VideoSequence back = load_video(dir / "frames");
  EXPECT_EQ(back.height(), 240);
  EXPECT_EQ(back.width(), 432);
}

TEST(VideoIo, CorruptHeaderIsFormatError) {
  testing::TempDir dir("bad");
  std::filesystem::create_directories(dir / "frames");
  {
    std::ofstream out(dir / "frames" / "00000.ppm", std::ios::binary);
    out << "P6\n16 x\n255\n";
  }
  EXPECT_THROW(load_video(dir / "frames"), FormatError);
  {
    std::ofstream out(dir / "seq.bvrseq", std::ios::binary);
    out << "NOTASEQ!garbage";
  }
  EXPECT_THROW(load_video(dir / "seq.bvrseq"), FormatError);
  {
    std::ofstream out(dir / "frames" / "00000.ppm", std::ios::binary);
    out << "P6\n4 4\n255\n" << std::string(10, '\0');
  }
  EXPECT_THROW(load_video(dir / "frames"), FormatError);
  EXPECT_THROW(load_video(dir / "missing"), IoError);
}

TEST(VideoIo, MasksRoundTrip) {
  testing::TempDir dir("masks");
  Rng rng(5);
  MaskSequence m;
  for (int t = 0; t < 3; ++t) m.masks.push_back(testing::random_mask(rng, 16, 16, 0.3));
  save_masks(dir / "m", m);
  const MaskSequence back = load_masks(dir / "m");
  for (int t = 0; t < 3; ++t) EXPECT_TRUE(back.masks[t].data == m.masks[t].data);
}

TEST(Dataset, SaveLoadRoundTrip) {
  testing::TempDir dir("ds");
  const Dataset ds = small_dataset(4);
  ds.save(dir.path());
  const Dataset back = Dataset::load(dir.path());
  ASSERT_EQ(back.size(), ds.size());
  for (int i = 0; i < ds.size(); ++i) {
    const VideoRecord& a = ds.record(i);
    const VideoRecord& b = back.record(i);
    EXPECT_EQ(a.id, b.id);
    for (int t = 0; t < a.corrupted.length(); ++t) {
      EXPECT_TRUE(a.corrupted.frames[t].data == b.corrupted.frames[t].data);
      EXPECT_TRUE(a.clean.frames[t].data == b.clean.frames[t].data);
      EXPECT_TRUE(a.gt.masks[t].data == b.gt.masks[t].data);
      EXPECT_TRUE(a.sideinfo[t].mv == b.sideinfo[t].mv);
      EXPECT_EQ(a.sideinfo[t].mode, b.sideinfo[t].mode);
    }
  }
}

TEST(Dataset, SynthesisIsDeterministic) {
  const Dataset a = small_dataset(4);
  const Dataset b = small_dataset(4);
  for (int i = 0; i < a.size(); ++i) {
    for (int t = 0; t < 4; ++t) {
      EXPECT_TRUE(a.record(i).corrupted.frames[t].data == b.record(i).corrupted.frames[t].data);
    }
  }
}

TEST(Dataset, MotionSideInfoMatchesFrames) {
  const Dataset ds = small_dataset(4);
  for (const auto& r : ds.records()) {
    ASSERT_EQ(r.sideinfo.size(), 4u);
    EXPECT_EQ(r.sideinfo[0].mode, PredMode::I);
    EXPECT_EQ(r.sideinfo[0].mv.cwiseAbs().sum(), 0.0);
    for (const auto& s : r.sideinfo) {
      EXPECT_EQ(s.grid_height, 2);
      EXPECT_EQ(s.grid_width, 2);
    }
  }
}

}  // namespace
}  // namespace bvr
