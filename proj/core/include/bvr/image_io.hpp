#pragma once

#include <filesystem>

#include "bvr/video.hpp"

namespace bvr {

// Binary PPM (P6, RGB) and PGM (P5, gray), 8 bits per sample. Lossless for
// images already on the k/255 grid.
Image read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image& image);

// Raw double-precision sequence dump: exact round trip for any values.
//   bytes 0-7   "BVRSEQ\0\1"
//   u32 x 4     frames, height, width, channels   (little endian)
//   f64         fps
//   f64 ...     frames * height * width * channels samples, row-major
inline constexpr const char* kRawSequenceExtension = ".bvrseq";

// `path` is either a directory of %05d.ppm frames or a .bvrseq file.
VideoSequence load_video(const std::filesystem::path& path);
void save_video(const std::filesystem::path& path, const VideoSequence& video);

// Masks as %05d.pgm frames with values {0, 255} (or a .bvrseq file).
MaskSequence load_masks(const std::filesystem::path& path);
void save_masks(const std::filesystem::path& path, const MaskSequence& masks);

std::string frame_filename(int index, const char* extension);

}  // namespace bvr
