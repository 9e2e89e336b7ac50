#include "bvr/image_io.hpp"

#include <array>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "bvr/error.hpp"

namespace bvr {

namespace fs = std::filesystem;

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
bool next_token(const std::string& buf, std::size_t& pos, std::string& token) {
  token.clear();
  while (pos < buf.size()) {
    const char ch = buf[pos];
    if (ch == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(ch))) {
      ++pos;
    } else {
      break;
    }
  }
  while (pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[pos]))) token.push_back(buf[pos++]);
  return !token.empty();
}

int parse_header_int(const std::string& buf, std::size_t& pos, const std::string& origin, const char* field) {
  std::string token;
  if (!next_token(buf, pos, token)) throw FormatError(origin + ": truncated header (" + field + ")");
  for (char ch : token) {
    if (ch < '0' || ch > '9') throw FormatError(origin + ": bad header field " + field + " '" + token + "'");
  }
  if (token.size() > 9) throw FormatError(origin + ": header field " + field + " out of range");
  return std::stoi(token);
}

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

constexpr std::array<char, 8> kRawMagic{'B', 'V', 'R', 'S', 'E', 'Q', '\0', '\1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

void put_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(const std::string& buf, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
  return v;
}

double get_f64(const std::string& buf, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

void write_raw(const fs::path& path, const std::vector<Image>& frames, double fps) {
  if (frames.empty()) throw InvalidArgument("cannot save an empty sequence");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(kRawMagic.data(), kRawMagic.size());
  put_u32(out, static_cast<std::uint32_t>(frames.size()));
  put_u32(out, static_cast<std::uint32_t>(frames[0].height));
  put_u32(out, static_cast<std::uint32_t>(frames[0].width));
  put_u32(out, static_cast<std::uint32_t>(frames[0].channels()));
  put_f64(out, fps);
  for (const auto& f : frames) {
    if (f.height != frames[0].height || f.width != frames[0].width || f.channels() != frames[0].channels()) {
      throw ShapeError("ragged sequence cannot be saved");
    }
    for (Eigen::Index i = 0; i < f.data.size(); ++i) put_f64(out, f.data.data()[i]);
  }
}

std::vector<Image> read_raw(const fs::path& path, double& fps) {
  const std::string buf = read_all(path);
  const std::string origin = path.string();
  constexpr std::size_t kHeader = 8 + 16 + 8;
  if (buf.size() < kHeader || std::memcmp(buf.data(), kRawMagic.data(), kRawMagic.size()) != 0) {
    throw FormatError(origin + ": not a raw sequence (bad magic)");
  }
  const std::uint64_t n = get_u32(buf, 8), h = get_u32(buf, 12), w = get_u32(buf, 16), c = get_u32(buf, 20);
  fps = get_f64(buf, 24);
  if (n == 0 || h == 0 || w == 0 || c == 0 || c > 4 || h > 65536 || w > 65536) {
    throw FormatError(origin + ": invalid sequence dimensions");
  }
  const std::uint64_t samples = n * h * w * c;
  if (buf.size() != kHeader + samples * 8) throw FormatError(origin + ": payload size does not match header");
  std::vector<Image> frames;
  std::size_t at = kHeader;
  for (std::uint64_t k = 0; k < n; ++k) {
    Image f(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
    for (Eigen::Index i = 0; i < f.data.size(); ++i, at += 8) f.data.data()[i] = get_f64(buf, at);
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<Image> read_frame_dir(const fs::path& dir, const char* extension) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir.string() + "' is not a directory");
  std::vector<Image> frames;
  for (int i = 0;; ++i) {
    const fs::path p = dir / frame_filename(i, extension);
    if (!fs::exists(p)) break;
    frames.push_back(read_pnm(p));
  }
  if (frames.empty()) throw FormatError("'" + dir.string() + "' holds no " + extension + " frames");
  return frames;
}

bool is_raw(const fs::path& path) { return path.extension() == kRawSequenceExtension; }

}  // namespace

std::string frame_filename(int index, const char* extension) {
  char name[32];
  std::snprintf(name, sizeof name, "%05d%s", index, extension);
  return name;
}

Image read_pnm(const fs::path& path) {
  const std::string buf = read_all(path);
  const std::string origin = path.string();
  std::size_t pos = 0;
  std::string magic;
  if (!next_token(buf, pos, magic) || (magic != "P6" && magic != "P5")) {
    throw FormatError(origin + ": unsupported image format (expected binary PPM/PGM)");
  }
  const int channels = magic == "P6" ? 3 : 1;
  const int width = parse_header_int(buf, pos, origin, "width");
  const int height = parse_header_int(buf, pos, origin, "height");
  const int maxval = parse_header_int(buf, pos, origin, "maxval");
  if (width <= 0 || height <= 0) throw FormatError(origin + ": empty image");
  if (maxval <= 0 || maxval > 255) throw FormatError(origin + ": only 8-bit samples are supported");
  if (pos >= buf.size() || !std::isspace(static_cast<unsigned char>(buf[pos]))) {
    throw FormatError(origin + ": truncated header");
  }
  ++pos;
  const std::size_t count = static_cast<std::size_t>(width) * height * channels;
  if (buf.size() - pos != count) throw FormatError(origin + ": payload size does not match header");
  Image img(height, width, channels);
  for (std::size_t i = 0; i < count; ++i) {
    img.data.data()[i] = static_cast<unsigned char>(buf[pos + i]) / static_cast<double>(maxval);
  }
  return img;
}

void write_pnm(const fs::path& path, const Image& image) {
  if (image.channels() != 1 && image.channels() != 3) throw ShapeError("PNM supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << (image.channels() == 3 ? "P6" : "P5") << "\n" << image.width << " " << image.height << "\n255\n";
  std::string payload(static_cast<std::size_t>(image.data.size()), '\0');
  for (Eigen::Index i = 0; i < image.data.size(); ++i) {
    double v = image.data.data()[i];
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    payload[static_cast<std::size_t>(i)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

VideoSequence load_video(const fs::path& path) {
  VideoSequence v;
  if (is_raw(path)) {
    v.frames = read_raw(path, v.fps);
  } else {
    v.frames = read_frame_dir(path, ".ppm");
  }
  v.validate(0);
  return v;
}

void save_video(const fs::path& path, const VideoSequence& video) {
  video.validate(0);
  if (is_raw(path)) {
    write_raw(path, video.frames, video.fps);
    return;
  }
  fs::create_directories(path);
  for (int i = 0; i < video.length(); ++i) write_pnm(path / frame_filename(i, ".ppm"), video.frames[i]);
}

MaskSequence load_masks(const fs::path& path) {
  MaskSequence m;
  double fps = 0.0;
  m.masks = is_raw(path) ? read_raw(path, fps) : read_frame_dir(path, ".pgm");
  m.binary = true;
  for (const auto& img : m.masks) {
    if (img.channels() != 1) throw FormatError(path.string() + ": masks must be single channel");
    for (Eigen::Index i = 0; i < img.data.size(); ++i) {
      const double v = img.data.data()[i];
      if (v != 0.0 && v != 1.0) m.binary = false;
    }
  }
  m.validate();
  return m;
}

void save_masks(const fs::path& path, const MaskSequence& masks) {
  masks.validate();
  if (is_raw(path)) {
    write_raw(path, masks.masks, 1.0);
    return;
  }
  fs::create_directories(path);
  for (int i = 0; i < masks.length(); ++i) write_pnm(path / frame_filename(i, ".pgm"), masks.masks[i]);
}

}  // namespace bvr
