#include "bvr/sideinfo.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "bvr/error.hpp"
#include "json.hpp"

namespace bvr {

using json = nlohmann::json;

PredMode parse_pred_mode(std::string_view text) {
  if (text == "I") return PredMode::I;
  if (text == "P") return PredMode::P;
  if (text == "B") return PredMode::B;
  throw InvalidArgument("unknown prediction mode '" + std::string(text) + "'");
}

const char* to_string(PredMode mode) {
  switch (mode) {
    case PredMode::I: return "I";
    case PredMode::P: return "P";
    case PredMode::B: return "B";
  }
  return "?";
}

SideInfo SideInfo::intra(int grid_height, int grid_width, int macroblock) {
  SideInfo s;
  s.grid_height = grid_height;
  s.grid_width = grid_width;
  s.macroblock = macroblock;
  s.mv = Matrix::Zero(static_cast<Eigen::Index>(grid_height) * grid_width, 2);
  s.mode = PredMode::I;
  return s;
}

void SideInfo::validate() const {
  if (grid_height <= 0 || grid_width <= 0 || macroblock <= 0) throw ShapeError("side info grid is empty");
  if (mv.rows() != static_cast<Eigen::Index>(grid_height) * grid_width || mv.cols() != 2) {
    throw ShapeError("motion-vector field does not match the macroblock grid");
  }
  if (!mv.allFinite()) throw InvalidArgument("motion-vector field is not finite");
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double scaled = h * 6.0;
  int sector = static_cast<int>(std::floor(scaled));
  if (sector > 5) sector = 5;
  const double f = scaled - sector;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - s * f);
  const double t = v * (1.0 - s * (1.0 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

MotionVectorMap render_mv_map(const SideInfo& info, const Image& frame, double eta, double v_max) {
  info.validate();
  if (!(eta >= 0.0 && eta <= 1.0)) throw InvalidArgument("eta must lie in [0, 1]");
  if (!(v_max > 0.0)) throw InvalidArgument("v_max must be positive");
  if (frame.channels() != 3 || frame.height != info.grid_height * info.macroblock ||
      frame.width != info.grid_width * info.macroblock) {
    throw ShapeError("motion-vector grid does not cover the frame");
  }
  Image out(frame.height, frame.width, 3);
  const int b = info.macroblock;
  for (int gy = 0; gy < info.grid_height; ++gy) {
    for (int gx = 0; gx < info.grid_width; ++gx) {
      const Eigen::Index cell = static_cast<Eigen::Index>(gy) * info.grid_width + gx;
      const double dx = info.mv(cell, 0);
      const double dy = info.mv(cell, 1);
      const double mag = std::hypot(dx, dy);
      std::array<double, 3> rgb{0.0, 0.0, 0.0};
      if (mag > 0.0) {
        double hue = std::atan2(dy, dx) / (2.0 * std::numbers::pi);
        if (hue < 0.0) hue += 1.0;
        if (hue >= 1.0) hue -= 1.0;
        const double value = std::isinf(v_max) ? 1.0 : std::min(1.0, mag / v_max);
        rgb = hsv_to_rgb(hue, 1.0, value);
      }
      for (int y = gy * b; y < (gy + 1) * b; ++y) {
        for (int x = gx * b; x < (gx + 1) * b; ++x) {
          for (int c = 0; c < 3; ++c) out.at(y, x, c) = eta * rgb[c] + (1.0 - eta) * frame.at(y, x, c);
        }
      }
    }
  }
  return {std::move(out)};
}

std::array<double, 3> encode_pred_mode(PredMode mode) {
  std::array<double, 3> v{0.0, 0.0, 0.0};
  const int k = static_cast<int>(mode);
  if (k < 0 || k > 2) throw InvalidArgument("unknown prediction mode");
  v[static_cast<std::size_t>(k)] = 1.0;
  return v;
}

Matrix encode_pred_mode_row(PredMode mode) {
  const auto v = encode_pred_mode(mode);
  Matrix m(1, 3);
  m << v[0], v[1], v[2];
  return m;
}

namespace {

int line_of_offset(std::string_view text, std::size_t offset) {
  int line = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

[[noreturn]] void schema_error(const std::string& origin, const std::string& where, const std::string& what) {
  throw FormatError(origin + ": " + where + ": " + what);
}

}  // namespace

std::vector<SideInfo> parse_sidecar_text(std::string_view text, const std::string& origin) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(origin + ":" + std::to_string(line_of_offset(text, e.byte)) + ": malformed JSON (" +
                      e.what() + ")");
  }
  if (!doc.is_object()) schema_error(origin, "<root>", "expected an object");
  if (!doc.contains("version") || !doc["version"].is_number_integer() || doc["version"].get<int>() != 1) {
    schema_error(origin, "version", "expected integer 1");
  }
  int macroblock = kMacroblockSize;
  if (doc.contains("macroblock")) {
    if (!doc["macroblock"].is_number_integer() || doc["macroblock"].get<int>() <= 0) {
      schema_error(origin, "macroblock", "expected a positive integer");
    }
    macroblock = doc["macroblock"].get<int>();
  }
  const json& grid = doc.contains("grid") ? doc["grid"] : json();
  if (!grid.is_array() || grid.size() != 2 || !grid[0].is_number_integer() || !grid[1].is_number_integer() ||
      grid[0].get<int>() <= 0 || grid[1].get<int>() <= 0) {
    schema_error(origin, "grid", "expected [rows, cols] with positive integers");
  }
  const int gh = grid[0].get<int>();
  const int gw = grid[1].get<int>();
  if (!doc.contains("frames") || !doc["frames"].is_array()) schema_error(origin, "frames", "expected an array");

  std::vector<SideInfo> out;
  const json& frames = doc["frames"];
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const std::string where = "frames[" + std::to_string(i) + "]";
    const json& f = frames[i];
    if (!f.is_object()) schema_error(origin, where, "expected an object");
    if (!f.contains("mode") || !f["mode"].is_string()) schema_error(origin, where + ".mode", "missing mode string");
    SideInfo info = SideInfo::intra(gh, gw, macroblock);
    try {
      info.mode = parse_pred_mode(f["mode"].get<std::string>());
    } catch (const InvalidArgument& e) {
      schema_error(origin, where + ".mode", e.what());
    }
    if (info.mode != PredMode::I) {
      if (!f.contains("mv")) schema_error(origin, where + ".mv", "inter frame without motion vectors");
      const json& mv = f["mv"];
      if (!mv.is_array() || mv.size() != static_cast<std::size_t>(gh) * gw) {
        schema_error(origin, where + ".mv",
                     "expected " + std::to_string(gh * gw) + " vectors, one per macroblock");
      }
      for (std::size_t k = 0; k < mv.size(); ++k) {
        const json& v = mv[k];
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
          schema_error(origin, where + ".mv[" + std::to_string(k) + "]", "expected [dx, dy]");
        }
        info.mv(static_cast<Eigen::Index>(k), 0) = v[0].get<double>();
        info.mv(static_cast<Eigen::Index>(k), 1) = v[1].get<double>();
      }
      if (!info.mv.allFinite()) schema_error(origin, where + ".mv", "non-finite motion vector");
    }
    out.push_back(std::move(info));
  }
  return out;
}

std::vector<SideInfo> parse_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open sidecar '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_sidecar_text(buf.str(), path.string());
}

std::string format_sidecar(const std::vector<SideInfo>& frames) {
  if (frames.empty()) throw InvalidArgument("sidecar needs at least one frame");
  json doc;
  doc["version"] = 1;
  doc["macroblock"] = frames.front().macroblock;
  doc["grid"] = {frames.front().grid_height, frames.front().grid_width};
  json list = json::array();
  for (const auto& f : frames) {
    f.validate();
    json entry;
    entry["mode"] = to_string(f.mode);
    if (f.mode != PredMode::I) {
      json mv = json::array();
      for (Eigen::Index k = 0; k < f.mv.rows(); ++k) mv.push_back({f.mv(k, 0), f.mv(k, 1)});
      entry["mv"] = std::move(mv);
    }
    list.push_back(std::move(entry));
  }
  doc["frames"] = std::move(list);
  return doc.dump() + "\n";
}

void write_sidecar(const std::filesystem::path& path, const std::vector<SideInfo>& frames) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write sidecar '" + path.string() + "'");
  out << format_sidecar(frames);
}

}  // namespace bvr
