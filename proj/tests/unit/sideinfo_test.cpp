#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "bvr/error.hpp"
#include "bvr/sideinfo.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace bvr {
namespace {

const std::filesystem::path kFixtures = BVR_FIXTURE_DIR;

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

SideInfo single_block(double dx, double dy) {
  SideInfo s = SideInfo::intra(1, 1);
  s.mode = PredMode::P;
  s.mv << dx, dy;
  return s;
}

TEST(RenderMvMap, ZeroFieldIsBlackAtFullEta) {
  SideInfo s = SideInfo::intra(2, 3);
  Rng rng(1);
  const Image frame = testing::random_image(rng, 32, 48, 3);
  const Image out = render_mv_map(s, frame, 1.0).image;
  EXPECT_EQ(out.data.cwiseAbs().maxCoeff(), 0.0);
}

TEST(RenderMvMap, ZeroEtaReturnsFrame) {
  SideInfo s = SideInfo::intra(2, 2);
  s.mv.setConstant(5.0);
  Rng rng(2);
  const Image frame = testing::random_image(rng, 32, 32, 3);
  EXPECT_TRUE(render_mv_map(s, frame, 0.0).image.data == frame.data);
}

TEST(RenderMvMap, QuarterTurnMatchesReferenceHsv) {
  const double vmax = 16.0;
  const Image black(16, 16, 3);
  const Image east = render_mv_map(single_block(vmax, 0.0), black, 1.0, vmax).image;
  const Image south = render_mv_map(single_block(0.0, vmax), black, 1.0, vmax).image;
  const auto ref_e = testing::reference_hsv_to_rgb(0.0, 1.0, 1.0);
  const auto ref_s = testing::reference_hsv_to_rgb(0.25, 1.0, 1.0);
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(east.at(5, 5, c), ref_e[c], 1e-12);
    EXPECT_NEAR(south.at(5, 5, c), ref_s[c], 1e-12);
  }
  const auto he = testing::reference_rgb_to_hsv(east.at(0, 0, 0), east.at(0, 0, 1), east.at(0, 0, 2));
  const auto hs = testing::reference_rgb_to_hsv(south.at(0, 0, 0), south.at(0, 0, 1), south.at(0, 0, 2));
  EXPECT_NEAR(hs[0] - he[0], 0.25, 1e-12);
}

TEST(RenderMvMap, MatchesReferenceOnRandomVectors) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const double dx = 40 * (rng.uniform() - 0.5), dy = 40 * (rng.uniform() - 0.5);
    const double vmax = 1.0 + 20.0 * rng.uniform();
    const Image out = render_mv_map(single_block(dx, dy), Image(16, 16, 3), 1.0, vmax).image;
    double hue = std::atan2(dy, dx) / (2 * M_PI);
    if (hue < 0) hue += 1.0;
    const auto ref = testing::reference_hsv_to_rgb(hue, 1.0, std::min(1.0, std::hypot(dx, dy) / vmax));
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(out.at(8, 8, c), ref[c], 1e-12);
  }
}

TEST(RenderMvMap, AffineInEta) {
  Rng rng(4);
  SideInfo s = SideInfo::intra(2, 2);
  for (Eigen::Index i = 0; i < s.mv.size(); ++i) s.mv.data()[i] = 30 * (rng.uniform() - 0.5);
  const Image frame = testing::random_image(rng, 32, 32, 3);
  const Matrix r0 = render_mv_map(s, frame, 0.0).image.data;
  const Matrix r1 = render_mv_map(s, frame, 1.0).image.data;
  for (double eta : {0.2, 0.5, 0.7}) {
    const Matrix r = render_mv_map(s, frame, eta).image.data;
    EXPECT_LE((r - (eta * r1 + (1 - eta) * r0)).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(RenderMvMap, ScalingChangesOnlyValue) {
  const Image black(16, 16, 3);
  for (double c : {0.1, 0.5, 2.0}) {
    const Image a = render_mv_map(single_block(3.0, -5.0), black, 1.0).image;
    const Image b = render_mv_map(single_block(3.0 * c, -5.0 * c), black, 1.0).image;
    const auto ha = testing::reference_rgb_to_hsv(a.at(1, 1, 0), a.at(1, 1, 1), a.at(1, 1, 2));
    const auto hb = testing::reference_rgb_to_hsv(b.at(1, 1, 0), b.at(1, 1, 1), b.at(1, 1, 2));
    EXPECT_NEAR(ha[0], hb[0], 1e-12);
    EXPECT_NEAR(ha[1], hb[1], 1e-12);
  }
}

TEST(RenderMvMap, InfiniteVmaxIsDirectionOnly) {
  const double inf = std::numeric_limits<double>::infinity();
  const Image black(16, 16, 3);
  const Image a = render_mv_map(single_block(0.5, 0.5), black, 1.0, inf).image;
  const Image b = render_mv_map(single_block(50.0, 50.0), black, 1.0, inf).image;
  EXPECT_TRUE(a.data == b.data);
  const auto hsv = testing::reference_rgb_to_hsv(a.at(0, 0, 0), a.at(0, 0, 1), a.at(0, 0, 2));
  EXPECT_DOUBLE_EQ(hsv[2], 1.0);
}

TEST(RenderMvMap, RejectsMismatchedGridAndEta) {
  const SideInfo s = SideInfo::intra(2, 2);
  EXPECT_THROW(render_mv_map(s, Image(32, 48, 3), 0.5), ShapeError);
  EXPECT_THROW(render_mv_map(s, Image(32, 32, 3), 1.5), InvalidArgument);
}

TEST(PredMode, OneHotOrderIPB) {
  EXPECT_EQ(encode_pred_mode(PredMode::I), (std::array<double, 3>{1, 0, 0}));
  EXPECT_EQ(encode_pred_mode(PredMode::P), (std::array<double, 3>{0, 1, 0}));
  EXPECT_EQ(encode_pred_mode(PredMode::B), (std::array<double, 3>{0, 0, 1}));
  const Matrix row = encode_pred_mode_row(PredMode::B);
  EXPECT_EQ(row.rows(), 1);
  EXPECT_EQ(row.cols(), 3);
}

TEST(PredMode, ArgmaxRoundTrip) {
  for (PredMode m : {PredMode::I, PredMode::P, PredMode::B}) {
    const auto v = encode_pred_mode(m);
    const auto k = std::max_element(v.begin(), v.end()) - v.begin();
    EXPECT_EQ(static_cast<PredMode>(k), m);
    EXPECT_EQ(parse_pred_mode(to_string(m)), m);
  }
  EXPECT_THROW(parse_pred_mode("X"), InvalidArgument);
}

TEST(Sidecar, GoldenFixtureParses) {
  const auto frames = parse_sidecar(kFixtures / "sidecar_5frames.json");
  ASSERT_EQ(frames.size(), 5u);
  EXPECT_EQ(frames[0].mode, PredMode::I);
  EXPECT_EQ(frames[0].mv.cwiseAbs().sum(), 0.0);
  EXPECT_EQ(frames[1].mode, PredMode::P);
  EXPECT_EQ(frames[2].mode, PredMode::B);
  EXPECT_EQ(frames[4].mode, PredMode::I);
  EXPECT_EQ(frames[1].grid_height, 2);
  EXPECT_EQ(frames[1].grid_width, 2);
  EXPECT_EQ(frames[1].mv(2, 0), -2.5);
  EXPECT_EQ(frames[1].mv(2, 1), 1.0);
  EXPECT_EQ(frames[3].mv(3, 1), -0.25);
}

TEST(Sidecar, GoldenFixtureFormatsByteExact) {
  const std::string golden = slurp(kFixtures / "sidecar_5frames.json");
  EXPECT_EQ(format_sidecar(parse_sidecar_text(golden)), golden);
}

TEST(Sidecar, GoldenRenderedColors) {
  // Frame 1 at eta = 1 on black: east, south, (-2.5, 1) and a zero block.
  const auto frames = parse_sidecar(kFixtures / "sidecar_5frames.json");
  const Image out = render_mv_map(frames[1], Image(32, 32, 3), 1.0, 16.0).image;
  auto px = [&](int y, int x) { return std::array<double, 3>{out.at(y, x, 0), out.at(y, x, 1), out.at(y, x, 2)}; };
  EXPECT_EQ(px(0, 0), (std::array<double, 3>{1.0, 0.0, 0.0}));
  EXPECT_EQ(px(0, 31), (std::array<double, 3>{0.5, 1.0, 0.0}));
  EXPECT_EQ(px(31, 31), (std::array<double, 3>{0.0, 0.0, 0.0}));
  const double hue = std::atan2(1.0, -2.5) / (2 * M_PI);
  const auto ref = testing::reference_hsv_to_rgb(hue, 1.0, std::hypot(2.5, 1.0) / 16.0);
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(px(20, 4)[c], ref[c], 1e-12);
}

TEST(Sidecar, IntraFrameWithoutMvLoadsZeroField) {
  const auto f = parse_sidecar_text(R"({"version":1,"grid":[1,2],"frames":[{"mode":"I"},{"mode":"P","mv":[[1,2],[3,4]]}]})");
  ASSERT_EQ(f.size(), 2u);
  EXPECT_EQ(f[0].mv.rows(), 2);
  EXPECT_EQ(f[0].mv.cwiseAbs().sum(), 0.0);
  EXPECT_EQ(f[1].mv(1, 0), 3.0);
}

TEST(Sidecar, MalformedModeNamesTheFrame) {
  try {
    parse_sidecar_text(R"({"version":1,"grid":[1,1],"frames":[{"mode":"I"},{"mode":"I"},{"mode":"Q","mv":[[0,0]]}]})");
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("frames[2].mode"), std::string::npos) << e.what();
  }
}

TEST(Sidecar, SchemaViolationsAreFormatErrors) {
  EXPECT_THROW(parse_sidecar_text("{"), FormatError);
  EXPECT_THROW(parse_sidecar_text(R"({"version":2,"grid":[1,1],"frames":[]})"), FormatError);
  EXPECT_THROW(parse_sidecar_text(R"({"version":1,"grid":[1,1],"frames":[{"mode":"P"}]})"), FormatError);
  EXPECT_THROW(parse_sidecar_text(R"({"version":1,"grid":[1,2],"frames":[{"mode":"P","mv":[[1,2]]}]})"), FormatError);
  EXPECT_THROW(parse_sidecar_text(R"({"version":1,"grid":[1,1],"frames":[{"mode":"P","mv":[[1]]}]})"), FormatError);
  try {
    parse_sidecar_text("{\n\"version\": 1,\n  oops\n}", "side.json");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("side.json:3"), std::string::npos) << e.what();
  }
}

TEST(Sidecar, WriteParseRoundTrip) {
  testing::TempDir dir("sidecar");
  std::vector<SideInfo> frames{SideInfo::intra(2, 3), single_block(0, 0)};
  frames[1] = SideInfo::intra(2, 3);
  frames[1].mode = PredMode::B;
  frames[1].mv.setRandom();
  write_sidecar(dir / "s.json", frames);
  const auto back = parse_sidecar(dir / "s.json");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_TRUE(back[1].mv == frames[1].mv);
  EXPECT_EQ(back[1].mode, PredMode::B);
  EXPECT_THROW(parse_sidecar(dir / "missing.json"), IoError);
}

}  // namespace
}  // namespace bvr
