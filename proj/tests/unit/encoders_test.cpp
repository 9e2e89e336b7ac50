#include <gtest/gtest.h>

#include "bvr/cfc.hpp"
#include "bvr/dac.hpp"
#include "bvr/encoders.hpp"
#include "bvr/error.hpp"
#include "oracles.hpp"

namespace bvr {
namespace {

TEST(ConvPyramidEncoder, DownsamplingLadder) {
  Rng rng(1);
  ConvPyramidEncoder enc(3, {32, 64, 128}, 4, rng);
  const MultiScaleFeatures f = enc.encode(testing::random_image(rng, 64, 64, 3));
  ASSERT_EQ(f.size(), 3u);
  const int extent[] = {16, 8, 4};
  const int channels[] = {32, 64, 128};
  for (int j = 0; j < 3; ++j) {
    EXPECT_EQ(f[j].height, extent[j]);
    EXPECT_EQ(f[j].width, extent[j]);
    EXPECT_EQ(f[j].channels(), channels[j]);
    EXPECT_EQ(f[j].tokens.rows(), extent[j] * extent[j]);
  }
}

TEST(ConvPyramidEncoder, ZeroFrameFiniteAndDeterministic) {
  Rng rng(2);
  ConvPyramidEncoder enc(3, {8, 12, 16}, 4, rng);
  const Image zero(64, 64, 3);
  const auto a = enc.encode(zero);
  const auto b = enc.encode(zero);
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_TRUE(a[j].tokens.value().allFinite());
    EXPECT_TRUE(a[j].tokens.value() == b[j].tokens.value());
  }
}

TEST(ConvPyramidEncoder, RejectsIndivisibleInput) {
  Rng rng(3);
  ConvPyramidEncoder enc(3, {8, 12, 16}, 4, rng);
  EXPECT_THROW(enc.encode(Image(40, 64, 3)), ShapeError);
  EXPECT_THROW(enc.encode(Image(64, 64, 1)), ShapeError);
}

TEST(PatchTokenEncoder, TokenCountAndWidth) {
  Rng rng(4);
  PatchTokenEncoder enc(64, 64, 16, 128, 128, true, rng);
  const TokenSequence t = enc.encode(testing::random_image(rng, 64, 64, 3));
  EXPECT_EQ(t.count(), 16);
  EXPECT_EQ(t.dim(), 128);
  EXPECT_EQ(enc.token_count(64, 64), 16);
  EXPECT_THROW(enc.encode(Image(48, 64, 3)), ShapeError);
}

TEST(PatchTokenEncoder, UniformMapGivesIdenticalTokensWithoutPositions) {
  Rng rng(5);
  PatchTokenEncoder plain(32, 32, 16, 8, 8, false, rng);
  const Matrix t = plain.encode(Image(32, 32, 3)).tokens.value();
  for (Eigen::Index i = 1; i < t.rows(); ++i) EXPECT_TRUE(t.row(i) == t.row(0));

  Rng rng2(5);
  PatchTokenEncoder positional(32, 32, 16, 8, 8, true, rng2);
  const Matrix p = positional.encode(Image(32, 32, 3)).tokens.value();
  EXPECT_FALSE(p.row(1) == p.row(0));
}

TEST(PatchTokenEncoder, ProjectionBiasDrivesUniformTokens) {
  Rng rng(6);
  PatchTokenEncoder enc(32, 32, 16, 8, 8, false, rng);
  enc.projection().weight().mutable_value().setZero();
  const Matrix a = enc.encode(Image(32, 32, 3)).tokens.value();
  enc.projection().bias().mutable_value().setConstant(0.3);
  const Matrix b = enc.encode(Image(32, 32, 3)).tokens.value();
  const Matrix c = enc.encode(testing::random_image(rng, 32, 32, 3)).tokens.value();
  EXPECT_FALSE(a == b);
  EXPECT_TRUE(b == c);
}

TEST(ConvGlobalEncoder, DeterministicAndFinite) {
  Rng rng(7);
  ConvGlobalEncoder enc(32, 16, 64, rng);
  const GlobalEmbedding z1 = enc.encode(Image(64, 64, 3));
  const GlobalEmbedding z2 = enc.encode(Image(64, 64, 3));
  EXPECT_EQ(z1.dim(), 64);
  EXPECT_EQ(z1.vector.rows(), 1);
  EXPECT_TRUE(z1.vector.value() == z2.vector.value());
  EXPECT_TRUE(enc.encode(Image(64, 64, Matrix::Ones(4096, 3))).vector.value().allFinite());
}

TEST(ConvGlobalEncoder, PerImageIndependence) {
  Rng rng(8);
  ConvGlobalEncoder enc(16, 4, 8, rng);
  std::vector<Image> batch{testing::random_image(rng, 32, 32, 3), testing::random_image(rng, 32, 32, 3),
                           testing::random_image(rng, 32, 32, 3)};
  std::vector<Matrix> forward, backward;
  for (const auto& im : batch) forward.push_back(enc.encode(im).vector.value());
  for (auto it = batch.rbegin(); it != batch.rend(); ++it) backward.push_back(enc.encode(*it).vector.value());
  for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_TRUE(forward[i] == backward[batch.size() - 1 - i]);
}

double encoder_gradient_error(const ParamSet& params, const std::function<Var()>& out, std::uint64_t seed) {
  Rng rng(seed);
  const Var probe = out();
  const Matrix w = nn::normal_matrix(rng, probe.rows(), probe.cols(), 1.0);
  const auto checks = testing::check_gradients(params, [&] { return ag::sum(ag::mul(out(), ag::constant(w))); });
  for (const auto& c : checks) EXPECT_GT(c.numeric_norm, 0.0) << c.name;
  return testing::worst_error(checks);
}

TEST(ReferenceEncoders, GradientsMatchFiniteDifferences) {
  Rng rng(9);
  const Image frame = testing::random_image(rng, 8, 8, 3);

  ConvPyramidEncoder pyr(3, {4, 6}, 2, rng);
  ParamSet pp;
  pyr.collect("pyramid", pp);
  EXPECT_LT(encoder_gradient_error(pp, [&] {
    const auto f = pyr.encode(frame);
    const Var a = ag::reshape(f[0].tokens, 1, f[0].tokens.rows() * f[0].tokens.cols());
    const Var b = ag::reshape(f[1].tokens, 1, f[1].tokens.rows() * f[1].tokens.cols());
    return ag::concat_cols(std::vector<Var>{a, b});
  }, 1), 1e-4);

  PatchTokenEncoder tok(8, 8, 4, 8, 8, true, rng);
  ParamSet tp;
  tok.collect("tokens", tp);
  EXPECT_LT(encoder_gradient_error(tp, [&] { return tok.encode(frame).tokens; }, 2), 1e-4);

  ConvGlobalEncoder glob(8, 3, 6, rng);
  ParamSet gp;
  glob.collect("global", gp);
  EXPECT_LT(encoder_gradient_error(gp, [&] { return glob.encode(frame).vector; }, 3), 1e-4);
}

TEST(Substitutability, DetectorRunsOnConstantEncoders) {
  ModelConfig mc = gradient_check_config();
  mc.height = mc.width = 16;
  Rng rng(10);
  DacModel dac(mc, make_constant_encoders(mc, 0.2), rng);
  SideInfo info = SideInfo::intra(1, 1, 16);
  const DacFrameOutput out = dac.forward(testing::random_image(rng, 16, 16, 3), info);
  ASSERT_EQ(out.refined.size(), 2u);
  EXPECT_EQ(out.decoded.height, 16);
  EXPECT_EQ(out.decoded.logits.rows(), 256);
  EXPECT_TRUE(out.decoded.logits.value().allFinite());
  ParamSet params = dac.parameters();
  for (const auto& p : params.items()) {
    EXPECT_EQ(p.name.rfind("dac.image", 0), std::string::npos) << p.name;
  }
}

TEST(Substitutability, CompletionRunsOnConstantEncoders) {
  const ModelConfig mc = gradient_check_config();
  Rng rng(11);
  const EncoderSet mock = make_constant_encoders(mc, -0.1);
  DacModel dac(mc, mock, rng);
  CfcModel cfc(mc, mc.encoder.channels, std::make_shared<ConstantGlobalEncoder>(mc.encoder.global_dim, 0.5), rng);
  CfcClipInput in;
  SideInfo info = SideInfo::intra(1, 1, 8);
  for (int t = 0; t < 2; ++t) {
    in.frames.push_back(testing::random_image(rng, 8, 8, 3));
    in.masks.push_back(testing::random_mask(rng, 8, 8, 0.5));
    in.foundation.push_back(detach(dac.forward(in.frames.back(), info).refined));
  }
  const CfcClipOutput out = cfc.forward(in);
  ASSERT_EQ(out.recovered.size(), 2u);
  EXPECT_TRUE(out.predictions[0].value().allFinite());
  EXPECT_NEAR(out.gate[0].value().sum(), 1.0, 1e-12);
}

}  // namespace
}  // namespace bvr
