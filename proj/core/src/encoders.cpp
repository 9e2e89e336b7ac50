#include "bvr/encoders.hpp"

#include <sstream>

#include "bvr/error.hpp"

namespace bvr {

FeatureMap image_feature_map(const Image& image) {
  return {image.height, image.width, ag::constant(image.data)};
}

MultiScaleFeatures detach(const MultiScaleFeatures& features) {
  MultiScaleFeatures out;
  out.reserve(features.size());
  for (const auto& f : features) out.push_back({f.height, f.width, ag::constant(f.tokens.value())});
  return out;
}

namespace {

// Maps [0, 1] inputs to [-1, 1].
Var center(const Var& x) { return ag::add_scalar(ag::scale(x, 2.0), -1.0); }

void require_ladder(int height, int width, int base_stride, int levels, const char* who) {
  const int ladder = base_stride << (levels - 1);
  if (height <= 0 || width <= 0 || height % ladder != 0 || width % ladder != 0) {
    std::ostringstream os;
    os << who << ": input " << height << "x" << width << " not divisible by " << ladder;
    throw ShapeError(os.str());
  }
}

}  // namespace

ConvPyramidEncoder::ConvPyramidEncoder(int in_channels, std::vector<int> channels, int base_stride, Rng& rng)
    : in_channels_(in_channels), channels_(std::move(channels)), base_stride_(base_stride) {
  if (channels_.size() < 2) throw InvalidArgument("conv pyramid needs at least two levels");
  stem_ = nn::Conv2d(in_channels_, channels_[0], base_stride_, base_stride_, 0, rng);
  for (std::size_t j = 0; j < channels_.size(); ++j) {
    if (j > 0) down_.emplace_back(channels_[j - 1], channels_[j], 3, 2, 1, rng);
    block_.emplace_back(channels_[j], channels_[j], 3, 1, 1, rng);
  }
}

MultiScaleFeatures ConvPyramidEncoder::encode(const FeatureMap& input) const {
  if (input.channels() != in_channels_) {
    throw ShapeError("conv pyramid: expected " + std::to_string(in_channels_) + " input channels, got " +
                     std::to_string(input.channels()));
  }
  require_ladder(input.height, input.width, base_stride_, levels(), "conv pyramid");
  MultiScaleFeatures out;
  FeatureMap x = stem_.forward({input.height, input.width, center(input.tokens)});
  for (int j = 0; j < levels(); ++j) {
    if (j > 0) {
      x = down_[j - 1].forward(x);
      x.tokens = ag::silu(x.tokens);
    }
    FeatureMap r = block_[j].forward({x.height, x.width, ag::silu(x.tokens)});
    x.tokens = ag::add(x.tokens, r.tokens);
    out.push_back(x);
  }
  return out;
}

void ConvPyramidEncoder::collect(const std::string& prefix, ParamSet& out) const {
  stem_.collect(prefix + ".stem", out);
  for (std::size_t j = 0; j < block_.size(); ++j) {
    if (j > 0) down_[j - 1].collect(prefix + ".down" + std::to_string(j), out);
    block_[j].collect(prefix + ".block" + std::to_string(j), out);
  }
}

PatchTokenEncoder::PatchTokenEncoder(int height, int width, int patch, int dim, int adapt_hidden, bool positional,
                                     Rng& rng)
    : height_(height),
      width_(width),
      patch_(patch),
      dim_(dim),
      proj_(3 * patch * patch, dim, rng),
      adapt_(dim, adapt_hidden, dim, rng) {
  if (patch <= 0 || height % patch != 0 || width % patch != 0) {
    throw InvalidArgument("token encoder: extent not divisible by patch size");
  }
  if (positional) position_ = nn::make_param(nn::normal_matrix(rng, token_count(height, width), dim, 0.02));
}

TokenSequence PatchTokenEncoder::encode(const Image& map) const {
  if (map.channels() != 3) throw ShapeError("token encoder expects an RGB map");
  if (map.height % patch_ != 0 || map.width % patch_ != 0) {
    throw ShapeError("token encoder: map " + std::to_string(map.height) + "x" + std::to_string(map.width) +
                     " not divisible by patch " + std::to_string(patch_));
  }
  Var patches = ag::im2col(center(ag::constant(map.data)), map.height, map.width, patch_, patch_, 0);
  Var t = proj_.forward(patches);
  if (position_) {
    if (map.height != height_ || map.width != width_) {
      throw ShapeError("token encoder: positional embedding built for " + std::to_string(height_) + "x" +
                       std::to_string(width_));
    }
    t = ag::add(t, position_);
  }
  return {ag::add(t, adapt_.forward(t))};
}

void PatchTokenEncoder::collect(const std::string& prefix, ParamSet& out) const {
  proj_.collect(prefix + ".proj", out);
  if (position_) out.add(prefix + ".position", position_);
  adapt_.collect(prefix + ".adapt", out);
}

ConvGlobalEncoder::ConvGlobalEncoder(int size, int channels, int dim, Rng& rng)
    : size_(size),
      dim_(dim),
      conv1_(3, channels, 3, 2, 1, rng),
      conv2_(channels, 2 * channels, 3, 2, 1, rng),
      proj_(2 * channels, dim, rng) {
  if (size < 4) throw InvalidArgument("global encoder input size must be >= 4");
}

GlobalEmbedding ConvGlobalEncoder::encode(const Image& image) const {
  if (image.channels() != 3) throw ShapeError("global encoder expects an RGB image");
  FeatureMap in = image_feature_map(image);
  in.tokens = center(in.tokens);
  FeatureMap x = nn::resize_bilinear(in, size_, size_);
  x = conv1_.forward(x);
  x.tokens = ag::silu(x.tokens);
  x = conv2_.forward(x);
  x.tokens = ag::silu(x.tokens);
  return {proj_.forward(ag::mean_rows(x.tokens))};
}

void ConvGlobalEncoder::collect(const std::string& prefix, ParamSet& out) const {
  conv1_.collect(prefix + ".conv1", out);
  conv2_.collect(prefix + ".conv2", out);
  proj_.collect(prefix + ".proj", out);
}

ConstantImageEncoder::ConstantImageEncoder(std::vector<int> channels, int base_stride, double value)
    : channels_(std::move(channels)), base_stride_(base_stride), value_(value) {}

MultiScaleFeatures ConstantImageEncoder::encode(const FeatureMap& input) const {
  require_ladder(input.height, input.width, base_stride_, levels(), "constant encoder");
  MultiScaleFeatures out;
  int h = input.height / base_stride_;
  int w = input.width / base_stride_;
  for (int c : channels_) {
    out.push_back({h, w, ag::constant(Matrix::Constant(static_cast<Eigen::Index>(h) * w, c, value_))});
    h /= 2;
    w /= 2;
  }
  return out;
}

ConstantTokenEncoder::ConstantTokenEncoder(int patch, int dim, double value)
    : patch_(patch), dim_(dim), value_(value) {}

TokenSequence ConstantTokenEncoder::encode(const Image& map) const {
  return {ag::constant(Matrix::Constant(token_count(map.height, map.width), dim_, value_))};
}

ConstantGlobalEncoder::ConstantGlobalEncoder(int dim, double value) : dim_(dim), value_(value) {}

GlobalEmbedding ConstantGlobalEncoder::encode(const Image&) const {
  return {ag::constant(Matrix::Constant(1, dim_, value_))};
}

EncoderSet make_reference_encoders(const ModelConfig& config, Rng& rng) {
  const auto& e = config.encoder;
  EncoderSet set;
  set.image = std::make_shared<ConvPyramidEncoder>(3, e.channels, e.base_stride, rng);
  set.tokens = std::make_shared<PatchTokenEncoder>(config.height, config.width, e.patch, e.token_dim,
                                                   e.adapt_hidden, e.positional, rng);
  return set;
}

EncoderSet make_constant_encoders(const ModelConfig& config, double value) {
  const auto& e = config.encoder;
  return {std::make_shared<ConstantImageEncoder>(e.channels, e.base_stride, value),
          std::make_shared<ConstantTokenEncoder>(e.patch, e.token_dim, value)};
}

}  // namespace bvr
