#pragma once

// Encoder interfaces consumed by the detection and completion models, plus
// small trainable reference implementations. Any implementation honouring
// the shape contracts can be swapped in (for example an adapter around an
// external foundation model). The reference encoders expect inputs in
// [0, 1] and map them to [-1, 1] internally.

#include <memory>
#include <string>
#include <vector>

#include "bvr/model_config.hpp"
#include "bvr/nn.hpp"
#include "bvr/video.hpp"

namespace bvr {

using nn::FeatureMap;
using nn::ParamSet;
using nn::Var;

// Level j has extent (H_1 >> j) x (W_1 >> j).
using MultiScaleFeatures = std::vector<FeatureMap>;

struct TokenSequence {
  Var tokens;  // T x D
  int count() const { return static_cast<int>(tokens.rows()); }
  int dim() const { return static_cast<int>(tokens.cols()); }
};

struct GlobalEmbedding {
  Var vector;  // 1 x D_g
  int dim() const { return static_cast<int>(vector.cols()); }
};

// Wraps an image as a constant feature map.
FeatureMap image_feature_map(const Image& image);
// Drops the autograd history of every level.
MultiScaleFeatures detach(const MultiScaleFeatures& features);

class ImageEncoder {
 public:
  virtual ~ImageEncoder() = default;
  virtual MultiScaleFeatures encode(const FeatureMap& input) const = 0;
  MultiScaleFeatures encode(const Image& frame) const { return encode(image_feature_map(frame)); }
  virtual int levels() const = 0;
  virtual int channels(int level) const = 0;
  virtual int base_stride() const = 0;
  virtual void collect(const std::string& prefix, ParamSet& out) const = 0;
};

class TokenEncoder {
 public:
  virtual ~TokenEncoder() = default;
  virtual TokenSequence encode(const Image& map) const = 0;
  virtual int token_dim() const = 0;
  virtual int token_count(int height, int width) const = 0;
  virtual void collect(const std::string& prefix, ParamSet& out) const = 0;
};

class GlobalEncoder {
 public:
  virtual ~GlobalEncoder() = default;
  virtual GlobalEmbedding encode(const Image& image) const = 0;
  virtual int dim() const = 0;
  virtual void collect(const std::string& prefix, ParamSet& out) const = 0;
};

// Strided convolutional pyramid: a k = stride = base_stride patchify stem,
// then per level a residual 3x3 block, with 3x3 stride-2 convolutions between
// levels.
class ConvPyramidEncoder final : public ImageEncoder {
 public:
  ConvPyramidEncoder(int in_channels, std::vector<int> channels, int base_stride, Rng& rng);

  MultiScaleFeatures encode(const FeatureMap& input) const override;
  using ImageEncoder::encode;
  int levels() const override { return static_cast<int>(channels_.size()); }
  int channels(int level) const override { return channels_.at(level); }
  int base_stride() const override { return base_stride_; }
  void collect(const std::string& prefix, ParamSet& out) const override;

 private:
  int in_channels_;
  std::vector<int> channels_;
  int base_stride_;
  nn::Conv2d stem_;
  std::vector<nn::Conv2d> down_;   // level j-1 -> j, j >= 1
  std::vector<nn::Conv2d> block_;  // residual conv per level
};

// Patchify + linear projection to D, optional learned positional embedding,
// then a residual two-layer adaptation MLP.
class PatchTokenEncoder final : public TokenEncoder {
 public:
  PatchTokenEncoder(int height, int width, int patch, int dim, int adapt_hidden, bool positional, Rng& rng);

  TokenSequence encode(const Image& map) const override;
  int token_dim() const override { return dim_; }
  int token_count(int height, int width) const override { return (height / patch_) * (width / patch_); }
  void collect(const std::string& prefix, ParamSet& out) const override;

  nn::Linear& projection() { return proj_; }

 private:
  int height_;
  int width_;
  int patch_;
  int dim_;
  nn::Linear proj_;
  Var position_;
  nn::Mlp adapt_;
};

// Bilinear resize to size x size, two stride-2 convolutions, global average
// pooling and a linear projection to D_g.
class ConvGlobalEncoder final : public GlobalEncoder {
 public:
  ConvGlobalEncoder(int size, int channels, int dim, Rng& rng);

  GlobalEmbedding encode(const Image& image) const override;
  int dim() const override { return dim_; }
  void collect(const std::string& prefix, ParamSet& out) const override;

 private:
  int size_;
  int dim_;
  nn::Conv2d conv1_;
  nn::Conv2d conv2_;
  nn::Linear proj_;
};

// Parameter-free stand-ins that emit constant activations of the right shape.
class ConstantImageEncoder final : public ImageEncoder {
 public:
  ConstantImageEncoder(std::vector<int> channels, int base_stride, double value);
  MultiScaleFeatures encode(const FeatureMap& input) const override;
  using ImageEncoder::encode;
  int levels() const override { return static_cast<int>(channels_.size()); }
  int channels(int level) const override { return channels_.at(level); }
  int base_stride() const override { return base_stride_; }
  void collect(const std::string&, ParamSet&) const override {}

 private:
  std::vector<int> channels_;
  int base_stride_;
  double value_;
};

class ConstantTokenEncoder final : public TokenEncoder {
 public:
  ConstantTokenEncoder(int patch, int dim, double value);
  TokenSequence encode(const Image& map) const override;
  int token_dim() const override { return dim_; }
  int token_count(int height, int width) const override { return (height / patch_) * (width / patch_); }
  void collect(const std::string&, ParamSet&) const override {}

 private:
  int patch_;
  int dim_;
  double value_;
};

class ConstantGlobalEncoder final : public GlobalEncoder {
 public:
  ConstantGlobalEncoder(int dim, double value);
  GlobalEmbedding encode(const Image& image) const override;
  int dim() const override { return dim_; }
  void collect(const std::string&, ParamSet&) const override {}

 private:
  int dim_;
  double value_;
};

struct EncoderSet {
  std::shared_ptr<const ImageEncoder> image;
  std::shared_ptr<const TokenEncoder> tokens;
};

// Reference image + token encoders for the detector, sized from `config`.
EncoderSet make_reference_encoders(const ModelConfig& config, Rng& rng);
// Mock encoders with the same shape contract as make_reference_encoders.
EncoderSet make_constant_encoders(const ModelConfig& config, double value = 0.1);

}  // namespace bvr
