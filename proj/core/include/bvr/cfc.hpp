#pragma once

// Corruption-aware feature completion: mask-gated scale-wise augmentation,
// a mixture of residual experts under a global soft voting gate, channel
// re-weighting against the global corruption embedding, and a small
// convolutional recovery head.

#include <memory>
#include <span>
#include <vector>

#include "bvr/encoders.hpp"
#include "bvr/model_config.hpp"
#include "bvr/video.hpp"

namespace bvr {

struct SplitResult {
  Image intact;     // x * (1 - m)
  Image corrupted;  // x * m
};

SplitResult split_by_mask(const Image& x, const Image& mask);

// Mask resized to (height, width) with half-pixel bilinear weights, as a
// (height*width) x 1 constant. No re-thresholding.
Var mask_gate(const Image& mask, int height, int width);

// softmax(Q K^T / sqrt(d)) V, each row scaled by delta * gate. `gate` is
// M x 1, `delta` is 1 x 1.
Var gated_attention(const Var& q, const Var& k, const Var& v, const Var& gate, const Var& delta);

// lambda * attended + (1 - lambda) * base; `lambda` is 1 x 1.
Var blend_residual(const Var& attended, const Var& base, const Var& lambda);

class ScaleCrossAttention {
 public:
  ScaleCrossAttention() = default;
  ScaleCrossAttention(int corruption_channels, int foundation_channels, int rank, Rng& rng);

  Var forward(const FeatureMap& corruption, const FeatureMap& foundation, const Var& gate, const Var& delta) const;
  void collect(const std::string& prefix, ParamSet& out) const;

  nn::Linear& query_proj() { return wq_; }
  nn::Linear& key_proj() { return wk_; }
  nn::Linear& value_proj() { return wv_; }

 private:
  nn::Linear wq_;
  nn::Linear wk_;
  nn::Linear wv_;
  int rank_ = 1;
};

// Per-scale augmentation on the encoder path followed by a U-shaped decoder
// with skip connections: D_S = F^c_S, D_j = silu(conv(concat(up(D_{j+1}), F^c_j))).
class HierarchicalAugment {
 public:
  struct Output {
    MultiScaleFeatures augmented;
    FeatureMap fused;  // finest scale
  };

  HierarchicalAugment() = default;
  HierarchicalAugment(const std::vector<int>& corruption_channels, const std::vector<int>& foundation_channels,
                      int rank_divisor, Rng& rng);

  Output forward(const MultiScaleFeatures& corruption, const MultiScaleFeatures& foundation, const Image& mask) const;
  void collect(const std::string& prefix, ParamSet& out) const;

  int levels() const { return static_cast<int>(sca_.size()); }
  Var lambda(int level) const;  // sigmoid(lambda_raw)
  Var delta(int level) const;   // softplus(delta_raw)
  Var& lambda_raw(int level) { return lambda_raw_.at(level); }
  Var& delta_raw(int level) { return delta_raw_.at(level); }

 private:
  std::vector<ScaleCrossAttention> sca_;
  std::vector<Var> lambda_raw_;
  std::vector<Var> delta_raw_;
  std::vector<nn::Conv2d> up_;  // up_[j] produces level j from j + 1
};

// Stand-in feature completion: the fused corruption feature attends to
// pooled intact-content features of every clip frame, then a feed-forward
// residual. Produces the preliminary feature F_b.
class CompletionBlock {
 public:
  CompletionBlock() = default;
  CompletionBlock(int channels, int base_stride, Rng& rng);

  // Stem over [x * (1 - m), m] at the finest feature scale.
  FeatureMap intact_features(const Image& frame, const Image& mask) const;
  FeatureMap forward(const FeatureMap& fused, std::span<const FeatureMap> intact) const;
  void collect(const std::string& prefix, ParamSet& out) const;

 private:
  int base_stride_ = 4;
  nn::Conv2d stem_;
  nn::LayerNorm norm_query_;
  nn::LayerNorm norm_context_;
  nn::Attention attn_;
  nn::LayerNorm norm_ffn_;
  nn::Mlp ffn_;
};

// Global embedding -> two-layer adaptation -> two-layer voter -> softmax.
class ExpertGate {
 public:
  ExpertGate() = default;
  ExpertGate(int global_dim, int adapt_dim, int voter_hidden, int experts, Rng& rng);

  Var adapt(const GlobalEmbedding& global) const;  // 1 x D_a
  Var logits(const Var& adapted) const;            // 1 x N_e
  Var weights(const Var& adapted) const;           // softmax(logits)
  void collect(const std::string& prefix, ParamSet& out) const;

 private:
  nn::Mlp adapt_;
  nn::Mlp voter_;
};

// F_b + FFN(CrossAttn(F_b, P)); both branches are bias-free so a zero value
// projection leaves F_b unchanged.
class ResidualExpert {
 public:
  ResidualExpert() = default;
  ResidualExpert(int channels, int prompt_dim, Rng& rng);

  Var forward(const Var& base, const Var& prompts) const;
  void collect(const std::string& prefix, ParamSet& out) const;

  nn::Attention& attention() { return attn_; }

 private:
  nn::Attention attn_;
  nn::Mlp ffn_;
};

// sum_i w_i * experts[i]; `weights` is 1 x N_e.
Var mixture_of_experts(std::span<const Var> experts, const Var& weights);

// Per-channel re-weighting: channel tokens from global average pooling
// serve as keys/values, queries come from the adapted global embedding;
// the attended tokens pass through a two-layer projection and a sigmoid.
class ResidualEnhance {
 public:
  ResidualEnhance() = default;
  ResidualEnhance(int channels, int adapt_dim, int token_dim, Rng& rng);

  Var channel_weights(const Var& refined, const Var& adapted) const;  // 1 x C, in (0, 1)
  Var forward(const Var& refined, const Var& adapted) const;
  void collect(const std::string& prefix, ParamSet& out) const;

  nn::Mlp& projection() { return mlp_; }

 private:
  int channels_ = 0;
  int token_dim_ = 0;
  nn::Linear key_embed_;
  nn::Linear value_embed_;
  nn::Linear query_;
  nn::Mlp mlp_;
};

// Three 3x3 convolutions over [upsampled features, frame, mask]; predicts a
// residual added to the frame.
class RecoveryHead {
 public:
  RecoveryHead() = default;
  RecoveryHead(int feature_channels, int hidden, Rng& rng);

  Var forward(const FeatureMap& features, const Image& frame, const Image& mask) const;  // (H*W) x 3
  void collect(const std::string& prefix, ParamSet& out) const;

 private:
  nn::Conv2d conv1_;
  nn::Conv2d conv2_;
  nn::Conv2d conv3_;
};

// Pixels with mask == 0 copy `frame` exactly; the rest take the prediction
// clamped to [0, 1].
Image composite(const Image& frame, const Image& mask, const Matrix& prediction);

struct CfcClipInput {
  std::vector<Image> frames;  // local frames
  std::vector<Image> masks;   // binary, per local frame
  std::vector<MultiScaleFeatures> foundation;  // refined detector features per local frame
  std::vector<Image> nonlocal_frames;
  std::vector<Image> nonlocal_masks;

  void validate() const;
};

struct CfcClipOutput {
  std::vector<Var> gate;         // one 1 x N_e entry per clip, or per frame
  std::vector<Var> predictions;  // raw (H*W) x 3 per local frame
  std::vector<Image> recovered;  // composited and clamped
};

class CfcModel {
 public:
  CfcModel(const ModelConfig& config, const std::vector<int>& foundation_channels, Rng& rng);
  CfcModel(const ModelConfig& config, const std::vector<int>& foundation_channels,
           std::shared_ptr<const GlobalEncoder> global, Rng& rng);

  CfcClipOutput forward(const CfcClipInput& input) const;

  ParamSet parameters() const;
  ParamSet completion_parameters() const;
  ParamSet head_parameters() const;
  // Everything except the completion block and the recovery head.
  ParamSet block_parameters() const;

  const ModelConfig& config() const { return config_; }
  HierarchicalAugment& augment() { return augment_; }
  std::vector<ResidualExpert>& experts() { return experts_; }
  ResidualEnhance& enhance() { return enhance_; }
  Var& prompts() { return prompts_; }

 private:
  ModelConfig config_;
  std::vector<int> foundation_channels_;
  std::shared_ptr<const GlobalEncoder> global_;
  ConvPyramidEncoder corruption_encoder_;
  HierarchicalAugment augment_;
  CompletionBlock completion_;
  ExpertGate gate_;
  Var prompts_;
  std::vector<ResidualExpert> experts_;
  ResidualEnhance enhance_;
  RecoveryHead head_;
};

}  // namespace bvr
