#pragma once

// Corruption detector: encoders -> cross-domain prompting neck -> mask
// decoder. Produces per-frame mask logits plus the refined multi-scale
// features consumed by feature completion.

#include <memory>
#include <vector>

#include "bvr/encoders.hpp"
#include "bvr/model_config.hpp"
#include "bvr/sideinfo.hpp"
#include "bvr/video.hpp"

namespace bvr {

enum class PromptGroup { MotionVector, PredictionMode, Learned };

struct PromptPool {
  Var tokens;                     // rows ordered (mv..., pm, learned...)
  std::vector<PromptGroup> tags;  // one per row

  int size() const { return static_cast<int>(tags.size()); }
  int dim() const { return static_cast<int>(tokens.cols()); }
  int count(PromptGroup group) const;
};

// Concatenates the groups in fixed order. Either of `mv_tokens` and
// `pm_token` may be null (ablations); `learned` must have at least one row.
PromptPool build_prompt_pool(const TokenSequence* mv_tokens, const Var* pm_token, const Var& learned);

struct TdcaResult {
  Var output;     // M x D
  Var attention;  // M x pool rows
};

// softmax(cos(Q_i, K_j) / tau) V with guarded normalisation: a zero-norm
// query or key row has similarity 0 with everything. `tau` is 1x1.
TdcaResult cosine_attention(const Var& q, const Var& k, const Var& v, const Var& tau);

class TokenDictionaryAttention {
 public:
  TokenDictionaryAttention() = default;
  TokenDictionaryAttention(int feature_dim, int token_dim, double tau_init, double tau_min, Rng& rng);

  TdcaResult forward(const Var& features, const PromptPool& pool) const;
  void collect(const std::string& prefix, ParamSet& out) const;

  Var& tau() { return tau_; }
  const Var& tau() const { return tau_; }
  void clamp_tau();
  nn::Linear& query_proj() { return wq_; }
  nn::Linear& key_proj() { return wk_; }
  nn::Linear& value_proj() { return wv_; }

 private:
  nn::Linear wq_;
  nn::Linear wk_;
  nn::Linear wv_;
  Var tau_;
  double tau_min_ = 1e-3;
};

// delta = SelfAttn(LN(F_1), LN([F_1; out(TDCA(F_1, pool))]))
// F^_1 = F_1 + delta;  F^_j = F_j + proj_j(avgpool_{2^(j-1)}(delta)).
class DacNeck {
 public:
  DacNeck() = default;
  DacNeck(const ModelConfig& config, const std::vector<int>& channels, Rng& rng);

  PromptPool make_pool(const TokenSequence* mv_tokens, PredMode mode) const;
  MultiScaleFeatures forward(const MultiScaleFeatures& features, const PromptPool& pool,
                             TdcaResult* trace = nullptr) const;
  void collect(const std::string& prefix, ParamSet& out) const;

  TokenDictionaryAttention& tdca() { return tdca_; }
  nn::Attention& fuse() { return fuse_; }
  Var& learned_prompts() { return prompts_; }

 private:
  bool use_mv_ = true;
  bool use_pm_ = true;
  Var prompts_;
  nn::Linear pm_tokenizer_;
  TokenDictionaryAttention tdca_;
  nn::Linear enhanced_out_;
  nn::LayerNorm norm_query_;
  nn::LayerNorm norm_context_;
  nn::Attention fuse_;
  std::vector<nn::Linear> align_;  // levels 2..S
};

struct DecoderOutput {
  int height = 0;
  int width = 0;
  Var logits;  // (H*W) x 1
  Var iou;     // 1 x 1 predicted IoU, empty when the head is disabled
};

// Two-way attention decoder: level projections fused at the finest scale,
// two blocks of token<->feature attention over [iou, mask] output tokens,
// then a hypernetwork dot product and bilinear upsampling to H x W.
class MaskDecoder {
 public:
  MaskDecoder() = default;
  MaskDecoder(const std::vector<int>& channels, int dim, bool iou_head, Rng& rng);

  DecoderOutput forward(const MultiScaleFeatures& features, int out_height, int out_width) const;
  void collect(const std::string& prefix, ParamSet& out) const;

 private:
  struct Block {
    nn::Attention token_to_image;
    nn::Attention image_to_token;
    nn::Mlp token_mlp;
    nn::LayerNorm norm1, norm2, norm3;
  };
  int dim_ = 0;
  bool iou_head_ = true;
  std::vector<nn::Linear> lateral_;
  Var output_tokens_;  // 2 x dim: (iou, mask)
  std::vector<Block> blocks_;
  nn::Conv2d refine_;
  nn::Mlp hyper_;
  Var logit_bias_;
  nn::Mlp iou_mlp_;
};

struct DacFrameOutput {
  MultiScaleFeatures features;  // encoder output
  MultiScaleFeatures refined;   // after the neck
  DecoderOutput decoded;

  // Binary mask image (H x W x 1) from sigmoid(logits) > threshold.
  Image mask(double threshold) const;
};

class DacModel {
 public:
  DacModel(const ModelConfig& config, Rng& rng);
  DacModel(const ModelConfig& config, EncoderSet encoders, Rng& rng);

  // `previous` enables the temporal feature average when the configured
  // coefficient is non-zero.
  DacFrameOutput forward(const Image& frame, const SideInfo& info,
                         const MultiScaleFeatures* previous = nullptr) const;
  std::vector<DacFrameOutput> forward_sequence(const VideoSequence& frames, const std::vector<SideInfo>& info) const;
  MaskSequence predict_masks(const VideoSequence& frames, const std::vector<SideInfo>& info) const;

  ParamSet parameters() const;
  // Enforces tau >= tau_min; call after every optimizer step.
  void after_step();

  const ModelConfig& config() const { return config_; }
  DacNeck& neck() { return neck_; }
  MaskDecoder& decoder() { return decoder_; }

 private:
  ModelConfig config_;
  EncoderSet encoders_;
  DacNeck neck_;
  MaskDecoder decoder_;
};

}  // namespace bvr
