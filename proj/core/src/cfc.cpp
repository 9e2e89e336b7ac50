#include "bvr/cfc.hpp"

#include <algorithm>
#include <cmath>

#include "bvr/error.hpp"

namespace bvr {

namespace {

void require_mask_for(const Image& x, const Image& mask) {
  if (mask.channels() != 1 || mask.height != x.height || mask.width != x.width) {
    throw ShapeError("mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) + "x" +
                     std::to_string(mask.channels()) + " does not match frame " + std::to_string(x.height) + "x" +
                     std::to_string(x.width));
  }
}

Var center(const Var& x) { return ag::add_scalar(ag::scale(x, 2.0), -1.0); }

// [x * (1 - m) or x * m, m] as a 4-channel map in [0, 1].
FeatureMap masked_input(const Image& frame, const Image& mask, bool keep_masked) {
  require_mask_for(frame, mask);
  Matrix in(frame.pixels(), frame.channels() + 1);
  for (Eigen::Index i = 0; i < frame.pixels(); ++i) {
    const double m = mask.data(i, 0);
    const double w = keep_masked ? m : 1.0 - m;
    for (int c = 0; c < frame.channels(); ++c) in(i, c) = frame.data(i, c) * w;
    in(i, frame.channels()) = m;
  }
  return {frame.height, frame.width, ag::constant(std::move(in))};
}

// softplus^-1(1)
constexpr double kDeltaRawInit = 0.54132485461291810;

}  // namespace

SplitResult split_by_mask(const Image& x, const Image& mask) {
  require_mask_for(x, mask);
  SplitResult r{x, x};
  for (Eigen::Index i = 0; i < x.pixels(); ++i) {
    const double m = mask.data(i, 0);
    for (int c = 0; c < x.channels(); ++c) {
      r.corrupted.data(i, c) = x.data(i, c) * m;
      r.intact.data(i, c) = x.data(i, c) - r.corrupted.data(i, c);
    }
  }
  return r;
}

Var mask_gate(const Image& mask, int height, int width) {
  if (mask.channels() != 1) throw ShapeError("mask must have one channel");
  if (mask.height == height && mask.width == width) return ag::constant(mask.data);
  Matrix m = *nn::bilinear_operator(mask.height, mask.width, height, width) * mask.data;
  return ag::constant(std::move(m));
}

Var gated_attention(const Var& q, const Var& k, const Var& v, const Var& gate, const Var& delta) {
  if (gate.rows() != q.rows() || gate.cols() != 1) throw ShapeError("gated attention: gate must be M x 1");
  Var attended = nn::scaled_dot_attention(q, k, v, 1.0 / std::sqrt(static_cast<double>(q.cols())));
  return ag::mul_col(ag::mul_scalar(attended, delta), gate);
}

Var blend_residual(const Var& attended, const Var& base, const Var& lambda) {
  if (attended.rows() != base.rows() || attended.cols() != base.cols()) {
    throw ShapeError("blend: operand shapes differ");
  }
  return ag::add(base, ag::mul_scalar(ag::sub(attended, base), lambda));
}

ScaleCrossAttention::ScaleCrossAttention(int corruption_channels, int foundation_channels, int rank, Rng& rng)
    : wq_(corruption_channels, rank, rng, false),
      wk_(foundation_channels, rank, rng, false),
      wv_(foundation_channels, corruption_channels, rng, false),
      rank_(rank) {}

Var ScaleCrossAttention::forward(const FeatureMap& corruption, const FeatureMap& foundation, const Var& gate,
                                 const Var& delta) const {
  if (corruption.height != foundation.height || corruption.width != foundation.width) {
    throw ShapeError("scale cross-attention: corruption and foundation features are at different scales");
  }
  return gated_attention(wq_.forward(corruption.tokens), wk_.forward(foundation.tokens),
                         wv_.forward(foundation.tokens), gate, delta);
}

void ScaleCrossAttention::collect(const std::string& prefix, ParamSet& out) const {
  wq_.collect(prefix + ".q", out);
  wk_.collect(prefix + ".k", out);
  wv_.collect(prefix + ".v", out);
}

HierarchicalAugment::HierarchicalAugment(const std::vector<int>& corruption_channels,
                                         const std::vector<int>& foundation_channels, int rank_divisor, Rng& rng) {
  if (corruption_channels.size() != foundation_channels.size() || corruption_channels.size() < 2) {
    throw ShapeError("hierarchical augment: pyramid ladders differ");
  }
  const std::size_t s = corruption_channels.size();
  for (std::size_t j = 0; j < s; ++j) {
    const int cc = corruption_channels[j];
    sca_.emplace_back(cc, foundation_channels[j], std::max(1, cc / rank_divisor), rng);
    lambda_raw_.push_back(nn::make_param(Matrix::Zero(1, 1)));
    delta_raw_.push_back(nn::make_param(Matrix::Constant(1, 1, kDeltaRawInit)));
  }
  for (std::size_t j = 0; j + 1 < s; ++j) {
    up_.emplace_back(corruption_channels[j + 1] + corruption_channels[j], corruption_channels[j], 3, 1, 1, rng);
  }
}

Var HierarchicalAugment::lambda(int level) const { return ag::sigmoid(lambda_raw_.at(level)); }
Var HierarchicalAugment::delta(int level) const { return ag::softplus(delta_raw_.at(level)); }

HierarchicalAugment::Output HierarchicalAugment::forward(const MultiScaleFeatures& corruption,
                                                         const MultiScaleFeatures& foundation,
                                                         const Image& mask) const {
  if (corruption.size() != sca_.size() || foundation.size() != sca_.size()) {
    throw ShapeError("hierarchical augment: expected " + std::to_string(sca_.size()) + " levels");
  }
  Output out;
  for (std::size_t j = 0; j < sca_.size(); ++j) {
    const FeatureMap& fc = corruption[j];
    Var gate = mask_gate(mask, fc.height, fc.width);
    Var attended = sca_[j].forward(fc, foundation[j], gate, delta(static_cast<int>(j)));
    out.augmented.push_back({fc.height, fc.width, blend_residual(attended, fc.tokens, lambda(static_cast<int>(j)))});
  }
  FeatureMap d = out.augmented.back();
  for (int j = static_cast<int>(up_.size()) - 1; j >= 0; --j) {
    const FeatureMap& skip = out.augmented[j];
    FeatureMap up = nn::resize_bilinear(d, skip.height, skip.width);
    const Var parts[] = {up.tokens, skip.tokens};
    d = up_[j].forward({skip.height, skip.width, ag::concat_cols(parts)});
    d.tokens = ag::silu(d.tokens);
  }
  out.fused = d;
  return out;
}

void HierarchicalAugment::collect(const std::string& prefix, ParamSet& out) const {
  for (std::size_t j = 0; j < sca_.size(); ++j) {
    const std::string p = prefix + ".level" + std::to_string(j);
    sca_[j].collect(p + ".sca", out);
    out.add(p + ".lambda_raw", lambda_raw_[j]);
    out.add(p + ".delta_raw", delta_raw_[j]);
  }
  for (std::size_t j = 0; j < up_.size(); ++j) up_[j].collect(prefix + ".up" + std::to_string(j), out);
}

CompletionBlock::CompletionBlock(int channels, int base_stride, Rng& rng)
    : base_stride_(base_stride),
      stem_(4, channels, base_stride, base_stride, 0, rng),
      norm_query_(channels),
      norm_context_(channels),
      attn_(channels, channels, channels, channels, rng),
      norm_ffn_(channels),
      ffn_(channels, 2 * channels, channels, rng) {}

FeatureMap CompletionBlock::intact_features(const Image& frame, const Image& mask) const {
  FeatureMap in = masked_input(frame, mask, false);
  in.tokens = center(in.tokens);
  FeatureMap f = stem_.forward(in);
  f.tokens = ag::silu(f.tokens);
  return f;
}

FeatureMap CompletionBlock::forward(const FeatureMap& fused, std::span<const FeatureMap> intact) const {
  if (intact.empty()) throw InvalidArgument("completion block needs at least one intact feature map");
  std::vector<Var> keys;
  for (const FeatureMap& f : intact) {
    if (f.height != fused.height || f.width != fused.width) throw ShapeError("completion block: scale mismatch");
    keys.push_back(f.height % 2 == 0 && f.width % 2 == 0 ? nn::avg_pool(f, 2).tokens : f.tokens);
  }
  Var context = norm_context_.forward(keys.size() == 1 ? keys.front() : ag::concat_rows(keys));
  Var x = ag::add(fused.tokens, attn_.forward(norm_query_.forward(fused.tokens), context));
  x = ag::add(x, ffn_.forward(norm_ffn_.forward(x)));
  return {fused.height, fused.width, x};
}

void CompletionBlock::collect(const std::string& prefix, ParamSet& out) const {
  stem_.collect(prefix + ".stem", out);
  norm_query_.collect(prefix + ".norm_q", out);
  norm_context_.collect(prefix + ".norm_ctx", out);
  attn_.collect(prefix + ".attn", out);
  norm_ffn_.collect(prefix + ".norm_ffn", out);
  ffn_.collect(prefix + ".ffn", out);
}

ExpertGate::ExpertGate(int global_dim, int adapt_dim, int voter_hidden, int experts, Rng& rng)
    : adapt_(global_dim, adapt_dim, adapt_dim, rng), voter_(adapt_dim, voter_hidden, experts, rng) {}

Var ExpertGate::adapt(const GlobalEmbedding& global) const { return adapt_.forward(global.vector); }
Var ExpertGate::logits(const Var& adapted) const { return voter_.forward(adapted); }
Var ExpertGate::weights(const Var& adapted) const { return ag::softmax_rows(logits(adapted)); }

void ExpertGate::collect(const std::string& prefix, ParamSet& out) const {
  adapt_.collect(prefix + ".adapt", out);
  voter_.collect(prefix + ".voter", out);
}

ResidualExpert::ResidualExpert(int channels, int prompt_dim, Rng& rng)
    : attn_(channels, prompt_dim, prompt_dim, channels, rng, false), ffn_(channels, 2 * channels, channels, rng, false) {}

Var ResidualExpert::forward(const Var& base, const Var& prompts) const {
  return ag::add(base, ffn_.forward(attn_.forward(base, prompts)));
}

void ResidualExpert::collect(const std::string& prefix, ParamSet& out) const {
  attn_.collect(prefix + ".attn", out);
  ffn_.collect(prefix + ".ffn", out);
}

Var mixture_of_experts(std::span<const Var> experts, const Var& weights) {
  if (experts.empty() || weights.rows() != 1 || weights.cols() != static_cast<Eigen::Index>(experts.size())) {
    throw ShapeError("mixture: expert count does not match the gate width");
  }
  Var out;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    Var term = ag::mul_scalar(experts[i], ag::slice_cols(weights, static_cast<Eigen::Index>(i), 1));
    out = i == 0 ? term : ag::add(out, term);
  }
  return out;
}

ResidualEnhance::ResidualEnhance(int channels, int adapt_dim, int token_dim, Rng& rng)
    : channels_(channels),
      token_dim_(token_dim),
      key_embed_(1, token_dim, rng),
      value_embed_(1, token_dim, rng),
      query_(adapt_dim, channels * token_dim, rng),
      mlp_(token_dim, token_dim, 1, rng) {}

Var ResidualEnhance::channel_weights(const Var& refined, const Var& adapted) const {
  if (refined.cols() != channels_) throw ShapeError("residual enhance: channel count mismatch");
  Var pooled = ag::transpose(ag::mean_rows(refined));  // C x 1
  Var k = key_embed_.forward(pooled);
  Var v = value_embed_.forward(pooled);
  Var q = ag::reshape(query_.forward(adapted), channels_, token_dim_);
  Var attended = nn::scaled_dot_attention(q, k, v, 1.0 / std::sqrt(static_cast<double>(token_dim_)));
  return ag::transpose(ag::sigmoid(mlp_.forward(attended)));
}

Var ResidualEnhance::forward(const Var& refined, const Var& adapted) const {
  return ag::mul_row(refined, channel_weights(refined, adapted));
}

void ResidualEnhance::collect(const std::string& prefix, ParamSet& out) const {
  key_embed_.collect(prefix + ".key", out);
  value_embed_.collect(prefix + ".value", out);
  query_.collect(prefix + ".query", out);
  mlp_.collect(prefix + ".mlp", out);
}

RecoveryHead::RecoveryHead(int feature_channels, int hidden, Rng& rng)
    : conv1_(feature_channels + 4, hidden, 3, 1, 1, rng),
      conv2_(hidden, hidden, 3, 1, 1, rng),
      conv3_(hidden, 3, 3, 1, 1, rng) {}

Var RecoveryHead::forward(const FeatureMap& features, const Image& frame, const Image& mask) const {
  require_mask_for(frame, mask);
  FeatureMap up = nn::resize_bilinear(features, frame.height, frame.width);
  Var x = ag::constant(frame.data);
  const Var parts[] = {up.tokens, center(x), center(ag::constant(mask.data))};
  FeatureMap h = conv1_.forward({frame.height, frame.width, ag::concat_cols(parts)});
  h.tokens = ag::silu(h.tokens);
  h = conv2_.forward(h);
  h.tokens = ag::silu(h.tokens);
  h = conv3_.forward(h);
  return ag::add(x, h.tokens);
}

void RecoveryHead::collect(const std::string& prefix, ParamSet& out) const {
  conv1_.collect(prefix + ".conv1", out);
  conv2_.collect(prefix + ".conv2", out);
  conv3_.collect(prefix + ".conv3", out);
}

Image composite(const Image& frame, const Image& mask, const Matrix& prediction) {
  require_mask_for(frame, mask);
  if (prediction.rows() != frame.pixels() || prediction.cols() != frame.channels()) {
    throw ShapeError("composite: prediction shape does not match the frame");
  }
  Image out = frame;
  for (Eigen::Index i = 0; i < frame.pixels(); ++i) {
    if (mask.data(i, 0) == 0.0) continue;
    for (int c = 0; c < frame.channels(); ++c) out.data(i, c) = std::clamp(prediction(i, c), 0.0, 1.0);
  }
  return out;
}

void CfcClipInput::validate() const {
  if (frames.empty()) throw InvalidArgument("completion input has no local frames");
  if (masks.size() != frames.size() || foundation.size() != frames.size()) {
    throw ShapeError("completion input: frames, masks and features must pair up");
  }
  if (nonlocal_masks.size() != nonlocal_frames.size()) throw ShapeError("completion input: non-local masks missing");
  for (std::size_t t = 0; t < frames.size(); ++t) require_mask_for(frames[t], masks[t]);
  for (std::size_t t = 0; t < nonlocal_frames.size(); ++t) require_mask_for(nonlocal_frames[t], nonlocal_masks[t]);
}

CfcModel::CfcModel(const ModelConfig& config, const std::vector<int>& foundation_channels, Rng& rng)
    : CfcModel(config, foundation_channels,
               std::make_shared<ConvGlobalEncoder>(config.encoder.global_size, config.encoder.global_channels,
                                                   config.encoder.global_dim, rng),
               rng) {}

CfcModel::CfcModel(const ModelConfig& config, const std::vector<int>& foundation_channels,
                   std::shared_ptr<const GlobalEncoder> global, Rng& rng)
    : config_(config),
      foundation_channels_(foundation_channels),
      global_(std::move(global)),
      corruption_encoder_(4, config.cfc.channels, config.encoder.base_stride, rng) {
  config_.validate();
  if (!global_) throw InvalidArgument("completion model needs a global encoder");
  const auto& c = config_.cfc;
  const int c1 = c.channels.front();
  augment_ = HierarchicalAugment(c.channels, foundation_channels_, c.rank_divisor, rng);
  completion_ = CompletionBlock(c1, config_.encoder.base_stride, rng);
  gate_ = ExpertGate(global_->dim(), c.adapt_dim, c.voter_hidden, c.experts, rng);
  prompts_ = nn::make_param(nn::normal_matrix(rng, c.prompts, c.prompt_dim, 1.0));
  for (int i = 0; i < c.experts; ++i) experts_.emplace_back(c1, c.prompt_dim, rng);
  enhance_ = ResidualEnhance(c1, c.adapt_dim, c.channel_token_dim, rng);
  head_ = RecoveryHead(c1, c.head_channels, rng);
}

CfcClipOutput CfcModel::forward(const CfcClipInput& input) const {
  input.validate();
  const int n = static_cast<int>(input.frames.size());

  std::vector<FeatureMap> intact;
  for (int t = 0; t < n; ++t) intact.push_back(completion_.intact_features(input.frames[t], input.masks[t]));
  for (std::size_t t = 0; t < input.nonlocal_frames.size(); ++t) {
    intact.push_back(completion_.intact_features(input.nonlocal_frames[t], input.nonlocal_masks[t]));
  }

  auto global_for = [&](int t) {
    return gate_.adapt(global_->encode(split_by_mask(input.frames[t], input.masks[t]).corrupted));
  };
  CfcClipOutput out;
  Var clip_adapted;
  if (!config_.cfc.per_frame_gate) {
    clip_adapted = global_for(n / 2);
    out.gate.push_back(gate_.weights(clip_adapted));
  }

  for (int t = 0; t < n; ++t) {
    Var adapted = clip_adapted;
    Var weights = config_.cfc.per_frame_gate ? Var() : out.gate.front();
    if (config_.cfc.per_frame_gate) {
      adapted = global_for(t);
      weights = gate_.weights(adapted);
      out.gate.push_back(weights);
    }
    MultiScaleFeatures fc = corruption_encoder_.encode(masked_input(input.frames[t], input.masks[t], true));
    HierarchicalAugment::Output aug = augment_.forward(fc, input.foundation[t], input.masks[t]);
    FeatureMap fb = completion_.forward(aug.fused, intact);
    std::vector<Var> expert_out;
    for (const ResidualExpert& e : experts_) expert_out.push_back(e.forward(fb.tokens, prompts_));
    Var refined = enhance_.forward(mixture_of_experts(expert_out, weights), adapted);
    Var pred = head_.forward({fb.height, fb.width, refined}, input.frames[t], input.masks[t]);
    out.recovered.push_back(composite(input.frames[t], input.masks[t], pred.value()));
    out.predictions.push_back(pred);
  }
  return out;
}

ParamSet CfcModel::completion_parameters() const {
  ParamSet p;
  completion_.collect("cfc.completion", p);
  return p;
}

ParamSet CfcModel::head_parameters() const {
  ParamSet p;
  head_.collect("cfc.head", p);
  return p;
}

ParamSet CfcModel::block_parameters() const {
  ParamSet p;
  global_->collect("cfc.global", p);
  corruption_encoder_.collect("cfc.corruption", p);
  augment_.collect("cfc.augment", p);
  gate_.collect("cfc.gate", p);
  p.add("cfc.prompts", prompts_);
  for (std::size_t i = 0; i < experts_.size(); ++i) experts_[i].collect("cfc.expert" + std::to_string(i), p);
  enhance_.collect("cfc.enhance", p);
  return p;
}

ParamSet CfcModel::parameters() const {
  ParamSet p = block_parameters();
  p.append(completion_parameters());
  p.append(head_parameters());
  return p;
}

}  // namespace bvr
