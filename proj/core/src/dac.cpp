#include "bvr/dac.hpp"

#include <algorithm>
#include <cmath>

#include "bvr/error.hpp"

namespace bvr {

int PromptPool::count(PromptGroup group) const {
  return static_cast<int>(std::count(tags.begin(), tags.end(), group));
}

PromptPool build_prompt_pool(const TokenSequence* mv_tokens, const Var* pm_token, const Var& learned) {
  if (!learned || learned.rows() < 1) throw InvalidArgument("prompt pool needs at least one learned prompt");
  const Eigen::Index dim = learned.cols();
  std::vector<Var> parts;
  PromptPool pool;
  if (mv_tokens && mv_tokens->tokens) {
    if (mv_tokens->tokens.cols() != dim) throw ShapeError("prompt pool: motion-vector token width mismatch");
    parts.push_back(mv_tokens->tokens);
    pool.tags.insert(pool.tags.end(), mv_tokens->tokens.rows(), PromptGroup::MotionVector);
  }
  if (pm_token && *pm_token) {
    if (pm_token->rows() != 1 || pm_token->cols() != dim) {
      throw ShapeError("prompt pool: prediction-mode token must be 1 x " + std::to_string(dim));
    }
    parts.push_back(*pm_token);
    pool.tags.push_back(PromptGroup::PredictionMode);
  }
  parts.push_back(learned);
  pool.tags.insert(pool.tags.end(), learned.rows(), PromptGroup::Learned);
  pool.tokens = parts.size() == 1 ? learned : ag::concat_rows(parts);
  return pool;
}

TdcaResult cosine_attention(const Var& q, const Var& k, const Var& v, const Var& tau) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) throw ShapeError("cosine attention: operand shapes disagree");
  if (tau.rows() != 1 || tau.cols() != 1 || !(tau.value()(0, 0) > 0.0)) {
    throw InvalidArgument("cosine attention: tau must be a positive scalar");
  }
  Var sim = ag::matmul(ag::l2_normalize_rows(q), ag::transpose(ag::l2_normalize_rows(k)));
  Var attn = ag::softmax_rows(ag::mul_scalar(sim, ag::reciprocal(tau)));
  return {ag::matmul(attn, v), attn};
}

TokenDictionaryAttention::TokenDictionaryAttention(int feature_dim, int token_dim, double tau_init, double tau_min,
                                                   Rng& rng)
    : wq_(feature_dim, token_dim, rng, false),
      wk_(token_dim, token_dim, rng, false),
      wv_(token_dim, token_dim, rng, false),
      tau_(nn::make_param(Matrix::Constant(1, 1, tau_init))),
      tau_min_(tau_min) {}

TdcaResult TokenDictionaryAttention::forward(const Var& features, const PromptPool& pool) const {
  if (pool.dim() != wk_.in_features()) throw ShapeError("TDCA: prompt width does not match the key projection");
  return cosine_attention(wq_.forward(features), wk_.forward(pool.tokens), wv_.forward(pool.tokens), tau_);
}

void TokenDictionaryAttention::collect(const std::string& prefix, ParamSet& out) const {
  wq_.collect(prefix + ".q", out);
  wk_.collect(prefix + ".k", out);
  wv_.collect(prefix + ".v", out);
  out.add(prefix + ".tau", tau_);
}

void TokenDictionaryAttention::clamp_tau() {
  double& t = tau_.mutable_value()(0, 0);
  if (!(t >= tau_min_)) t = tau_min_;
}

DacNeck::DacNeck(const ModelConfig& config, const std::vector<int>& channels, Rng& rng)
    : use_mv_(config.dac.use_mv_tokens), use_pm_(config.dac.use_pm_token) {
  const int d = config.encoder.token_dim;
  const int c1 = channels.at(0);
  prompts_ = nn::make_param(nn::normal_matrix(rng, config.dac.prompts, d, 1.0));
  pm_tokenizer_ = nn::Linear(3, d, rng);
  tdca_ = TokenDictionaryAttention(c1, d, config.dac.tau_init, config.dac.tau_min, rng);
  enhanced_out_ = nn::Linear(d, c1, rng);
  norm_query_ = nn::LayerNorm(c1);
  norm_context_ = nn::LayerNorm(c1);
  fuse_ = nn::Attention(c1, c1, c1, c1, rng);
  for (std::size_t j = 1; j < channels.size(); ++j) align_.emplace_back(c1, channels[j], rng, false);
}

PromptPool DacNeck::make_pool(const TokenSequence* mv_tokens, PredMode mode) const {
  Var pm;
  if (use_pm_) pm = pm_tokenizer_.forward(ag::constant(encode_pred_mode_row(mode)));
  return build_prompt_pool(use_mv_ ? mv_tokens : nullptr, use_pm_ ? &pm : nullptr, prompts_);
}

MultiScaleFeatures DacNeck::forward(const MultiScaleFeatures& features, const PromptPool& pool,
                                    TdcaResult* trace) const {
  if (features.size() != align_.size() + 1) throw ShapeError("neck: level count mismatch");
  const FeatureMap& f1 = features[0];
  TdcaResult enhanced = tdca_.forward(f1.tokens, pool);
  Var e = enhanced_out_.forward(enhanced.output);
  const Var both[] = {f1.tokens, e};
  Var delta = fuse_.forward(norm_query_.forward(f1.tokens), norm_context_.forward(ag::concat_rows(both)));
  if (trace) *trace = enhanced;

  MultiScaleFeatures out;
  out.push_back({f1.height, f1.width, ag::add(f1.tokens, delta)});
  for (std::size_t j = 1; j < features.size(); ++j) {
    const FeatureMap& fj = features[j];
    const int factor = 1 << j;
    if (fj.height * factor != f1.height || fj.width * factor != f1.width) {
      throw ShapeError("neck: level " + std::to_string(j) + " breaks the 2x ladder");
    }
    FeatureMap pooled = nn::avg_pool({f1.height, f1.width, delta}, factor);
    out.push_back({fj.height, fj.width, ag::add(fj.tokens, align_[j - 1].forward(pooled.tokens))});
  }
  return out;
}

void DacNeck::collect(const std::string& prefix, ParamSet& out) const {
  out.add(prefix + ".prompts", prompts_);
  if (use_pm_) pm_tokenizer_.collect(prefix + ".pm", out);
  tdca_.collect(prefix + ".tdca", out);
  enhanced_out_.collect(prefix + ".enhanced_out", out);
  norm_query_.collect(prefix + ".norm_q", out);
  norm_context_.collect(prefix + ".norm_ctx", out);
  fuse_.collect(prefix + ".fuse", out);
  for (std::size_t j = 0; j < align_.size(); ++j) align_[j].collect(prefix + ".align" + std::to_string(j + 1), out);
}

MaskDecoder::MaskDecoder(const std::vector<int>& channels, int dim, bool iou_head, Rng& rng)
    : dim_(dim), iou_head_(iou_head) {
  for (int c : channels) lateral_.emplace_back(c, dim, rng);
  output_tokens_ = nn::make_param(nn::normal_matrix(rng, 2, dim, 1.0));
  for (int b = 0; b < 2; ++b) {
    blocks_.push_back({nn::Attention(dim, dim, dim, dim, rng), nn::Attention(dim, dim, dim, dim, rng),
                       nn::Mlp(dim, 2 * dim, dim, rng), nn::LayerNorm(dim), nn::LayerNorm(dim), nn::LayerNorm(dim)});
  }
  refine_ = nn::Conv2d(dim, dim, 3, 1, 1, rng);
  hyper_ = nn::Mlp(dim, dim, dim, rng);
  logit_bias_ = nn::make_param(Matrix::Constant(1, 1, -1.0));
  if (iou_head_) iou_mlp_ = nn::Mlp(dim, dim, 1, rng);
}

DecoderOutput MaskDecoder::forward(const MultiScaleFeatures& features, int out_height, int out_width) const {
  if (features.size() != lateral_.size()) throw ShapeError("decoder: level count mismatch");
  const int h1 = features[0].height;
  const int w1 = features[0].width;
  Var x;
  for (std::size_t j = 0; j < features.size(); ++j) {
    FeatureMap p{features[j].height, features[j].width, lateral_[j].forward(features[j].tokens)};
    Var up = nn::resize_bilinear(p, h1, w1).tokens;
    x = j == 0 ? up : ag::add(x, up);
  }
  Var t = output_tokens_;
  for (const Block& b : blocks_) {
    t = b.norm1.forward(ag::add(t, b.token_to_image.forward(t, x)));
    t = b.norm2.forward(ag::add(t, b.token_mlp.forward(t)));
    x = b.norm3.forward(ag::add(x, b.image_to_token.forward(x, t)));
  }
  FeatureMap refined = refine_.forward({h1, w1, ag::silu(x)});
  Var y = ag::add(x, refined.tokens);
  Var hyper = hyper_.forward(ag::slice_rows(t, 1, 1));
  Var low = ag::add_row(ag::scale(ag::matmul(y, ag::transpose(hyper)), 1.0 / std::sqrt(static_cast<double>(dim_))),
                        logit_bias_);

  DecoderOutput out;
  out.height = out_height;
  out.width = out_width;
  out.logits = nn::resize_bilinear({h1, w1, low}, out_height, out_width).tokens;
  if (iou_head_) out.iou = ag::sigmoid(iou_mlp_.forward(ag::slice_rows(t, 0, 1)));
  return out;
}

void MaskDecoder::collect(const std::string& prefix, ParamSet& out) const {
  for (std::size_t j = 0; j < lateral_.size(); ++j) lateral_[j].collect(prefix + ".lateral" + std::to_string(j), out);
  out.add(prefix + ".tokens", output_tokens_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = prefix + ".block" + std::to_string(b);
    blocks_[b].token_to_image.collect(p + ".t2i", out);
    blocks_[b].image_to_token.collect(p + ".i2t", out);
    blocks_[b].token_mlp.collect(p + ".mlp", out);
    blocks_[b].norm1.collect(p + ".norm1", out);
    blocks_[b].norm2.collect(p + ".norm2", out);
    blocks_[b].norm3.collect(p + ".norm3", out);
  }
  refine_.collect(prefix + ".refine", out);
  hyper_.collect(prefix + ".hyper", out);
  out.add(prefix + ".logit_bias", logit_bias_);
  if (iou_head_) iou_mlp_.collect(prefix + ".iou", out);
}

Image DacFrameOutput::mask(double threshold) const {
  const Matrix& l = decoded.logits.value();
  Image m(decoded.height, decoded.width, 1);
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    m.data(i, 0) = 1.0 / (1.0 + std::exp(-l(i, 0))) > threshold ? 1.0 : 0.0;
  }
  return m;
}

namespace {

std::vector<int> encoder_channels(const ImageEncoder& e) {
  std::vector<int> c;
  for (int j = 0; j < e.levels(); ++j) c.push_back(e.channels(j));
  return c;
}

}  // namespace

DacModel::DacModel(const ModelConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  encoders_ = make_reference_encoders(config_, rng);
  neck_ = DacNeck(config_, encoder_channels(*encoders_.image), rng);
  decoder_ = MaskDecoder(encoder_channels(*encoders_.image), config_.dac.decoder_dim, config_.dac.iou_head, rng);
}

DacModel::DacModel(const ModelConfig& config, EncoderSet encoders, Rng& rng)
    : config_(config), encoders_(std::move(encoders)) {
  config_.validate();
  if (!encoders_.image || !encoders_.tokens) throw InvalidArgument("detector needs an image and a token encoder");
  if (encoders_.tokens->token_dim() != config_.encoder.token_dim) {
    throw ShapeError("token encoder width does not match the configured prompt width");
  }
  neck_ = DacNeck(config_, encoder_channels(*encoders_.image), rng);
  decoder_ = MaskDecoder(encoder_channels(*encoders_.image), config_.dac.decoder_dim, config_.dac.iou_head, rng);
}

DacFrameOutput DacModel::forward(const Image& frame, const SideInfo& info, const MultiScaleFeatures* previous) const {
  DacFrameOutput out;
  out.features = encoders_.image->encode(frame);
  const double a = config_.dac.temporal_ema;
  if (a > 0.0 && previous && !previous->empty()) {
    FeatureMap& f1 = out.features[0];
    f1.tokens = ag::add(ag::scale(f1.tokens, 1.0 - a), ag::constant(a * previous->front().tokens.value()));
  }
  TokenSequence mv;
  if (config_.dac.use_mv_tokens) {
    mv = encoders_.tokens->encode(render_mv_map(info, frame, config_.dac.eta, config_.dac.v_max).image);
  }
  PromptPool pool = neck_.make_pool(config_.dac.use_mv_tokens ? &mv : nullptr, info.mode);
  out.refined = neck_.forward(out.features, pool);
  out.decoded = decoder_.forward(out.refined, frame.height, frame.width);
  return out;
}

std::vector<DacFrameOutput> DacModel::forward_sequence(const VideoSequence& frames,
                                                       const std::vector<SideInfo>& info) const {
  if (static_cast<int>(info.size()) != frames.length()) throw ShapeError("side info does not pair with frames");
  std::vector<DacFrameOutput> out;
  out.reserve(info.size());
  for (int t = 0; t < frames.length(); ++t) {
    out.push_back(forward(frames.frames[t], info[t], t > 0 ? &out.back().features : nullptr));
  }
  return out;
}

MaskSequence DacModel::predict_masks(const VideoSequence& frames, const std::vector<SideInfo>& info) const {
  if (static_cast<int>(info.size()) != frames.length()) throw ShapeError("side info does not pair with frames");
  MaskSequence masks;
  masks.binary = true;
  MultiScaleFeatures previous;
  for (int t = 0; t < frames.length(); ++t) {
    DacFrameOutput o = forward(frames.frames[t], info[t], t > 0 ? &previous : nullptr);
    masks.masks.push_back(o.mask(config_.dac.threshold));
    previous = detach(o.features);
  }
  return masks;
}

ParamSet DacModel::parameters() const {
  ParamSet p;
  encoders_.image->collect("dac.image", p);
  encoders_.tokens->collect("dac.tokens", p);
  neck_.collect("dac.neck", p);
  decoder_.collect("dac.decoder", p);
  return p;
}

void DacModel::after_step() { neck_.tdca().clamp_tau(); }

}  // namespace bvr
