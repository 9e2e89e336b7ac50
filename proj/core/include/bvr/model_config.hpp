#pragma once

#include <string>
#include <vector>

namespace bvr {

struct EncoderConfig {
  int levels = 3;                       // S
  std::vector<int> channels{32, 64, 128};
  int base_stride = 4;                  // finest level is H / base_stride
  int patch = 16;                       // motion-vector token patch size
  int token_dim = 128;                  // D, prompt/embedding width
  int adapt_hidden = 128;               // hidden width of the 2-layer adaptation block
  bool positional = true;               // learned additive positional embedding on tokens
  int global_size = 32;                 // global encoder input is resized to this square
  int global_channels = 16;
  int global_dim = 64;                  // D_g
};

struct DacConfig {
  int prompts = 8;                      // N_p learned corruption prompts
  double tau_init = 0.2;
  double tau_min = 1e-3;
  bool use_mv_tokens = true;
  bool use_pm_token = true;
  bool iou_head = true;
  int decoder_dim = 32;
  double temporal_ema = 0.0;            // 0 disables the previous-frame feature average
  double eta = 0.5;                     // motion-vector map blend ratio
  double v_max = 16.0;                  // motion magnitude mapped to full HSV value
  double threshold = 0.5;               // on sigmoid(logits)
  double w_focal = 20.0;
  double w_dice = 1.0;
  double w_l1 = 1.0;
  double w_ce = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_smooth = 1.0;
};

struct CfcConfig {
  std::vector<int> channels{32, 48, 64};  // corruption-feature pyramid widths
  int experts = 2;                         // N_e
  int prompts = 8;                         // shared expert prompts P
  int prompt_dim = 32;
  int adapt_dim = 64;                      // D_a
  int voter_hidden = 32;
  int rank_divisor = 2;                    // reduced Q/K rank = C / rank_divisor
  int channel_token_dim = 16;              // per-channel token width in residual enhancement
  int head_channels = 16;                  // recovery head width
  bool per_frame_gate = false;             // gate per local frame instead of per clip
};

struct ModelConfig {
  int height = 64;
  int width = 64;
  EncoderConfig encoder;
  DacConfig dac;
  CfcConfig cfc;

  // Throws InvalidArgument on inconsistent settings.
  void validate() const;
  // Structural identity: every field that changes parameter shapes.
  std::string fingerprint() const;

  int finest_height() const { return height / encoder.base_stride; }
  int finest_width() const { return width / encoder.base_stride; }
  int level_height(int j) const { return finest_height() >> j; }
  int level_width(int j) const { return finest_width() >> j; }
};

// Tiny configuration for finite-difference checks: 8x8 frames, two levels.
ModelConfig gradient_check_config();

}  // namespace bvr
