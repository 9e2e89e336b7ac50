#include "bvr/model_config.hpp"

#include <sstream>

#include "bvr/error.hpp"

namespace bvr {

void ModelConfig::validate() const {
  const auto& e = encoder;
  if (e.levels < 2) throw InvalidArgument("encoder needs at least two levels");
  if (static_cast<int>(e.channels.size()) != e.levels) throw InvalidArgument("encoder.channels must list one width per level");
  if (static_cast<int>(cfc.channels.size()) != e.levels) throw InvalidArgument("cfc.channels must list one width per level");
  if (e.base_stride < 1 || e.patch < 1 || e.token_dim < 1 || e.global_dim < 1) {
    throw InvalidArgument("encoder sizes must be positive");
  }
  const int ladder = e.base_stride << (e.levels - 1);
  if (height <= 0 || width <= 0 || height % ladder != 0 || width % ladder != 0) {
    throw InvalidArgument("frame extent must be divisible by base_stride * 2^(levels-1) = " + std::to_string(ladder));
  }
  if (height % e.patch != 0 || width % e.patch != 0) throw InvalidArgument("frame extent must be divisible by the token patch");
  if (finest_height() % 2 != 0 || finest_width() % 2 != 0) {
    throw InvalidArgument("finest feature level must have even extent");
  }
  if (dac.prompts < 1) throw InvalidArgument("dac.prompts (N_p) must be >= 1");
  if (!(dac.tau_min > 0.0) || dac.tau_init < dac.tau_min) throw InvalidArgument("dac.tau_init must be >= tau_min > 0");
  if (!(dac.eta >= 0.0 && dac.eta <= 1.0)) throw InvalidArgument("dac.eta must lie in [0, 1]");
  if (!(dac.v_max > 0.0)) throw InvalidArgument("dac.v_max must be positive");
  if (!(dac.temporal_ema >= 0.0 && dac.temporal_ema < 1.0)) throw InvalidArgument("dac.temporal_ema must lie in [0, 1)");
  if (cfc.experts < 1) throw InvalidArgument("cfc.experts (N_e) must be >= 1");
  if (cfc.prompts < 1 || cfc.rank_divisor < 1) throw InvalidArgument("cfc sizes must be positive");
  for (int c : cfc.channels) {
    if (c / cfc.rank_divisor < 1) throw InvalidArgument("cfc channel width too small for the rank divisor");
  }
}

std::string ModelConfig::fingerprint() const {
  std::ostringstream os;
  auto list = [&](const std::vector<int>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  };
  os << "v1;hw=" << height << "x" << width << ";S=" << encoder.levels << ";C=";
  list(encoder.channels);
  os << ";stride=" << encoder.base_stride << ";patch=" << encoder.patch << ";D=" << encoder.token_dim
     << ";adapt=" << encoder.adapt_hidden << ";pos=" << encoder.positional << ";g=" << encoder.global_size << "/"
     << encoder.global_channels << "/" << encoder.global_dim << ";Np=" << dac.prompts << ";mv=" << dac.use_mv_tokens
     << ";pm=" << dac.use_pm_token << ";iou=" << dac.iou_head << ";dec=" << dac.decoder_dim << ";Cc=";
  list(cfc.channels);
  os << ";Ne=" << cfc.experts << ";P=" << cfc.prompts << "x" << cfc.prompt_dim << ";Da=" << cfc.adapt_dim
     << ";voter=" << cfc.voter_hidden << ";rank=" << cfc.rank_divisor << ";ct=" << cfc.channel_token_dim
     << ";head=" << cfc.head_channels;
  return os.str();
}

ModelConfig gradient_check_config() {
  ModelConfig c;
  c.height = 8;
  c.width = 8;
  c.encoder.levels = 2;
  c.encoder.channels = {4, 6};
  c.encoder.base_stride = 2;
  c.encoder.patch = 4;
  c.encoder.token_dim = 8;
  c.encoder.adapt_hidden = 8;
  c.encoder.global_size = 8;
  c.encoder.global_channels = 3;
  c.encoder.global_dim = 6;
  c.dac.prompts = 3;
  c.dac.decoder_dim = 6;
  c.cfc.channels = {4, 6};
  c.cfc.experts = 2;
  c.cfc.prompts = 3;
  c.cfc.prompt_dim = 5;
  c.cfc.adapt_dim = 6;
  c.cfc.voter_hidden = 5;
  c.cfc.channel_token_dim = 4;
  c.cfc.head_channels = 4;
  return c;
}

}  // namespace bvr
