#include "fixtures.hpp"

#include <atomic>
#include <unistd.h>

namespace bvr::testing {

RunConfig tiny_run_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.n_local = 3;
  c.n_nonlocal = 2;

  ModelConfig& m = c.model;
  m.height = m.width = 32;
  m.encoder.levels = 2;
  m.encoder.channels = {8, 12};
  m.encoder.base_stride = 4;
  m.encoder.patch = 16;
  m.encoder.token_dim = 16;
  m.encoder.adapt_hidden = 16;
  m.encoder.global_size = 16;
  m.encoder.global_channels = 4;
  m.encoder.global_dim = 8;
  m.dac.prompts = 4;
  m.dac.decoder_dim = 8;
  m.cfc.channels = {8, 12};
  m.cfc.prompts = 4;
  m.cfc.prompt_dim = 8;
  m.cfc.adapt_dim = 8;
  m.cfc.voter_hidden = 8;
  m.cfc.channel_token_dim = 4;
  m.cfc.head_channels = 8;

  c.data.seed = seed;
  c.data.clips = 3;
  c.data.frames = 5;
  c.data.height = c.data.width = 32;

  c.dac_train.steps = 4;
  c.dac_train.batch_clips = 2;
  c.dac_train.optimizer.lr = 1e-3;
  c.cfc_train.steps = 3;
  c.cfc_train.batch_clips = 2;
  c.cfc_train.optimizer.lr = 1e-3;
  return c;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("bvr_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace bvr::testing
