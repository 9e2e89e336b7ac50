#pragma once

// Binary checkpoint (little endian):
//   "BVRCKPT1", u32 format version
//   str stage, str fingerprint, u64 step, str config JSON
//   u32 n, n x { str name, u32 rows, u32 cols, f64[rows*cols] }      parameters
//   u64 optimizer step, u32 m, m x { str name, u32 rows, u32 cols,
//                                     f64[rows*cols] first, f64[...] second }
// where str is u32 length + bytes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bvr/nn.hpp"
#include "bvr/optim.hpp"

namespace bvr {

using ag::Matrix;

struct NamedArray {
  std::string name;
  Matrix value;
};

struct Checkpoint {
  std::string stage;        // "dac" or "cfc"
  std::string fingerprint;  // ModelConfig::fingerprint()
  std::int64_t step = 0;
  std::string config_json;
  std::vector<NamedArray> params;
  std::int64_t optimizer_step = 0;
  std::vector<optim::Adam::Moment> moments;

  const NamedArray* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
// Throws Error("missing-checkpoint") when the file does not exist and
// FormatError on a malformed file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::vector<NamedArray> snapshot(const nn::ParamSet& params);
// Copies values into `params`. Throws Error("checkpoint-mismatch") when a
// name is missing or a shape differs.
void restore(const nn::ParamSet& params, const std::vector<NamedArray>& values);
// Throws Error("fingerprint-mismatch") unless stage and fingerprint agree.
void require_compatible(const Checkpoint& checkpoint, const std::string& stage, const std::string& fingerprint);

}  // namespace bvr
