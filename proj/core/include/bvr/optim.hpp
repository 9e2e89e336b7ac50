#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bvr/nn.hpp"

namespace bvr::optim {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool decoupled_weight_decay = false;  // true gives AdamW
};

struct ParamGroup {
  nn::ParamSet params;
  double lr_scale = 1.0;
};

// Adam / AdamW over named parameter groups. Parameters that received no
// gradient in a step are left untouched, moments included.
class Adam {
 public:
  Adam(AdamConfig config, std::vector<ParamGroup> groups);

  void step();
  void zero_grad();

  std::int64_t steps() const { return step_; }
  const AdamConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

  struct Moment {
    std::string name;
    nn::Matrix first;
    nn::Matrix second;
  };
  std::vector<Moment> export_state() const;
  // Throws if a named moment is missing or has the wrong shape.
  void import_state(std::int64_t step, const std::vector<Moment>& moments);

 private:
  struct Slot {
    std::string name;
    nn::Var param;
    double lr_scale;
    nn::Matrix m;
    nn::Matrix v;
  };
  AdamConfig config_;
  std::vector<Slot> slots_;
  std::int64_t step_ = 0;
};

}  // namespace bvr::optim
