#include "bvr/optim.hpp"

#include <cmath>

#include "bvr/error.hpp"

namespace bvr::optim {

Adam::Adam(AdamConfig config, std::vector<ParamGroup> groups) : config_(config) {
  for (auto& group : groups) {
    for (const auto& p : group.params.items()) {
      slots_.push_back({p.name, p.var, group.lr_scale, nn::Matrix::Zero(p.var.rows(), p.var.cols()),
                        nn::Matrix::Zero(p.var.rows(), p.var.cols())});
    }
  }
}

void Adam::step() {
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (auto& slot : slots_) {
    if (!slot.param.has_grad() || slot.lr_scale == 0.0) continue;
    const double lr = config_.lr * slot.lr_scale;
    nn::Matrix g = slot.param.grad();
    nn::Matrix& w = slot.param.mutable_value();
    if (config_.weight_decay != 0.0) {
      if (config_.decoupled_weight_decay) {
        w *= (1.0 - lr * config_.weight_decay);
      } else {
        g += config_.weight_decay * w;
      }
    }
    slot.m = config_.beta1 * slot.m + (1.0 - config_.beta1) * g;
    slot.v = config_.beta2 * slot.v + (1.0 - config_.beta2) * g.cwiseProduct(g);
    const double step_size = lr / bc1;
    const double root_bc2 = std::sqrt(bc2);
    w.array() -= step_size * slot.m.array() / (slot.v.array().sqrt() / root_bc2 + config_.eps);
  }
}

void Adam::zero_grad() {
  for (auto& slot : slots_) slot.param.zero_grad();
}

std::vector<Adam::Moment> Adam::export_state() const {
  std::vector<Moment> out;
  out.reserve(slots_.size());
  for (const auto& slot : slots_) out.push_back({slot.name, slot.m, slot.v});
  return out;
}

void Adam::import_state(std::int64_t step, const std::vector<Moment>& moments) {
  for (auto& slot : slots_) {
    const Moment* found = nullptr;
    for (const auto& m : moments) {
      if (m.name == slot.name) {
        found = &m;
        break;
      }
    }
    if (!found) throw FormatError("optimizer state missing moment for '" + slot.name + "'");
    if (found->first.rows() != slot.m.rows() || found->first.cols() != slot.m.cols() ||
        found->second.rows() != slot.v.rows() || found->second.cols() != slot.v.cols()) {
      throw ShapeError("optimizer moment shape mismatch for '" + slot.name + "'");
    }
    slot.m = found->first;
    slot.v = found->second;
  }
  step_ = step;
}

}  // namespace bvr::optim
