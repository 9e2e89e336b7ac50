#include "bvr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "bvr/error.hpp"
#include "bvr/optim.hpp"

namespace bvr {

namespace {

constexpr double kPi = 3.14159265358979323846;

optim::Adam make_optimizer(const OptimizerSettings& s, std::vector<optim::ParamGroup> groups) {
  optim::AdamConfig a;
  a.lr = s.lr;
  a.beta1 = s.beta1;
  a.beta2 = s.beta2;
  a.eps = s.eps;
  a.weight_decay = s.weight_decay;
  a.decoupled_weight_decay = s.name == "adamw";
  return optim::Adam(a, std::move(groups));
}

std::uint64_t sample_seed(std::uint64_t seed, int step) {
  return Rng::stream(seed, "sampling/step" + std::to_string(step)).next_u64();
}

void resume_from(const Checkpoint& ckpt, const std::string& stage, const ModelConfig& model,
                 const nn::ParamSet& params, optim::Adam& opt) {
  require_compatible(ckpt, stage, model.fingerprint());
  restore(params, ckpt.params);
  opt.import_state(ckpt.optimizer_step, ckpt.moments);
}

Checkpoint make_checkpoint(const std::string& stage, const RunConfig& config, int step, const nn::ParamSet& params,
                           const optim::Adam& opt) {
  Checkpoint c;
  c.stage = stage;
  c.fingerprint = config.model.fingerprint();
  c.step = step;
  c.config_json = format_run_config(config);
  c.params = snapshot(params);
  c.optimizer_step = opt.steps();
  c.moments = opt.export_state();
  return c;
}

[[noreturn]] void abort_non_finite(const std::string& stage, int step, const std::string& clip, int frame,
                                   const std::string& terms) {
  std::ostringstream os;
  os << stage << " step " << step << ": non-finite loss on " << clip << " frame " << frame << " (" << terms << ")";
  throw Error("nan-loss", os.str());
}

int stop_step(const TrainOptions& options, int total) {
  return options.stop_at >= 0 ? std::min(options.stop_at, total) : total;
}

DetectionReport detect_dataset(const DacModel& dac, const Dataset& dataset) {
  std::vector<DetectionReport> parts;
  for (const auto& rec : dataset.records()) {
    parts.push_back(detection_metrics(dac.predict_masks(rec.corrupted, rec.sideinfo), rec.gt));
  }
  return merge_reports(parts);
}

}  // namespace

double scheduled_lr(const OptimizerSettings& s, int step, int total) {
  double lr = s.lr;
  if (s.warmup_steps > 0 && step < s.warmup_steps) return lr * (step + 1) / s.warmup_steps;
  if (s.schedule == LrSchedule::Cosine) {
    const int span = std::max(1, total - s.warmup_steps);
    const double progress = std::clamp(static_cast<double>(step - s.warmup_steps) / span, 0.0, 1.0);
    lr *= 0.5 * (1.0 + std::cos(kPi * progress));
  }
  return lr;
}

std::vector<int> batch_for_step(std::uint64_t seed, int step, int batch_clips, int clips) {
  if (clips < 1 || batch_clips < 1) throw InvalidArgument("batch needs at least one clip");
  std::vector<int> batch;
  std::vector<int> order;
  long cached_epoch = -1;
  for (int i = 0; i < batch_clips; ++i) {
    const long pos = static_cast<long>(step) * batch_clips + i;
    const long epoch = pos / clips;
    if (epoch != cached_epoch) {
      order.resize(static_cast<std::size_t>(clips));
      std::iota(order.begin(), order.end(), 0);
      Rng rng = Rng::stream(seed, "data/epoch" + std::to_string(epoch));
      rng.shuffle(order);
      cached_epoch = epoch;
    }
    batch.push_back(order[static_cast<std::size_t>(pos % clips)]);
  }
  return batch;
}

DacModel make_dac(const RunConfig& config) {
  Rng rng = Rng::stream(config.seed, "init/dac");
  return DacModel(config.model, rng);
}

CfcModel make_cfc(const RunConfig& config) {
  Rng rng = Rng::stream(config.seed, "init/cfc");
  return CfcModel(config.model, config.model.encoder.channels, rng);
}

RunConfig config_from_checkpoint(const Checkpoint& checkpoint) {
  return parse_run_config(checkpoint.config_json, "checkpoint config");
}

DacModel dac_from_checkpoint(const Checkpoint& checkpoint) {
  const RunConfig config = config_from_checkpoint(checkpoint);
  require_compatible(checkpoint, "dac", config.model.fingerprint());
  DacModel dac = make_dac(config);
  restore(dac.parameters(), checkpoint.params);
  return dac;
}

CfcModel cfc_from_checkpoint(const Checkpoint& checkpoint) {
  const RunConfig config = config_from_checkpoint(checkpoint);
  require_compatible(checkpoint, "cfc", config.model.fingerprint());
  CfcModel cfc = make_cfc(config);
  restore(cfc.parameters(), checkpoint.params);
  return cfc;
}

TrainResult train_dac(const RunConfig& config, const Dataset& dataset, const TrainOptions& options) {
  config.validate();
  if (dataset.size() == 0) throw InvalidArgument("train_dac: empty dataset");
  const auto& t = config.dac_train;
  const int frames = t.frames_per_clip > 0 ? t.frames_per_clip : config.n_local;

  DacModel dac = make_dac(config);
  const nn::ParamSet params = dac.parameters();
  optim::Adam opt = make_optimizer(t.optimizer, {{params, 1.0}});
  int step = 0;
  if (options.resume) {
    resume_from(*options.resume, "dac", config.model, params, opt);
    step = static_cast<int>(options.resume->step);
  }

  TrainResult result;
  const int stop = stop_step(options, t.steps);
  for (; step < stop; ++step) {
    const std::vector<int> batch = batch_for_step(config.seed, step, t.batch_clips, dataset.size());
    const std::uint64_t sseed = sample_seed(config.seed, step);
    const double weight = 1.0 / (static_cast<double>(batch.size()) * frames);
    double total = 0.0;
    for (int clip : batch) {
      const ClipSample s = sample_clip(dataset, clip, frames, 0, sseed);
      MultiScaleFeatures previous;
      for (int f = 0; f < s.n_local(); ++f) {
        DacFrameOutput out = dac.forward(s.local_frames.frames[f], s.sideinfo[f], f > 0 ? &previous : nullptr);
        DacLoss loss = dac_loss(out.decoded.logits, s.gt_masks.masks[f], &out.decoded.iou, config.model.dac);
        const double value = loss.total.item();
        if (!std::isfinite(value)) {
          std::ostringstream terms;
          terms << "focal=" << loss.focal << " dice=" << loss.dice << " l1=" << loss.iou_l1 << " ce=" << loss.ce
                << " tau=" << dac.neck().tdca().tau().value()(0, 0);
          abort_non_finite("train_dac", step, s.clip_id, s.local_indices[f], terms.str());
        }
        ag::backward(ag::scale(loss.total, weight));
        total += value * weight;
        if (config.model.dac.temporal_ema > 0.0) previous = detach(out.features);
      }
    }
    opt.set_lr(scheduled_lr(t.optimizer, step, t.steps));
    opt.step();
    opt.zero_grad();
    dac.after_step();
    result.losses.push_back(total);
    if (options.on_step) options.on_step(step, total);
    if (t.eval_every > 0 && (step + 1) % t.eval_every == 0) {
      result.reports.emplace_back(step + 1, detect_dataset(dac, dataset));
    }
  }
  result.checkpoint = make_checkpoint("dac", config, step, params, opt);
  return result;
}

TrainResult train_cfc(const RunConfig& config, const Dataset& dataset, const Checkpoint& dac_checkpoint,
                      const TrainOptions& options) {
  config.validate();
  if (dataset.size() == 0) throw InvalidArgument("train_cfc: empty dataset");
  const auto& t = config.cfc_train;

  DacModel dac = dac_from_checkpoint(dac_checkpoint);
  dac.parameters().set_trainable(false);
  if (dac.config().fingerprint() != config.model.fingerprint()) {
    throw Error("fingerprint-mismatch", "detector checkpoint was trained with a different model configuration");
  }

  struct Cached {
    std::vector<MultiScaleFeatures> features;
    MaskSequence masks;
  };
  std::vector<Cached> cache;
  for (const auto& rec : dataset.records()) {
    Cached c;
    MultiScaleFeatures previous;
    for (int f = 0; f < rec.corrupted.length(); ++f) {
      DacFrameOutput out = dac.forward(rec.corrupted.frames[f], rec.sideinfo[f], f > 0 ? &previous : nullptr);
      c.features.push_back(detach(out.refined));
      c.masks.masks.push_back(out.mask(config.model.dac.threshold));
      previous = detach(out.features);
    }
    cache.push_back(std::move(c));
  }

  CfcModel cfc = make_cfc(config);
  const nn::ParamSet params = cfc.parameters();
  std::vector<optim::ParamGroup> groups{{cfc.block_parameters(), 1.0},
                                        {cfc.completion_parameters(), t.completion_lr / t.optimizer.lr}};
  if (t.freeze_recovery_head) {
    cfc.head_parameters().set_trainable(false);
  } else {
    groups.push_back({cfc.head_parameters(), 1.0});
  }
  optim::Adam opt = make_optimizer(t.optimizer, groups);
  int step = 0;
  if (options.resume) {
    resume_from(*options.resume, "cfc", config.model, params, opt);
    step = static_cast<int>(options.resume->step);
  }

  TrainResult result;
  const int stop = stop_step(options, t.steps);
  for (; step < stop; ++step) {
    const std::vector<int> batch = batch_for_step(config.seed, step, t.batch_clips, dataset.size());
    const std::uint64_t sseed = sample_seed(config.seed, step);
    double total = 0.0;
    for (int clip : batch) {
      const ClipSample s = sample_clip(dataset, clip, config.n_local, config.n_nonlocal, sseed);
      const Cached& c = cache[static_cast<std::size_t>(clip)];
      const bool gt = t.mask_source == MaskSource::GroundTruth;
      CfcClipInput in;
      in.frames = s.local_frames.frames;
      for (int i : s.local_indices) {
        in.masks.push_back(gt ? dataset.record(clip).gt.masks[i] : c.masks.masks[i]);
        in.foundation.push_back(c.features[i]);
      }
      in.nonlocal_frames = s.nonlocal_frames.frames;
      for (int i : s.nonlocal_indices) {
        in.nonlocal_masks.push_back(gt ? dataset.record(clip).gt.masks[i] : c.masks.masks[i]);
      }
      CfcClipOutput out = cfc.forward(in);

      Var clip_loss;
      for (int f = 0; f < s.n_local(); ++f) {
        const Image& clean = s.clean_frames.frames[f];
        const Matrix region = s.gt_masks.masks[f].data.replicate(1, clean.channels());
        Var diff = ag::abs(ag::sub(out.predictions[f], ag::constant(clean.data)));
        Var masked = ag::scale(ag::sum(ag::mul(diff, ag::constant(region))), 1.0 / std::max(1.0, region.sum()));
        Var frame_loss = ag::add(ag::scale(masked, t.masked_l1_weight), ag::scale(ag::mean(diff), t.full_l1_weight));
        clip_loss = f == 0 ? frame_loss : ag::add(clip_loss, frame_loss);
      }
      clip_loss = ag::scale(clip_loss, 1.0 / (static_cast<double>(s.n_local()) * batch.size()));
      const double value = clip_loss.item();
      if (!std::isfinite(value)) abort_non_finite("train_cfc", step, s.clip_id, s.local_indices.front(), "l1");
      ag::backward(clip_loss);
      total += value;
    }
    opt.set_lr(scheduled_lr(t.optimizer, step, t.steps));
    opt.step();
    opt.zero_grad();
    result.losses.push_back(total);
    if (options.on_step) options.on_step(step, total);
  }
  result.checkpoint = make_checkpoint("cfc", config, step, params, opt);
  return result;
}

RecoveryResult recover_video(const DacModel& dac, const CfcModel& cfc, const VideoSequence& frames,
                             const std::vector<SideInfo>& info, const MaskSequence* masks, int n_local,
                             int n_nonlocal) {
  const int length = frames.length();
  if (length == 0) throw ShapeError("recover: empty video");
  if (static_cast<int>(info.size()) != length) throw ShapeError("recover: side info does not pair with frames");
  if (masks) require_paired(frames, *masks);
  if (n_local < 1 || n_nonlocal < 0) throw InvalidArgument("recover: need N_l >= 1 and N_nl >= 0");

  std::vector<MultiScaleFeatures> features;
  RecoveryResult result;
  result.masks.binary = true;
  MultiScaleFeatures previous;
  for (int f = 0; f < length; ++f) {
    DacFrameOutput out = dac.forward(frames.frames[f], info[f], f > 0 ? &previous : nullptr);
    features.push_back(detach(out.refined));
    result.masks.masks.push_back(masks ? masks->masks[f] : out.mask(dac.config().dac.threshold));
    previous = detach(out.features);
  }

  result.recovered.fps = frames.fps;
  result.recovered.frames.resize(static_cast<std::size_t>(length));
  std::vector<bool> done(static_cast<std::size_t>(length), false);
  const int window = std::min(n_local, length);
  for (int start = 0; start < length; start += window) {
    const int s0 = std::min(start, length - window);
    std::vector<int> rest;
    for (int i = 0; i < length; ++i) {
      if (i < s0 || i >= s0 + window) rest.push_back(i);
    }
    const int take = std::min<int>(n_nonlocal, static_cast<int>(rest.size()));
    CfcClipInput in;
    for (int i = s0; i < s0 + window; ++i) {
      in.frames.push_back(frames.frames[i]);
      in.masks.push_back(result.masks.masks[i]);
      in.foundation.push_back(features[i]);
    }
    for (int k = 0; k < take; ++k) {
      const int i = rest[static_cast<std::size_t>(k) * rest.size() / take];
      in.nonlocal_frames.push_back(frames.frames[i]);
      in.nonlocal_masks.push_back(result.masks.masks[i]);
    }
    CfcClipOutput out = cfc.forward(in);
    for (int k = 0; k < window; ++k) {
      const int i = s0 + k;
      if (!done[i]) {
        result.recovered.frames[i] = std::move(out.recovered[k]);
        done[i] = true;
      }
    }
  }
  return result;
}

}  // namespace bvr
