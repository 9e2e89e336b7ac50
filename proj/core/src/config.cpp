#include "bvr/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "bvr/error.hpp"
#include "json.hpp"

namespace bvr {

using nlohmann::json;

Stage parse_stage(std::string_view text) {
  if (text == "simulate") return Stage::Simulate;
  if (text == "train_dac") return Stage::TrainDac;
  if (text == "train_cfc") return Stage::TrainCfc;
  if (text == "recover") return Stage::Recover;
  if (text == "evaluate") return Stage::Evaluate;
  throw InvalidArgument("unknown stage '" + std::string(text) + "'");
}

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::Simulate: return "simulate";
    case Stage::TrainDac: return "train_dac";
    case Stage::TrainCfc: return "train_cfc";
    case Stage::Recover: return "recover";
    case Stage::Evaluate: return "evaluate";
  }
  return "?";
}

namespace {

const char* schedule_name(LrSchedule s) { return s == LrSchedule::Cosine ? "cosine" : "constant"; }
const char* mask_source_name(MaskSource s) { return s == MaskSource::GroundTruth ? "gt" : "dac"; }

// Strict object reader: every key must be consumed.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(at(key), "wrong type");
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string at(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) fail(at(item.key().c_str()), "unknown key");
    }
  }

  [[noreturn]] static void fail(const std::string& where, const std::string& what) {
    throw InvalidArgument("config: " + where + ": " + what);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json optimizer_json(const OptimizerSettings& o) {
  return {{"name", o.name},
          {"lr", o.lr},
          {"beta1", o.beta1},
          {"beta2", o.beta2},
          {"eps", o.eps},
          {"weight_decay", o.weight_decay},
          {"schedule", schedule_name(o.schedule)},
          {"warmup_steps", o.warmup_steps}};
}

void read_optimizer(const json& j, const std::string& path, OptimizerSettings& o) {
  Reader r(j, path);
  r.get("name", o.name);
  r.get("lr", o.lr);
  r.get("beta1", o.beta1);
  r.get("beta2", o.beta2);
  r.get("eps", o.eps);
  r.get("weight_decay", o.weight_decay);
  std::string schedule = schedule_name(o.schedule);
  r.get("schedule", schedule);
  if (schedule == "constant") {
    o.schedule = LrSchedule::Constant;
  } else if (schedule == "cosine") {
    o.schedule = LrSchedule::Cosine;
  } else {
    Reader::fail(r.at("schedule"), "expected \"constant\" or \"cosine\"");
  }
  r.get("warmup_steps", o.warmup_steps);
  r.finish();
}

json to_json(const RunConfig& c) {
  const auto& m = c.model;
  json kinds = json::array();
  for (auto k : c.data.corruption.kinds) kinds.push_back(to_string(k));
  return {
      {"schema_version", c.schema_version},
      {"stage", to_string(c.stage)},
      {"seed", c.seed},
      {"n_local", c.n_local},
      {"n_nonlocal", c.n_nonlocal},
      {"model",
       {{"height", m.height},
        {"width", m.width},
        {"encoder",
         {{"levels", m.encoder.levels},
          {"channels", m.encoder.channels},
          {"base_stride", m.encoder.base_stride},
          {"patch", m.encoder.patch},
          {"token_dim", m.encoder.token_dim},
          {"adapt_hidden", m.encoder.adapt_hidden},
          {"positional", m.encoder.positional},
          {"global_size", m.encoder.global_size},
          {"global_channels", m.encoder.global_channels},
          {"global_dim", m.encoder.global_dim}}},
        {"dac",
         {{"prompts", m.dac.prompts},
          {"tau_init", m.dac.tau_init},
          {"tau_min", m.dac.tau_min},
          {"use_mv_tokens", m.dac.use_mv_tokens},
          {"use_pm_token", m.dac.use_pm_token},
          {"iou_head", m.dac.iou_head},
          {"decoder_dim", m.dac.decoder_dim},
          {"temporal_ema", m.dac.temporal_ema},
          {"eta", m.dac.eta},
          {"v_max", m.dac.v_max},
          {"threshold", m.dac.threshold},
          {"w_focal", m.dac.w_focal},
          {"w_dice", m.dac.w_dice},
          {"w_l1", m.dac.w_l1},
          {"w_ce", m.dac.w_ce},
          {"focal_alpha", m.dac.focal_alpha},
          {"focal_gamma", m.dac.focal_gamma},
          {"dice_smooth", m.dac.dice_smooth}}},
        {"cfc",
         {{"channels", m.cfc.channels},
          {"experts", m.cfc.experts},
          {"prompts", m.cfc.prompts},
          {"prompt_dim", m.cfc.prompt_dim},
          {"adapt_dim", m.cfc.adapt_dim},
          {"voter_hidden", m.cfc.voter_hidden},
          {"rank_divisor", m.cfc.rank_divisor},
          {"channel_token_dim", m.cfc.channel_token_dim},
          {"head_channels", m.cfc.head_channels},
          {"per_frame_gate", m.cfc.per_frame_gate}}}}},
      {"data",
       {{"clips", c.data.clips},
        {"frames", c.data.frames},
        {"height", c.data.height},
        {"width", c.data.width},
        {"fps", c.data.fps},
        {"corruption",
         {{"kinds", kinds},
          {"area_fraction", c.data.corruption.area_fraction},
          {"residual_retention", c.data.corruption.residual_retention},
          {"horizontal_stripes", c.data.corruption.horizontal_stripes},
          {"macroblock", c.data.corruption.macroblock}}}}},
      {"dac_train",
       {{"steps", c.dac_train.steps},
        {"batch_clips", c.dac_train.batch_clips},
        {"frames_per_clip", c.dac_train.frames_per_clip},
        {"optimizer", optimizer_json(c.dac_train.optimizer)},
        {"eval_every", c.dac_train.eval_every}}},
      {"cfc_train",
       {{"steps", c.cfc_train.steps},
        {"batch_clips", c.cfc_train.batch_clips},
        {"optimizer", optimizer_json(c.cfc_train.optimizer)},
        {"completion_lr", c.cfc_train.completion_lr},
        {"freeze_recovery_head", c.cfc_train.freeze_recovery_head},
        {"mask_source", mask_source_name(c.cfc_train.mask_source)},
        {"masked_l1_weight", c.cfc_train.masked_l1_weight},
        {"full_l1_weight", c.cfc_train.full_l1_weight}}},
  };
}

RunConfig from_json(const json& j) {
  RunConfig c;
  Reader root(j, "");
  root.get("schema_version", c.schema_version);
  if (c.schema_version != kConfigSchemaVersion) {
    Reader::fail("schema_version", "unsupported version " + std::to_string(c.schema_version));
  }
  std::string stage = to_string(c.stage);
  root.get("stage", stage);
  try {
    c.stage = parse_stage(stage);
  } catch (const InvalidArgument&) {
    Reader::fail("stage", "unknown stage '" + stage + "'");
  }
  root.get("seed", c.seed);
  root.get("n_local", c.n_local);
  root.get("n_nonlocal", c.n_nonlocal);

  if (const json* mj = root.child("model")) {
    auto& m = c.model;
    Reader r(*mj, "model");
    r.get("height", m.height);
    r.get("width", m.width);
    if (const json* ej = r.child("encoder")) {
      Reader e(*ej, "model.encoder");
      e.get("levels", m.encoder.levels);
      e.get("channels", m.encoder.channels);
      e.get("base_stride", m.encoder.base_stride);
      e.get("patch", m.encoder.patch);
      e.get("token_dim", m.encoder.token_dim);
      e.get("adapt_hidden", m.encoder.adapt_hidden);
      e.get("positional", m.encoder.positional);
      e.get("global_size", m.encoder.global_size);
      e.get("global_channels", m.encoder.global_channels);
      e.get("global_dim", m.encoder.global_dim);
      e.finish();
    }
    if (const json* dj = r.child("dac")) {
      Reader d(*dj, "model.dac");
      d.get("prompts", m.dac.prompts);
      d.get("tau_init", m.dac.tau_init);
      d.get("tau_min", m.dac.tau_min);
      d.get("use_mv_tokens", m.dac.use_mv_tokens);
      d.get("use_pm_token", m.dac.use_pm_token);
      d.get("iou_head", m.dac.iou_head);
      d.get("decoder_dim", m.dac.decoder_dim);
      d.get("temporal_ema", m.dac.temporal_ema);
      d.get("eta", m.dac.eta);
      if (d.child("v_max") && (*dj)["v_max"].is_string()) {
        if ((*dj)["v_max"] != "inf") Reader::fail("model.dac.v_max", "expected a number or \"inf\"");
        m.dac.v_max = std::numeric_limits<double>::infinity();
      } else {
        d.get("v_max", m.dac.v_max);
      }
      d.get("threshold", m.dac.threshold);
      d.get("w_focal", m.dac.w_focal);
      d.get("w_dice", m.dac.w_dice);
      d.get("w_l1", m.dac.w_l1);
      d.get("w_ce", m.dac.w_ce);
      d.get("focal_alpha", m.dac.focal_alpha);
      d.get("focal_gamma", m.dac.focal_gamma);
      d.get("dice_smooth", m.dac.dice_smooth);
      d.finish();
    }
    if (const json* cj = r.child("cfc")) {
      Reader f(*cj, "model.cfc");
      f.get("channels", m.cfc.channels);
      f.get("experts", m.cfc.experts);
      f.get("prompts", m.cfc.prompts);
      f.get("prompt_dim", m.cfc.prompt_dim);
      f.get("adapt_dim", m.cfc.adapt_dim);
      f.get("voter_hidden", m.cfc.voter_hidden);
      f.get("rank_divisor", m.cfc.rank_divisor);
      f.get("channel_token_dim", m.cfc.channel_token_dim);
      f.get("head_channels", m.cfc.head_channels);
      f.get("per_frame_gate", m.cfc.per_frame_gate);
      f.finish();
    }
    r.finish();
  }

  if (const json* dj = root.child("data")) {
    Reader r(*dj, "data");
    r.get("clips", c.data.clips);
    r.get("frames", c.data.frames);
    r.get("height", c.data.height);
    r.get("width", c.data.width);
    r.get("fps", c.data.fps);
    if (const json* kj = r.child("corruption")) {
      auto& k = c.data.corruption;
      Reader cr(*kj, "data.corruption");
      std::vector<std::string> kinds;
      for (auto kind : k.kinds) kinds.emplace_back(to_string(kind));
      cr.get("kinds", kinds);
      k.kinds.clear();
      for (const auto& name : kinds) {
        try {
          k.kinds.push_back(parse_corruption_kind(name));
        } catch (const InvalidArgument&) {
          Reader::fail("data.corruption.kinds", "unknown kind '" + name + "'");
        }
      }
      cr.get("area_fraction", k.area_fraction);
      cr.get("residual_retention", k.residual_retention);
      cr.get("horizontal_stripes", k.horizontal_stripes);
      cr.get("macroblock", k.macroblock);
      cr.finish();
    }
    r.finish();
  }

  if (const json* tj = root.child("dac_train")) {
    Reader r(*tj, "dac_train");
    r.get("steps", c.dac_train.steps);
    r.get("batch_clips", c.dac_train.batch_clips);
    r.get("frames_per_clip", c.dac_train.frames_per_clip);
    if (const json* oj = r.child("optimizer")) read_optimizer(*oj, "dac_train.optimizer", c.dac_train.optimizer);
    r.get("eval_every", c.dac_train.eval_every);
    r.finish();
  }
  if (const json* tj = root.child("cfc_train")) {
    Reader r(*tj, "cfc_train");
    r.get("steps", c.cfc_train.steps);
    r.get("batch_clips", c.cfc_train.batch_clips);
    if (const json* oj = r.child("optimizer")) read_optimizer(*oj, "cfc_train.optimizer", c.cfc_train.optimizer);
    r.get("completion_lr", c.cfc_train.completion_lr);
    r.get("freeze_recovery_head", c.cfc_train.freeze_recovery_head);
    std::string source = mask_source_name(c.cfc_train.mask_source);
    r.get("mask_source", source);
    if (source == "dac") {
      c.cfc_train.mask_source = MaskSource::Detector;
    } else if (source == "gt") {
      c.cfc_train.mask_source = MaskSource::GroundTruth;
    } else {
      Reader::fail("cfc_train.mask_source", "expected \"dac\" or \"gt\"");
    }
    r.get("masked_l1_weight", c.cfc_train.masked_l1_weight);
    r.get("full_l1_weight", c.cfc_train.full_l1_weight);
    r.finish();
  }
  root.finish();
  c.validate();
  return c;
}

void check_optimizer(const OptimizerSettings& o, const std::string& where) {
  if (o.name != "adam" && o.name != "adamw") Reader::fail(where + ".name", "expected \"adam\" or \"adamw\"");
  if (!(o.lr > 0.0)) Reader::fail(where + ".lr", "must be positive");
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0)) {
    Reader::fail(where, "betas must lie in [0, 1)");
  }
  if (!(o.eps > 0.0) || o.weight_decay < 0.0 || o.warmup_steps < 0) Reader::fail(where, "invalid optimizer setting");
}

}  // namespace

void RunConfig::validate() const {
  if (n_local < 1) Reader::fail("n_local", "must be >= 1");
  if (n_nonlocal < 0) Reader::fail("n_nonlocal", "must be >= 0");
  try {
    model.validate();
  } catch (const InvalidArgument& e) {
    Reader::fail("model", e.what());
  }
  if (data.clips < 1 || data.frames < 1) Reader::fail("data", "clips and frames must be >= 1");
  if (data.height != model.height || data.width != model.width) {
    Reader::fail("data", "extent must equal the model extent");
  }
  try {
    data.corruption.validate();
  } catch (const InvalidArgument& e) {
    Reader::fail("data.corruption", e.what());
  }
  if (dac_train.steps < 0 || dac_train.batch_clips < 1 || dac_train.frames_per_clip < 0 || dac_train.eval_every < 0) {
    Reader::fail("dac_train", "steps, batch_clips, frames_per_clip and eval_every must be non-negative");
  }
  check_optimizer(dac_train.optimizer, "dac_train.optimizer");
  if (cfc_train.steps < 0 || cfc_train.batch_clips < 1) Reader::fail("cfc_train", "invalid steps or batch_clips");
  check_optimizer(cfc_train.optimizer, "cfc_train.optimizer");
  if (!(cfc_train.completion_lr > 0.0)) Reader::fail("cfc_train.completion_lr", "must be positive");
  if (cfc_train.masked_l1_weight < 0.0 || cfc_train.full_l1_weight < 0.0) {
    Reader::fail("cfc_train", "loss weights must be non-negative");
  }
}

RunConfig preset(std::string_view name) {
  RunConfig c;
  if (name == "default") return c;
  if (name == "overfit") {
    c.dac_train.batch_clips = 8;
    c.dac_train.frames_per_clip = 8;
    c.dac_train.optimizer = {"adamw", 1e-3, 0.9, 0.999, 1e-8, 0.0, LrSchedule::Cosine, 10};
    c.cfc_train.batch_clips = 8;
    c.cfc_train.optimizer = {"adam", 1e-3, 0.9, 0.999, 1e-8, 0.0, LrSchedule::Cosine, 10};
    c.cfc_train.completion_lr = 1e-4;
    return c;
  }
  if (name == "paper_scale") {
    c.model.height = c.data.height = 240;
    c.model.width = c.data.width = 432;
    c.data.clips = 64;
    c.data.frames = 32;
    c.dac_train.steps = 50000;
    c.dac_train.batch_clips = 2;
    c.cfc_train.steps = 100000;
    c.cfc_train.batch_clips = 4;
    c.cfc_train.freeze_recovery_head = true;
    return c;
  }
  throw InvalidArgument("unknown preset '" + std::string(name) + "'");
}

std::vector<std::string> preset_names() { return {"default", "overfit", "paper_scale"}; }

RunConfig parse_run_config(std::string_view json_text, const std::string& origin) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw FormatError(origin + ": malformed JSON (" + e.what() + ")");
  }
  try {
    return from_json(j);
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(origin + ": " + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path.string());
}

std::string format_run_config(const RunConfig& config) {
  json j = to_json(config);
  if (std::isinf(config.model.dac.v_max)) j["model"]["dac"]["v_max"] = "inf";
  return j.dump(2) + "\n";
}

namespace {

void set_dotted(json& j, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw InvalidArgument("override '" + std::string(assignment) + "' is not key=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &j;
  std::string::size_type start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) throw InvalidArgument("config: " + key + ": unknown key");
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
}

}  // namespace

void apply_override(RunConfig& config, std::string_view assignment) {
  const std::string_view one[] = {assignment};
  apply_overrides(config, one);
}

void apply_overrides(RunConfig& config, std::span<const std::string_view> assignments) {
  json j = json::parse(format_run_config(config));
  for (const auto a : assignments) set_dotted(j, a);
  config = from_json(j);
}

}  // namespace bvr
