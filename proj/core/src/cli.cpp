#include "bvr/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <string_view>
#include <vector>

#include "CLI11.hpp"
#include "bvr/config.hpp"
#include "bvr/error.hpp"
#include "bvr/evaluate.hpp"
#include "bvr/image_io.hpp"
#include "bvr/training.hpp"
#include "json.hpp"

namespace bvr {

namespace {

namespace fs = std::filesystem;

struct ConfigFlags {
  std::string config;
  std::string preset;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "JSON run configuration");
    cmd->add_option("--preset", preset, "named preset: default, overfit, paper_scale");
    cmd->add_option("--set", overrides, "override a config field, e.g. --set dac_train.steps=50");
  }

  bool given() const { return !config.empty() || !preset.empty(); }

  RunConfig resolve(const std::optional<RunConfig>& fallback = std::nullopt) const {
    if (!config.empty() && !preset.empty()) throw InvalidArgument("--config and --preset are mutually exclusive");
    RunConfig c = !config.empty() ? load_run_config(config)
                  : !preset.empty() ? bvr::preset(preset)
                  : fallback ? *fallback
                             : bvr::preset("default");
    const std::vector<std::string_view> views(overrides.begin(), overrides.end());
    apply_overrides(c, views);
    return c;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

Checkpoint load_required(const std::string& path, const char* flag) {
  if (path.empty()) throw Error("missing-checkpoint", std::string(flag) + " is required");
  return load_checkpoint(path);
}

std::string curve_json(const TrainResult& r, int first_step) {
  nlohmann::json j;
  j["first_step"] = first_step;
  j["losses"] = r.losses;
  nlohmann::json reports = nlohmann::json::array();
  for (const auto& [step, rep] : r.reports) {
    nlohmann::json e = nlohmann::json::parse(to_json(rep));
    e["step"] = step;
    reports.push_back(e);
  }
  j["reports"] = reports;
  return j.dump(2) + "\n";
}

void frozen(const nn::ParamSet& params) { params.set_trainable(false); }

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Blind video recovery: corruption detection and feature completion"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string data_dir, out_path, dac_path, cfc_path, resume_path, log_path, mode = "both";
  int steps = -1, stop_at = -1;
  bool table = false;
  ConfigFlags cfg;

  auto* sim = app.add_subcommand("simulate", "synthesize a corrupted dataset with ground truth and side info");
  sim->add_option("--seed", seed, "run seed")->required();
  sim->add_option("--out", out_path, "dataset directory")->required();
  cfg.attach(sim);

  auto* tdac = app.add_subcommand("train-dac", "train the corruption detector");
  tdac->add_option("--seed", seed, "run seed")->required();
  tdac->add_option("--data", data_dir, "dataset directory")->required();
  tdac->add_option("--out", out_path, "checkpoint file to write")->required();
  tdac->add_option("--steps", steps, "override dac_train.steps");
  tdac->add_option("--resume", resume_path, "continue from a checkpoint");
  tdac->add_option("--stop-at", stop_at, "stop after this many total steps");
  tdac->add_option("--log", log_path, "write the loss curve as JSON");
  cfg.attach(tdac);

  auto* tcfc = app.add_subcommand("train-cfc", "train feature completion on top of a frozen detector");
  tcfc->add_option("--seed", seed, "run seed")->required();
  tcfc->add_option("--data", data_dir, "dataset directory")->required();
  tcfc->add_option("--dac", dac_path, "detector checkpoint")->required();
  tcfc->add_option("--out", out_path, "checkpoint file to write")->required();
  tcfc->add_option("--steps", steps, "override cfc_train.steps");
  tcfc->add_option("--resume", resume_path, "continue from a checkpoint");
  tcfc->add_option("--stop-at", stop_at, "stop after this many total steps");
  tcfc->add_option("--log", log_path, "write the loss curve as JSON");
  cfg.attach(tcfc);

  auto* rec = app.add_subcommand("recover", "recover every clip of a dataset");
  rec->add_option("--data", data_dir, "dataset directory")->required();
  rec->add_option("--dac", dac_path, "detector checkpoint");
  rec->add_option("--cfc", cfc_path, "completion checkpoint");
  rec->add_option("--out", out_path, "output directory")->required();
  std::string rec_mode = "blind";
  rec->add_option("--mode", rec_mode, "mask source: blind (detector) or oracle (ground truth)");

  auto* ev = app.add_subcommand("evaluate", "score recovery and detection against ground truth");
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--mode", mode, "oracle, blind or both");
  ev->add_option("--dac", dac_path, "detector checkpoint (needed for blind mode and for --cfc)");
  ev->add_option("--cfc", cfc_path, "completion checkpoint; omitted means identity recovery");
  ev->add_option("--out", out_path, "write the JSON report here");
  ev->add_flag("--table", table, "print the aligned text table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (sim->parsed()) {
      RunConfig c = cfg.resolve();
      c.stage = Stage::Simulate;
      c.seed = seed;
      SynthesisConfig s = c.data;
      s.seed = seed;
      Dataset::synthesize(s).save(out_path);
      out << "wrote " << s.clips << " clips to " << out_path << "\n";
    } else if (tdac->parsed()) {
      RunConfig c = cfg.resolve();
      c.stage = Stage::TrainDac;
      c.seed = seed;
      if (steps >= 0) c.dac_train.steps = steps;
      c.validate();
      const Dataset ds = Dataset::load(data_dir);
      std::optional<Checkpoint> resume;
      if (!resume_path.empty()) resume = load_checkpoint(resume_path);
      TrainOptions opt;
      opt.resume = resume ? &*resume : nullptr;
      opt.stop_at = stop_at;
      TrainResult r = train_dac(c, ds, opt);
      save_checkpoint(out_path, r.checkpoint);
      if (!log_path.empty()) write_text(log_path, curve_json(r, resume ? static_cast<int>(resume->step) : 0));
      out << "train-dac: step " << r.checkpoint.step;
      if (!r.losses.empty()) out << " loss " << r.losses.back();
      out << " -> " << out_path << "\n";
    } else if (tcfc->parsed()) {
      const Checkpoint dac = load_checkpoint(dac_path);
      RunConfig c = cfg.resolve(config_from_checkpoint(dac));
      c.stage = Stage::TrainCfc;
      c.seed = seed;
      if (steps >= 0) c.cfc_train.steps = steps;
      c.validate();
      const Dataset ds = Dataset::load(data_dir);
      std::optional<Checkpoint> resume;
      if (!resume_path.empty()) resume = load_checkpoint(resume_path);
      TrainOptions opt;
      opt.resume = resume ? &*resume : nullptr;
      opt.stop_at = stop_at;
      TrainResult r = train_cfc(c, ds, dac, opt);
      save_checkpoint(out_path, r.checkpoint);
      if (!log_path.empty()) write_text(log_path, curve_json(r, resume ? static_cast<int>(resume->step) : 0));
      out << "train-cfc: step " << r.checkpoint.step;
      if (!r.losses.empty()) out << " loss " << r.losses.back();
      out << " -> " << out_path << "\n";
    } else if (rec->parsed()) {
      const EvalMode m = parse_eval_mode(rec_mode);
      if (m == EvalMode::Both) throw InvalidArgument("recover --mode must be blind or oracle");
      const DacModel dac = dac_from_checkpoint(load_required(dac_path, "--dac"));
      const CfcModel cfc = cfc_from_checkpoint(load_required(cfc_path, "--cfc"));
      frozen(dac.parameters());
      frozen(cfc.parameters());
      const RunConfig c = config_from_checkpoint(load_checkpoint(cfc_path));
      const Dataset ds = Dataset::load(data_dir);
      nlohmann::json report = nlohmann::json::array();
      for (const auto& r : ds.records()) {
        RecoveryResult res = recover_video(dac, cfc, r.corrupted, r.sideinfo, m == EvalMode::Oracle ? &r.gt : nullptr,
                                           c.n_local, c.n_nonlocal);
        const fs::path dir = fs::path(out_path) / "clips" / r.id;
        save_video(dir / "recovered", res.recovered);
        save_masks(dir / "masks", res.masks);
        nlohmann::json row;
        row["clip"] = r.id;
        row["masked"] = nlohmann::json::parse(to_json(masked_sequence_quality(res.recovered, r.clean, r.gt.masks)));
        row["full"] = nlohmann::json::parse(to_json(sequence_quality(res.recovered, r.clean)));
        report.push_back(row);
      }
      write_text(fs::path(out_path) / "report.json", report.dump(2) + "\n");
      out << "recovered " << ds.size() << " clips to " << out_path << "\n";
    } else if (ev->parsed()) {
      const EvalMode m = parse_eval_mode(mode);
      const Dataset ds = Dataset::load(data_dir);
      std::optional<DacModel> dac;
      std::optional<CfcModel> cfc;
      if (!dac_path.empty()) dac.emplace(dac_from_checkpoint(load_checkpoint(dac_path)));
      if (!cfc_path.empty()) {
        if (!dac) throw Error("missing-checkpoint", "--cfc needs --dac for the refined features");
        cfc.emplace(cfc_from_checkpoint(load_checkpoint(cfc_path)));
        frozen(cfc->parameters());
      }
      if (dac) frozen(dac->parameters());
      if (m != EvalMode::Oracle && !dac) throw Error("missing-checkpoint", "blind evaluation needs --dac");
      int n_local = 5;
      int n_nonlocal = 3;
      if (!cfc_path.empty()) {
        const RunConfig c = config_from_checkpoint(load_checkpoint(cfc_path));
        n_local = c.n_local;
        n_nonlocal = c.n_nonlocal;
      }
      const IdentityRecoverer identity;
      std::optional<ModelRecoverer> model;
      if (cfc) model.emplace(*dac, *cfc, n_local, n_nonlocal);
      const Recoverer& recoverer = model ? static_cast<const Recoverer&>(*model) : identity;
      const EvaluationReport report = evaluate(ds, m, recoverer, dac ? &*dac : nullptr);
      if (!out_path.empty()) write_text(out_path, report.to_json());
      if (table || out_path.empty()) out << report.to_table();
    }
  } catch (const Error& e) {
    err << "error: " << e.reason() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace bvr
