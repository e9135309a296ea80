// avm_slam: simulate, run, eval, all.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "avm/app/config.hpp"
#include "avm/app/eval.hpp"
#include "avm/app/pipeline.hpp"
#include "avm/errors.hpp"

namespace fs = std::filesystem;
using namespace avm;

namespace {

struct Options {
  std::string config;
  std::string dataset;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string world_template;
  bool realtime = false;
};

app::RunConfig effective_config(const Options& o) {
  app::RunConfig cfg = o.config.empty() ? app::RunConfig{} : app::load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.world_template.empty()) cfg.sim.world_template = o.world_template;
  if (!o.dataset.empty()) cfg.dataset = o.dataset;
  if (!o.out.empty()) cfg.output = o.out;
  if (o.realtime) cfg.realtime = true;
  cfg.validate();
  return cfg;
}

void log_line(const nlohmann::ordered_json& j, const std::string& out_dir) {
  std::cerr << j.dump() << "\n";
  if (out_dir.empty()) return;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  std::ofstream(fs::path(out_dir) / "errors.jsonl", std::ios::app) << j.dump() << "\n";
}

int exit_code(const std::string& kind) {
  if (kind == "config") return 2;
  if (kind == "schema" || kind == "input" || kind == "stream" || kind == "lookup") return 3;
  if (kind == "init_starvation") return 4;
  if (kind == "generation") return 5;
  return 1;
}

void cmd_simulate(const app::RunConfig& cfg, const fs::path& dir) {
  const auto sim = app::simulate(cfg);
  write_dataset(dir, sim.data);
  std::cout << "dataset: " << dir.string() << " (" << sim.data.frames.size() << " frames, "
            << sim.data.wheel.size() << " wheel, " << sim.data.imu.size() << " imu)\n";
}

void cmd_run(const app::RunConfig& cfg, const fs::path& dataset, const fs::path& out) {
  const Dataset d = read_dataset(dataset);
  const auto r = app::run_slam(d, cfg);
  app::write_run(out, r, cfg);
  std::cout << "run: " << out.string() << " (" << r.stats.keyframes << " keyframes, " << r.stats.submaps
            << " submaps, " << r.closures.size() << " loop closures)\n";
}

void cmd_eval(const fs::path& run_dir, const fs::path& dataset, const std::vector<std::string>& landmarks) {
  const auto rep = app::evaluate_run(run_dir, dataset, landmarks);
  const std::string json = app::report_json(rep);
  std::ofstream(run_dir / "report.json") << json;
  std::cout << json;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Semantic AVM SLAM: simulator, pipeline and evaluation"};
  cli.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sc) {
    sc->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sc->add_option("--out", o.out, "output directory");
    sc->add_option("--seed", seed, "random seed (overrides the config)");
    sc->add_option("--template", o.world_template, "grid-garage, loop-corridor or figure-eight");
    sc->add_option("--dataset", o.dataset, "dataset directory");
    sc->add_flag("--realtime", o.realtime, "pace frames at their timestamps");
  };
  auto* sim = cli.add_subcommand("simulate", "generate a dataset");
  auto* run = cli.add_subcommand("run", "run SLAM on a dataset");
  auto* ev = cli.add_subcommand("eval", "evaluate a run directory (--out) against a dataset");
  auto* all = cli.add_subcommand("all", "simulate, run and evaluate");
  for (auto* sc : {sim, run, ev, all}) add_common(sc);

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return cli.exit(e);
    nlohmann::ordered_json j{{"level", "error"}, {"kind", "usage"}, {"message", e.what()}};
    std::cerr << j.dump() << "\n";
    return 64;
  }

  std::string command = cli.get_subcommands().front()->get_name();
  for (auto* sc : {sim, run, ev, all}) {
    if (sc->count("--seed") > 0) o.seed = seed;
  }
  std::string out_dir = o.out;
  try {
    const app::RunConfig cfg = effective_config(o);
    out_dir = cfg.output;
    const fs::path out(cfg.output);
    if (command == "simulate") {
      cmd_simulate(cfg, out);
    } else if (command == "run") {
      if (cfg.dataset.empty()) throw InputError("run requires --dataset");
      cmd_run(cfg, cfg.dataset, out);
    } else if (command == "eval") {
      if (cfg.dataset.empty()) throw InputError("eval requires --dataset");
      cmd_eval(out, cfg.dataset, cfg.landmarks);
    } else {
      const fs::path dataset = cfg.dataset.empty() ? out / "dataset" : fs::path(cfg.dataset);
      if (cfg.dataset.empty()) cmd_simulate(cfg, dataset);
      cmd_run(cfg, dataset, out / "run");
      cmd_eval(out / "run", dataset, cfg.landmarks);
    }
  } catch (const Error& e) {
    nlohmann::ordered_json j{{"level", "error"}, {"command", command}, {"kind", e.kind()}, {"message", e.what()}};
    if (const auto* s = dynamic_cast<const SchemaError*>(&e)) {
      j["file"] = s->file();
      j["line"] = s->line();
    }
    log_line(j, out_dir);
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    log_line({{"level", "error"}, {"command", command}, {"kind", "internal"}, {"message", e.what()}}, out_dir);
    return 1;
  }
  return 0;
}
