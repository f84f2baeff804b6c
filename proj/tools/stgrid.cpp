#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <optional>
#include <string>

#include "stgrid/errors.hpp"
#include "stgrid/pipeline.hpp"

namespace {

using nlohmann::json;

void print_error(const std::string& name, const std::string& message) {
  json j{{"error", name}, {"message", message}};
  std::fprintf(stderr, "%s\n", j.dump().c_str());
}

struct GlobalOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  bool deterministic = false;

  void apply(stgrid::PipelineConfig& cfg) const {
    if (seed) cfg.seed = *seed;
    if (workers) cfg.workers = *workers;
    if (deterministic) cfg.deterministic = true;
  }
};

stgrid::LoadedConfig load_with_overrides(const std::string& path, const GlobalOverrides& g) {
  stgrid::LoadedConfig lc = stgrid::load_pipeline_config(path);
  g.apply(lc.config);
  return lc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stgrid: camera-time grid editing and dynamic scene fitting"};
  app.require_subcommand(1);

  GlobalOverrides g;
  std::uint64_t seed_arg = 0;
  std::size_t workers_arg = 0;
  auto* seed_opt = app.add_option("--seed", seed_arg, "override the config seed");
  auto* workers_opt = app.add_option("--workers", workers_arg, "override the worker count");
  app.add_flag("--deterministic", g.deterministic,
               "force single-threaded, bit-reproducible execution");

  std::string spec_path, config_path, scene_path, out_dir;
  std::size_t frames = 4, height = 32, width = 32, render_workers = 1;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic camera-time grid");
  synth->add_option("--spec", spec_path, "scene spec JSON")->required();
  synth->add_option("--out", out_dir, "output directory")->required();

  CLI::App* edit = app.add_subcommand("edit", "propagate an edit over the grid");
  edit->add_option("--config", config_path, "pipeline config JSON")->required();

  CLI::App* optimize = app.add_subcommand("optimize", "fit a deformable 2D Gaussian scene");
  optimize->add_option("--config", config_path, "pipeline config JSON")->required();

  CLI::App* render = app.add_subcommand("render", "render a fitted scene over time");
  render->add_option("--scene", scene_path, "scene JSON")->required();
  render->add_option("--frames", frames, "frame count (times sample [0, 1])");
  render->add_option("--height", height, "output height");
  render->add_option("--width", width, "output width");
  render->add_option("--out", out_dir, "output directory")->required();
  render->add_option("--workers", render_workers, "render worker threads");

  CLI::App* evaluate = app.add_subcommand("evaluate", "compute consistency/fidelity metrics");
  evaluate->add_option("--config", config_path, "pipeline config JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    print_error("ArgumentError", e.what());
    return 2;
  }

  if (*seed_opt) g.seed = seed_arg;
  if (*workers_opt) g.workers = workers_arg;

  try {
    if (synth->parsed()) {
      stgrid::cmd_synth(spec_path, out_dir);
    } else if (edit->parsed()) {
      stgrid::cmd_edit(load_with_overrides(config_path, g));
    } else if (optimize->parsed()) {
      stgrid::cmd_optimize(load_with_overrides(config_path, g));
    } else if (render->parsed()) {
      if (g.workers) render_workers = *g.workers;
      if (g.deterministic) render_workers = 1;
      stgrid::cmd_render(scene_path, frames, height, width, out_dir, render_workers);
    } else if (evaluate->parsed()) {
      stgrid::cmd_evaluate(load_with_overrides(config_path, g));
    }
  } catch (const stgrid::Error& e) {
    print_error(e.name(), e.what());
    return e.kind() == stgrid::ErrorKind::validation ? 2 : 3;
  } catch (const std::exception& e) {
    print_error("Unhandled", e.what());
    return 3;
  }
  return 0;
}
