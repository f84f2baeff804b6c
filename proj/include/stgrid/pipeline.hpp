#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>

namespace stgrid {

// Stage configuration, one JSON document per run. Every numeric default
// lives here; the stages themselves hard-code nothing.

struct EditorConfig {
  std::string type = "identity";  // identity | constant-shift | mock-stack
  double shift = 0.1;             // constant-shift: offset added to all tokens
  double step_gain = 0.0;         // constant-shift: extra offset per step index
  std::size_t depth = 2;          // mock-stack layer count
  std::size_t heads = 2;
  std::size_t text_len = 4;
  std::string weights;  // optional weight blob (sidecar at <path>.json); random when empty
};

struct FlowSourceConfig {
  std::string source = "zero";  // zero | files | estimate
  std::size_t patch = 7;        // block-matching window (estimate)
  std::size_t radius = 4;       // block-matching search range (estimate)
  std::string dir;              // flow file directory (files); default: manifest's
};

struct OptimizerStageConfig {
  std::size_t iterations = 2000;
  std::size_t gaussians = 20;
  double lr_geometry = 1e-2;
  double lr_color = 5e-3;
  double lr_deform = 1e-3;
  double lambda_tv = 1e-3;
  std::string loss = "l1";  // l1 | l2
  std::size_t view = 0;     // camera row the 2D scene is fitted against
};

struct PipelineConfig {
  std::string grid_manifest;
  std::string output_dir;
  std::string traversal = "multiview";  // multiview | monocular | tiled
  bool inherit = true;                  // token inheritance over overlaps
  bool replace = true;                  // flow-guided replacement on temporal steps
  std::optional<std::array<std::size_t, 2>> vital;  // default: first half of the stack
  EditorConfig editor;
  FlowSourceConfig flow;
  double fb_alpha = 0.01;
  double fb_beta = 0.5;
  std::size_t patch = 2;  // pixel <-> token patch size
  OptimizerStageConfig optimizer;
  std::string reference_manifest;  // evaluate: fidelity reference (psnr/ssim)
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0 = logical cores
  bool deterministic = false;
  bool check_overlap_equality = false;
  std::string token_dump_dir;

  std::size_t effective_workers() const;
};

PipelineConfig pipeline_config_from_json(const std::string& text);

// Parsed config plus the raw bytes, which are copied verbatim into the run's
// output directory (command-line overrides are applied to the struct only).
struct LoadedConfig {
  PipelineConfig config;
  std::string raw;
};

LoadedConfig load_pipeline_config(const std::string& path);

// Pipeline stages. Each writes its outputs plus a copy of its configuration
// into the target directory and throws Error subclasses on failure.
void cmd_synth(const std::string& spec_path, const std::string& out_dir);
void cmd_edit(const LoadedConfig& cfg);
void cmd_optimize(const LoadedConfig& cfg);
void cmd_render(const std::string& scene_path, std::size_t frames, std::size_t height,
                std::size_t width, const std::string& out_dir, std::size_t workers = 1);
void cmd_evaluate(const LoadedConfig& cfg);

}  // namespace stgrid
