#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stgrid/flow.hpp"
#include "stgrid/grid.hpp"

namespace stgrid {

// Synthetic multi-view clips with analytic flow. The scene is a flat world
// plane: view v samples it shifted horizontally by v * disparity, sprites
// ride rigid trajectories on top of a static value-noise background, so
// ground-truth flow and occlusion are exact by construction.

enum class SpriteKind { rectangle, blob };
enum class MotionKind { linear, sinusoidal };

struct Motion {
  MotionKind kind = MotionKind::linear;
  std::array<double, 2> velocity{0.0, 0.0};   // linear, px per frame
  std::array<double, 2> amplitude{0.0, 0.0};  // sinusoidal, px
  double period = 8.0;                        // sinusoidal, frames per cycle

  std::array<double, 2> offset_at(double t) const;
};

struct Sprite {
  SpriteKind kind = SpriteKind::rectangle;
  std::array<double, 2> center{0.0, 0.0};     // world position at t = 0
  std::array<double, 2> half_size{4.0, 4.0};  // rectangle half extents
  double radius = 4.0;                        // blob support radius
  std::array<double, 3> color{0.8, 0.3, 0.3};
  Motion motion;
};

struct SceneSpec {
  std::size_t views = 1;
  std::size_t times = 2;
  std::size_t height = 32;
  std::size_t width = 32;
  double disparity = 0.0;       // horizontal world shift per view step, px
  double background_cell = 8.0; // value-noise lattice pitch, px
  std::uint64_t seed = 0;
  std::vector<Sprite> sprites;
};

void validate_spec(const SceneSpec& spec);

// Parses the JSON scene description used by the synth command. Unknown keys
// are rejected so typos fail loudly.
SceneSpec scene_spec_from_json(const std::string& text);

struct SynthResult {
  CameraTimeGrid grid;
  // Indexed [v][t-1] for t = 1..T-1: forward flow maps frame t back to t-1,
  // backward flow maps t-1 forward to t. Pixel resolution.
  std::vector<std::vector<FlowField>> flow_fwd;
  std::vector<std::vector<FlowField>> flow_bwd;
  // Visibility of the forward warp source: 1 where every bilinear support
  // pixel of (p + flow_fwd(p)) in frame t-1 shows the same object as p does
  // in frame t, 0 where occlusion or the frame border breaks that.
  std::vector<std::vector<ValidityMask>> valid;
};

SynthResult generate(const SceneSpec& spec);

// Writes frames (PPM), the grid manifest, and per-pair flow/mask files
// (flow_v{v}_t{t}_fwd.stfl, flow_v{v}_t{t}_bwd.stfl, mask_v{v}_t{t}.stmk,
// t = 1..T-1) into dir; returns the manifest path.
std::string save_synth(const SynthResult& result, const std::string& dir);

}  // namespace stgrid
