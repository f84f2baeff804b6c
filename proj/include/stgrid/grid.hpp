#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <tuple>
#include <vector>

#include "stgrid/frame.hpp"

namespace stgrid {

struct GridCoord {
  std::size_t v = 0;
  std::size_t t = 0;

  friend bool operator==(const GridCoord&, const GridCoord&) = default;
  friend auto operator<=>(const GridCoord&, const GridCoord&) = default;
};

// V x T frame lattice; rows are viewpoints, columns are time steps.
struct CameraTimeGrid {
  std::size_t views = 0;
  std::size_t times = 0;
  std::vector<Frame> frames;  // index v * times + t

  Frame& frame(std::size_t v, std::size_t t) { return frames[v * times + t]; }
  const Frame& frame(std::size_t v, std::size_t t) const { return frames[v * times + t]; }
  Frame& frame(GridCoord c) { return frame(c.v, c.t); }
  const Frame& frame(GridCoord c) const { return frame(c.v, c.t); }
};

// Assembles a grid from (v, t, frame) tagged entries. Every cell must be
// present exactly once and all frames must share one resolution.
CameraTimeGrid build_grid(std::vector<std::tuple<std::size_t, std::size_t, Frame>> tagged,
                          std::size_t views, std::size_t times);

// 2x2 camera-time window. Member order is fixed and every consumer
// (attention concatenation, inheritance, replacement) relies on it:
// [(v,t), (v+1,t), (v,t+1), (v+1,t+1)].
struct SubGrid {
  GridCoord anchor;
  std::array<GridCoord, 4> members;
};

SubGrid make_subgrid(const CameraTimeGrid& grid, std::size_t v, std::size_t t);

// Monocular window of four consecutive frames [t, t+1, t+2, t+3].
struct TemporalSubGrid {
  std::size_t anchor = 0;
  std::array<std::size_t, 4> members{};
};

TemporalSubGrid make_temporal_subgrid(std::size_t times, std::size_t t);

// Temporal steps advance along the time axis and receive flow-guided
// replacement; cross-view steps only align a new camera row.
enum class StepKind { cross_view, temporal };

// One traversal step. `members` keeps sub-grid order; `overlap` lists the
// members already produced by earlier steps (in member order); `replacement`
// lists the rightmost members that are new at this step and receive
// flow-guided tokens (temporal steps only). Overlap and replacement are
// precomputed here so propagation never re-derives grid arithmetic.
struct PlanStep {
  GridCoord anchor;
  std::array<GridCoord, 4> members{};
  StepKind kind = StepKind::cross_view;
  std::vector<GridCoord> overlap;
  std::vector<GridCoord> replacement;
};

struct TraversalPlan {
  std::size_t views = 0;
  std::size_t times = 0;
  std::vector<PlanStep> steps;

  std::size_t cell_index(GridCoord c) const { return c.v * times + c.t; }

  // Step index that first (resp. last) contains each cell; cells never
  // visited hold steps.size(). Derived on demand from the step list.
  std::vector<std::size_t> first_use() const;
  std::vector<std::size_t> last_use() const;
};

// The asymmetric multi-view traversal: camera rows v = 0 .. V-2; even rows
// and the final row sweep all anchor times, other odd rows emit only the
// t = 0 sub-grid as a cross-view bridge.
TraversalPlan asymmetric_traversal(std::size_t views, std::size_t times);

// Single-view reduction: four-frame windows advancing by two, so adjacent
// windows share two frames. When T-4 is odd the final window clamps to the
// sequence end and shares three.
TraversalPlan monocular_traversal(std::size_t times, std::size_t stride = 2);

// Disjoint 2x2 tiling with no sliding; the no-propagation baseline used by
// the ablation comparisons. Odd extents clamp the last tile to the edge.
TraversalPlan tiled_traversal(std::size_t views, std::size_t times);

}  // namespace stgrid
