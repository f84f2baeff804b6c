#include "stgrid/grid.hpp"

#include <set>
#include <string>
#include <utility>

namespace stgrid {

CameraTimeGrid build_grid(std::vector<std::tuple<std::size_t, std::size_t, Frame>> tagged,
                          std::size_t views, std::size_t times) {
  if (views < 1 || times < 2)
    throw DegenerateGrid("camera-time grid needs V >= 1 and T >= 2");

  CameraTimeGrid grid;
  grid.views = views;
  grid.times = times;
  grid.frames.resize(views * times);

  std::vector<bool> seen(views * times, false);
  for (auto& [v, t, f] : tagged) {
    if (v >= views || t >= times)
      throw InvalidArgument("frame tag (" + std::to_string(v) + "," + std::to_string(t) +
                            ") outside the " + std::to_string(views) + "x" +
                            std::to_string(times) + " grid");
    std::size_t idx = v * times + t;
    if (seen[idx]) throw InvalidArgument("duplicate frame tag (" + std::to_string(v) + "," +
                                         std::to_string(t) + ")");
    validate_frame(f);
    seen[idx] = true;
    grid.frames[idx] = std::move(f);
  }

  for (std::size_t v = 0; v < views; ++v)
    for (std::size_t t = 0; t < times; ++t)
      if (!seen[v * times + t])
        throw MissingCell("no frame tagged (" + std::to_string(v) + "," + std::to_string(t) + ")");

  const Frame& first = grid.frames.front();
  for (const Frame& f : grid.frames)
    if (!f.same_shape(first))
      throw DimensionMismatch("grid frames must share one resolution");

  return grid;
}

SubGrid make_subgrid(const CameraTimeGrid& grid, std::size_t v, std::size_t t) {
  if (v + 1 >= grid.views || t + 1 >= grid.times)
    throw OutOfBounds("sub-grid at (" + std::to_string(v) + "," + std::to_string(t) +
                      ") exceeds the grid");
  SubGrid s;
  s.anchor = {v, t};
  s.members = {GridCoord{v, t}, GridCoord{v + 1, t}, GridCoord{v, t + 1}, GridCoord{v + 1, t + 1}};
  return s;
}

TemporalSubGrid make_temporal_subgrid(std::size_t times, std::size_t t) {
  if (t + 3 >= times) throw OutOfBounds("temporal sub-grid exceeds the sequence");
  TemporalSubGrid s;
  s.anchor = t;
  s.members = {t, t + 1, t + 2, t + 3};
  return s;
}

namespace {

// Appends a step, deriving kind, overlap and replacement against the set of
// cells produced so far. Replacement = rightmost members not already owned
// by an earlier step; cross-view steps never replace.
void push_step(TraversalPlan& plan, GridCoord anchor, std::array<GridCoord, 4> members,
               std::set<GridCoord>& produced) {
  PlanStep step;
  step.anchor = anchor;
  step.members = members;
  step.kind = anchor.t > 0 ? StepKind::temporal : StepKind::cross_view;
  for (const GridCoord& m : members)
    if (produced.count(m)) step.overlap.push_back(m);
  if (step.kind == StepKind::temporal) {
    for (std::size_t i = 2; i < 4; ++i)
      if (!produced.count(members[i])) step.replacement.push_back(members[i]);
  }
  for (const GridCoord& m : members) produced.insert(m);
  plan.steps.push_back(std::move(step));
}

std::array<GridCoord, 4> square_members(std::size_t v, std::size_t t) {
  return {GridCoord{v, t}, GridCoord{v + 1, t}, GridCoord{v, t + 1}, GridCoord{v + 1, t + 1}};
}

}  // namespace

TraversalPlan asymmetric_traversal(std::size_t views, std::size_t times) {
  if (views < 2 || times < 2)
    throw DegenerateGrid("asymmetric traversal needs V >= 2 and T >= 2");

  TraversalPlan plan;
  plan.views = views;
  plan.times = times;
  std::set<GridCoord> produced;

  for (std::size_t v = 0; v + 1 < views; ++v) {
    bool sweep = (v % 2 == 0) || (v == views - 2);
    if (sweep) {
      for (std::size_t t = 0; t + 1 < times; ++t)
        push_step(plan, {v, t}, square_members(v, t), produced);
    } else {
      push_step(plan, {v, 0}, square_members(v, 0), produced);
    }
  }
  return plan;
}

TraversalPlan monocular_traversal(std::size_t times, std::size_t stride) {
  if (stride != 2) throw InvalidArgument("monocular traversal uses stride 2");
  if (times < 4) throw TooFewFrames("monocular traversal needs T >= 4");

  TraversalPlan plan;
  plan.views = 1;
  plan.times = times;
  std::set<GridCoord> produced;

  std::size_t t = 0;
  while (true) {
    push_step(plan, {0, t},
              {GridCoord{0, t}, GridCoord{0, t + 1}, GridCoord{0, t + 2}, GridCoord{0, t + 3}},
              produced);
    if (t + 4 >= times) break;
    t = std::min(t + stride, times - 4);
  }
  return plan;
}

TraversalPlan tiled_traversal(std::size_t views, std::size_t times) {
  if (views < 2 || times < 2) throw DegenerateGrid("tiled traversal needs V >= 2 and T >= 2");

  auto anchors = [](std::size_t n) {
    std::vector<std::size_t> a;
    for (std::size_t i = 0;; i += 2) {
      if (i >= n - 2) {
        a.push_back(n - 2);
        break;
      }
      a.push_back(i);
    }
    return a;
  };

  TraversalPlan plan;
  plan.views = views;
  plan.times = times;
  std::set<GridCoord> produced;
  for (std::size_t v : anchors(views))
    for (std::size_t t : anchors(times)) push_step(plan, {v, t}, square_members(v, t), produced);
  return plan;
}

std::vector<std::size_t> TraversalPlan::first_use() const {
  std::vector<std::size_t> idx(views * times, steps.size());
  for (std::size_t k = 0; k < steps.size(); ++k)
    for (const GridCoord& m : steps[k].members) {
      std::size_t i = cell_index(m);
      if (idx[i] == steps.size()) idx[i] = k;
    }
  return idx;
}

std::vector<std::size_t> TraversalPlan::last_use() const {
  std::vector<std::size_t> idx(views * times, steps.size());
  for (std::size_t k = 0; k < steps.size(); ++k)
    for (const GridCoord& m : steps[k].members) idx[cell_index(m)] = k;
  return idx;
}

}  // namespace stgrid
