#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stgrid/flow.hpp"
#include "stgrid/grid.hpp"

namespace stgrid {

// One metric outcome. The headline value is the unweighted mean of
// per_frame; it is absent (not zero) when no frame pair contributes, e.g.
// the boundary variant on a single-step plan.
struct MetricReport {
  std::string name;
  std::optional<double> value;
  std::string scale = "x1";
  std::vector<double> per_frame;
};

// Temporal consistency: for every consecutive pair (t-1, t) of every view,
// the mean over valid pixels of the channel-summed squared difference
// between frame t and frame t-1 warped forward by flow_fwd[v][t-1]. Valid
// means the supplied mask intersected with the warp's in-bounds flags.
// flows/masks are indexed [v][t-1] at pixel resolution.
MetricReport warping_error(const CameraTimeGrid& grid,
                           const std::vector<std::vector<FlowField>>& flows,
                           const std::vector<std::vector<ValidityMask>>& masks);

// Same statistic restricted to pairs whose two frames were first fused by
// different traversal steps, i.e. pairs straddling a sub-grid boundary. The
// unrestricted warping_error is the matching "local" figure.
MetricReport boundary_warping_error(const TraversalPlan& plan, const CameraTimeGrid& grid,
                                    const std::vector<std::vector<FlowField>>& flows,
                                    const std::vector<std::vector<ValidityMask>>& masks);

// Peak signal-to-noise ratio against a unit dynamic range: 10 log10(1/MSE),
// +infinity when the frames are identical.
double psnr(const Frame& a, const Frame& b);

// Mean structural similarity: 8x8 uniform windows at stride 1 (window
// shrinks to the image when smaller), K1 = 0.01, K2 = 0.03, L = 1, biased
// moment estimates, averaged over channels and window positions.
double ssim(const Frame& a, const Frame& b);

}  // namespace stgrid
