#include "stgrid/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stgrid/errors.hpp"

namespace stgrid {

namespace {

void check_alignment(const CameraTimeGrid& grid, const std::vector<std::vector<FlowField>>& flows,
                     const std::vector<std::vector<ValidityMask>>& masks) {
  if (grid.times < 2) throw AlignmentError("warping error needs at least two time steps");
  if (flows.size() != grid.views || masks.size() != grid.views)
    throw AlignmentError("flow/mask view count disagrees with the grid");
  const Frame& f0 = grid.frame(0, 0);
  for (std::size_t v = 0; v < grid.views; ++v) {
    if (flows[v].size() != grid.times - 1 || masks[v].size() != grid.times - 1)
      throw AlignmentError("view " + std::to_string(v) +
                           " needs one flow and one mask per consecutive frame pair");
    for (std::size_t i = 0; i < flows[v].size(); ++i) {
      if (flows[v][i].height != f0.height || flows[v][i].width != f0.width)
        throw AlignmentError("flow resolution disagrees with the frames");
      if (masks[v][i].height != f0.height || masks[v][i].width != f0.width)
        throw AlignmentError("mask resolution disagrees with the frames");
    }
  }
}

// Mean over valid pixels of the channel-summed squared warp residual;
// absent when the valid set is empty.
std::optional<double> pair_value(const Frame& cur, const Frame& prev, const FlowField& flow,
                                 const ValidityMask& mask) {
  WarpedFrame warped = warp_frame(flow, prev);
  ValidityMask valid = mask_and(mask, warped.in_bounds);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t y = 0; y < cur.height; ++y)
    for (std::size_t x = 0; x < cur.width; ++x) {
      if (!valid.at(y, x)) continue;
      ++count;
      for (std::size_t c = 0; c < Frame::kChannels; ++c) {
        double d = double(cur.at(y, x, c)) - double(warped.frame.at(y, x, c));
        sum += d * d;
      }
    }
  if (count == 0) return std::nullopt;
  return sum / double(count);
}

MetricReport finish(std::string name, std::vector<double> values) {
  MetricReport report;
  report.name = std::move(name);
  report.per_frame = std::move(values);
  if (!report.per_frame.empty()) {
    double sum = 0.0;
    for (double v : report.per_frame) sum += v;
    report.value = sum / double(report.per_frame.size());
  }
  return report;
}

}  // namespace

MetricReport warping_error(const CameraTimeGrid& grid,
                           const std::vector<std::vector<FlowField>>& flows,
                           const std::vector<std::vector<ValidityMask>>& masks) {
  check_alignment(grid, flows, masks);
  std::vector<double> values;
  for (std::size_t v = 0; v < grid.views; ++v)
    for (std::size_t t = 1; t < grid.times; ++t) {
      std::optional<double> val =
          pair_value(grid.frame(v, t), grid.frame(v, t - 1), flows[v][t - 1], masks[v][t - 1]);
      if (val) values.push_back(*val);
    }
  return finish("warping_error_local", std::move(values));
}

MetricReport boundary_warping_error(const TraversalPlan& plan, const CameraTimeGrid& grid,
                                    const std::vector<std::vector<FlowField>>& flows,
                                    const std::vector<std::vector<ValidityMask>>& masks) {
  check_alignment(grid, flows, masks);
  if (plan.views != grid.views || plan.times != grid.times)
    throw AlignmentError("traversal plan extents disagree with the grid");

  // A pair straddles a boundary when its two frames were first fused by
  // different steps of the plan.
  std::vector<std::size_t> first = plan.first_use();
  std::vector<double> values;
  for (std::size_t v = 0; v < grid.views; ++v)
    for (std::size_t t = 1; t < grid.times; ++t) {
      std::size_t own_prev = first[plan.cell_index({v, t - 1})];
      std::size_t own_cur = first[plan.cell_index({v, t})];
      if (own_prev >= plan.steps.size() || own_cur >= plan.steps.size())
        throw AlignmentError("plan does not cover frame (" + std::to_string(v) + "," +
                             std::to_string(t) + ")");
      if (own_prev == own_cur) continue;
      std::optional<double> val =
          pair_value(grid.frame(v, t), grid.frame(v, t - 1), flows[v][t - 1], masks[v][t - 1]);
      if (val) values.push_back(*val);
    }
  return finish("warping_error_global", std::move(values));
}

double psnr(const Frame& a, const Frame& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("psnr needs equally sized frames");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = double(a.data[i]) - double(b.data[i]);
    mse += d * d;
  }
  mse /= double(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Frame& a, const Frame& b) {
  if (!a.same_shape(b)) throw ShapeMismatch("ssim needs equally sized frames");
  const std::size_t h = a.height, w = a.width;
  const std::size_t win = std::min({std::size_t(8), h, w});
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;  // (K L)^2 with L = 1
  const double n = double(win * win);

  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t c = 0; c < Frame::kChannels; ++c)
    for (std::size_t y = 0; y + win <= h; ++y)
      for (std::size_t x = 0; x + win <= w; ++x) {
        double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
        for (std::size_t oy = 0; oy < win; ++oy)
          for (std::size_t ox = 0; ox < win; ++ox) {
            double va = double(a.at(y + oy, x + ox, c));
            double vb = double(b.at(y + oy, x + ox, c));
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        double ma = sa / n, mb = sb / n;
        double var_a = saa / n - ma * ma;
        double var_b = sbb / n - mb * mb;
        double cov = sab / n - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        ++windows;
      }
  return total / double(windows);
}

}  // namespace stgrid
