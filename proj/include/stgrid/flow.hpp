#pragma once

#include <cstdint>
#include <vector>

#include "stgrid/frame.hpp"
#include "stgrid/tokens.hpp"

namespace stgrid {

enum class FlowResolution { pixel, token };
enum class Interp { bilinear, nearest };

// Dense displacement field. Convention: a field F between frame t and frame
// t-1 stores, at position p of frame t, the displacement added to p to land
// on the corresponding point of frame t-1 (backward warping).
struct FlowField {
  std::size_t height = 0;
  std::size_t width = 0;
  FlowResolution resolution = FlowResolution::pixel;
  std::vector<double> data;  // (y, x, {dx, dy})

  FlowField() = default;
  FlowField(std::size_t h, std::size_t w, FlowResolution res)
      : height(h), width(w), resolution(res), data(h * w * 2, 0.0) {}

  double& dx(std::size_t y, std::size_t x) { return data[(y * width + x) * 2]; }
  double dx(std::size_t y, std::size_t x) const { return data[(y * width + x) * 2]; }
  double& dy(std::size_t y, std::size_t x) { return data[(y * width + x) * 2 + 1]; }
  double dy(std::size_t y, std::size_t x) const { return data[(y * width + x) * 2 + 1]; }

  bool same_shape(const FlowField& o) const { return height == o.height && width == o.width; }
};

struct ValidityMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> data;  // 1 = valid

  ValidityMask() = default;
  ValidityMask(std::size_t h, std::size_t w, std::uint8_t fill = 1)
      : height(h), width(w), data(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

  double valid_fraction() const;
  bool same_shape(const ValidityMask& o) const { return height == o.height && width == o.width; }
};

ValidityMask mask_and(const ValidityMask& a, const ValidityMask& b);

// Exhaustive block matching: per-pixel integer displacement within
// [-radius, radius]^2 minimising mean squared difference of a patch x patch
// window (clipped at borders). Ties prefer the smallest displacement
// magnitude, then lexicographic (dy, dx). Deliberately slow and exact; real
// deployments would swap in a learned estimator behind the same signature.
FlowField estimate_flow_block_matching(const Frame& src, const Frame& dst, std::size_t patch = 7,
                                       std::size_t radius = 4);

// Averages pixel displacements into token cells (pixels binned by
// y*token_h/h, x*token_w/w, so non-divisible extents distribute remainders)
// and rescales the displacement units to token resolution.
FlowField downsample_flow(const FlowField& pixel_flow, std::size_t token_h, std::size_t token_w);

struct WarpedTokens {
  TokenMap tokens;
  ValidityMask in_bounds;
};

// Backward warp: output(x, y) samples prev_tokens at (x + dx, y + dy).
// Samples outside the map yield a zero vector and a cleared in_bounds flag.
WarpedTokens warp_tokens(const FlowField& flow, const TokenMap& prev_tokens,
                         Interp interp = Interp::bilinear);

struct WarpedFrame {
  Frame frame;
  ValidityMask in_bounds;
};

// Same warp on pixel frames; used by the warping-error metrics.
WarpedFrame warp_frame(const FlowField& flow, const Frame& prev_frame,
                       Interp interp = Interp::bilinear);

// Forward-backward consistency: position p is valid when
//   |F_fwd(p) + F_bwd(p + F_fwd(p))|^2 < alpha * (|F_fwd(p)|^2 + |F_bwd(p + F_fwd(p))|^2) + beta
// with F_bwd sampled bilinearly at p + F_fwd(p); out-of-bounds lookups are
// invalid. beta is expressed in the field's own resolution units.
ValidityMask fb_consistency_mask(const FlowField& forward, const FlowField& backward,
                                 double alpha = 0.01, double beta = 0.5);

}  // namespace stgrid
