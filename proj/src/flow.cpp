#include "stgrid/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace stgrid {

double ValidityMask::valid_fraction() const {
  if (data.empty()) return 0.0;
  std::size_t n = 0;
  for (std::uint8_t v : data) n += (v != 0);
  return double(n) / double(data.size());
}

ValidityMask mask_and(const ValidityMask& a, const ValidityMask& b) {
  if (!a.same_shape(b)) throw ResolutionMismatch("mask intersection needs equal shapes");
  ValidityMask out(a.height, a.width, 0);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    out.data[i] = (a.data[i] && b.data[i]) ? 1 : 0;
  return out;
}

namespace {

// Clamped bilinear tap at a continuous position. Valid iff the sample lies
// inside the lattice hull [0, w-1] x [0, h-1].
struct BilinearTap {
  bool valid = false;
  std::size_t x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  double wx = 0.0, wy = 0.0;
};

BilinearTap make_tap(double sx, double sy, std::size_t h, std::size_t w) {
  BilinearTap tap;
  if (!(sx >= 0.0) || !(sy >= 0.0) || !(sx <= double(w - 1)) || !(sy <= double(h - 1)))
    return tap;
  tap.valid = true;
  if (w == 1) {
    tap.x0 = tap.x1 = 0;
    tap.wx = 0.0;
  } else {
    tap.x0 = std::min(std::size_t(sx), w - 2);
    tap.x1 = tap.x0 + 1;
    tap.wx = sx - double(tap.x0);
  }
  if (h == 1) {
    tap.y0 = tap.y1 = 0;
    tap.wy = 0.0;
  } else {
    tap.y0 = std::min(std::size_t(sy), h - 2);
    tap.y1 = tap.y0 + 1;
    tap.wy = sy - double(tap.y0);
  }
  return tap;
}

}  // namespace

FlowField estimate_flow_block_matching(const Frame& src, const Frame& dst, std::size_t patch,
                                       std::size_t radius) {
  if (!src.same_shape(dst)) throw SizeMismatch("block matching needs equally sized frames");
  if (patch % 2 == 0 || patch == 0) throw InvalidArgument("block matching patch must be odd");

  const long h = long(src.height), w = long(src.width);
  const long half = long(patch / 2);
  const long r = long(radius);
  FlowField flow(src.height, src.width, FlowResolution::pixel);

  for (long py = 0; py < h; ++py) {
    for (long px = 0; px < w; ++px) {
      double best_cost = std::numeric_limits<double>::infinity();
      long best_dy = 0, best_dx = 0;
      long best_mag = std::numeric_limits<long>::max();

      for (long dy = -r; dy <= r; ++dy) {
        for (long dx = -r; dx <= r; ++dx) {
          double sum = 0.0;
          std::size_t count = 0;
          for (long oy = -half; oy <= half; ++oy) {
            long sy = py + oy, ty = py + dy + oy;
            if (sy < 0 || sy >= h || ty < 0 || ty >= h) continue;
            for (long ox = -half; ox <= half; ++ox) {
              long sx = px + ox, tx = px + dx + ox;
              if (sx < 0 || sx >= w || tx < 0 || tx >= w) continue;
              for (std::size_t c = 0; c < Frame::kChannels; ++c) {
                double d = double(src.at(std::size_t(sy), std::size_t(sx), c)) -
                           double(dst.at(std::size_t(ty), std::size_t(tx), c));
                sum += d * d;
              }
              ++count;
            }
          }
          if (count == 0) continue;
          double cost = sum / double(count);
          long mag = dx * dx + dy * dy;
          bool better = cost < best_cost;
          if (!better && cost == best_cost) {
            if (mag != best_mag)
              better = mag < best_mag;
            else
              better = std::pair(dy, dx) < std::pair(best_dy, best_dx);
          }
          if (better) {
            best_cost = cost;
            best_dy = dy;
            best_dx = dx;
            best_mag = mag;
          }
        }
      }
      flow.dx(std::size_t(py), std::size_t(px)) = double(best_dx);
      flow.dy(std::size_t(py), std::size_t(px)) = double(best_dy);
    }
  }
  return flow;
}

FlowField downsample_flow(const FlowField& pixel_flow, std::size_t token_h, std::size_t token_w) {
  const std::size_t h = pixel_flow.height, w = pixel_flow.width;
  if (token_h == 0 || token_w == 0 || token_h > h || token_w > w)
    throw DegenerateTarget("flow downsample target must be within (0, source]");

  FlowField out(token_h, token_w, FlowResolution::token);
  std::vector<double> sum(token_h * token_w * 2, 0.0);
  std::vector<std::size_t> count(token_h * token_w, 0);

  for (std::size_t y = 0; y < h; ++y) {
    std::size_t cy = y * token_h / h;
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t cx = x * token_w / w;
      std::size_t ci = cy * token_w + cx;
      sum[ci * 2] += pixel_flow.dx(y, x);
      sum[ci * 2 + 1] += pixel_flow.dy(y, x);
      ++count[ci];
    }
  }

  // Displacements live in source units; rescale into cell units.
  const double sx = double(token_w) / double(w);
  const double sy = double(token_h) / double(h);
  for (std::size_t i = 0; i < token_h * token_w; ++i) {
    out.data[i * 2] = sum[i * 2] / double(count[i]) * sx;
    out.data[i * 2 + 1] = sum[i * 2 + 1] / double(count[i]) * sy;
  }
  return out;
}

WarpedTokens warp_tokens(const FlowField& flow, const TokenMap& prev_tokens, Interp interp) {
  if (flow.height != prev_tokens.rows || flow.width != prev_tokens.cols)
    throw ResolutionMismatch("flow and token map resolutions disagree");

  const std::size_t h = prev_tokens.rows, w = prev_tokens.cols, d = prev_tokens.dim;
  WarpedTokens out;
  out.tokens = TokenMap(h, w, d, 0.0);
  out.in_bounds = ValidityMask(h, w, 0);

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double sx = double(x) + flow.dx(y, x);
      double sy = double(y) + flow.dy(y, x);
      if (interp == Interp::nearest) {
        sx = std::round(sx);
        sy = std::round(sy);
      }
      BilinearTap tap = make_tap(sx, sy, h, w);
      if (!tap.valid) continue;
      out.in_bounds.at(y, x) = 1;
      const double* p00 = prev_tokens.token(tap.y0, tap.x0);
      const double* p01 = prev_tokens.token(tap.y0, tap.x1);
      const double* p10 = prev_tokens.token(tap.y1, tap.x0);
      const double* p11 = prev_tokens.token(tap.y1, tap.x1);
      double* dst = out.tokens.token(y, x);
      for (std::size_t k = 0; k < d; ++k) {
        double top = p00[k] * (1.0 - tap.wx) + p01[k] * tap.wx;
        double bot = p10[k] * (1.0 - tap.wx) + p11[k] * tap.wx;
        dst[k] = top * (1.0 - tap.wy) + bot * tap.wy;
      }
    }
  }
  return out;
}

WarpedFrame warp_frame(const FlowField& flow, const Frame& prev_frame, Interp interp) {
  if (flow.height != prev_frame.height || flow.width != prev_frame.width)
    throw ResolutionMismatch("flow and frame resolutions disagree");

  const std::size_t h = prev_frame.height, w = prev_frame.width;
  WarpedFrame out;
  out.frame = Frame(h, w, 0.0f);
  out.in_bounds = ValidityMask(h, w, 0);

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double sx = double(x) + flow.dx(y, x);
      double sy = double(y) + flow.dy(y, x);
      if (interp == Interp::nearest) {
        sx = std::round(sx);
        sy = std::round(sy);
      }
      BilinearTap tap = make_tap(sx, sy, h, w);
      if (!tap.valid) continue;
      out.in_bounds.at(y, x) = 1;
      for (std::size_t c = 0; c < Frame::kChannels; ++c) {
        double top = double(prev_frame.at(tap.y0, tap.x0, c)) * (1.0 - tap.wx) +
                     double(prev_frame.at(tap.y0, tap.x1, c)) * tap.wx;
        double bot = double(prev_frame.at(tap.y1, tap.x0, c)) * (1.0 - tap.wx) +
                     double(prev_frame.at(tap.y1, tap.x1, c)) * tap.wx;
        out.frame.at(y, x, c) = float(top * (1.0 - tap.wy) + bot * tap.wy);
      }
    }
  }
  return out;
}

ValidityMask fb_consistency_mask(const FlowField& forward, const FlowField& backward, double alpha,
                                 double beta) {
  if (!forward.same_shape(backward))
    throw ResolutionMismatch("forward/backward flow resolutions disagree");
  if (forward.resolution != backward.resolution)
    throw ResolutionMismatch("forward/backward flows carry different displacement units");

  const std::size_t h = forward.height, w = forward.width;
  ValidityMask mask(h, w, 0);

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double fdx = forward.dx(y, x), fdy = forward.dy(y, x);
      BilinearTap tap = make_tap(double(x) + fdx, double(y) + fdy, h, w);
      if (!tap.valid) continue;

      auto sample = [&](auto&& get) {
        double top = get(tap.y0, tap.x0) * (1.0 - tap.wx) + get(tap.y0, tap.x1) * tap.wx;
        double bot = get(tap.y1, tap.x0) * (1.0 - tap.wx) + get(tap.y1, tap.x1) * tap.wx;
        return top * (1.0 - tap.wy) + bot * tap.wy;
      };
      double bdx = sample([&](std::size_t yy, std::size_t xx) { return backward.dx(yy, xx); });
      double bdy = sample([&](std::size_t yy, std::size_t xx) { return backward.dy(yy, xx); });

      double rx = fdx + bdx, ry = fdy + bdy;
      double residual = rx * rx + ry * ry;
      double bound = alpha * (fdx * fdx + fdy * fdy + bdx * bdx + bdy * bdy) + beta;
      if (residual < bound) mask.at(y, x) = 1;
    }
  }
  return mask;
}

}  // namespace stgrid
