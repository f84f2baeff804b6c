#include "stgrid/ctp.hpp"

#include <json.hpp>

#include <string>
#include <utility>

#include "stgrid/io.hpp"

namespace stgrid {

namespace {

std::string coord_str(GridCoord c) {
  return "(" + std::to_string(c.v) + "," + std::to_string(c.t) + ")";
}

}  // namespace

TokenMap PatchifyCodec::encode(const Frame& frame) const {
  if (patch == 0) throw InvalidArgument("patch size must be positive");
  if (frame.height % patch != 0 || frame.width % patch != 0)
    throw InvalidArgument("patch size must divide the frame resolution");

  const std::size_t rows = frame.height / patch, cols = frame.width / patch;
  TokenMap tokens(rows, cols, token_dim());
  for (std::size_t ty = 0; ty < rows; ++ty)
    for (std::size_t tx = 0; tx < cols; ++tx) {
      double* tok = tokens.token(ty, tx);
      for (std::size_t py = 0; py < patch; ++py)
        for (std::size_t px = 0; px < patch; ++px)
          for (std::size_t c = 0; c < Frame::kChannels; ++c)
            tok[(py * patch + px) * Frame::kChannels + c] =
                double(frame.at(ty * patch + py, tx * patch + px, c));
    }
  return tokens;
}

Frame PatchifyCodec::decode(const TokenMap& tokens) const {
  if (patch == 0) throw InvalidArgument("patch size must be positive");
  if (tokens.dim != token_dim())
    throw DimMismatch("token dim " + std::to_string(tokens.dim) + " does not match patch " +
                      std::to_string(patch));

  Frame frame(tokens.rows * patch, tokens.cols * patch);
  for (std::size_t ty = 0; ty < tokens.rows; ++ty)
    for (std::size_t tx = 0; tx < tokens.cols; ++tx) {
      const double* tok = tokens.token(ty, tx);
      for (std::size_t py = 0; py < patch; ++py)
        for (std::size_t px = 0; px < patch; ++px)
          for (std::size_t c = 0; c < Frame::kChannels; ++c) {
            double v = tok[(py * patch + px) * Frame::kChannels + c];
            // Frames live in [0,1]; an identity round trip never clips.
            frame.at(ty * patch + py, tx * patch + px, c) =
                float(v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v));
          }
    }
  return frame;
}

void full_token_inheritance(PropagationState& state, const PlanStep& step) {
  for (const GridCoord& m : step.overlap) {
    auto it = state.cache.find(m);
    if (it == state.cache.end())
      throw MissingCache("no cached tokens for frame " + coord_str(m) +
                         "; traversal order broke connectivity");
    state.working[m] = it->second;
  }
}

TokenMap flow_guided_replacement(const TokenMap& current, const TokenMap& prev,
                                 const FlowField& token_flow, const ValidityMask& fb_mask,
                                 Interp interp, ValidityMask* effective) {
  if (!current.same_shape(prev))
    throw ShapeMismatch("replacement needs matching current/previous token shapes");
  if (fb_mask.height != current.rows || fb_mask.width != current.cols)
    throw ResolutionMismatch("consistency mask resolution disagrees with tokens");

  WarpedTokens warped = warp_tokens(token_flow, prev, interp);
  ValidityMask mask = mask_and(fb_mask, warped.in_bounds);

  TokenMap out = current;
  for (std::size_t y = 0; y < current.rows; ++y)
    for (std::size_t x = 0; x < current.cols; ++x) {
      if (!mask.at(y, x)) continue;
      const double* src = warped.tokens.token(y, x);
      double* dst = out.token(y, x);
      for (std::size_t k = 0; k < current.dim; ++k) dst[k] = src[k];
    }
  if (effective) *effective = std::move(mask);
  return out;
}

CameraTimeGrid propagate(const CameraTimeGrid& grid, const TraversalPlan& plan,
                         FrameEditor& editor, const FlowSupplier& flows, const TextTokens& text,
                         const PropagateOptions& opts) {
  if (plan.views != grid.views || plan.times != grid.times)
    throw InvalidArgument("traversal plan extents disagree with the grid");
  if (plan.steps.empty()) throw InvalidArgument("traversal plan has no steps");
  for (const PlanStep& step : plan.steps)
    for (const GridCoord& m : step.members)
      if (m.v >= grid.views || m.t >= grid.times)
        throw InvalidArgument("plan step member " + coord_str(m) + " outside the grid");

  PatchifyCodec codec{opts.patch};
  PropagationState state;
  std::map<GridCoord, TokenMap> shadow;  // first-write copies for the equality check
  CameraTimeGrid out = grid;
  std::vector<std::size_t> last = plan.last_use();

  for (std::size_t k = 0; k < plan.steps.size(); ++k) {
    const PlanStep& step = plan.steps[k];

    state.working.clear();
    for (const GridCoord& m : step.members) state.working[m] = codec.encode(grid.frame(m));

    std::vector<GridCoord> inherited;
    if (opts.inherit) {
      full_token_inheritance(state, step);
      inherited = step.overlap;
      if (opts.check_overlap_equality) {
        for (const GridCoord& m : step.overlap) {
          auto sh = shadow.find(m);
          if (sh == shadow.end() || !(state.working.at(m).data == sh->second.data))
            throw Error("OverlapEquality", ErrorKind::runtime,
                        "inherited tokens for " + coord_str(m) +
                            " differ from the owning step's cache");
        }
      }
    }

    std::array<TokenMap, 4> work;
    for (std::size_t i = 0; i < 4; ++i) work[i] = std::move(state.working.at(step.members[i]));
    auto index_of = [&](GridCoord c) -> std::size_t {
      for (std::size_t i = 0; i < 4; ++i)
        if (step.members[i] == c) return i;
      throw InvalidArgument("coordinate " + coord_str(c) + " is not a member of the step");
    };

    EditorContext ctx{k, &step};
    try {
      editor.edit(work, text, ctx);
    } catch (const std::exception& e) {
      throw EditorFailure("editor failed at step " + std::to_string(k) + " anchored " +
                          coord_str(step.anchor) + ": " + e.what());
    }
    for (const TokenMap& wm : work)
      if (!wm.same_shape(work[0]) || wm.data.size() != wm.count() * wm.dim)
        throw EditorFailure("editor changed token shapes at step " + std::to_string(k));

    std::vector<GridCoord> replaced;
    double mask_sum = 0.0;
    if (opts.replace && step.kind == StepKind::temporal) {
      for (const GridCoord& coord : step.replacement) {
        GridCoord src{coord.v, coord.t - 1};
        const TokenMap* src_tokens = nullptr;
        if (state.status_of(src) != FrameStatus::pending) {
          src_tokens = &state.cache.at(src);
        } else {
          // Monocular chain: the source is this step's just-replaced member.
          try {
            src_tokens = &work[index_of(src)];
          } catch (const InvalidArgument&) {
            throw MissingCache("replacement source " + coord_str(src) +
                               " is neither cached nor part of step " + std::to_string(k));
          }
        }

        FlowPair pair;
        try {
          pair = flows.get(coord.v, coord.t);
        } catch (const MissingFlow& e) {
          throw MissingFlow(std::string(e.what()) + "; needed by step " + std::to_string(k) +
                            " anchored " + coord_str(step.anchor));
        }

        std::size_t rows = work[0].rows, cols = work[0].cols;
        FlowField fwd = downsample_flow(pair.to_prev, rows, cols);
        FlowField bwd = downsample_flow(pair.to_next, rows, cols);
        ValidityMask fb = fb_consistency_mask(fwd, bwd, opts.fb_alpha, opts.fb_beta);

        ValidityMask effective;
        std::size_t i = index_of(coord);
        work[i] = flow_guided_replacement(work[i], *src_tokens, fwd, fb, opts.interp, &effective);
        mask_sum += effective.valid_fraction();
        replaced.push_back(coord);
      }
    }

    for (std::size_t i = 0; i < 4; ++i) {
      const GridCoord& m = step.members[i];
      FrameStatus st = state.status_of(m);
      if (st == FrameStatus::pending) {
        state.cache[m] = work[i];
        state.status[m] = FrameStatus::fused;
        if (opts.check_overlap_equality) shadow[m] = work[i];
      } else if (!opts.inherit) {
        // Independent baseline: sub-grids do not share state, so the most
        // recent edit of a frame wins.
        state.cache[m] = work[i];
      }
    }
    for (const GridCoord& m : step.members) {
      if (last[plan.cell_index(m)] != k) continue;
      state.status[m] = FrameStatus::finalized;
      out.frame(m) = codec.decode(state.cache.at(m));
      if (!opts.token_dump_dir.empty())
        save_tokens(opts.token_dump_dir + "/tokens_v" + std::to_string(m.v) + "_t" +
                        std::to_string(m.t) + ".sttk",
                    state.cache.at(m));
    }

    if (opts.trace) {
      nlohmann::json entry;
      entry["step"] = k;
      entry["anchor"] = {step.anchor.v, step.anchor.t};
      auto coords = [](const std::vector<GridCoord>& cs) {
        nlohmann::json arr = nlohmann::json::array();
        for (const GridCoord& c : cs) arr.push_back({c.v, c.t});
        return arr;
      };
      entry["inherited"] = coords(inherited);
      entry["replaced"] = coords(replaced);
      if (replaced.empty())
        entry["mask_valid_fraction"] = nullptr;
      else
        entry["mask_valid_fraction"] = mask_sum / double(replaced.size());
      (*opts.trace) << entry.dump() << "\n";
    }
  }
  return out;
}

}  // namespace stgrid
