#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <ostream>
#include <string>

#include "stgrid/flow.hpp"
#include "stgrid/grid.hpp"
#include "stgrid/tokens.hpp"

namespace stgrid {

// Lossless pixel <-> token codec: non-overlapping patch x patch blocks,
// token dim 3 * patch^2, channel order (py, px, rgb) within a block.
// Stands in for a latent VAE so that identity edits round-trip bit-exactly.
struct PatchifyCodec {
  std::size_t patch = 2;

  std::size_t token_dim() const { return Frame::kChannels * patch * patch; }
  TokenMap encode(const Frame& frame) const;
  Frame decode(const TokenMap& tokens) const;
};

enum class FrameStatus { pending, fused, finalized };

// Cross-step token state. The cache entry of a frame is written exactly once,
// at the first step that edits it (pending -> fused); later overlapping steps
// read it back via inheritance but never rewrite it, and a finalized frame is
// decoded and left alone. The propagation-off ablation relaxes this to
// last-write-wins.
struct PropagationState {
  std::map<GridCoord, TokenMap> cache;
  std::map<GridCoord, FrameStatus> status;
  std::map<GridCoord, TokenMap> working;  // members of the step in flight

  FrameStatus status_of(GridCoord c) const {
    auto it = status.find(c);
    return it == status.end() ? FrameStatus::pending : it->second;
  }
};

// Wholesale token replacement on the overlap members: the current step's
// working tokens for every overlapped frame become the cached tokens of the
// step that owns them. Idempotent; missing cache entries abort.
void full_token_inheritance(PropagationState& state, const PlanStep& step);

// Eq.-style masked blend for one replacement frame:
//   out = M (.) warp(flow, prev) + (1 - M) (.) current
// where M is fb_mask intersected with the warp's in-bounds flags. The
// effective mask is returned through `effective` when non-null.
TokenMap flow_guided_replacement(const TokenMap& current, const TokenMap& prev,
                                 const FlowField& token_flow, const ValidityMask& fb_mask,
                                 Interp interp = Interp::bilinear,
                                 ValidityMask* effective = nullptr);

// Editors map the four member token maps (plus the shared prompt tokens) to
// edited token maps in place. step_index lets mock editors vary per step.
struct EditorContext {
  std::size_t step_index = 0;
  const PlanStep* step = nullptr;
};

class FrameEditor {
 public:
  virtual ~FrameEditor() = default;
  virtual void edit(std::array<TokenMap, 4>& member_tokens, const TextTokens& text,
                    const EditorContext& ctx) = 0;
};

// Pixel-resolution flow between consecutive frames of one view.
// to_prev carries F going from frame t to frame t-1, to_next the reverse.
struct FlowPair {
  FlowField to_prev;
  FlowField to_next;
};

class FlowSupplier {
 public:
  virtual ~FlowSupplier() = default;
  // Flow pair linking times t and t-1 of view v, t >= 1. Throws MissingFlow.
  virtual FlowPair get(std::size_t v, std::size_t t) const = 0;
};

class ZeroFlowSupplier : public FlowSupplier {
 public:
  explicit ZeroFlowSupplier(std::size_t height, std::size_t width) : h_(height), w_(width) {}
  FlowPair get(std::size_t, std::size_t) const override {
    return {FlowField(h_, w_, FlowResolution::pixel), FlowField(h_, w_, FlowResolution::pixel)};
  }

 private:
  std::size_t h_, w_;
};

struct PropagateOptions {
  double fb_alpha = 0.01;
  double fb_beta = 0.5;
  std::size_t patch = 2;
  bool inherit = true;   // both off = the per-sub-grid independent baseline
  bool replace = true;
  Interp interp = Interp::bilinear;
  std::ostream* trace = nullptr;        // one JSON object per step when set
  std::string token_dump_dir;           // per-frame token caches when set
  bool check_overlap_equality = false;  // assert the cache is never mutated
};

// Runs the plan over the grid: per step, encode members, inherit the
// overlap, run the editor, flow-replace the new rightmost members, cache
// first-time members, and decode frames whose last step this is.
CameraTimeGrid propagate(const CameraTimeGrid& grid, const TraversalPlan& plan,
                         FrameEditor& editor, const FlowSupplier& flows, const TextTokens& text,
                         const PropagateOptions& opts = {});

}  // namespace stgrid
