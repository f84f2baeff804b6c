#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "stgrid/mat.hpp"
#include "stgrid/rng.hpp"
#include "stgrid/tokens.hpp"

namespace stgrid {

// 2D axial rotary embedding over per-head channels: the first row_channels
// rotate with the token's row index, the remaining col_channels with its
// column. All frames of a sub-grid share one coordinate frame, so a token at
// (r, c) gets the same rotation in every member.
struct RopeSpec {
  double base = 10000.0;
  std::size_t row_channels = 0;
  std::size_t col_channels = 0;

  std::size_t dim() const { return row_channels + col_channels; }
};

void validate_rope(const RopeSpec& spec);

// Even row/col split of d_k, row axis first (d_k must be even).
RopeSpec default_rope(std::size_t d_k);

struct TokenPos {
  long row = 0;
  long col = 0;
};

// Rotates `vectors` (rows of spec.dim() channels) in place; one position per
// row. Queries and keys pass through here, values never do.
void rope_embed(Mat& vectors, const std::vector<TokenPos>& positions, const RopeSpec& spec);

// Per-layer projection weights, all d x d with d = heads * d_k. The text
// stream is read-only context in this stack (the prompt is never updated),
// so it carries key/value projections only.
struct AttentionParams {
  std::size_t heads = 1;
  std::size_t d_k = 0;
  Mat img_wq, img_wk, img_wv, img_wo;
  Mat txt_wk, txt_wv;

  std::size_t dim() const { return heads * d_k; }
};

AttentionParams random_attention_params(Rng& rng, std::size_t heads, std::size_t d_k);
void validate_params(const AttentionParams& p);

// Half-open window of attention depths that see the joint sub-grid context.
struct LayerRange {
  std::size_t start = 0;
  std::size_t end = 0;

  LayerRange() = default;
  LayerRange(std::size_t s, std::size_t e);
  bool contains(std::size_t layer) const { return layer >= start && layer < end; }
};

bool layer_gate(std::size_t layer_index, const LayerRange& vital);

// [0, 30) once the stack is deep enough to have that many layers; shallower
// stacks gate their first half (rounded down, at least one layer).
LayerRange default_vital_range(std::size_t depth);

// Concatenated key/value rows, 4*h*w for a joint sub-grid or h*w for
// per-frame attention. block_rows/cols record the member lattice so keys can
// be rotated by their in-frame positions later.
struct JointKv {
  Mat k, v;
  std::size_t block_rows = 0;
  std::size_t block_cols = 0;
};

JointKv project_kv(const TokenMap& tokens, const AttentionParams& p);
JointKv build_joint_kv(const std::array<TokenMap, 4>& members, const AttentionParams& p);

struct StgaDebug {
  std::vector<double> row_sums;  // softmax row totals, heads * h * w entries
};

// Joint attention of one query frame against text plus sub-grid keys/values:
// softmax([Q_txt, R(Q)] [K_txt, R(K_S)]^T / sqrt(d_k)) [V_txt, V_S], with R
// the rotary map applied to image queries and keys only. Text query rows do
// not influence image rows (softmax is per row), so only the image-query
// rows are computed and returned. No output projection here; the block
// wrapper owns it.
TokenMap stga(const TokenMap& query_tokens, const JointKv& kv, const TextTokens& text,
              const AttentionParams& p, const RopeSpec& rope, StgaDebug* debug = nullptr);

// Toy stand-in for the deep editing stack: depth layers of one attention
// sub-layer each, followed by the output projection, a residual add and
// RMS per-token normalisation. Gated layers attend jointly over all four
// member frames; the rest fall back to per-frame attention plus text.
// Member order matches the sub-grid member order.
std::array<TokenMap, 4> run_block_stack(const std::array<TokenMap, 4>& members,
                                        const TextTokens& text, std::size_t depth,
                                        const LayerRange& vital,
                                        const std::vector<AttentionParams>& layers,
                                        const RopeSpec& rope);

}  // namespace stgrid
