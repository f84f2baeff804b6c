#include "stgrid/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace stgrid {

void validate_rope(const RopeSpec& spec) {
  if (spec.row_channels % 2 != 0 || spec.col_channels % 2 != 0)
    throw DimMismatch("rotary channel counts must be even per axis");
  if (spec.dim() == 0) throw DimMismatch("rotary embedding needs at least one channel");
  if (!(spec.base > 0.0)) throw InvalidArgument("rotary base frequency must be positive");
}

namespace {

// Rotates consecutive channel pairs of `vec + offset` by pos-dependent
// angles; `channels` is even.
void rotate_axis(double* vec, std::size_t channels, double pos, double base) {
  for (std::size_t j = 0; j * 2 < channels; ++j) {
    double inv_freq = std::pow(base, -2.0 * double(j) / double(channels));
    double angle = pos * inv_freq;
    double c = std::cos(angle), s = std::sin(angle);
    double a = vec[2 * j], b = vec[2 * j + 1];
    vec[2 * j] = a * c - b * s;
    vec[2 * j + 1] = a * s + b * c;
  }
}

}  // namespace

void rope_embed(Mat& vectors, const std::vector<TokenPos>& positions, const RopeSpec& spec) {
  validate_rope(spec);
  if (vectors.cols != spec.dim())
    throw DimMismatch("vector dim " + std::to_string(vectors.cols) +
                      " does not match rotary spec dim " + std::to_string(spec.dim()));
  if (vectors.rows != positions.size())
    throw DimMismatch("one position required per vector");

  for (std::size_t i = 0; i < vectors.rows; ++i) {
    double* row = vectors.row(i);
    rotate_axis(row, spec.row_channels, double(positions[i].row), spec.base);
    rotate_axis(row + spec.row_channels, spec.col_channels, double(positions[i].col), spec.base);
  }
}

AttentionParams random_attention_params(Rng& rng, std::size_t heads, std::size_t d_k) {
  AttentionParams p;
  p.heads = heads;
  p.d_k = d_k;
  std::size_t d = p.dim();
  double scale = 1.0 / std::sqrt(double(d));
  auto fill = [&](Mat& m) {
    m = Mat(d, d);
    for (double& v : m.data) v = rng.normal() * scale;
  };
  fill(p.img_wq);
  fill(p.img_wk);
  fill(p.img_wv);
  fill(p.img_wo);
  fill(p.txt_wk);
  fill(p.txt_wv);
  return p;
}

void validate_params(const AttentionParams& p) {
  if (p.heads == 0 || p.d_k == 0) throw DimMismatch("attention needs heads >= 1 and d_k >= 1");
  std::size_t d = p.dim();
  for (const Mat* m : {&p.img_wq, &p.img_wk, &p.img_wv, &p.img_wo, &p.txt_wk, &p.txt_wv})
    if (m->rows != d || m->cols != d)
      throw ShapeMismatch("projection weights must be d x d with d = heads * d_k");
}

LayerRange::LayerRange(std::size_t s, std::size_t e) : start(s), end(e) {
  if (s >= e) throw InvalidArgument("layer range must satisfy start < end");
}

bool layer_gate(std::size_t layer_index, const LayerRange& vital) {
  return vital.contains(layer_index);
}

LayerRange default_vital_range(std::size_t depth) {
  if (depth == 0) throw InvalidArgument("stack depth must be positive");
  if (depth >= 60) return LayerRange(0, 30);
  return LayerRange(0, std::max<std::size_t>(1, depth / 2));
}

RopeSpec default_rope(std::size_t d_k) {
  if (d_k == 0 || d_k % 2 != 0)
    throw DimMismatch("the default axial split needs an even per-head dim");
  RopeSpec spec;
  std::size_t half = d_k / 2;
  spec.row_channels = half - half % 2;
  spec.col_channels = d_k - spec.row_channels;
  return spec;
}

namespace {

Mat tokens_as_mat(const TokenMap& tokens) {
  Mat m(tokens.count(), tokens.dim);
  std::copy(tokens.data.begin(), tokens.data.end(), m.data.begin());
  return m;
}

Mat text_as_mat(const TextTokens& text) {
  Mat m(text.length, text.dim);
  std::copy(text.data.begin(), text.data.end(), m.data.begin());
  return m;
}

std::vector<TokenPos> lattice_positions(std::size_t rows, std::size_t cols, std::size_t repeat) {
  std::vector<TokenPos> pos;
  pos.reserve(rows * cols * repeat);
  for (std::size_t b = 0; b < repeat; ++b)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) pos.push_back({long(r), long(c)});
  return pos;
}

// Applies the axial rotation to each head's d_k slice of every row.
void rope_heads(Mat& m, const std::vector<TokenPos>& positions, const RopeSpec& spec,
                std::size_t heads) {
  std::size_t d_k = spec.dim();
  Mat slice(m.rows, d_k);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < m.rows; ++i)
      std::copy(m.row(i) + h * d_k, m.row(i) + (h + 1) * d_k, slice.row(i));
    rope_embed(slice, positions, spec);
    for (std::size_t i = 0; i < m.rows; ++i)
      std::copy(slice.row(i), slice.row(i) + d_k, m.row(i) + h * d_k);
  }
}

}  // namespace

JointKv project_kv(const TokenMap& tokens, const AttentionParams& p) {
  validate_params(p);
  if (tokens.dim != p.dim()) throw DimMismatch("token dim does not match attention params");
  Mat x = tokens_as_mat(tokens);
  JointKv kv;
  kv.k = matmul(x, p.img_wk);
  kv.v = matmul(x, p.img_wv);
  kv.block_rows = tokens.rows;
  kv.block_cols = tokens.cols;
  return kv;
}

JointKv build_joint_kv(const std::array<TokenMap, 4>& members, const AttentionParams& p) {
  validate_params(p);
  for (const TokenMap& m : members) {
    if (!m.same_shape(members[0]))
      throw ShapeMismatch("sub-grid members must share one token shape");
    if (m.dim != p.dim()) throw DimMismatch("token dim does not match attention params");
  }

  const std::size_t n = members[0].count();
  JointKv kv;
  kv.k = Mat(4 * n, p.dim());
  kv.v = Mat(4 * n, p.dim());
  kv.block_rows = members[0].rows;
  kv.block_cols = members[0].cols;
  for (std::size_t b = 0; b < 4; ++b) {
    JointKv part = project_kv(members[b], p);
    std::copy(part.k.data.begin(), part.k.data.end(), kv.k.row(b * n));
    std::copy(part.v.data.begin(), part.v.data.end(), kv.v.row(b * n));
  }
  return kv;
}

TokenMap stga(const TokenMap& query_tokens, const JointKv& kv, const TextTokens& text,
              const AttentionParams& p, const RopeSpec& rope, StgaDebug* debug) {
  validate_params(p);
  validate_rope(rope);
  const std::size_t d = p.dim();
  if (rope.dim() != p.d_k) throw DimMismatch("rotary spec dim must equal d_k");
  if (query_tokens.dim != d) throw DimMismatch("query token dim does not match params");
  if (text.length > 0 && text.dim != d) throw DimMismatch("text dim does not match params");
  if (kv.k.cols != d || kv.v.cols != d || kv.k.rows != kv.v.rows)
    throw ShapeMismatch("key/value shapes disagree with params");
  const std::size_t block = kv.block_rows * kv.block_cols;
  if (block == 0 || kv.k.rows % block != 0)
    throw ShapeMismatch("key rows must tile the member lattice");

  const std::size_t h = query_tokens.rows, w = query_tokens.cols;
  const std::size_t n = h * w;
  const std::size_t blocks = kv.k.rows / block;

  Mat q = matmul(tokens_as_mat(query_tokens), p.img_wq);
  rope_heads(q, lattice_positions(h, w, 1), rope, p.heads);

  Mat k_img = kv.k;  // rotate a copy; the caller's joint K/V stays reusable
  rope_heads(k_img, lattice_positions(kv.block_rows, kv.block_cols, blocks), rope, p.heads);

  Mat k_txt, v_txt;
  if (text.length > 0) {
    Mat tx = text_as_mat(text);
    k_txt = matmul(tx, p.txt_wk);
    v_txt = matmul(tx, p.txt_wv);
  }
  const std::size_t keys = text.length + kv.k.rows;
  const double inv_sqrt_dk = 1.0 / std::sqrt(double(p.d_k));

  TokenMap out(h, w, d, 0.0);
  if (debug) debug->row_sums.assign(p.heads * n, 0.0);

  std::vector<double> logits(keys);
  for (std::size_t head = 0; head < p.heads; ++head) {
    const std::size_t off = head * p.d_k;
    for (std::size_t i = 0; i < n; ++i) {
      const double* qr = q.row(i) + off;
      for (std::size_t j = 0; j < text.length; ++j) {
        const double* kr = k_txt.row(j) + off;
        double dot = 0.0;
        for (std::size_t k = 0; k < p.d_k; ++k) dot += qr[k] * kr[k];
        logits[j] = dot * inv_sqrt_dk;
      }
      for (std::size_t j = 0; j < kv.k.rows; ++j) {
        const double* kr = k_img.row(j) + off;
        double dot = 0.0;
        for (std::size_t k = 0; k < p.d_k; ++k) dot += qr[k] * kr[k];
        logits[text.length + j] = dot * inv_sqrt_dk;
      }

      double peak = -std::numeric_limits<double>::infinity();
      for (double l : logits) {
        if (!std::isfinite(l)) throw NonFiniteLogit("non-finite attention logit");
        peak = std::max(peak, l);
      }
      double denom = 0.0;
      for (double& l : logits) {
        l = std::exp(l - peak);
        denom += l;
      }

      double* dst = out.data.data() + i * d + off;
      double row_sum = 0.0;
      for (std::size_t j = 0; j < keys; ++j) {
        double prob = logits[j] / denom;
        row_sum += prob;
        const double* vr =
            (j < text.length) ? v_txt.row(j) + off : kv.v.row(j - text.length) + off;
        for (std::size_t k = 0; k < p.d_k; ++k) dst[k] += prob * vr[k];
      }
      if (debug) debug->row_sums[head * n + i] = row_sum;
    }
  }
  return out;
}

std::array<TokenMap, 4> run_block_stack(const std::array<TokenMap, 4>& members,
                                        const TextTokens& text, std::size_t depth,
                                        const LayerRange& vital,
                                        const std::vector<AttentionParams>& layers,
                                        const RopeSpec& rope) {
  if (depth == 0) throw InvalidArgument("stack depth must be positive");
  if (layers.size() != depth) throw ShapeMismatch("one AttentionParams set per layer required");

  constexpr double kNormEps = 1e-6;
  std::array<TokenMap, 4> x = members;

  for (std::size_t l = 0; l < depth; ++l) {
    const AttentionParams& p = layers[l];
    std::array<TokenMap, 4> attn;
    if (layer_gate(l, vital)) {
      // All four queries read one immutable joint K/V built from the
      // pre-layer snapshot; updates land only after every member is done.
      JointKv kv = build_joint_kv(x, p);
      for (std::size_t i = 0; i < 4; ++i) attn[i] = stga(x[i], kv, text, p, rope);
    } else {
      for (std::size_t i = 0; i < 4; ++i) attn[i] = stga(x[i], project_kv(x[i], p), text, p, rope);
    }
    for (std::size_t i = 0; i < 4; ++i) {
      Mat projected = matmul(tokens_as_mat(attn[i]), p.img_wo);
      TokenMap& xi = x[i];
      const std::size_t d = xi.dim;
      for (std::size_t tok = 0; tok < xi.count(); ++tok) {
        double* row = xi.data.data() + tok * d;
        const double* add = projected.row(tok);
        double ms = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          row[k] += add[k];
          ms += row[k] * row[k];
        }
        double inv = 1.0 / std::sqrt(ms / double(d) + kNormEps);
        for (std::size_t k = 0; k < d; ++k) row[k] *= inv;
      }
    }
  }
  return x;
}

}  // namespace stgrid
