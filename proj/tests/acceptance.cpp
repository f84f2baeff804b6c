// Release gate: one self-contained scenario per shipping criterion, each
// printed as a [PASS]/[FAIL] line with its runtime. Exits non-zero when any
// scenario fails, so ctest treats the gate as a single test.
#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stgrid/attention.hpp"
#include "stgrid/ctp.hpp"
#include "stgrid/errors.hpp"
#include "stgrid/flow.hpp"
#include "stgrid/grid.hpp"
#include "stgrid/io.hpp"
#include "stgrid/metrics.hpp"
#include "stgrid/pipeline.hpp"
#include "stgrid/rng.hpp"
#include "stgrid/splat.hpp"
#include "stgrid/synth.hpp"

using namespace stgrid;
namespace fs = std::filesystem;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void expect(bool cond, const std::string& what) {
  if (!cond) throw Failure(what);
}

std::string num(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

fs::path fresh_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("stgrid_acceptance_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  expect(bool(in), "cannot read " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
}

LoadedConfig config_of(const std::string& raw) { return {pipeline_config_from_json(raw), raw}; }

// ---- brute-force attention reference ----

void ref_rotate(double* vec, long row, long col, const RopeSpec& spec) {
  auto rotate_axis = [&](double* seg, std::size_t channels, long pos) {
    for (std::size_t j = 0; 2 * j + 1 < channels; ++j) {
      double angle = double(pos) * std::pow(spec.base, -double(2 * j) / double(channels));
      double c = std::cos(angle), s = std::sin(angle);
      double a = seg[2 * j], b = seg[2 * j + 1];
      seg[2 * j] = a * c - b * s;
      seg[2 * j + 1] = a * s + b * c;
    }
  };
  rotate_axis(vec, spec.row_channels, row);
  rotate_axis(vec + spec.row_channels, spec.col_channels, col);
}

std::vector<double> ref_project(const double* x, const Mat& w, std::size_t off, std::size_t d_k) {
  std::vector<double> out(d_k, 0.0);
  for (std::size_t k = 0; k < d_k; ++k)
    for (std::size_t i = 0; i < w.rows; ++i) out[k] += x[i] * w.at(i, off + k);
  return out;
}

TokenMap ref_stga(const TokenMap& query, const std::array<TokenMap, 4>& members,
                  const TextTokens& text, const AttentionParams& p, const RopeSpec& rope) {
  const std::size_t h = query.rows, w = query.cols, d = p.dim();
  TokenMap out(h, w, d, 0.0);
  for (std::size_t head = 0; head < p.heads; ++head) {
    const std::size_t off = head * p.d_k;
    for (std::size_t qr = 0; qr < h; ++qr)
      for (std::size_t qc = 0; qc < w; ++qc) {
        std::vector<double> q = ref_project(query.token(qr, qc), p.img_wq, off, p.d_k);
        ref_rotate(q.data(), long(qr), long(qc), rope);

        std::vector<double> logits;
        std::vector<std::vector<double>> values;
        for (std::size_t j = 0; j < text.length; ++j) {
          std::vector<double> k = ref_project(text.token(j), p.txt_wk, off, p.d_k);
          double dot = 0.0;
          for (std::size_t i = 0; i < p.d_k; ++i) dot += q[i] * k[i];
          logits.push_back(dot / std::sqrt(double(p.d_k)));
          values.push_back(ref_project(text.token(j), p.txt_wv, off, p.d_k));
        }
        for (const TokenMap& m : members)
          for (std::size_t kr = 0; kr < m.rows; ++kr)
            for (std::size_t kc = 0; kc < m.cols; ++kc) {
              std::vector<double> k = ref_project(m.token(kr, kc), p.img_wk, off, p.d_k);
              ref_rotate(k.data(), long(kr), long(kc), rope);
              double dot = 0.0;
              for (std::size_t i = 0; i < p.d_k; ++i) dot += q[i] * k[i];
              logits.push_back(dot / std::sqrt(double(p.d_k)));
              values.push_back(ref_project(m.token(kr, kc), p.img_wv, off, p.d_k));
            }

        double peak = logits[0];
        for (double l : logits) peak = std::max(peak, l);
        double z = 0.0;
        std::vector<double> e(logits.size());
        for (std::size_t j = 0; j < logits.size(); ++j) z += e[j] = std::exp(logits[j] - peak);
        for (std::size_t j = 0; j < logits.size(); ++j)
          for (std::size_t i = 0; i < p.d_k; ++i)
            out.at(qr, qc, off + i) += e[j] / z * values[j][i];
      }
  }
  return out;
}

TokenMap random_tokens(Rng& rng, std::size_t rows, std::size_t cols, std::size_t dim) {
  TokenMap t(rows, cols, dim);
  for (double& v : t.data) v = rng.normal();
  return t;
}

// ---- criteria ----

void criterion_attention_oracle() {
  Rng rng(101);
  for (int i = 0; i < 200; ++i) {
    std::size_t heads = 1 + rng.index(2);
    std::size_t d_k = heads == 1 ? 2 * (1 + rng.index(4)) : 2 * (1 + rng.index(2));
    std::size_t h = 1 + rng.index(3), w = 1 + rng.index(3);
    AttentionParams p = random_attention_params(rng, heads, d_k);
    RopeSpec rope = default_rope(d_k);
    std::array<TokenMap, 4> members = {
        random_tokens(rng, h, w, p.dim()), random_tokens(rng, h, w, p.dim()),
        random_tokens(rng, h, w, p.dim()), random_tokens(rng, h, w, p.dim())};
    TextTokens text(rng.index(4), p.dim());
    for (double& v : text.data) v = rng.normal();

    JointKv kv = build_joint_kv(members, p);
    std::size_t qi = rng.index(4);
    StgaDebug dbg;
    TokenMap got = stga(members[qi], kv, text, p, rope, &dbg);
    TokenMap want = ref_stga(members[qi], members, text, p, rope);
    for (std::size_t k = 0; k < got.data.size(); ++k)
      expect(std::abs(got.data[k] - want.data[k]) < 1e-6,
             "instance " + std::to_string(i) + " deviates from the oracle by " +
                 num(std::abs(got.data[k] - want.data[k])));
    for (double s : dbg.row_sums)
      expect(std::abs(s - 1.0) < 1e-9, "softmax row sum " + num(s) + " is not stochastic");
  }
}

void criterion_rope_shift_invariance() {
  Rng rng(202);
  for (int i = 0; i < 1000; ++i) {
    std::size_t d_k = 2 * (1 + rng.index(4));
    RopeSpec spec = default_rope(d_k);
    Mat q(1, d_k), k(1, d_k);
    for (double& v : q.data) v = rng.normal();
    for (double& v : k.data) v = rng.normal();

    TokenPos pq{long(rng.index(16)) + 8, long(rng.index(16)) + 8};
    TokenPos pk{long(rng.index(16)) + 8, long(rng.index(16)) + 8};
    long dr = long(rng.index(17)) - 8, dc = long(rng.index(17)) - 8;

    auto rotated_dot = [&](TokenPos a, TokenPos b) {
      Mat qe = q, ke = k;
      rope_embed(qe, {a}, spec);
      rope_embed(ke, {b}, spec);
      double dot = 0.0;
      for (std::size_t j = 0; j < d_k; ++j) dot += qe.at(0, j) * ke.at(0, j);
      return dot;
    };
    double base = rotated_dot(pq, pk);
    double moved = rotated_dot({pq.row + dr, pq.col + dc}, {pk.row + dr, pk.col + dc});
    expect(std::abs(base - moved) < 1e-5,
           "sample " + std::to_string(i) + ": dot drifts by " + num(std::abs(base - moved)));
  }
}

void criterion_traversal_properties() {
  for (std::size_t V = 2; V <= 8; ++V)
    for (std::size_t T = 2; T <= 8; ++T) {
      TraversalPlan plan = asymmetric_traversal(V, T);
      std::vector<std::size_t> first = plan.first_use();
      for (std::size_t i = 0; i < first.size(); ++i)
        expect(first[i] < plan.steps.size(),
               "V=" + std::to_string(V) + ",T=" + std::to_string(T) + ": cell " +
                   std::to_string(i) + " never fused");

      for (std::size_t v = 0; v + 1 < V; ++v) {
        std::size_t anchored = 0;
        for (const PlanStep& s : plan.steps)
          if (s.anchor.v == v) ++anchored;
        std::size_t want = (v % 2 == 0 || v == V - 2) ? T - 1 : 1;
        expect(anchored == want, "V=" + std::to_string(V) + ",T=" + std::to_string(T) +
                                     ": row " + std::to_string(v) + " emits " +
                                     std::to_string(anchored) + " steps, expected " +
                                     std::to_string(want));
      }

      std::vector<bool> produced(V * T, false);
      for (std::size_t k = 0; k < plan.steps.size(); ++k) {
        const PlanStep& s = plan.steps[k];
        if (k > 0) {
          expect(!s.overlap.empty(), "step " + std::to_string(k) + " shares no frames");
          for (const GridCoord& c : s.overlap)
            expect(produced[plan.cell_index(c)],
                   "step " + std::to_string(k) + " overlaps an unseen frame");
        }
        for (const GridCoord& c : s.members) produced[plan.cell_index(c)] = true;
      }
    }

  auto anchors_of = [](const TraversalPlan& plan) {
    std::vector<std::pair<std::size_t, std::size_t>> a;
    for (const PlanStep& s : plan.steps) a.push_back({s.anchor.v, s.anchor.t});
    return a;
  };
  using Seq = std::vector<std::pair<std::size_t, std::size_t>>;
  expect(anchors_of(asymmetric_traversal(3, 3)) == Seq{{0, 0}, {0, 1}, {1, 0}, {1, 1}},
         "3x3 sweep departs from the hand-traced order");
  expect(anchors_of(asymmetric_traversal(4, 3)) ==
             Seq{{0, 0}, {0, 1}, {1, 0}, {2, 0}, {2, 1}},
         "4x3 sweep departs from the hand-traced order");
}

void criterion_warp_mask_corners() {
  Rng rng(404);
  TokenMap prev = random_tokens(rng, 6, 5, 4);

  FlowField zero(6, 5, FlowResolution::token);
  WarpedTokens still = warp_tokens(zero, prev);
  expect(still.tokens.data == prev.data, "identity warp changed the tokens");
  for (std::uint8_t b : still.in_bounds.data)
    expect(b == 1, "identity warp dropped a cell out of bounds");

  FlowField shift(6, 5, FlowResolution::token);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      shift.dx(y, x) = -2.0;
      shift.dy(y, x) = 1.0;
    }
  WarpedTokens moved = warp_tokens(shift, prev);
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      bool inside = x >= 2 && y + 1 < 6;
      expect(moved.in_bounds.at(y, x) == (inside ? 1 : 0), "integer shift bounds flag wrong");
      if (!inside) continue;
      for (std::size_t k = 0; k < 4; ++k)
        expect(moved.tokens.at(y, x, k) == prev.at(y + 1, x - 2, k),
               "integer shift misplaced a token");
    }

  TokenMap current = random_tokens(rng, 6, 5, 4);
  ValidityMask all1(6, 5, 1), all0(6, 5, 0);
  TokenMap take_warp = flow_guided_replacement(current, prev, zero, all1);
  expect(take_warp.data == prev.data, "an all-valid mask must hand back the warped tokens");
  TokenMap take_cur = flow_guided_replacement(current, prev, zero, all0);
  expect(take_cur.data == current.data, "an all-invalid mask must keep the current tokens");

  FlowField fwd(8, 8, FlowResolution::pixel), bwd(8, 8, FlowResolution::pixel);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      fwd.dx(y, x) = 1.25;
      fwd.dy(y, x) = -0.75;
      bwd.dx(y, x) = -1.25;
      bwd.dy(y, x) = 0.75;
    }
  ValidityMask agree = fb_consistency_mask(fwd, bwd, 0.01, 0.5);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      double tx = double(x) + 1.25, ty = double(y) - 0.75;
      bool interior = tx >= 0.0 && ty >= 0.0 && tx <= 7.0 && ty <= 7.0;
      if (interior)
        expect(agree.at(y, x) == 1, "exact inverse flows flagged invalid at an interior cell");
    }

  for (std::size_t i = 0; i < bwd.data.size(); ++i) bwd.data[i] = fwd.data[i];
  ValidityMask clash = fb_consistency_mask(fwd, bwd, 0.01, 0.5);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      double tx = double(x) + 1.25, ty = double(y) - 0.75;
      bool interior = tx >= 0.0 && ty >= 0.0 && tx <= 7.0 && ty <= 7.0;
      if (interior)
        expect(clash.at(y, x) == 0, "contradictory flows passed the consistency check");
    }
}

void criterion_noop_pipeline() {
  auto start = std::chrono::steady_clock::now();
  fs::path dir = fresh_dir("noop");
  write_file(dir / "spec.json", R"({
    "views": 3, "times": 4, "height": 32, "width": 32,
    "disparity": 2.0, "seed": 77,
    "sprites": [
      {"center": [10, 12], "half_size": [4, 3], "color": [0.8, 0.3, 0.2]},
      {"kind": "blob", "center": [22, 20], "radius": 5, "color": [0.2, 0.5, 0.8]}
    ]
  })");
  cmd_synth((dir / "spec.json").string(), (dir / "scene").string());

  std::string raw = std::string(R"({
    "grid_manifest": ")") + (dir / "scene" / "manifest.json").string() + R"(",
    "output_dir": ")" + (dir / "out").string() + R"(",
    "editor": {"type": "identity"},
    "flow": {"source": "zero"}
  })";
  cmd_edit(config_of(raw));

  for (std::size_t v = 0; v < 3; ++v)
    for (std::size_t t = 0; t < 4; ++t) {
      std::string name = "frame_v" + std::to_string(v) + "_t" + std::to_string(t) + ".ppm";
      expect(read_file(dir / "scene" / name) == read_file(dir / "out" / name),
             name + " changed under the identity edit");
    }
  fs::remove_all(dir);
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  expect(secs < 30.0, "no-op pipeline took " + num(secs) + " s, budget is 30 s");
}

void criterion_ablation_structure() {
  fs::path dir = fresh_dir("ablation");
  write_file(dir / "spec.json", R"({
    "views": 2, "times": 6, "height": 32, "width": 32,
    "disparity": 2.0, "background_cell": 6.0, "seed": 31,
    "sprites": [{"center": [8, 12], "half_size": [4, 3],
                 "motion": {"velocity": [2, 0]}}]
  })");
  cmd_synth((dir / "spec.json").string(), (dir / "scene").string());
  std::string manifest = (dir / "scene" / "manifest.json").string();

  // The mock editor paints a different constant per traversal step; without
  // propagation every sub-grid keeps its own paint and the seams show.
  const char* editor = R"("editor": {"type": "constant-shift", "shift": 0.05, "step_gain": 0.02})";
  std::string raw_indep = std::string(R"({
    "grid_manifest": ")") + manifest + R"(",
    "output_dir": ")" + (dir / "indep").string() + R"(",
    "traversal": "tiled", "inherit": false, "replace": false,
    "flow": {"source": "files"}, )" + editor + "}";
  std::string raw_ctp = std::string(R"({
    "grid_manifest": ")") + manifest + R"(",
    "output_dir": ")" + (dir / "ctp").string() + R"(",
    "flow": {"source": "files"}, )" + editor + "}";
  cmd_edit(config_of(raw_indep));
  cmd_edit(config_of(raw_ctp));

  CameraTimeGrid indep = load_grid((dir / "indep" / "manifest.json").string());
  CameraTimeGrid ctp = load_grid((dir / "ctp" / "manifest.json").string());

  std::vector<std::vector<FlowField>> flows(2);
  std::vector<std::vector<ValidityMask>> masks(2);
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t t = 1; t < 6; ++t) {
      std::string stem = "_v" + std::to_string(v) + "_t" + std::to_string(t);
      flows[v].push_back(load_flow((dir / "scene" / ("flow" + stem + "_fwd.stfl")).string()));
      masks[v].push_back(load_mask((dir / "scene" / ("mask" + stem + ".stmk")).string()));
    }

  MetricReport indep_global =
      boundary_warping_error(tiled_traversal(2, 6), indep, flows, masks);
  MetricReport ctp_global =
      boundary_warping_error(asymmetric_traversal(2, 6), ctp, flows, masks);
  MetricReport ctp_local = warping_error(ctp, flows, masks);
  expect(indep_global.value && ctp_global.value && ctp_local.value,
         "a warping report came back empty");

  expect(*indep_global.value > *ctp_global.value,
         "independent edits should leave larger seams: independent " +
             num(*indep_global.value) + " vs propagated " + num(*ctp_global.value));
  double lo = std::min(*ctp_global.value, *ctp_local.value);
  double hi = std::max(*ctp_global.value, *ctp_local.value);
  expect(hi <= 2.0 * lo, "propagated errors diverge: local " + num(*ctp_local.value) +
                             " vs boundary " + num(*ctp_global.value));
  fs::remove_all(dir);
}

void criterion_gradient_check() {
  auto start = std::chrono::steady_clock::now();
  Rng rng(777);
  GaussianScene scene = random_scene(rng, 3, 16, 16);
  randomize_final_layers(rng, scene.deformation, 0.3);
  // Fatten the splats and pull the target away from the render so residuals
  // add coherently; tiny gradients would drown in float32 render noise.
  for (Gaussian2D& g : scene.gaussians) {
    g.scale[0] *= 1.8;
    g.scale[1] *= 1.8;
    g.opacity = 0.85;
  }
  Frame target(16, 16, 0.02f);
  const double t = 0.7;
  const LossConfig cfg{LossNorm::l2, 0.0};

  RenderGradResult res = render_grad(scene, t, target, cfg);

  struct Probe {
    double* param;
    double analytic;
  };
  std::vector<Probe> pool;
  for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
    Gaussian2D& g = scene.gaussians[i];
    GaussianGrads& gg = res.grads.gaussians[i];
    pool.push_back({&g.mu[0], gg.mu[0]});
    pool.push_back({&g.mu[1], gg.mu[1]});
    pool.push_back({&g.scale[0], gg.scale[0]});
    pool.push_back({&g.scale[1], gg.scale[1]});
    pool.push_back({&g.rotation, gg.rotation});
    pool.push_back({&g.color[0], gg.color[0]});
    pool.push_back({&g.color[1], gg.color[1]});
    pool.push_back({&g.color[2], gg.color[2]});
    pool.push_back({&g.opacity, gg.opacity});
  }
  auto add_net = [&](Mlp& net, MlpGrads& grads) {
    for (std::size_t i = 0; i < net.w1.size(); ++i) pool.push_back({&net.w1[i], grads.w1[i]});
    for (std::size_t i = 0; i < net.b1.size(); ++i) pool.push_back({&net.b1[i], grads.b1[i]});
    for (std::size_t i = 0; i < net.w2.size(); ++i) pool.push_back({&net.w2[i], grads.w2[i]});
    for (std::size_t i = 0; i < net.b2.size(); ++i) pool.push_back({&net.b2[i], grads.b2[i]});
    for (std::size_t i = 0; i < net.w3.size(); ++i) pool.push_back({&net.w3[i], grads.w3[i]});
    for (std::size_t i = 0; i < net.b3.size(); ++i) pool.push_back({&net.b3[i], grads.b3[i]});
  };
  add_net(scene.deformation.pos_net, res.grads.pos_net);
  add_net(scene.deformation.rot_net, res.grads.rot_net);
  add_net(scene.deformation.scale_net, res.grads.scale_net);

  // Probe the 100 best-conditioned parameters: the float32 frame buffer
  // floors the finite-difference noise near 1e-6, so tiny gradients cannot
  // carry a relative tolerance.
  std::sort(pool.begin(), pool.end(),
            [](const Probe& a, const Probe& b) { return std::abs(a.analytic) > std::abs(b.analytic); });
  expect(pool.size() >= 100, "parameter pool smaller than 100");
  expect(std::abs(pool[99].analytic) >= 1e-3,
         "100th gradient magnitude " + num(std::abs(pool[99].analytic)) +
             " is too small to difference reliably");

  const double h = 1e-3;
  double worst = 0.0;
  for (std::size_t i = 0; i < 100; ++i) {
    double save = *pool[i].param;
    *pool[i].param = save + h;
    double up = render_grad(scene, t, target, cfg).loss;
    *pool[i].param = save - h;
    double down = render_grad(scene, t, target, cfg).loss;
    *pool[i].param = save;
    double numeric = (up - down) / (2.0 * h);
    double rel = std::abs(numeric - pool[i].analytic) /
                 std::max(std::abs(numeric), std::abs(pool[i].analytic));
    worst = std::max(worst, rel);
  }
  expect(worst < 1e-3, "max relative gradient error " + num(worst));
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  expect(secs < 60.0, "gradient check took " + num(secs) + " s, budget is 60 s");
}

void criterion_self_reconstruction() {
  auto start = std::chrono::steady_clock::now();
  Rng rng(2024);
  GaussianScene truth = random_scene(rng, 20, 32, 32);
  randomize_final_layers(rng, truth.deformation, 0.2);

  std::vector<Frame> targets;
  for (int k = 0; k < 4; ++k)
    targets.push_back(render(deform(truth, double(k) / 3.0), 32, 32, truth.background));

  GaussianScene bent = truth;
  Rng noise(2025);
  for (Gaussian2D& g : bent.gaussians) {
    g.mu[0] += noise.uniform(-0.8, 0.8);
    g.mu[1] += noise.uniform(-0.8, 0.8);
    g.scale[0] *= std::exp(noise.uniform(-0.15, 0.15));
    g.scale[1] *= std::exp(noise.uniform(-0.15, 0.15));
    g.rotation += noise.uniform(-0.15, 0.15);
    for (double& c : g.color) c = std::clamp(c + noise.uniform(-0.06, 0.06), 0.05, 0.95);
    g.opacity = std::clamp(g.opacity + noise.uniform(-0.08, 0.08), 0.05, 0.95);
  }

  OptimizeConfig cfg;
  cfg.iterations = 1500;  // inside the pinned 2000 budget
  cfg.loss = {LossNorm::l2, 0.0};
  GaussianScene fitted = optimize(bent, targets, cfg);

  double mean_psnr = 0.0;
  for (int k = 0; k < 4; ++k) {
    Frame out = render(deform(fitted, double(k) / 3.0), 32, 32, fitted.background);
    mean_psnr += psnr(out, targets[std::size_t(k)]);
  }
  mean_psnr /= 4.0;
  expect(mean_psnr >= 35.0, "recovered only " + num(mean_psnr) + " dB, need 35");
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  expect(secs < 180.0, "self-reconstruction took " + num(secs) + " s, budget is 180 s");
}

void criterion_metric_exactness() {
  Frame a(6, 5, 0.3f), b(6, 5, 0.4f);
  expect(std::abs(psnr(a, b) - 20.0) < 1e-6,
         "uniform 0.1 gap gives " + num(psnr(a, b)) + " dB, not 20");
  expect(psnr(Frame(4, 4, 0.0f), Frame(4, 4, 0.5f)) == 10.0 * std::log10(4.0),
         "mse 1/4 closed form missed");
  expect(ssim(a, a) == 1.0, "self ssim is " + num(ssim(a, a)));

  std::vector<std::tuple<std::size_t, std::size_t, Frame>> tagged;
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t t = 0; t < 3; ++t) tagged.emplace_back(v, t, Frame(8, 8, 0.4f));
  CameraTimeGrid grid = build_grid(std::move(tagged), 2, 3);
  std::vector<std::vector<FlowField>> flows(2);
  std::vector<std::vector<ValidityMask>> masks(2);
  for (std::size_t v = 0; v < 2; ++v) {
    flows[v].assign(2, FlowField(8, 8, FlowResolution::pixel));
    masks[v].assign(2, ValidityMask(8, 8, 1));
  }
  MetricReport local = warping_error(grid, flows, masks);
  expect(local.value && *local.value == 0.0, "static scene warping error is not zero");

  // Hand enumeration for two views over three times: the second traversal
  // step first fuses column t = 2, so exactly the (t1, t2) pairs straddle.
  TraversalPlan plan = asymmetric_traversal(2, 3);
  std::vector<std::size_t> first = plan.first_use();
  expect(first[plan.cell_index({0, 0})] == 0 && first[plan.cell_index({0, 1})] == 0 &&
             first[plan.cell_index({1, 1})] == 0,
         "first step should fuse both t0 and t1");
  expect(first[plan.cell_index({0, 2})] == 1 && first[plan.cell_index({1, 2})] == 1,
         "second step should fuse t2");
  MetricReport global = boundary_warping_error(plan, grid, flows, masks);
  expect(global.per_frame.size() == 2,
         "expected the two boundary pairs, got " + std::to_string(global.per_frame.size()));
  expect(*global.value == 0.0, "identical frames must warp without error");
}

void criterion_determinism() {
  fs::path root = fresh_dir("determinism");
  fs::path before = fs::current_path();

  const char* spec = R"({
    "views": 2, "times": 3, "height": 16, "width": 16,
    "disparity": 2.0, "seed": 6,
    "sprites": [{"center": [6, 8], "half_size": [2.5, 2.5],
                 "motion": {"velocity": [2, 0]}}]
  })";
  // Relative paths keep the two runs textually identical, so every artifact
  // (including the config copies) must match byte for byte.
  const char* edit_cfg = R"({
    "grid_manifest": "scene/manifest.json",
    "output_dir": "edited",
    "editor": {"type": "mock-stack", "depth": 2, "heads": 2},
    "flow": {"source": "files"},
    "seed": 12, "deterministic": true
  })";
  const char* fit_cfg = R"({
    "grid_manifest": "edited/manifest.json",
    "output_dir": "fit",
    "optimizer": {"iterations": 60, "gaussians": 5},
    "seed": 12, "deterministic": true
  })";
  const char* eval_cfg = R"({
    "grid_manifest": "edited/manifest.json",
    "output_dir": "eval",
    "flow": {"source": "files", "dir": "scene"},
    "reference_manifest": "scene/manifest.json",
    "seed": 12, "deterministic": true
  })";

  auto run = [&](const char* tag) {
    fs::path base = root / tag;
    fs::create_directories(base);
    fs::current_path(base);
    write_file("spec.json", spec);
    cmd_synth("spec.json", "scene");
    cmd_edit(config_of(edit_cfg));
    cmd_optimize(config_of(fit_cfg));
    cmd_render("fit/scene.json", 3, 16, 16, "renders", 1);
    cmd_evaluate(config_of(eval_cfg));
    fs::current_path(before);
  };
  run("one");
  run("two");

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root / "one"))
    if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), root / "one"));
  std::sort(files.begin(), files.end());
  expect(files.size() >= 20, "first run produced suspiciously few files");
  for (const fs::path& rel : files) {
    fs::path other = root / "two" / rel;
    expect(fs::exists(other), rel.string() + " missing from the second run");
    expect(read_file(root / "one" / rel) == read_file(other),
           rel.string() + " differs between same-seed runs");
  }
  std::size_t count_two = 0;
  for (const auto& entry : fs::recursive_directory_iterator(root / "two"))
    if (entry.is_regular_file()) ++count_two;
  expect(count_two == files.size(), "the runs produced different file sets");
  fs::remove_all(root);
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* what;
    std::function<void()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "sub-grid attention matches a brute-force oracle on 200 random instances",
       criterion_attention_oracle},
      {2, "rotary embeddings keep dot products invariant under joint position shifts",
       criterion_rope_shift_invariance},
      {3, "traversal plans cover the grid, stay connected, and pace rows as hand-traced",
       criterion_traversal_properties},
      {4, "warps, masked replacement, and consistency masks hit their exact corner cases",
       criterion_warp_mask_corners},
      {5, "identity editing with zero flow reproduces every frame byte for byte",
       criterion_noop_pipeline},
      {6, "token propagation repairs the seams that independent sub-grid edits leave",
       criterion_ablation_structure},
      {7, "analytic splat gradients match central finite differences on 100 probes",
       criterion_gradient_check},
      {8, "a perturbed scene re-fits its own renders above 35 dB", criterion_self_reconstruction},
      {9, "metric closed forms and the boundary-pair enumeration hold exactly",
       criterion_metric_exactness},
      {10, "same-seed pipeline runs emit byte-identical output trees", criterion_determinism},
  };

  int failures = 0;
  for (const Criterion& c : criteria) {
    auto start = std::chrono::steady_clock::now();
    std::string detail;
    try {
      c.run();
    } catch (const std::exception& e) {
      detail = e.what();
      ++failures;
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %d: %s (%.2f s)\n", detail.empty() ? "PASS" : "FAIL", c.id,
                c.what, secs);
    if (!detail.empty()) std::printf("       %s\n", detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
