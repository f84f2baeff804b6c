#include "stgrid/pipeline.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <thread>

#include "stgrid/attention.hpp"
#include "stgrid/ctp.hpp"
#include "stgrid/errors.hpp"
#include "stgrid/io.hpp"
#include "stgrid/metrics.hpp"
#include "stgrid/splat.hpp"
#include "stgrid/synth.hpp"

namespace stgrid {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int log_level() {
  static int level = [] {
    const char* env = std::getenv("STGRID_LOG");
    if (!env) return 0;
    std::string v(env);
    if (v == "debug") return 2;
    if (v == "info") return 1;
    return 0;
  }();
  return level;
}

void log_info(const std::string& msg) {
  if (log_level() >= 1) std::fprintf(stderr, "[stgrid] %s\n", msg.c_str());
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (!in.good() && !in.eof()) throw IoError("failed reading " + path);
  return text;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(text.data(), std::streamsize(text.size()));
  if (!out.good()) throw IoError("failed writing " + path);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* key : allowed)
      if (it.key() == key) {
        known = true;
        break;
      }
    if (!known) throw ConfigError("unknown key \"" + it.key() + "\" in " + where);
  }
}

std::size_t usize(const json& obj, const char* key, std::size_t fallback) {
  if (!obj.contains(key)) return fallback;
  auto v = obj[key].get<std::int64_t>();
  if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
  return std::size_t(v);
}

EditorConfig editor_from_json(const json& j) {
  reject_unknown(j, {"type", "shift", "step_gain", "depth", "heads", "text_len", "weights"},
                 "editor");
  EditorConfig e;
  e.type = j.value("type", e.type);
  e.shift = j.value("shift", e.shift);
  e.step_gain = j.value("step_gain", e.step_gain);
  e.depth = usize(j, "depth", e.depth);
  e.heads = usize(j, "heads", e.heads);
  e.text_len = usize(j, "text_len", e.text_len);
  e.weights = j.value("weights", e.weights);
  if (e.type != "identity" && e.type != "constant-shift" && e.type != "mock-stack")
    throw ConfigError("editor type must be identity, constant-shift or mock-stack");
  if (e.type == "mock-stack" && (e.depth == 0 || e.heads == 0))
    throw ConfigError("mock-stack editor needs depth >= 1 and heads >= 1");
  return e;
}

FlowSourceConfig flow_from_json(const json& j) {
  reject_unknown(j, {"source", "patch", "radius", "dir"}, "flow");
  FlowSourceConfig f;
  f.source = j.value("source", f.source);
  f.patch = usize(j, "patch", f.patch);
  f.radius = usize(j, "radius", f.radius);
  f.dir = j.value("dir", f.dir);
  if (f.source != "zero" && f.source != "files" && f.source != "estimate")
    throw ConfigError("flow source must be zero, files or estimate");
  if (f.source == "estimate" && (f.patch == 0 || f.patch % 2 == 0))
    throw ConfigError("flow estimation patch must be odd");
  return f;
}

OptimizerStageConfig optimizer_from_json(const json& j) {
  reject_unknown(j,
                 {"iterations", "gaussians", "lr_geometry", "lr_color", "lr_deform", "lambda_tv",
                  "loss", "view"},
                 "optimizer");
  OptimizerStageConfig o;
  o.iterations = usize(j, "iterations", o.iterations);
  o.gaussians = usize(j, "gaussians", o.gaussians);
  o.lr_geometry = j.value("lr_geometry", o.lr_geometry);
  o.lr_color = j.value("lr_color", o.lr_color);
  o.lr_deform = j.value("lr_deform", o.lr_deform);
  o.lambda_tv = j.value("lambda_tv", o.lambda_tv);
  o.loss = j.value("loss", o.loss);
  o.view = usize(j, "view", o.view);
  if (o.loss != "l1" && o.loss != "l2") throw ConfigError("optimizer loss must be l1 or l2");
  if (o.iterations == 0) throw ConfigError("optimizer needs iterations >= 1");
  if (o.gaussians == 0) throw ConfigError("optimizer needs gaussians >= 1");
  return o;
}

}  // namespace

std::size_t PipelineConfig::effective_workers() const {
  if (deterministic) return 1;
  if (workers > 0) return workers;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : hc;
}

PipelineConfig pipeline_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    reject_unknown(j,
                   {"grid_manifest", "output_dir", "traversal", "inherit", "replace", "vital",
                    "editor", "flow", "fb", "patch", "optimizer", "reference_manifest", "seed",
                    "workers", "deterministic", "check_overlap_equality", "token_dump_dir"},
                   "config");
    PipelineConfig cfg;
    cfg.grid_manifest = j.value("grid_manifest", cfg.grid_manifest);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.traversal = j.value("traversal", cfg.traversal);
    cfg.inherit = j.value("inherit", cfg.inherit);
    cfg.replace = j.value("replace", cfg.replace);
    if (j.contains("vital")) {
      const json& v = j["vital"];
      if (!v.is_array() || v.size() != 2)
        throw ConfigError("vital must be a [start, end) index pair");
      auto s = v[0].get<std::int64_t>(), e = v[1].get<std::int64_t>();
      if (s < 0 || e < 0 || s >= e) throw ConfigError("vital range must satisfy 0 <= start < end");
      cfg.vital = {{std::size_t(s), std::size_t(e)}};
    }
    if (j.contains("editor")) cfg.editor = editor_from_json(j["editor"]);
    if (j.contains("flow")) cfg.flow = flow_from_json(j["flow"]);
    if (j.contains("fb")) {
      reject_unknown(j["fb"], {"alpha", "beta"}, "fb");
      cfg.fb_alpha = j["fb"].value("alpha", cfg.fb_alpha);
      cfg.fb_beta = j["fb"].value("beta", cfg.fb_beta);
    }
    cfg.patch = usize(j, "patch", cfg.patch);
    if (j.contains("optimizer")) cfg.optimizer = optimizer_from_json(j["optimizer"]);
    cfg.reference_manifest = j.value("reference_manifest", cfg.reference_manifest);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.workers = usize(j, "workers", cfg.workers);
    cfg.deterministic = j.value("deterministic", cfg.deterministic);
    cfg.check_overlap_equality = j.value("check_overlap_equality", cfg.check_overlap_equality);
    cfg.token_dump_dir = j.value("token_dump_dir", cfg.token_dump_dir);

    if (cfg.traversal != "multiview" && cfg.traversal != "monocular" && cfg.traversal != "tiled")
      throw ConfigError("traversal must be multiview, monocular or tiled");
    if (cfg.patch == 0) throw ConfigError("patch size must be >= 1");
    if (!(cfg.fb_alpha >= 0.0) || !(cfg.fb_beta >= 0.0))
      throw ConfigError("fb thresholds must be non-negative");
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field has the wrong type: ") + e.what());
  }
}

LoadedConfig load_pipeline_config(const std::string& path) {
  LoadedConfig lc;
  lc.raw = read_text_file(path);
  lc.config = pipeline_config_from_json(lc.raw);
  return lc;
}

namespace {

// ---- editors ----

class IdentityEditor : public FrameEditor {
 public:
  void edit(std::array<TokenMap, 4>&, const TextTokens&, const EditorContext&) override {}
};

// Adds (shift + step_gain * step_index) to every token channel. With a
// non-zero gain each traversal step paints a different offset, which makes
// propagation seams directly measurable.
class ConstantShiftEditor : public FrameEditor {
 public:
  ConstantShiftEditor(double shift, double step_gain) : shift_(shift), gain_(step_gain) {}

  void edit(std::array<TokenMap, 4>& members, const TextTokens&,
            const EditorContext& ctx) override {
    double s = shift_ + gain_ * double(ctx.step_index);
    for (TokenMap& m : members)
      for (double& v : m.data) v += s;
  }

 private:
  double shift_, gain_;
};

class BlockStackEditor : public FrameEditor {
 public:
  BlockStackEditor(std::vector<AttentionParams> layers, LayerRange vital, RopeSpec rope)
      : layers_(std::move(layers)), vital_(vital), rope_(rope) {}

  void edit(std::array<TokenMap, 4>& members, const TextTokens& text,
            const EditorContext&) override {
    members = run_block_stack(members, text, layers_.size(), vital_, layers_, rope_);
  }

 private:
  std::vector<AttentionParams> layers_;
  LayerRange vital_;
  RopeSpec rope_;
};

// ---- flow suppliers ----

class FileFlowSupplier : public FlowSupplier {
 public:
  explicit FileFlowSupplier(std::string dir) : dir_(std::move(dir)) {}

  FlowPair get(std::size_t v, std::size_t t) const override {
    std::string stem = "_v" + std::to_string(v) + "_t" + std::to_string(t);
    fs::path fwd = fs::path(dir_) / ("flow" + stem + "_fwd.stfl");
    fs::path bwd = fs::path(dir_) / ("flow" + stem + "_bwd.stfl");
    if (!fs::exists(fwd) || !fs::exists(bwd))
      throw MissingFlow("no flow files for view " + std::to_string(v) + " pair " +
                        std::to_string(t - 1) + "->" + std::to_string(t) + " under " + dir_);
    return {load_flow(fwd.string()), load_flow(bwd.string())};
  }

 private:
  std::string dir_;
};

class EstimateFlowSupplier : public FlowSupplier {
 public:
  EstimateFlowSupplier(const CameraTimeGrid& grid, std::size_t patch, std::size_t radius)
      : grid_(grid), patch_(patch), radius_(radius) {}

  FlowPair get(std::size_t v, std::size_t t) const override {
    if (v >= grid_.views || t == 0 || t >= grid_.times)
      throw MissingFlow("flow pair (" + std::to_string(v) + "," + std::to_string(t) +
                        ") outside the grid");
    const Frame& prev = grid_.frame(v, t - 1);
    const Frame& cur = grid_.frame(v, t);
    return {estimate_flow_block_matching(cur, prev, patch_, radius_),
            estimate_flow_block_matching(prev, cur, patch_, radius_)};
  }

 private:
  const CameraTimeGrid& grid_;
  std::size_t patch_, radius_;
};

// ---- shared stage plumbing ----

TraversalPlan make_plan(const PipelineConfig& cfg, const CameraTimeGrid& grid) {
  if (cfg.traversal == "monocular") {
    if (grid.views != 1)
      throw ConfigError("monocular traversal needs a single-view grid, got " +
                        std::to_string(grid.views) + " views");
    return monocular_traversal(grid.times);
  }
  if (grid.views < 2)
    throw ConfigError("multi-view traversal needs V >= 2; use traversal \"monocular\"");
  if (cfg.traversal == "tiled") return tiled_traversal(grid.views, grid.times);
  return asymmetric_traversal(grid.views, grid.times);
}

TextTokens random_text(Rng rng, std::size_t length, std::size_t dim) {
  TextTokens text(length, dim);
  for (double& v : text.data) v = rng.normal();
  return text;
}

std::unique_ptr<FrameEditor> make_editor(const PipelineConfig& cfg, std::size_t token_dim,
                                         Rng& rng) {
  const EditorConfig& e = cfg.editor;
  if (e.type == "identity") return std::make_unique<IdentityEditor>();
  if (e.type == "constant-shift")
    return std::make_unique<ConstantShiftEditor>(e.shift, e.step_gain);

  if (token_dim % e.heads != 0)
    throw ConfigError("heads must divide the token dim " + std::to_string(token_dim));
  std::size_t d_k = token_dim / e.heads;
  if (d_k % 2 != 0) throw ConfigError("per-head dim must be even for the axial rotary split");
  RopeSpec rope = default_rope(d_k);
  LayerRange vital = cfg.vital ? LayerRange((*cfg.vital)[0], (*cfg.vital)[1])
                               : default_vital_range(e.depth);

  std::vector<AttentionParams> layers;
  layers.reserve(e.depth);
  if (e.weights.empty()) {
    Rng wrng = rng.split(0x77);
    for (std::size_t i = 0; i < e.depth; ++i)
      layers.push_back(random_attention_params(wrng, e.heads, d_k));
  } else {
    std::vector<NamedTensor> tensors = load_weights(e.weights, e.weights + ".json");
    std::map<std::string, const NamedTensor*> by_name;
    for (const NamedTensor& t : tensors) by_name[t.name] = &t;
    const char* names[] = {"img_wq", "img_wk", "img_wv", "img_wo", "txt_wk", "txt_wv"};
    for (std::size_t i = 0; i < e.depth; ++i) {
      AttentionParams p;
      p.heads = e.heads;
      p.d_k = d_k;
      Mat* slots[] = {&p.img_wq, &p.img_wk, &p.img_wv, &p.img_wo, &p.txt_wk, &p.txt_wv};
      for (std::size_t s = 0; s < 6; ++s) {
        std::string key = "layer" + std::to_string(i) + "." + names[s];
        auto it = by_name.find(key);
        if (it == by_name.end()) throw ConfigError("weight file lacks tensor " + key);
        const NamedTensor& t = *it->second;
        if (t.shape != std::vector<std::size_t>{token_dim, token_dim})
          throw ConfigError("tensor " + key + " must be " + std::to_string(token_dim) + "x" +
                            std::to_string(token_dim));
        *slots[s] = Mat(token_dim, token_dim);
        slots[s]->data = t.data;
      }
      layers.push_back(std::move(p));
    }
  }
  return std::make_unique<BlockStackEditor>(std::move(layers), vital, rope);
}

std::unique_ptr<FlowSupplier> make_flows(const PipelineConfig& cfg, const CameraTimeGrid& grid) {
  const Frame& f0 = grid.frame(0, 0);
  if (cfg.flow.source == "zero")
    return std::make_unique<ZeroFlowSupplier>(f0.height, f0.width);
  if (cfg.flow.source == "estimate")
    return std::make_unique<EstimateFlowSupplier>(grid, cfg.flow.patch, cfg.flow.radius);
  std::string dir = cfg.flow.dir;
  if (dir.empty()) dir = fs::path(cfg.grid_manifest).parent_path().string();
  if (dir.empty()) dir = ".";
  return std::make_unique<FileFlowSupplier>(dir);
}

void require_output_dir(const PipelineConfig& cfg, const std::string& raw) {
  if (cfg.output_dir.empty()) throw ConfigError("config needs an output_dir");
  ensure_dir(cfg.output_dir);
  write_text_file((fs::path(cfg.output_dir) / "config.json").string(), raw);
}

json report_to_json(const MetricReport& report) {
  auto jd = [](double v) -> json {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : "-inf";
  };
  json out;
  out["metric"] = report.name;
  out["value"] = report.value ? jd(*report.value) : json(nullptr);
  out["scale"] = report.scale;
  json pf = json::array();
  for (double v : report.per_frame) pf.push_back(jd(v));
  out["per_frame"] = pf;
  return out;
}

}  // namespace

void cmd_synth(const std::string& spec_path, const std::string& out_dir) {
  std::string text = read_text_file(spec_path);
  SceneSpec spec = scene_spec_from_json(text);
  SynthResult result = generate(spec);
  ensure_dir(out_dir);
  write_text_file((fs::path(out_dir) / "scene_spec.json").string(), text);
  std::string manifest = save_synth(result, out_dir);
  log_info("synthesised " + std::to_string(spec.views) + "x" + std::to_string(spec.times) +
           " grid into " + manifest);
}

void cmd_edit(const LoadedConfig& lc) {
  const PipelineConfig& cfg = lc.config;
  if (cfg.grid_manifest.empty()) throw ConfigError("config needs a grid_manifest");
  require_output_dir(cfg, lc.raw);

  CameraTimeGrid grid = load_grid(cfg.grid_manifest);
  TraversalPlan plan = make_plan(cfg, grid);
  const Frame& f0 = grid.frame(0, 0);
  if (f0.height % cfg.patch != 0 || f0.width % cfg.patch != 0)
    throw ConfigError("patch size " + std::to_string(cfg.patch) +
                      " must divide the frame resolution");

  std::size_t token_dim = PatchifyCodec{cfg.patch}.token_dim();
  Rng rng(cfg.seed);
  std::unique_ptr<FrameEditor> editor = make_editor(cfg, token_dim, rng);
  std::unique_ptr<FlowSupplier> flows = make_flows(cfg, grid);
  TextTokens text = cfg.editor.type == "mock-stack"
                        ? random_text(rng.split(0x7e), cfg.editor.text_len, token_dim)
                        : TextTokens(0, token_dim);

  std::ofstream trace((fs::path(cfg.output_dir) / "trace.jsonl").string(),
                      std::ios::binary | std::ios::trunc);
  if (!trace) throw IoError("cannot open trace.jsonl for writing");
  if (!cfg.token_dump_dir.empty()) ensure_dir(cfg.token_dump_dir);

  PropagateOptions opts;
  opts.fb_alpha = cfg.fb_alpha;
  opts.fb_beta = cfg.fb_beta;
  opts.patch = cfg.patch;
  opts.inherit = cfg.inherit;
  opts.replace = cfg.replace;
  opts.trace = &trace;
  opts.token_dump_dir = cfg.token_dump_dir;
  opts.check_overlap_equality = cfg.check_overlap_equality;

  CameraTimeGrid edited = propagate(grid, plan, *editor, *flows, text, opts);
  std::string manifest = save_grid(edited, cfg.output_dir);
  log_info("edited " + std::to_string(plan.steps.size()) + " steps into " + manifest);
}

void cmd_optimize(const LoadedConfig& lc) {
  const PipelineConfig& cfg = lc.config;
  if (cfg.grid_manifest.empty()) throw ConfigError("config needs a grid_manifest");
  require_output_dir(cfg, lc.raw);

  CameraTimeGrid grid = load_grid(cfg.grid_manifest);
  const OptimizerStageConfig& o = cfg.optimizer;
  if (o.view >= grid.views)
    throw ConfigError("optimizer view " + std::to_string(o.view) + " outside the grid");

  std::vector<Frame> targets;
  for (std::size_t t = 0; t < grid.times; ++t) targets.push_back(grid.frame(o.view, t));
  const Frame& f0 = targets.front();

  Rng rng(cfg.seed);
  GaussianScene scene = random_scene(rng, o.gaussians, f0.height, f0.width);

  OptimizeConfig ocfg;
  ocfg.iterations = o.iterations;
  ocfg.lr_geometry = o.lr_geometry;
  ocfg.lr_color = o.lr_color;
  ocfg.lr_deform = o.lr_deform;
  ocfg.loss = {o.loss == "l2" ? LossNorm::l2 : LossNorm::l1, o.lambda_tv};
  ocfg.workers = cfg.effective_workers();
  std::vector<double> history;
  ocfg.loss_history = &history;

  GaussianScene fitted = optimize(scene, targets, ocfg);

  save_scene((fs::path(cfg.output_dir) / "scene.json").string(), fitted);
  std::string csv = "iteration,loss\n";
  for (std::size_t i = 0; i < history.size(); ++i)
    csv += std::to_string(i) + "," + fmt_double(history[i]) + "\n";
  write_text_file((fs::path(cfg.output_dir) / "loss.csv").string(), csv);
  log_info("optimized " + std::to_string(o.gaussians) + " gaussians over " +
           std::to_string(targets.size()) + " frames, final loss " +
           (history.empty() ? "n/a" : fmt_double(history.back())));
}

void cmd_render(const std::string& scene_path, std::size_t frames, std::size_t height,
                std::size_t width, const std::string& out_dir, std::size_t workers) {
  if (frames == 0) throw InvalidArgument("render needs at least one frame");
  GaussianScene scene = load_scene(scene_path);
  ensure_dir(out_dir);
  for (std::size_t k = 0; k < frames; ++k) {
    double t = frames == 1 ? 0.0 : double(k) / double(frames - 1);
    Frame frame = render(deform(scene, t), height, width, scene.background,
                         workers == 0 ? 1 : workers);
    save_frame((fs::path(out_dir) / ("render_t" + std::to_string(k) + ".ppm")).string(), frame);
  }
  log_info("rendered " + std::to_string(frames) + " frames into " + out_dir);
}

void cmd_evaluate(const LoadedConfig& lc) {
  const PipelineConfig& cfg = lc.config;
  if (cfg.grid_manifest.empty()) throw ConfigError("config needs a grid_manifest");
  require_output_dir(cfg, lc.raw);

  CameraTimeGrid grid = load_grid(cfg.grid_manifest);
  TraversalPlan plan = make_plan(cfg, grid);
  std::unique_ptr<FlowSupplier> supplier = make_flows(cfg, grid);

  std::vector<std::vector<FlowField>> flows(grid.views);
  std::vector<std::vector<ValidityMask>> masks(grid.views);
  for (std::size_t v = 0; v < grid.views; ++v)
    for (std::size_t t = 1; t < grid.times; ++t) {
      FlowPair pair = supplier->get(v, t);
      masks[v].push_back(
          fb_consistency_mask(pair.to_prev, pair.to_next, cfg.fb_alpha, cfg.fb_beta));
      flows[v].push_back(std::move(pair.to_prev));
    }

  json out;
  out["metrics"] = json::array();
  out["metrics"].push_back(report_to_json(warping_error(grid, flows, masks)));
  out["metrics"].push_back(report_to_json(boundary_warping_error(plan, grid, flows, masks)));

  if (!cfg.reference_manifest.empty()) {
    CameraTimeGrid ref = load_grid(cfg.reference_manifest);
    if (ref.views != grid.views || ref.times != grid.times ||
        !ref.frame(0, 0).same_shape(grid.frame(0, 0)))
      throw AlignmentError("reference grid extents disagree with the grid under evaluation");
    MetricReport rp{"psnr", std::nullopt, "x1", {}};
    MetricReport rs{"ssim", std::nullopt, "x1", {}};
    for (std::size_t v = 0; v < grid.views; ++v)
      for (std::size_t t = 0; t < grid.times; ++t) {
        rp.per_frame.push_back(psnr(grid.frame(v, t), ref.frame(v, t)));
        rs.per_frame.push_back(ssim(grid.frame(v, t), ref.frame(v, t)));
      }
    auto mean = [](const std::vector<double>& vs) {
      double s = 0.0;
      for (double v : vs) s += v;
      return s / double(vs.size());
    };
    rp.value = mean(rp.per_frame);
    rs.value = mean(rs.per_frame);
    out["metrics"].push_back(report_to_json(rp));
    out["metrics"].push_back(report_to_json(rs));
  }

  // Reserved for perceptual metrics that need pretrained networks; kept in
  // the schema so downstream tooling sees a stable shape.
  out["reserved"] = {{"lpips", nullptr}, {"clip", nullptr}, {"met3r", nullptr}};
  write_text_file((fs::path(cfg.output_dir) / "metrics.json").string(), out.dump(2) + "\n");
  log_info("evaluated " + std::to_string(grid.views * (grid.times - 1)) + " frame pairs");
}

}  // namespace stgrid
