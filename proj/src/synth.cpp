#include "stgrid/synth.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "stgrid/errors.hpp"
#include "stgrid/io.hpp"

namespace stgrid {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double lattice_value(std::uint64_t seed, std::int64_t ix, std::int64_t iy, std::size_t channel) {
  std::uint64_t h = mix64(seed ^ mix64(std::uint64_t(ix)));
  h = mix64(h ^ mix64(std::uint64_t(iy)));
  h = mix64(h ^ std::uint64_t(channel));
  return double(h >> 11) * 0x1.0p-53;
}

// Smoothstep-interpolated value noise in [0.15, 0.55]: enough texture for
// block matching, gentle enough that bilinear warps stay accurate.
double background_at(const SceneSpec& spec, double wx, double wy, std::size_t channel) {
  double gx = wx / spec.background_cell, gy = wy / spec.background_cell;
  double fx = std::floor(gx), fy = std::floor(gy);
  auto ix = std::int64_t(fx);
  auto iy = std::int64_t(fy);
  double u = gx - fx, v = gy - fy;
  u = u * u * (3.0 - 2.0 * u);
  v = v * v * (3.0 - 2.0 * v);
  double v00 = lattice_value(spec.seed, ix, iy, channel);
  double v10 = lattice_value(spec.seed, ix + 1, iy, channel);
  double v01 = lattice_value(spec.seed, ix, iy + 1, channel);
  double v11 = lattice_value(spec.seed, ix + 1, iy + 1, channel);
  double n = (v00 * (1.0 - u) + v10 * u) * (1.0 - v) + (v01 * (1.0 - u) + v11 * u) * v;
  return 0.15 + 0.4 * n;
}

bool sprite_covers(const Sprite& s, std::array<double, 2> pos, double wx, double wy) {
  double lx = wx - pos[0], ly = wy - pos[1];
  if (s.kind == SpriteKind::rectangle)
    return std::abs(lx) <= s.half_size[0] && std::abs(ly) <= s.half_size[1];
  return lx * lx + ly * ly <= s.radius * s.radius;
}

// Low-frequency modulation over local sprite coordinates, so the texture
// translates rigidly with the sprite and survives bilinear resampling.
std::array<double, 3> sprite_color(const Sprite& s, std::array<double, 2> pos, double wx,
                                   double wy) {
  double lx = wx - pos[0], ly = wy - pos[1];
  double factor = 0.7 + 0.2 * std::sin(0.5 * lx) * std::cos(0.4 * ly);
  return {std::clamp(s.color[0] * factor, 0.0, 1.0), std::clamp(s.color[1] * factor, 0.0, 1.0),
          std::clamp(s.color[2] * factor, 0.0, 1.0)};
}

double max_step_displacement(const Motion& m) {
  if (m.kind == MotionKind::linear) return std::hypot(m.velocity[0], m.velocity[1]);
  // A sinusoid moves fastest through its zero crossing.
  double rate = 2.0 * kPi / m.period;
  return std::hypot(m.amplitude[0], m.amplitude[1]) * rate;
}

}  // namespace

std::array<double, 2> Motion::offset_at(double t) const {
  if (kind == MotionKind::linear) return {velocity[0] * t, velocity[1] * t};
  double phase = 2.0 * kPi * t / period;
  return {amplitude[0] * std::sin(phase), amplitude[1] * std::sin(phase)};
}

void validate_spec(const SceneSpec& spec) {
  if (spec.views < 1) throw SpecError("scene needs at least one view");
  if (spec.times < 2) throw SpecError("scene needs at least two time steps");
  if (spec.height == 0 || spec.width == 0) throw SpecError("canvas must be non-empty");
  if (!(spec.background_cell > 0.0)) throw SpecError("background cell pitch must be positive");
  if (!std::isfinite(spec.disparity)) throw SpecError("disparity must be finite");
  for (std::size_t i = 0; i < spec.sprites.size(); ++i) {
    const Sprite& s = spec.sprites[i];
    std::string tag = "sprite " + std::to_string(i);
    for (double v : {s.center[0], s.center[1], s.half_size[0], s.half_size[1], s.radius,
                     s.color[0], s.color[1], s.color[2]})
      if (!std::isfinite(v)) throw SpecError(tag + " has a non-finite field");
    if (s.kind == SpriteKind::rectangle && (!(s.half_size[0] > 0.0) || !(s.half_size[1] > 0.0)))
      throw SpecError(tag + " rectangle needs positive half extents");
    if (s.kind == SpriteKind::blob && !(s.radius > 0.0))
      throw SpecError(tag + " blob needs a positive radius");
    if (s.motion.kind == MotionKind::sinusoidal && !(s.motion.period > 0.0))
      throw SpecError(tag + " sinusoidal motion needs a positive period");
    double step = max_step_displacement(s.motion);
    if (!std::isfinite(step) || step > 8.0)
      throw SpecError(tag + " moves more than 8 px per frame; the flow search cannot track it");
  }
}

SynthResult generate(const SceneSpec& spec) {
  validate_spec(spec);
  const std::size_t h = spec.height, w = spec.width;
  const std::size_t V = spec.views, T = spec.times;

  // Sprite world positions per time step, shared by all views.
  std::vector<std::vector<std::array<double, 2>>> pos(T);
  for (std::size_t t = 0; t < T; ++t) {
    pos[t].resize(spec.sprites.size());
    for (std::size_t i = 0; i < spec.sprites.size(); ++i) {
      std::array<double, 2> off = spec.sprites[i].motion.offset_at(double(t));
      pos[t][i] = {spec.sprites[i].center[0] + off[0], spec.sprites[i].center[1] + off[1]};
    }
  }

  // ids[v][t]: 0 = background, i+1 = topmost sprite i (list order = stacking
  // order, later sprites on top).
  std::vector<std::vector<std::vector<int>>> ids(V);
  std::vector<std::tuple<std::size_t, std::size_t, Frame>> tagged;
  for (std::size_t v = 0; v < V; ++v) {
    ids[v].resize(T);
    for (std::size_t t = 0; t < T; ++t) {
      Frame frame(h, w);
      std::vector<int>& id = ids[v][t];
      id.assign(h * w, 0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double wx = double(x) + double(v) * spec.disparity;
          double wy = double(y);
          int owner = 0;
          for (std::size_t i = spec.sprites.size(); i-- > 0;) {
            if (sprite_covers(spec.sprites[i], pos[t][i], wx, wy)) {
              owner = int(i) + 1;
              break;
            }
          }
          id[y * w + x] = owner;
          std::array<double, 3> c;
          if (owner == 0)
            c = {background_at(spec, wx, wy, 0), background_at(spec, wx, wy, 1),
                 background_at(spec, wx, wy, 2)};
          else
            c = sprite_color(spec.sprites[owner - 1], pos[t][owner - 1], wx, wy);
          for (std::size_t ch = 0; ch < 3; ++ch) frame.at(y, x, ch) = float(c[ch]);
        }
      tagged.emplace_back(v, t, std::move(frame));
    }
  }

  SynthResult result;
  result.grid = build_grid(std::move(tagged), V, T);
  result.flow_fwd.resize(V);
  result.flow_bwd.resize(V);
  result.valid.resize(V);

  for (std::size_t v = 0; v < V; ++v) {
    for (std::size_t t = 1; t < T; ++t) {
      FlowField fwd(h, w, FlowResolution::pixel), bwd(h, w, FlowResolution::pixel);
      ValidityMask mask(h, w, 1);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          int id_t = ids[v][t][y * w + x];
          if (id_t > 0) {
            const std::size_t i = std::size_t(id_t) - 1;
            fwd.dx(y, x) = pos[t - 1][i][0] - pos[t][i][0];
            fwd.dy(y, x) = pos[t - 1][i][1] - pos[t][i][1];
          }
          int id_p = ids[v][t - 1][y * w + x];
          if (id_p > 0) {
            const std::size_t i = std::size_t(id_p) - 1;
            bwd.dx(y, x) = pos[t][i][0] - pos[t - 1][i][0];
            bwd.dy(y, x) = pos[t][i][1] - pos[t - 1][i][1];
          }

          // Source visibility: all four bilinear support pixels in frame t-1
          // must show the same object that owns p in frame t.
          double sx = double(x) + fwd.dx(y, x);
          double sy = double(y) + fwd.dy(y, x);
          if (sx < 0.0 || sy < 0.0 || sx > double(w - 1) || sy > double(h - 1)) {
            mask.at(y, x) = 0;
            continue;
          }
          std::size_t x0 = std::min(std::size_t(sx), w >= 2 ? w - 2 : std::size_t(0));
          std::size_t y0 = std::min(std::size_t(sy), h >= 2 ? h - 2 : std::size_t(0));
          std::size_t x1 = w >= 2 ? x0 + 1 : x0;
          std::size_t y1 = h >= 2 ? y0 + 1 : y0;
          const std::vector<int>& prev = ids[v][t - 1];
          bool same = prev[y0 * w + x0] == id_t && prev[y0 * w + x1] == id_t &&
                      prev[y1 * w + x0] == id_t && prev[y1 * w + x1] == id_t;
          mask.at(y, x) = same ? 1 : 0;
        }
      result.flow_fwd[v].push_back(std::move(fwd));
      result.flow_bwd[v].push_back(std::move(bwd));
      result.valid[v].push_back(std::move(mask));
    }
  }
  return result;
}

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* key : allowed)
      if (it.key() == key) {
        known = true;
        break;
      }
    if (!known) throw SpecError("unknown key \"" + it.key() + "\" in " + where);
  }
}

std::array<double, 2> pair_of(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw SpecError(where + " must be a 2-element array");
  return {j[0].get<double>(), j[1].get<double>()};
}

std::array<double, 3> triple_of(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw SpecError(where + " must be a 3-element array");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Motion motion_from_json(const json& j) {
  reject_unknown(j, {"kind", "velocity", "amplitude", "period"}, "motion");
  Motion m;
  std::string kind = j.value("kind", "linear");
  if (kind == "linear")
    m.kind = MotionKind::linear;
  else if (kind == "sinusoidal")
    m.kind = MotionKind::sinusoidal;
  else
    throw SpecError("motion kind must be linear or sinusoidal, got \"" + kind + "\"");
  if (j.contains("velocity")) m.velocity = pair_of(j["velocity"], "motion velocity");
  if (j.contains("amplitude")) m.amplitude = pair_of(j["amplitude"], "motion amplitude");
  if (j.contains("period")) m.period = j["period"].get<double>();
  return m;
}

Sprite sprite_from_json(const json& j) {
  reject_unknown(j, {"kind", "center", "half_size", "radius", "color", "motion"}, "sprite");
  Sprite s;
  std::string kind = j.value("kind", "rectangle");
  if (kind == "rectangle")
    s.kind = SpriteKind::rectangle;
  else if (kind == "blob")
    s.kind = SpriteKind::blob;
  else
    throw SpecError("sprite kind must be rectangle or blob, got \"" + kind + "\"");
  if (j.contains("center")) s.center = pair_of(j["center"], "sprite center");
  if (j.contains("half_size")) s.half_size = pair_of(j["half_size"], "sprite half_size");
  if (j.contains("radius")) s.radius = j["radius"].get<double>();
  if (j.contains("color")) s.color = triple_of(j["color"], "sprite color");
  if (j.contains("motion")) s.motion = motion_from_json(j["motion"]);
  return s;
}

}  // namespace

SceneSpec scene_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw SpecError(std::string("scene spec is not valid JSON: ") + e.what());
  }
  try {
    reject_unknown(j,
                   {"views", "times", "height", "width", "disparity", "background_cell", "seed",
                    "sprites"},
                   "scene spec");
    SceneSpec spec;
    spec.views = j.value("views", std::size_t(1));
    spec.times = j.value("times", std::size_t(2));
    spec.height = j.value("height", std::size_t(32));
    spec.width = j.value("width", std::size_t(32));
    spec.disparity = j.value("disparity", 0.0);
    spec.background_cell = j.value("background_cell", 8.0);
    spec.seed = j.value("seed", std::uint64_t(0));
    if (j.contains("sprites")) {
      if (!j["sprites"].is_array()) throw SpecError("sprites must be an array");
      for (const json& sj : j["sprites"]) spec.sprites.push_back(sprite_from_json(sj));
    }
    validate_spec(spec);
    return spec;
  } catch (const json::exception& e) {
    throw SpecError(std::string("scene spec field has the wrong type: ") + e.what());
  }
}

std::string save_synth(const SynthResult& result, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());

  std::string manifest = save_grid(result.grid, dir);
  const std::size_t V = result.grid.views, T = result.grid.times;
  for (std::size_t v = 0; v < V; ++v)
    for (std::size_t t = 1; t < T; ++t) {
      std::string stem = "_v" + std::to_string(v) + "_t" + std::to_string(t);
      save_flow((fs::path(dir) / ("flow" + stem + "_fwd.stfl")).string(),
                result.flow_fwd[v][t - 1]);
      save_flow((fs::path(dir) / ("flow" + stem + "_bwd.stfl")).string(),
                result.flow_bwd[v][t - 1]);
      save_mask((fs::path(dir) / ("mask" + stem + ".stmk")).string(), result.valid[v][t - 1]);
    }
  return manifest;
}

}  // namespace stgrid
