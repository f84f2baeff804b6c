#include "stgrid/io.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "binary containers are little-endian; big-endian hosts need byte swaps");

namespace stgrid {

namespace {

using nlohmann::json;

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  return in;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  return out;
}

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), 4);
  if (!in) throw IoError("truncated header in " + path);
  return v;
}

void write_f32(std::ostream& out, const std::vector<float>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * 4));
}

std::vector<float> read_f32(std::istream& in, std::size_t count, const std::string& path) {
  std::vector<float> v(count);
  in.read(reinterpret_cast<char*>(v.data()), std::streamsize(count * 4));
  if (!in) throw IoError("truncated payload in " + path);
  return v;
}

void expect_magic(std::istream& in, const char* magic, const std::string& path) {
  char buf[4] = {};
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0)
    throw IoError(path + " does not start with magic " + magic);
}

json parse_json_file(const std::string& path) {
  std::ifstream in = open_in(path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("malformed JSON in " + path + ": " + e.what());
  }
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out = open_out(path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path);
}

std::uint8_t to_byte(float v) {
  float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return std::uint8_t(std::lround(double(c) * 255.0));
}

Frame load_ppm(const std::string& path) {
  std::ifstream in = open_in(path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError(path + " is not a binary PPM (P6)");
  auto next_token = [&]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    throw IoError("truncated PPM header in " + path);
  };
  std::size_t w = std::stoul(next_token());
  std::size_t h = std::stoul(next_token());
  std::size_t maxval = std::stoul(next_token());
  if (maxval != 255) throw IoError(path + ": only 8-bit PPM is supported");
  in.get();  // single whitespace after maxval
  std::vector<std::uint8_t> raw(h * w * 3);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (!in) throw IoError("truncated PPM payload in " + path);
  Frame f(h, w);
  for (std::size_t i = 0; i < raw.size(); ++i) f.data[i] = float(raw[i]) / 255.0f;
  return f;
}

void save_ppm(const std::string& path, const Frame& frame) {
  std::ofstream out = open_out(path);
  out << "P6\n" << frame.width << " " << frame.height << "\n255\n";
  std::vector<std::uint8_t> raw(frame.data.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(frame.data[i]);
  out.write(reinterpret_cast<const char*>(raw.data()), std::streamsize(raw.size()));
  if (!out) throw IoError("failed writing " + path);
}

bool has_suffix(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// base64 for the scene file's embedded weight blobs.
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string base64_encode(const std::vector<float>& values) {
  const auto* bytes = reinterpret_cast<const std::uint8_t*>(values.data());
  std::size_t n = values.size() * 4;
  std::string out;
  out.reserve((n + 2) / 3 * 4);
  for (std::size_t i = 0; i < n; i += 3) {
    std::uint32_t chunk = std::uint32_t(bytes[i]) << 16;
    if (i + 1 < n) chunk |= std::uint32_t(bytes[i + 1]) << 8;
    if (i + 2 < n) chunk |= std::uint32_t(bytes[i + 2]);
    out.push_back(kB64[(chunk >> 18) & 63]);
    out.push_back(kB64[(chunk >> 12) & 63]);
    out.push_back(i + 1 < n ? kB64[(chunk >> 6) & 63] : '=');
    out.push_back(i + 2 < n ? kB64[chunk & 63] : '=');
  }
  return out;
}

std::vector<float> base64_decode(const std::string& text) {
  auto value_of = [&](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    if (c == '=') return -1;
    throw IoError("invalid base64 character in scene file");
  };
  std::vector<std::uint8_t> bytes;
  bytes.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i + 3 < text.size(); i += 4) {
    int a = value_of(text[i]), b = value_of(text[i + 1]);
    int c = value_of(text[i + 2]), d = value_of(text[i + 3]);
    if (a < 0 || b < 0) throw IoError("malformed base64 in scene file");
    std::uint32_t chunk = (std::uint32_t(a) << 18) | (std::uint32_t(b) << 12);
    bytes.push_back(std::uint8_t((chunk >> 16) & 255));
    if (c >= 0) {
      chunk |= std::uint32_t(c) << 6;
      bytes.push_back(std::uint8_t((chunk >> 8) & 255));
    }
    if (d >= 0) {
      if (c < 0) throw IoError("malformed base64 in scene file");
      chunk |= std::uint32_t(d);
      bytes.push_back(std::uint8_t(chunk & 255));
    }
  }
  if (bytes.size() % 4 != 0) throw IoError("scene weight blob is not float32-aligned");
  std::vector<float> values(bytes.size() / 4);
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

std::vector<float> mlp_to_f32(const Mlp& m) {
  std::vector<float> out;
  out.reserve(m.param_count());
  for (const std::vector<double>* part : {&m.w1, &m.b1, &m.w2, &m.b2, &m.w3, &m.b3})
    for (double v : *part) out.push_back(float(v));
  return out;
}

void mlp_from_f32(Mlp& m, const std::vector<float>& flat) {
  if (flat.size() != m.param_count()) throw IoError("scene deformation blob has the wrong size");
  std::size_t off = 0;
  for (std::vector<double>* part : {&m.w1, &m.b1, &m.w2, &m.b2, &m.w3, &m.b3})
    for (double& v : *part) v = double(flat[off++]);
}

}  // namespace

Frame load_frame(const std::string& path) {
  if (has_suffix(path, ".ppm")) return load_ppm(path);
  std::ifstream in = open_in(path);
  expect_magic(in, "STGF", path);
  std::uint32_t h = read_u32(in, path), w = read_u32(in, path), c = read_u32(in, path);
  if (c != Frame::kChannels) throw IoError(path + ": expected 3 channels");
  std::vector<float> planar = read_f32(in, std::size_t(h) * w * c, path);
  Frame f(h, w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        f.at(y, x, ch) = planar[(ch * h + y) * w + x];
  return f;
}

void save_frame(const std::string& path, const Frame& frame) {
  if (has_suffix(path, ".ppm")) {
    save_ppm(path, frame);
    return;
  }
  std::ofstream out = open_out(path);
  out.write("STGF", 4);
  write_u32(out, std::uint32_t(frame.height));
  write_u32(out, std::uint32_t(frame.width));
  write_u32(out, std::uint32_t(Frame::kChannels));
  std::vector<float> planar(frame.data.size());
  for (std::size_t ch = 0; ch < Frame::kChannels; ++ch)
    for (std::size_t y = 0; y < frame.height; ++y)
      for (std::size_t x = 0; x < frame.width; ++x)
        planar[(ch * frame.height + y) * frame.width + x] = frame.at(y, x, ch);
  write_f32(out, planar);
  if (!out) throw IoError("failed writing " + path);
}

FlowField load_flow(const std::string& path) {
  std::ifstream in = open_in(path);
  expect_magic(in, "STFL", path);
  std::uint32_t h = read_u32(in, path), w = read_u32(in, path);
  std::vector<float> raw = read_f32(in, std::size_t(h) * w * 2, path);
  FlowField flow(h, w, FlowResolution::pixel);
  for (std::size_t i = 0; i < raw.size(); ++i) flow.data[i] = double(raw[i]);
  return flow;
}

void save_flow(const std::string& path, const FlowField& flow) {
  std::ofstream out = open_out(path);
  out.write("STFL", 4);
  write_u32(out, std::uint32_t(flow.height));
  write_u32(out, std::uint32_t(flow.width));
  std::vector<float> raw(flow.data.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = float(flow.data[i]);
  write_f32(out, raw);
  if (!out) throw IoError("failed writing " + path);
}

ValidityMask load_mask(const std::string& path) {
  std::ifstream in = open_in(path);
  expect_magic(in, "STMK", path);
  std::uint32_t h = read_u32(in, path), w = read_u32(in, path);
  ValidityMask mask(h, w, 0);
  in.read(reinterpret_cast<char*>(mask.data.data()), std::streamsize(mask.data.size()));
  if (!in) throw IoError("truncated payload in " + path);
  for (std::uint8_t v : mask.data)
    if (v > 1) throw IoError(path + ": mask bytes must be 0 or 1");
  return mask;
}

void save_mask(const std::string& path, const ValidityMask& mask) {
  std::ofstream out = open_out(path);
  out.write("STMK", 4);
  write_u32(out, std::uint32_t(mask.height));
  write_u32(out, std::uint32_t(mask.width));
  out.write(reinterpret_cast<const char*>(mask.data.data()), std::streamsize(mask.data.size()));
  if (!out) throw IoError("failed writing " + path);
}

TokenMap load_tokens(const std::string& path) {
  std::ifstream in = open_in(path);
  expect_magic(in, "STTK", path);
  std::uint32_t h = read_u32(in, path), w = read_u32(in, path), d = read_u32(in, path);
  std::vector<float> raw = read_f32(in, std::size_t(h) * w * d, path);
  TokenMap tokens(h, w, d);
  for (std::size_t i = 0; i < raw.size(); ++i) tokens.data[i] = double(raw[i]);
  return tokens;
}

void save_tokens(const std::string& path, const TokenMap& tokens) {
  std::ofstream out = open_out(path);
  out.write("STTK", 4);
  write_u32(out, std::uint32_t(tokens.rows));
  write_u32(out, std::uint32_t(tokens.cols));
  write_u32(out, std::uint32_t(tokens.dim));
  std::vector<float> raw(tokens.data.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = float(tokens.data[i]);
  write_f32(out, raw);
  if (!out) throw IoError("failed writing " + path);
}

GridManifest load_manifest(const std::string& path) {
  json j = parse_json_file(path);
  GridManifest m;
  try {
    m.views = j.at("views").get<std::size_t>();
    m.times = j.at("times").get<std::size_t>();
    for (const json& e : j.at("frames")) {
      m.frames.push_back({e.at("v").get<std::size_t>(), e.at("t").get<std::size_t>(),
                          e.at("path").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw IoError("grid manifest " + path + " is malformed: " + e.what());
  }
  return m;
}

void save_manifest(const std::string& path, const GridManifest& manifest) {
  json j;
  j["views"] = manifest.views;
  j["times"] = manifest.times;
  j["frames"] = json::array();
  for (const ManifestEntry& e : manifest.frames)
    j["frames"].push_back({{"v", e.v}, {"t", e.t}, {"path", e.path}});
  write_json_file(path, j);
}

CameraTimeGrid load_grid(const std::string& manifest_path) {
  GridManifest m = load_manifest(manifest_path);
  std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  std::vector<std::tuple<std::size_t, std::size_t, Frame>> tagged;
  tagged.reserve(m.frames.size());
  for (const ManifestEntry& e : m.frames)
    tagged.emplace_back(e.v, e.t, load_frame((base / e.path).string()));
  return build_grid(std::move(tagged), m.views, m.times);
}

std::string save_grid(const CameraTimeGrid& grid, const std::string& dir) {
  std::filesystem::create_directories(dir);
  GridManifest m;
  m.views = grid.views;
  m.times = grid.times;
  for (std::size_t v = 0; v < grid.views; ++v)
    for (std::size_t t = 0; t < grid.times; ++t) {
      std::string name = "frame_v" + std::to_string(v) + "_t" + std::to_string(t) + ".ppm";
      save_frame((std::filesystem::path(dir) / name).string(), grid.frame(v, t));
      m.frames.push_back({v, t, name});
    }
  std::string manifest_path = (std::filesystem::path(dir) / "manifest.json").string();
  save_manifest(manifest_path, m);
  return manifest_path;
}

void save_weights(const std::string& bin_path, const std::string& sidecar_path,
                  const std::vector<NamedTensor>& tensors) {
  std::ofstream out = open_out(bin_path);
  json sidecar;
  sidecar["tensors"] = json::array();
  for (const NamedTensor& t : tensors) {
    std::size_t count = 1;
    for (std::size_t s : t.shape) count *= s;
    if (count != t.data.size()) throw InvalidArgument("tensor " + t.name + " shape/data mismatch");
    std::vector<float> raw(t.data.size());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = float(t.data[i]);
    write_f32(out, raw);
    sidecar["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
  }
  if (!out) throw IoError("failed writing " + bin_path);
  write_json_file(sidecar_path, sidecar);
}

std::vector<NamedTensor> load_weights(const std::string& bin_path,
                                      const std::string& sidecar_path) {
  json sidecar = parse_json_file(sidecar_path);
  std::ifstream in = open_in(bin_path);
  std::vector<NamedTensor> tensors;
  try {
    for (const json& e : sidecar.at("tensors")) {
      NamedTensor t;
      t.name = e.at("name").get<std::string>();
      t.shape = e.at("shape").get<std::vector<std::size_t>>();
      std::size_t count = 1;
      for (std::size_t s : t.shape) count *= s;
      std::vector<float> raw = read_f32(in, count, bin_path);
      t.data.assign(raw.begin(), raw.end());
      tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw IoError("weight sidecar " + sidecar_path + " is malformed: " + e.what());
  }
  return tensors;
}

void save_scene(const std::string& path, const GaussianScene& scene) {
  json j;
  j["schema"] = 1;
  j["background"] = scene.background;
  json g;
  g["mu"] = json::array();
  g["scale"] = json::array();
  g["rotation"] = json::array();
  g["color"] = json::array();
  g["opacity"] = json::array();
  for (const Gaussian2D& p : scene.gaussians) {
    g["mu"].push_back(p.mu);
    g["scale"].push_back(p.scale);
    g["rotation"].push_back(p.rotation);
    g["color"].push_back(p.color);
    g["opacity"].push_back(p.opacity);
  }
  j["gaussians"] = std::move(g);

  const DeformationField& f = scene.deformation;
  json d;
  d["t_freqs"] = f.t_freqs;
  d["pos_freqs"] = f.pos_freqs;
  d["pos_scale"] = f.pos_scale;
  d["hidden"] = f.pos_net.hidden;
  d["pos_net"] = base64_encode(mlp_to_f32(f.pos_net));
  d["rot_net"] = base64_encode(mlp_to_f32(f.rot_net));
  d["scale_net"] = base64_encode(mlp_to_f32(f.scale_net));
  j["deformation"] = std::move(d);
  write_json_file(path, j);
}

GaussianScene load_scene(const std::string& path) {
  json j = parse_json_file(path);
  GaussianScene scene;
  try {
    if (j.at("schema").get<int>() != 1) throw IoError(path + ": unsupported scene schema");
    scene.background = j.at("background").get<std::array<double, 3>>();
    const json& g = j.at("gaussians");
    std::size_t n = g.at("mu").size();
    for (std::size_t i = 0; i < n; ++i) {
      Gaussian2D p;
      p.mu = g.at("mu").at(i).get<std::array<double, 2>>();
      p.scale = g.at("scale").at(i).get<std::array<double, 2>>();
      p.rotation = g.at("rotation").at(i).get<double>();
      p.color = g.at("color").at(i).get<std::array<double, 3>>();
      p.opacity = g.at("opacity").at(i).get<double>();
      scene.gaussians.push_back(p);
    }

    const json& d = j.at("deformation");
    DeformationField f;
    f.t_freqs = d.at("t_freqs").get<std::size_t>();
    f.pos_freqs = d.at("pos_freqs").get<std::size_t>();
    f.pos_scale = d.at("pos_scale").get<std::array<double, 2>>();
    std::size_t hidden = d.at("hidden").get<std::size_t>();
    Rng dummy(0);
    f.pos_net = Mlp::make(dummy, f.input_dim(), 2, hidden);
    f.rot_net = Mlp::make(dummy, f.input_dim(), 1, hidden);
    f.scale_net = Mlp::make(dummy, f.input_dim(), 2, hidden);
    mlp_from_f32(f.pos_net, base64_decode(d.at("pos_net").get<std::string>()));
    mlp_from_f32(f.rot_net, base64_decode(d.at("rot_net").get<std::string>()));
    mlp_from_f32(f.scale_net, base64_decode(d.at("scale_net").get<std::string>()));
    scene.deformation = std::move(f);
  } catch (const json::exception& e) {
    throw IoError("scene file " + path + " is malformed: " + e.what());
  }
  return scene;
}

}  // namespace stgrid
