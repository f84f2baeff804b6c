#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stgrid/errors.hpp"
#include "stgrid/io.hpp"
#include "stgrid/rng.hpp"

using namespace stgrid;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "stgrid_io_tests";
  fs::create_directories(p);
  return p;
}

std::string path_of(const char* name) { return (temp_dir() / name).string(); }

void write_bytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), std::streamsize(bytes.size()));
}

std::string u32_bytes(std::uint32_t v) {
  return std::string(reinterpret_cast<const char*>(&v), 4);
}

float quantized(float v) {
  float c = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
  return float(std::lround(double(c) * 255.0)) / 255.0f;
}

}  // namespace

TEST_CASE("float frames round trip exactly through STGF") {
  Frame f(5, 7);
  Rng rng(1);
  for (float& v : f.data) v = float(rng.uniform(-0.5, 1.5));  // no clamping in this container
  std::string path = path_of("frame.stgf");
  save_frame(path, f);
  Frame g = load_frame(path);
  REQUIRE(g.same_shape(f));
  CHECK(g.data == f.data);
}

TEST_CASE("ppm frames quantize to 8 bits and stay byte-stable") {
  Frame f(4, 6);
  Rng rng(2);
  for (float& v : f.data) v = float(rng.uniform(-0.2, 1.2));
  std::string path = path_of("frame.ppm");
  save_frame(path, f);

  Frame g = load_frame(path);
  REQUIRE(g.same_shape(f));
  for (std::size_t i = 0; i < f.data.size(); ++i) CHECK(g.data[i] == quantized(f.data[i]));

  // Quantized values are a fixed point: a second trip changes nothing.
  std::string again = path_of("frame2.ppm");
  save_frame(again, g);
  std::ifstream in1(path, std::ios::binary), in2(again, std::ios::binary);
  std::string bytes1((std::istreambuf_iterator<char>(in1)), std::istreambuf_iterator<char>());
  std::string bytes2((std::istreambuf_iterator<char>(in2)), std::istreambuf_iterator<char>());
  CHECK(bytes1 == bytes2);
  CHECK(bytes1.substr(0, 11) == "P6\n6 4\n255\n");
  CHECK(bytes1.size() == 11 + 4 * 6 * 3);
}

TEST_CASE("the ppm loader skips comments and rejects other bit depths") {
  std::string path = path_of("commented.ppm");
  std::string payload(6, '\x40');  // 2x1, three channels each
  write_bytes(path, "P6\n# a comment line\n2 1\n255\n" + payload);
  Frame f = load_frame(path);
  CHECK(f.width == 2);
  CHECK(f.height == 1);
  CHECK(f.at(0, 0, 0) == float(0x40) / 255.0f);

  std::string deep = path_of("deep.ppm");
  write_bytes(deep, "P6\n2 1\n65535\n" + payload);
  CHECK_THROWS_AS(load_frame(deep), IoError);

  std::string pgm = path_of("gray.ppm");
  write_bytes(pgm, "P5\n2 1\n255\n" + payload);
  CHECK_THROWS_AS(load_frame(pgm), IoError);
}

TEST_CASE("flow fields round trip at float32 precision") {
  FlowField flow(3, 4, FlowResolution::pixel);
  Rng rng(3);
  for (double& d : flow.data) d = rng.uniform(-6.0, 6.0);
  std::string path = path_of("flow.stfl");
  save_flow(path, flow);
  FlowField back = load_flow(path);
  CHECK(back.height == 3);
  CHECK(back.width == 4);
  CHECK(back.resolution == FlowResolution::pixel);
  REQUIRE(back.data.size() == flow.data.size());
  for (std::size_t i = 0; i < flow.data.size(); ++i)
    CHECK(back.data[i] == double(float(flow.data[i])));
}

TEST_CASE("masks round trip and reject bytes other than zero and one") {
  ValidityMask mask(3, 5, 0);
  mask.at(0, 0) = 1;
  mask.at(2, 4) = 1;
  mask.at(1, 3) = 1;
  std::string path = path_of("mask.stmk");
  save_mask(path, mask);
  ValidityMask back = load_mask(path);
  CHECK(back.height == 3);
  CHECK(back.width == 5);
  CHECK(back.data == mask.data);

  std::string dirty = path_of("dirty.stmk");
  write_bytes(dirty, "STMK" + u32_bytes(1) + u32_bytes(1) + std::string(1, '\x02'));
  CHECK_THROWS_AS(load_mask(dirty), IoError);
}

TEST_CASE("token maps round trip at float32 precision") {
  TokenMap tokens(2, 3, 5);
  Rng rng(4);
  for (double& d : tokens.data) d = rng.normal();
  std::string path = path_of("tokens.sttk");
  save_tokens(path, tokens);
  TokenMap back = load_tokens(path);
  CHECK(back.rows == 2);
  CHECK(back.cols == 3);
  CHECK(back.dim == 5);
  REQUIRE(back.data.size() == tokens.data.size());
  for (std::size_t i = 0; i < tokens.data.size(); ++i)
    CHECK(back.data[i] == double(float(tokens.data[i])));
}

TEST_CASE("grid manifests round trip and reject malformed JSON") {
  GridManifest m;
  m.views = 2;
  m.times = 3;
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t t = 0; t < 3; ++t)
      m.frames.push_back({v, t, "frame_" + std::to_string(v) + "_" + std::to_string(t) + ".ppm"});
  std::string path = path_of("manifest.json");
  save_manifest(path, m);
  GridManifest back = load_manifest(path);
  CHECK(back.views == 2);
  CHECK(back.times == 3);
  REQUIRE(back.frames.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(back.frames[i].v == m.frames[i].v);
    CHECK(back.frames[i].t == m.frames[i].t);
    CHECK(back.frames[i].path == m.frames[i].path);
  }

  std::string broken = path_of("broken.json");
  write_bytes(broken, "{not json");
  CHECK_THROWS_AS(load_manifest(broken), IoError);

  std::string missing_key = path_of("missing_key.json");
  write_bytes(missing_key, R"({"views": 2, "frames": []})");
  CHECK_THROWS_AS(load_manifest(missing_key), IoError);
}

TEST_CASE("grids of 8-bit values survive the save and load cycle untouched") {
  std::vector<std::tuple<std::size_t, std::size_t, Frame>> tagged;
  Rng rng(5);
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t t = 0; t < 2; ++t) {
      Frame f(6, 6);
      for (float& x : f.data) x = float(rng.index(256)) / 255.0f;  // already on the 8-bit lattice
      tagged.emplace_back(v, t, std::move(f));
    }
  CameraTimeGrid grid = build_grid(std::move(tagged), 2, 2);

  fs::path dir = temp_dir() / "grid_cycle";
  fs::remove_all(dir);
  std::string manifest = save_grid(grid, dir.string());
  CHECK(fs::exists(dir / "frame_v0_t0.ppm"));
  CHECK(fs::exists(dir / "frame_v1_t1.ppm"));
  CHECK(manifest == (dir / "manifest.json").string());

  CameraTimeGrid back = load_grid(manifest);
  REQUIRE(back.views == 2);
  REQUIRE(back.times == 2);
  for (std::size_t v = 0; v < 2; ++v)
    for (std::size_t t = 0; t < 2; ++t) CHECK(back.frame(v, t).data == grid.frame(v, t).data);
  fs::remove_all(dir);
}

TEST_CASE("weight blobs round trip with their sidecar") {
  std::vector<NamedTensor> tensors;
  Rng rng(6);
  NamedTensor a;
  a.name = "layer0.img_wq";
  a.shape = {2, 3};
  for (int i = 0; i < 6; ++i) a.data.push_back(rng.normal());
  NamedTensor b;
  b.name = "bias";
  b.shape = {4};
  for (int i = 0; i < 4; ++i) b.data.push_back(rng.normal());
  tensors.push_back(a);
  tensors.push_back(b);

  std::string bin = path_of("weights.bin");
  std::string sidecar = path_of("weights.json");
  save_weights(bin, sidecar, tensors);
  std::vector<NamedTensor> back = load_weights(bin, sidecar);
  REQUIRE(back.size() == 2);
  CHECK(back[0].name == "layer0.img_wq");
  CHECK(back[0].shape == std::vector<std::size_t>{2, 3});
  CHECK(back[1].name == "bias");
  CHECK(back[1].shape == std::vector<std::size_t>{4});
  for (std::size_t i = 0; i < 6; ++i) CHECK(back[0].data[i] == double(float(a.data[i])));
  for (std::size_t i = 0; i < 4; ++i) CHECK(back[1].data[i] == double(float(b.data[i])));

  // Shape that disagrees with the payload size is refused up front.
  NamedTensor bad = a;
  bad.shape = {7};
  CHECK_THROWS_AS(save_weights(path_of("bad.bin"), path_of("bad.json"), {bad}), InvalidArgument);

  // A sidecar promising more data than the blob holds is a truncation.
  write_bytes(bin, u32_bytes(0));
  CHECK_THROWS_AS(load_weights(bin, sidecar), IoError);

  std::string empty_sidecar = path_of("empty_sidecar.json");
  write_bytes(empty_sidecar, "{}");
  CHECK_THROWS_AS(load_weights(bin, empty_sidecar), IoError);
}

TEST_CASE("gaussian scenes round trip through versioned JSON") {
  Rng rng(7);
  GaussianScene scene = random_scene(rng, 3, 16, 16);
  scene.background = {0.125, 0.25, 0.5};
  std::string path = path_of("scene.json");
  save_scene(path, scene);
  GaussianScene back = load_scene(path);

  CHECK(back.background == scene.background);
  REQUIRE(back.gaussians.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    // Per-Gaussian parameters travel as JSON doubles, hence exactly.
    CHECK(back.gaussians[i].mu == scene.gaussians[i].mu);
    CHECK(back.gaussians[i].scale == scene.gaussians[i].scale);
    CHECK(back.gaussians[i].rotation == scene.gaussians[i].rotation);
    CHECK(back.gaussians[i].color == scene.gaussians[i].color);
    CHECK(back.gaussians[i].opacity == scene.gaussians[i].opacity);
  }

  // The deformation nets are embedded as base64 float32.
  const DeformationField& want = scene.deformation;
  const DeformationField& got = back.deformation;
  CHECK(got.t_freqs == want.t_freqs);
  CHECK(got.pos_freqs == want.pos_freqs);
  CHECK(got.pos_scale == want.pos_scale);
  auto check_mlp = [](const Mlp& w, const Mlp& g) {
    REQUIRE(g.w1.size() == w.w1.size());
    REQUIRE(g.w3.size() == w.w3.size());
    for (std::size_t i = 0; i < w.w1.size(); ++i) CHECK(g.w1[i] == double(float(w.w1[i])));
    for (std::size_t i = 0; i < w.b1.size(); ++i) CHECK(g.b1[i] == double(float(w.b1[i])));
    for (std::size_t i = 0; i < w.w2.size(); ++i) CHECK(g.w2[i] == double(float(w.w2[i])));
    for (std::size_t i = 0; i < w.b2.size(); ++i) CHECK(g.b2[i] == double(float(w.b2[i])));
    for (std::size_t i = 0; i < w.w3.size(); ++i) CHECK(g.w3[i] == double(float(w.w3[i])));
    for (std::size_t i = 0; i < w.b3.size(); ++i) CHECK(g.b3[i] == double(float(w.b3[i])));
  };
  check_mlp(want.pos_net, got.pos_net);
  check_mlp(want.rot_net, got.rot_net);
  check_mlp(want.scale_net, got.scale_net);

  // Loading twice is stable: float32 quantization only bites once.
  std::string path2 = path_of("scene2.json");
  save_scene(path2, back);
  GaussianScene twice = load_scene(path2);
  CHECK(twice.deformation.pos_net.w1 == back.deformation.pos_net.w1);

  std::string future = path_of("future.json");
  write_bytes(future, R"({"schema": 2})");
  CHECK_THROWS_AS(load_scene(future), IoError);
}

TEST_CASE("loaders flag missing files, bad magics, and truncation") {
  CHECK_THROWS_AS(load_frame(path_of("nope.stgf")), IoError);
  CHECK_THROWS_AS(load_flow(path_of("nope.stfl")), IoError);
  CHECK_THROWS_AS(load_mask(path_of("nope.stmk")), IoError);
  CHECK_THROWS_AS(load_tokens(path_of("nope.sttk")), IoError);
  CHECK_THROWS_AS(load_manifest(path_of("nope.json")), IoError);
  CHECK_THROWS_AS(load_scene(path_of("nope.json")), IoError);

  // A container of the wrong kind trips the magic check.
  FlowField flow(2, 2, FlowResolution::pixel);
  std::string crossed = path_of("crossed.stfl");
  save_flow(crossed, flow);
  CHECK_THROWS_AS(load_tokens(crossed), IoError);
  CHECK_THROWS_AS(load_frame(crossed), IoError);

  // Headers promising more payload than the file carries.
  std::string short_frame = path_of("short.stgf");
  write_bytes(short_frame,
              "STGF" + u32_bytes(2) + u32_bytes(2) + u32_bytes(3) + std::string(8, '\0'));
  CHECK_THROWS_AS(load_frame(short_frame), IoError);

  std::string short_header = path_of("short_header.stfl");
  write_bytes(short_header, "STFL" + u32_bytes(2));
  CHECK_THROWS_AS(load_flow(short_header), IoError);

  std::string short_mask = path_of("short.stmk");
  write_bytes(short_mask, "STMK" + u32_bytes(2) + u32_bytes(2) + std::string(2, '\x01'));
  CHECK_THROWS_AS(load_mask(short_mask), IoError);
}
