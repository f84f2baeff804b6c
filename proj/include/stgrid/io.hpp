#pragma once

#include <string>
#include <vector>

#include "stgrid/flow.hpp"
#include "stgrid/frame.hpp"
#include "stgrid/grid.hpp"
#include "stgrid/splat.hpp"
#include "stgrid/tokens.hpp"

namespace stgrid {

// On-disk formats. All binary containers are little-endian with a 4-byte
// magic; frames additionally round-trip through 8-bit PPM (P6) when the
// path ends in .ppm. Magics: STGF float32 planar frames, STFL flow fields,
// STMK validity masks, STTK token maps.

Frame load_frame(const std::string& path);
void save_frame(const std::string& path, const Frame& frame);

FlowField load_flow(const std::string& path);
void save_flow(const std::string& path, const FlowField& flow);

ValidityMask load_mask(const std::string& path);
void save_mask(const std::string& path, const ValidityMask& mask);

TokenMap load_tokens(const std::string& path);
void save_tokens(const std::string& path, const TokenMap& tokens);

// Grid manifest: {"views": V, "times": T, "frames": [{"v","t","path"}]},
// frame paths relative to the manifest's directory.
struct ManifestEntry {
  std::size_t v = 0;
  std::size_t t = 0;
  std::string path;
};

struct GridManifest {
  std::size_t views = 0;
  std::size_t times = 0;
  std::vector<ManifestEntry> frames;
};

GridManifest load_manifest(const std::string& path);
void save_manifest(const std::string& path, const GridManifest& manifest);

CameraTimeGrid load_grid(const std::string& manifest_path);
// Writes frames as frame_v{v}_t{t}.ppm plus manifest.json into dir; returns
// the manifest path.
std::string save_grid(const CameraTimeGrid& grid, const std::string& dir);

// Raw float32 weight blob plus a JSON sidecar listing tensor names and
// shapes in blob order.
struct NamedTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

void save_weights(const std::string& bin_path, const std::string& sidecar_path,
                  const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_weights(const std::string& bin_path,
                                      const std::string& sidecar_path);

// Scene files: versioned JSON ("schema": 1) with per-Gaussian arrays and the
// deformation weights embedded as base64 float32.
void save_scene(const std::string& path, const GaussianScene& scene);
GaussianScene load_scene(const std::string& path);

}  // namespace stgrid
