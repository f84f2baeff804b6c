#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "stgrid/frame.hpp"
#include "stgrid/rng.hpp"

namespace stgrid {

// Anisotropic 2D Gaussian primitive in pixel coordinates. Covariance is
// R(rotation) diag(scale^2) R(rotation)^T; compositing is front-to-back in
// list order (the 2D scene has no depth to sort by).
struct Gaussian2D {
  std::array<double, 2> mu{0.0, 0.0};
  std::array<double, 2> scale{1.0, 1.0};  // standard deviations, > 0
  double rotation = 0.0;                  // radians
  std::array<double, 3> color{0.5, 0.5, 0.5};
  double opacity = 0.5;  // in (0, 1)
};

constexpr double kMinScale = 1e-4;

// Two hidden layers of width 32 with tanh, final layer zero-initialised so
// the untrained field is the identity deformation.
struct Mlp {
  std::size_t in = 0, hidden = 32, out = 0;
  std::vector<double> w1, b1, w2, b2, w3, b3;  // w1 hidden x in, w2 hidden x hidden, w3 out x hidden

  static Mlp make(Rng& rng, std::size_t in, std::size_t out, std::size_t hidden = 32);
  std::size_t param_count() const;
};

// Shared temporal/positional feature -> per-Gaussian offsets for position,
// rotation and scale. The feature z concatenates a sinusoidal encoding of
// normalised time with encodings of the canonical centre (per axis).
struct DeformationField {
  std::size_t t_freqs = 4;
  std::size_t pos_freqs = 4;
  std::array<double, 2> pos_scale{1.0, 1.0};  // normalises mu before encoding
  Mlp pos_net, rot_net, scale_net;            // outputs 2, 1, 2

  std::size_t input_dim() const { return 2 * t_freqs + 2 * 2 * pos_freqs; }

  static DeformationField make(Rng& rng, std::array<double, 2> pos_scale,
                               std::size_t t_freqs = 4, std::size_t pos_freqs = 4);
};

struct GaussianScene {
  std::vector<Gaussian2D> gaussians;
  DeformationField deformation;
  std::array<double, 3> background{0.0, 0.0, 0.0};
};

// Canonical -> time-t parameters: mu + dmu, rotation + drot and
// max(scale + dscale, kMinScale), t normalised to [0, 1]. Gradients do not
// flow through the scale clamp when it binds.
std::vector<Gaussian2D> deform(const GaussianScene& scene, double t);

// Alpha compositing of truncated Gaussians (skipped beyond 3 sigma of
// Mahalanobis distance) over a constant background.
Frame render(const std::vector<Gaussian2D>& gaussians, std::size_t height, std::size_t width,
             const std::array<double, 3>& background, std::size_t workers = 1);

// Mean squared difference of horizontal plus vertical neighbours, averaged
// over every difference term of every channel.
double tv_loss(const Frame& image);

enum class LossNorm { l1, l2 };

struct LossConfig {
  LossNorm norm = LossNorm::l1;
  double lambda_tv = 0.0;
};

struct MlpGrads {
  std::vector<double> w1, b1, w2, b2, w3, b3;
};

struct GaussianGrads {
  std::array<double, 2> mu{0.0, 0.0};
  std::array<double, 2> scale{0.0, 0.0};
  double rotation = 0.0;
  std::array<double, 3> color{0.0, 0.0, 0.0};
  double opacity = 0.0;
};

struct SceneGrads {
  std::vector<GaussianGrads> gaussians;
  MlpGrads pos_net, rot_net, scale_net;
};

struct RenderGradResult {
  double loss = 0.0;
  Frame rendered;
  SceneGrads grads;
};

// Renders the scene at time t and returns analytic gradients of the
// configured loss against the target, with respect to every canonical
// Gaussian parameter and the deformation weights (chain rule through the
// deformation offsets and the positional encoding of the centres).
RenderGradResult render_grad(const GaussianScene& scene, double t, const Frame& target,
                             const LossConfig& cfg = {}, std::size_t workers = 1);

struct OptimizeConfig {
  std::size_t iterations = 2000;
  double lr_geometry = 1e-2;  // mu, scale, rotation
  double lr_color = 5e-3;     // color, opacity
  double lr_deform = 1e-3;    // deformation weights
  LossConfig loss{LossNorm::l1, 1e-3};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t workers = 1;
  std::vector<double>* loss_history = nullptr;  // per-iteration loss when set
};

// Full-batch Adam over one target frame per normalised time, projecting
// parameters back into their valid ranges after each step. Throws
// DivergenceDetected when the loss stops being finite.
GaussianScene optimize(const GaussianScene& scene, const std::vector<Frame>& targets,
                       const OptimizeConfig& cfg = {});

// Seeded random scene for tests and the optimizer's cold start. Colours are
// drawn from mid-range so renders stay away from the [0,1] walls.
GaussianScene random_scene(Rng& rng, std::size_t count, std::size_t height, std::size_t width);

// Gives the (normally zero-initialised) final layers small random weights so
// a ground-truth scene actually moves over time.
void randomize_final_layers(Rng& rng, DeformationField& field, double amplitude);

}  // namespace stgrid
