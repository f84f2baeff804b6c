#include "stgrid/splat.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>
#include <vector>

namespace stgrid {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kCutoff = 9.0;  // 3 sigma in squared Mahalanobis distance

void parallel_rows(std::size_t rows, std::size_t workers, auto&& fn) {
  std::size_t n = std::min<std::size_t>(std::max<std::size_t>(workers, 1), rows);
  if (n <= 1) {
    fn(std::size_t(0), rows, std::size_t(0));
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t begin = rows * i / n, end = rows * (i + 1) / n;
    pool.emplace_back([&fn, begin, end, i] { fn(begin, end, i); });
  }
  for (std::thread& th : pool) th.join();
}

void validate_gaussians(const std::vector<Gaussian2D>& gs) {
  for (const Gaussian2D& g : gs) {
    for (double v : {g.mu[0], g.mu[1], g.scale[0], g.scale[1], g.rotation, g.color[0], g.color[1],
                     g.color[2], g.opacity})
      if (!std::isfinite(v)) throw InvalidArgument("gaussian parameters must be finite");
    if (!(g.scale[0] > 0.0) || !(g.scale[1] > 0.0))
      throw InvalidArgument("gaussian scales must be positive");
    if (!(g.opacity > 0.0) || !(g.opacity < 1.0))
      throw InvalidArgument("gaussian opacity must lie strictly inside (0,1)");
  }
}

// Frequency ladder sin(2^j pi x), cos(2^j pi x), j = 0..freqs-1.
void encode_into(double x, std::size_t freqs, double* out) {
  double f = kPi;
  for (std::size_t j = 0; j < freqs; ++j) {
    out[2 * j] = std::sin(f * x);
    out[2 * j + 1] = std::cos(f * x);
    f *= 2.0;
  }
}

// Sum of dz . d(encoding)/dx for the same ladder.
double encode_grad_dot(double x, std::size_t freqs, const double* dz) {
  double f = kPi, acc = 0.0;
  for (std::size_t j = 0; j < freqs; ++j) {
    acc += dz[2 * j] * f * std::cos(f * x) - dz[2 * j + 1] * f * std::sin(f * x);
    f *= 2.0;
  }
  return acc;
}

struct NetCache {
  std::vector<double> h1, h2, y;
};

void mlp_forward(const Mlp& m, const std::vector<double>& z, NetCache& c) {
  c.h1.assign(m.hidden, 0.0);
  c.h2.assign(m.hidden, 0.0);
  c.y.assign(m.out, 0.0);
  for (std::size_t i = 0; i < m.hidden; ++i) {
    double a = m.b1[i];
    for (std::size_t j = 0; j < m.in; ++j) a += m.w1[i * m.in + j] * z[j];
    c.h1[i] = std::tanh(a);
  }
  for (std::size_t i = 0; i < m.hidden; ++i) {
    double a = m.b2[i];
    for (std::size_t j = 0; j < m.hidden; ++j) a += m.w2[i * m.hidden + j] * c.h1[j];
    c.h2[i] = std::tanh(a);
  }
  for (std::size_t o = 0; o < m.out; ++o) {
    double a = m.b3[o];
    for (std::size_t j = 0; j < m.hidden; ++j) a += m.w3[o * m.hidden + j] * c.h2[j];
    c.y[o] = a;
  }
}

void mlp_backward(const Mlp& m, const std::vector<double>& z, const NetCache& c, const double* dy,
                  MlpGrads& g, std::vector<double>& dz) {
  std::vector<double> dh2(m.hidden, 0.0), dh1(m.hidden, 0.0);
  for (std::size_t o = 0; o < m.out; ++o) {
    g.b3[o] += dy[o];
    for (std::size_t j = 0; j < m.hidden; ++j) {
      g.w3[o * m.hidden + j] += dy[o] * c.h2[j];
      dh2[j] += dy[o] * m.w3[o * m.hidden + j];
    }
  }
  for (std::size_t i = 0; i < m.hidden; ++i) {
    double da = dh2[i] * (1.0 - c.h2[i] * c.h2[i]);
    g.b2[i] += da;
    for (std::size_t j = 0; j < m.hidden; ++j) {
      g.w2[i * m.hidden + j] += da * c.h1[j];
      dh1[j] += da * m.w2[i * m.hidden + j];
    }
  }
  for (std::size_t i = 0; i < m.hidden; ++i) {
    double da = dh1[i] * (1.0 - c.h1[i] * c.h1[i]);
    g.b1[i] += da;
    for (std::size_t j = 0; j < m.in; ++j) {
      g.w1[i * m.in + j] += da * z[j];
      dz[j] += da * m.w1[i * m.in + j];
    }
  }
}

MlpGrads zero_like(const Mlp& m) {
  MlpGrads g;
  g.w1.assign(m.w1.size(), 0.0);
  g.b1.assign(m.b1.size(), 0.0);
  g.w2.assign(m.w2.size(), 0.0);
  g.b2.assign(m.b2.size(), 0.0);
  g.w3.assign(m.w3.size(), 0.0);
  g.b3.assign(m.b3.size(), 0.0);
  return g;
}

std::vector<double> build_z(const DeformationField& f, double t, const Gaussian2D& g) {
  std::vector<double> z(f.input_dim());
  encode_into(t, f.t_freqs, z.data());
  encode_into(g.mu[0] / f.pos_scale[0], f.pos_freqs, z.data() + 2 * f.t_freqs);
  encode_into(g.mu[1] / f.pos_scale[1], f.pos_freqs,
              z.data() + 2 * f.t_freqs + 2 * f.pos_freqs);
  return z;
}

void validate_field(const DeformationField& f) {
  if (f.pos_net.in != f.input_dim() || f.rot_net.in != f.input_dim() ||
      f.scale_net.in != f.input_dim())
    throw InvalidArgument("deformation nets disagree with the encoding dimension");
  if (f.pos_net.out != 2 || f.rot_net.out != 1 || f.scale_net.out != 2)
    throw InvalidArgument("deformation nets must emit (2,1,2) offsets");
  if (!(f.pos_scale[0] > 0.0) || !(f.pos_scale[1] > 0.0))
    throw InvalidArgument("position normalisation must be positive");
}

// Per-Gaussian precomputed terms for rasterisation.
struct GaussPre {
  double mux, muy, cos_t, sin_t, sx, sy, inv_sx2, inv_sy2;
  double xmin, xmax, ymin, ymax;
  std::array<double, 3> color;
  double opacity;
};

std::vector<GaussPre> precompute(const std::vector<Gaussian2D>& gs) {
  std::vector<GaussPre> pre(gs.size());
  for (std::size_t i = 0; i < gs.size(); ++i) {
    const Gaussian2D& g = gs[i];
    GaussPre& p = pre[i];
    p.mux = g.mu[0];
    p.muy = g.mu[1];
    p.cos_t = std::cos(g.rotation);
    p.sin_t = std::sin(g.rotation);
    p.sx = g.scale[0];
    p.sy = g.scale[1];
    p.inv_sx2 = 1.0 / (p.sx * p.sx);
    p.inv_sy2 = 1.0 / (p.sy * p.sy);
    double cxx = p.cos_t * p.cos_t * p.sx * p.sx + p.sin_t * p.sin_t * p.sy * p.sy;
    double cyy = p.sin_t * p.sin_t * p.sx * p.sx + p.cos_t * p.cos_t * p.sy * p.sy;
    double ex = 3.0 * std::sqrt(cxx), ey = 3.0 * std::sqrt(cyy);
    p.xmin = p.mux - ex;
    p.xmax = p.mux + ex;
    p.ymin = p.muy - ey;
    p.ymax = p.muy + ey;
    p.color = g.color;
    p.opacity = g.opacity;
  }
  return pre;
}

inline double mahalanobis(const GaussPre& p, double px, double py, double& ux, double& uy) {
  double dx = px - p.mux, dy = py - p.muy;
  ux = p.cos_t * dx + p.sin_t * dy;
  uy = -p.sin_t * dx + p.cos_t * dy;
  return ux * ux * p.inv_sx2 + uy * uy * p.inv_sy2;
}

Frame render_pre(const std::vector<GaussPre>& pre, std::size_t height, std::size_t width,
                 const std::array<double, 3>& background, std::size_t workers) {
  Frame out(height, width);
  parallel_rows(height, workers, [&](std::size_t y0, std::size_t y1, std::size_t) {
    for (std::size_t y = y0; y < y1; ++y) {
      double py = double(y) + 0.5;
      for (std::size_t x = 0; x < width; ++x) {
        double px = double(x) + 0.5;
        double c0 = 0.0, c1 = 0.0, c2 = 0.0, tr = 1.0;
        for (const GaussPre& p : pre) {
          if (px < p.xmin || px > p.xmax || py < p.ymin || py > p.ymax) continue;
          double ux, uy;
          double q = mahalanobis(p, px, py, ux, uy);
          if (q > kCutoff) continue;
          double w = p.opacity * std::exp(-0.5 * q);
          double wt = w * tr;
          c0 += p.color[0] * wt;
          c1 += p.color[1] * wt;
          c2 += p.color[2] * wt;
          tr *= 1.0 - w;
        }
        out.at(y, x, 0) = float(c0 + background[0] * tr);
        out.at(y, x, 1) = float(c1 + background[1] * tr);
        out.at(y, x, 2) = float(c2 + background[2] * tr);
      }
    }
  });
  return out;
}

}  // namespace

Mlp Mlp::make(Rng& rng, std::size_t in, std::size_t out, std::size_t hidden) {
  if (in == 0 || out == 0 || hidden == 0) throw InvalidArgument("mlp dimensions must be positive");
  Mlp m;
  m.in = in;
  m.hidden = hidden;
  m.out = out;
  m.w1.assign(hidden * in, 0.0);
  m.b1.assign(hidden, 0.0);
  m.w2.assign(hidden * hidden, 0.0);
  m.b2.assign(hidden, 0.0);
  m.w3.assign(out * hidden, 0.0);
  m.b3.assign(out, 0.0);
  double s1 = 1.0 / std::sqrt(double(in)), s2 = 1.0 / std::sqrt(double(hidden));
  for (double& v : m.w1) v = rng.normal() * s1;
  for (double& v : m.w2) v = rng.normal() * s2;
  // w3 and b3 stay zero so the fresh field deforms nothing.
  return m;
}

std::size_t Mlp::param_count() const {
  return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + b3.size();
}

DeformationField DeformationField::make(Rng& rng, std::array<double, 2> pos_scale,
                                        std::size_t t_freqs, std::size_t pos_freqs) {
  DeformationField f;
  f.t_freqs = t_freqs;
  f.pos_freqs = pos_freqs;
  f.pos_scale = pos_scale;
  f.pos_net = Mlp::make(rng, f.input_dim(), 2);
  f.rot_net = Mlp::make(rng, f.input_dim(), 1);
  f.scale_net = Mlp::make(rng, f.input_dim(), 2);
  validate_field(f);
  return f;
}

std::vector<Gaussian2D> deform(const GaussianScene& scene, double t) {
  validate_field(scene.deformation);
  validate_gaussians(scene.gaussians);
  const DeformationField& f = scene.deformation;

  std::vector<Gaussian2D> out(scene.gaussians.size());
  NetCache pos, rot, scl;
  for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
    const Gaussian2D& g = scene.gaussians[i];
    std::vector<double> z = build_z(f, t, g);
    mlp_forward(f.pos_net, z, pos);
    mlp_forward(f.rot_net, z, rot);
    mlp_forward(f.scale_net, z, scl);
    Gaussian2D d = g;
    d.mu[0] += pos.y[0];
    d.mu[1] += pos.y[1];
    d.rotation += rot.y[0];
    d.scale[0] = std::max(g.scale[0] + scl.y[0], kMinScale);
    d.scale[1] = std::max(g.scale[1] + scl.y[1], kMinScale);
    out[i] = d;
  }
  return out;
}

Frame render(const std::vector<Gaussian2D>& gaussians, std::size_t height, std::size_t width,
             const std::array<double, 3>& background, std::size_t workers) {
  if (height == 0 || width == 0) throw InvalidArgument("render target must be non-empty");
  validate_gaussians(gaussians);
  return render_pre(precompute(gaussians), height, width, background, workers);
}

double tv_loss(const Frame& image) {
  const std::size_t h = image.height, w = image.width;
  if (h == 0 || w == 0) throw InvalidArgument("tv_loss needs a non-empty image");
  std::size_t terms = h * (w - 1) + (h - 1) * w;
  if (terms == 0) return 0.0;

  double sum = 0.0;
  for (std::size_t c = 0; c < Frame::kChannels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double v = double(image.at(y, x, c));
        if (x + 1 < w) {
          double d = double(image.at(y, x + 1, c)) - v;
          sum += d * d;
        }
        if (y + 1 < h) {
          double d = double(image.at(y + 1, x, c)) - v;
          sum += d * d;
        }
      }
  return sum / double(Frame::kChannels * terms);
}

RenderGradResult render_grad(const GaussianScene& scene, double t, const Frame& target,
                             const LossConfig& cfg, std::size_t workers) {
  validate_field(scene.deformation);
  validate_gaussians(scene.gaussians);
  validate_frame(target);
  const std::size_t h = target.height, w = target.width;
  const std::size_t n = scene.gaussians.size();
  const DeformationField& field = scene.deformation;

  // Deformation forward with caches kept for the weight backward.
  std::vector<std::vector<double>> zs(n);
  std::vector<NetCache> pos_c(n), rot_c(n), scl_c(n);
  std::vector<Gaussian2D> deformed(n);
  std::vector<std::array<bool, 2>> clamped(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Gaussian2D& g = scene.gaussians[i];
    zs[i] = build_z(field, t, g);
    mlp_forward(field.pos_net, zs[i], pos_c[i]);
    mlp_forward(field.rot_net, zs[i], rot_c[i]);
    mlp_forward(field.scale_net, zs[i], scl_c[i]);
    Gaussian2D d = g;
    d.mu[0] += pos_c[i].y[0];
    d.mu[1] += pos_c[i].y[1];
    d.rotation += rot_c[i].y[0];
    for (std::size_t a = 0; a < 2; ++a) {
      double raw = g.scale[a] + scl_c[i].y[a];
      clamped[i][a] = raw <= kMinScale;
      d.scale[a] = std::max(raw, kMinScale);
    }
    deformed[i] = d;
  }

  std::vector<GaussPre> pre = precompute(deformed);
  RenderGradResult result;
  result.rendered = render_pre(pre, h, w, scene.background, workers);
  const Frame& rendered = result.rendered;

  // Loss and its per-pixel upstream gradient.
  const double norm_n = double(h * w * Frame::kChannels);
  std::vector<double> dldc(h * w * Frame::kChannels, 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < dldc.size(); ++i) {
    double diff = double(rendered.data[i]) - double(target.data[i]);
    if (cfg.norm == LossNorm::l1) {
      loss += std::abs(diff) / norm_n;
      dldc[i] = (diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0)) / norm_n;
    } else {
      loss += diff * diff / norm_n;
      dldc[i] = 2.0 * diff / norm_n;
    }
  }
  if (cfg.lambda_tv != 0.0) {
    loss += cfg.lambda_tv * tv_loss(rendered);
    std::size_t terms = h * (w - 1) + (h - 1) * w;
    if (terms > 0) {
      double scale = cfg.lambda_tv * 2.0 / double(Frame::kChannels * terms);
      for (std::size_t c = 0; c < Frame::kChannels; ++c)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            double v = double(rendered.at(y, x, c));
            double g = 0.0;
            if (x > 0) g += v - double(rendered.at(y, x - 1, c));
            if (x + 1 < w) g -= double(rendered.at(y, x + 1, c)) - v;
            if (y > 0) g += v - double(rendered.at(y - 1, x, c));
            if (y + 1 < h) g -= double(rendered.at(y + 1, x, c)) - v;
            dldc[(y * w + x) * Frame::kChannels + c] += scale * g;
          }
    }
  }
  result.loss = loss;

  // Pixel backward into per-Gaussian deformed-parameter gradients. Threads
  // own disjoint row bands and private buffers merged in index order, so the
  // reduction order is fixed for a given worker count.
  std::size_t bands = std::min<std::size_t>(std::max<std::size_t>(workers, 1), h);
  std::vector<std::vector<GaussianGrads>> partial(bands,
                                                  std::vector<GaussianGrads>(n, GaussianGrads{}));
  struct Contrib {
    std::size_t idx;
    double w, tr, ux, uy, g;
  };
  parallel_rows(h, workers, [&](std::size_t y0, std::size_t y1, std::size_t band) {
    std::vector<GaussianGrads>& acc = partial[band];
    std::vector<Contrib> contribs;
    contribs.reserve(n);
    for (std::size_t y = y0; y < y1; ++y) {
      double py = double(y) + 0.5;
      for (std::size_t x = 0; x < w; ++x) {
        double px = double(x) + 0.5;
        contribs.clear();
        double tr = 1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const GaussPre& p = pre[i];
          if (px < p.xmin || px > p.xmax || py < p.ymin || py > p.ymax) continue;
          double ux, uy;
          double q = mahalanobis(p, px, py, ux, uy);
          if (q > kCutoff) continue;
          double g = std::exp(-0.5 * q);
          double wv = p.opacity * g;
          contribs.push_back({i, wv, tr, ux, uy, g});
          tr *= 1.0 - wv;
        }
        if (contribs.empty()) continue;

        const double* up = dldc.data() + (y * w + x) * Frame::kChannels;
        // Suffix colour: everything composited after the current Gaussian.
        std::array<double, 3> suffix = {scene.background[0] * tr, scene.background[1] * tr,
                                        scene.background[2] * tr};
        for (std::size_t ci = contribs.size(); ci-- > 0;) {
          const Contrib& c = contribs[ci];
          const GaussPre& p = pre[c.idx];
          GaussianGrads& gg = acc[c.idx];

          double dldw = 0.0;
          for (std::size_t ch = 0; ch < 3; ++ch) {
            dldw += up[ch] * (p.color[ch] * c.tr - suffix[ch] / (1.0 - c.w));
            gg.color[ch] += up[ch] * c.w * c.tr;
          }
          gg.opacity += dldw * c.g;
          double dldq = -0.5 * dldw * p.opacity * c.g;
          double dqdux = 2.0 * c.ux * p.inv_sx2;
          double dqduy = 2.0 * c.uy * p.inv_sy2;
          gg.rotation += dldq * (dqdux * c.uy - dqduy * c.ux);
          gg.scale[0] += dldq * (-2.0 * c.ux * c.ux * p.inv_sx2 / p.sx);
          gg.scale[1] += dldq * (-2.0 * c.uy * c.uy * p.inv_sy2 / p.sy);
          gg.mu[0] += dldq * (-(dqdux * p.cos_t - dqduy * p.sin_t));
          gg.mu[1] += dldq * (-(dqdux * p.sin_t + dqduy * p.cos_t));

          for (std::size_t ch = 0; ch < 3; ++ch) suffix[ch] += p.color[ch] * c.w * c.tr;
        }
      }
    }
  });

  SceneGrads& grads = result.grads;
  grads.gaussians.assign(n, GaussianGrads{});
  for (const std::vector<GaussianGrads>& band : partial)
    for (std::size_t i = 0; i < n; ++i) {
      GaussianGrads& dst = grads.gaussians[i];
      const GaussianGrads& src = band[i];
      dst.mu[0] += src.mu[0];
      dst.mu[1] += src.mu[1];
      dst.scale[0] += src.scale[0];
      dst.scale[1] += src.scale[1];
      dst.rotation += src.rotation;
      for (std::size_t ch = 0; ch < 3; ++ch) dst.color[ch] += src.color[ch];
      dst.opacity += src.opacity;
    }

  // Chain through the deformation: deformed mu/rotation/scale gradients feed
  // the nets; the encoding of the canonical centre routes part of the signal
  // back into mu as well.
  grads.pos_net = zero_like(field.pos_net);
  grads.rot_net = zero_like(field.rot_net);
  grads.scale_net = zero_like(field.scale_net);
  std::vector<double> dz(field.input_dim());
  const std::size_t off_x = 2 * field.t_freqs;
  const std::size_t off_y = off_x + 2 * field.pos_freqs;
  for (std::size_t i = 0; i < n; ++i) {
    GaussianGrads& gg = grads.gaussians[i];
    double dpos[2] = {gg.mu[0], gg.mu[1]};
    double drot[1] = {gg.rotation};
    double dscl[2] = {clamped[i][0] ? 0.0 : gg.scale[0], clamped[i][1] ? 0.0 : gg.scale[1]};
    gg.scale[0] = dscl[0];
    gg.scale[1] = dscl[1];

    std::fill(dz.begin(), dz.end(), 0.0);
    mlp_backward(field.pos_net, zs[i], pos_c[i], dpos, grads.pos_net, dz);
    mlp_backward(field.rot_net, zs[i], rot_c[i], drot, grads.rot_net, dz);
    mlp_backward(field.scale_net, zs[i], scl_c[i], dscl, grads.scale_net, dz);

    const Gaussian2D& g = scene.gaussians[i];
    gg.mu[0] += encode_grad_dot(g.mu[0] / field.pos_scale[0], field.pos_freqs, dz.data() + off_x) /
                field.pos_scale[0];
    gg.mu[1] += encode_grad_dot(g.mu[1] / field.pos_scale[1], field.pos_freqs, dz.data() + off_y) /
                field.pos_scale[1];
  }
  return result;
}

namespace {

// Fixed parameter enumeration order shared by the Adam state and every
// update pass.
enum class Group { geometry, color, deformation };

template <typename F>
void for_each_param(GaussianScene& scene, SceneGrads& grads, F&& f) {
  for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
    Gaussian2D& g = scene.gaussians[i];
    GaussianGrads& gg = grads.gaussians[i];
    f(Group::geometry, g.mu[0], gg.mu[0]);
    f(Group::geometry, g.mu[1], gg.mu[1]);
    f(Group::geometry, g.scale[0], gg.scale[0]);
    f(Group::geometry, g.scale[1], gg.scale[1]);
    f(Group::geometry, g.rotation, gg.rotation);
    for (std::size_t c = 0; c < 3; ++c) f(Group::color, g.color[c], gg.color[c]);
    f(Group::color, g.opacity, gg.opacity);
  }
  auto net = [&](Mlp& m, MlpGrads& mg) {
    std::vector<double>* ps[6] = {&m.w1, &m.b1, &m.w2, &m.b2, &m.w3, &m.b3};
    std::vector<double>* gs[6] = {&mg.w1, &mg.b1, &mg.w2, &mg.b2, &mg.w3, &mg.b3};
    for (std::size_t k = 0; k < 6; ++k)
      for (std::size_t j = 0; j < ps[k]->size(); ++j)
        f(Group::deformation, (*ps[k])[j], (*gs[k])[j]);
  };
  net(scene.deformation.pos_net, grads.pos_net);
  net(scene.deformation.rot_net, grads.rot_net);
  net(scene.deformation.scale_net, grads.scale_net);
}

void add_grads(SceneGrads& total, const SceneGrads& part) {
  for (std::size_t i = 0; i < total.gaussians.size(); ++i) {
    GaussianGrads& d = total.gaussians[i];
    const GaussianGrads& s = part.gaussians[i];
    d.mu[0] += s.mu[0];
    d.mu[1] += s.mu[1];
    d.scale[0] += s.scale[0];
    d.scale[1] += s.scale[1];
    d.rotation += s.rotation;
    for (std::size_t c = 0; c < 3; ++c) d.color[c] += s.color[c];
    d.opacity += s.opacity;
  }
  auto add = [](MlpGrads& d, const MlpGrads& s) {
    auto axpy = [](std::vector<double>& a, const std::vector<double>& b) {
      for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    axpy(d.w1, s.w1);
    axpy(d.b1, s.b1);
    axpy(d.w2, s.w2);
    axpy(d.b2, s.b2);
    axpy(d.w3, s.w3);
    axpy(d.b3, s.b3);
  };
  add(total.pos_net, part.pos_net);
  add(total.rot_net, part.rot_net);
  add(total.scale_net, part.scale_net);
}

SceneGrads zero_grads(const GaussianScene& scene) {
  SceneGrads g;
  g.gaussians.assign(scene.gaussians.size(), GaussianGrads{});
  g.pos_net = zero_like(scene.deformation.pos_net);
  g.rot_net = zero_like(scene.deformation.rot_net);
  g.scale_net = zero_like(scene.deformation.scale_net);
  return g;
}

}  // namespace

GaussianScene optimize(const GaussianScene& scene, const std::vector<Frame>& targets,
                       const OptimizeConfig& cfg) {
  if (cfg.iterations == 0) throw InvalidArgument("optimizer needs at least one iteration");
  if (targets.empty()) throw InvalidArgument("optimizer needs at least one target frame");
  for (const Frame& f : targets) {
    validate_frame(f);
    if (!f.same_shape(targets.front()))
      throw InvalidArgument("optimizer targets must share one resolution");
  }
  validate_field(scene.deformation);
  validate_gaussians(scene.gaussians);
  if (scene.gaussians.empty()) throw InvalidArgument("optimizer needs at least one gaussian");

  GaussianScene current = scene;
  const std::size_t frames = targets.size();

  std::size_t param_count = 0;
  {
    SceneGrads dummy = zero_grads(current);
    for_each_param(current, dummy, [&](Group, double&, double&) { ++param_count; });
  }
  std::vector<double> m(param_count, 0.0), v(param_count, 0.0);

  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    SceneGrads total = zero_grads(current);
    double loss = 0.0;
    for (std::size_t k = 0; k < frames; ++k) {
      double t = frames == 1 ? 0.0 : double(k) / double(frames - 1);
      RenderGradResult r = render_grad(current, t, targets[k], cfg.loss, cfg.workers);
      loss += r.loss;
      add_grads(total, r.grads);
    }
    loss /= double(frames);
    if (!std::isfinite(loss)) throw DivergenceDetected("loss became non-finite at iteration " +
                                                       std::to_string(iter));
    if (cfg.loss_history) cfg.loss_history->push_back(loss);

    double step = double(iter + 1);
    double bc1 = 1.0 - std::pow(cfg.beta1, step);
    double bc2 = 1.0 - std::pow(cfg.beta2, step);
    std::size_t idx = 0;
    for_each_param(current, total, [&](Group group, double& p, double& g) {
      double grad = g / double(frames);
      m[idx] = cfg.beta1 * m[idx] + (1.0 - cfg.beta1) * grad;
      v[idx] = cfg.beta2 * v[idx] + (1.0 - cfg.beta2) * grad * grad;
      double lr = group == Group::geometry ? cfg.lr_geometry
                  : group == Group::color  ? cfg.lr_color
                                           : cfg.lr_deform;
      p -= lr * (m[idx] / bc1) / (std::sqrt(v[idx] / bc2) + cfg.adam_eps);
      ++idx;
    });

    for (Gaussian2D& g : current.gaussians) {
      g.scale[0] = std::max(g.scale[0], kMinScale);
      g.scale[1] = std::max(g.scale[1], kMinScale);
      g.opacity = std::clamp(g.opacity, 1e-4, 1.0 - 1e-4);
      for (std::size_t c = 0; c < 3; ++c) g.color[c] = std::clamp(g.color[c], 0.0, 1.0);
    }
  }
  return current;
}

GaussianScene random_scene(Rng& rng, std::size_t count, std::size_t height, std::size_t width) {
  if (count == 0 || height == 0 || width == 0)
    throw InvalidArgument("random scene needs gaussians and a canvas");
  GaussianScene scene;
  scene.background = {rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3)};
  scene.deformation = DeformationField::make(rng, {double(width), double(height)});
  double smax = 0.12 * double(std::min(height, width));
  for (std::size_t i = 0; i < count; ++i) {
    Gaussian2D g;
    g.mu = {rng.uniform(0.15, 0.85) * double(width), rng.uniform(0.15, 0.85) * double(height)};
    g.scale = {rng.uniform(1.2, smax), rng.uniform(1.2, smax)};
    g.rotation = rng.uniform(0.0, kPi);
    g.color = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
    g.opacity = rng.uniform(0.35, 0.85);
    scene.gaussians.push_back(g);
  }
  return scene;
}

void randomize_final_layers(Rng& rng, DeformationField& field, double amplitude) {
  auto fill = [&](Mlp& m) {
    double s = amplitude / std::sqrt(double(m.hidden));
    for (double& w : m.w3) w = rng.normal() * s;
  };
  fill(field.pos_net);
  fill(field.rot_net);
  fill(field.scale_net);
}

}  // namespace stgrid
