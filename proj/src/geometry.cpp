#include "shadowsteer/geometry.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <string>

#include "shadowsteer/errors.hpp"

namespace shadowsteer {
namespace {

class Heightfield {
 public:
  explicit Heightfield(const DepthMap& depth) : depth_(depth) {}

  float corner(int row, int col) const {
    return depth_(std::clamp(row, 0, depth_.height() - 1), std::clamp(col, 0, depth_.width() - 1));
  }

  const DepthMap& depth() const { return depth_; }

 private:
  const DepthMap& depth_;
};

// Largest value of q0 + q1*s + q2*s^2 on [0, length].
double quadratic_max(double q0, double q1, double q2, double length) {
  double best = std::max(q0, q0 + q1 * length + q2 * length * length);
  if (q2 < 0.0) {
    const double vertex = -q1 / (2.0 * q2);
    if (vertex > 0.0 && vertex < length) best = std::max(best, q0 + q1 * vertex + q2 * vertex * vertex);
  }
  return best;
}

struct Ray {
  // Position in continuous index space (u = column, v = row) and height.
  double u0, v0, z0;
  // Per unit of the ray parameter s in [0, 1].
  double du, dv, dz;
};

// True when terrain rises above the ray anywhere on s in [s_begin, s_end].
// The interval must lie inside one cell.
bool piece_occluded(const Heightfield& field, const Ray& ray, double s_begin, double s_end) {
  const double s_mid = 0.5 * (s_begin + s_end);
  const int col = static_cast<int>(std::floor(ray.u0 + ray.du * s_mid));
  const int row = static_cast<int>(std::floor(ray.v0 + ray.dv * s_mid));
  const double h00 = field.corner(row, col);
  const double h01 = field.corner(row, col + 1);
  const double h10 = field.corner(row + 1, col);
  const double h11 = field.corner(row + 1, col + 1);
  const double b = h01 - h00;
  const double c = h10 - h00;
  const double d = h00 - h01 - h10 + h11;

  const double fu = ray.u0 + ray.du * s_begin - col;
  const double fv = ray.v0 + ray.dv * s_begin - row;
  const double z = ray.z0 + ray.dz * s_begin;

  const double q0 = h00 + b * fu + c * fv + d * fu * fv - z;
  const double q1 = b * ray.du + c * ray.dv + d * (fu * ray.dv + fv * ray.du) - ray.dz;
  const double q2 = d * ray.du * ray.dv;
  return quadratic_max(q0, q1, q2, s_end - s_begin) > 0.0;
}

// Parameter values in (s_begin, s_end) where u or v crosses an integer.
void cell_crossings(double start, double slope, double s_begin, double s_end, std::vector<double>& out) {
  if (slope == 0.0) return;
  const double a = start + slope * s_begin;
  const double b = start + slope * s_end;
  const double lo = std::min(a, b);
  const double hi = std::max(a, b);
  for (double k = std::floor(lo) + 1.0; k < hi; k += 1.0) {
    const double s = (k - start) / slope;
    if (s > s_begin && s < s_end) out.push_back(s);
  }
}

bool occluded(const Heightfield& field, int row, int col, const LightPosition& light,
              const RaycastConfig& cfg, double terrain_max) {
  const DepthMap& depth = field.depth();
  const int h = depth.height();
  const int w = depth.width();
  const double x = (col + 0.5) / w;
  const double y = (row + 0.5) / h;

  Ray ray{};
  ray.u0 = col;
  ray.v0 = row;
  ray.z0 = depth(row, col) + cfg.occlusion_bias;
  ray.du = (light.x - x) * w;
  ray.dv = (light.y - y) * h;
  ray.dz = light.z - ray.z0;

  const double horizontal = std::hypot(ray.du, ray.dv);
  if (horizontal == 0.0) return false;  // light straight above: nothing in between

  // Leave the unit square (index range [-0.5, n - 0.5]) or reach the light.
  double s_exit = 1.0;
  auto clip = [&](double start, double slope, double upper) {
    if (slope > 0.0) s_exit = std::min(s_exit, (upper - start) / slope);
    if (slope < 0.0) s_exit = std::min(s_exit, (-0.5 - start) / slope);
  };
  clip(ray.u0, ray.du, w - 0.5);
  clip(ray.v0, ray.dv, h - 0.5);
  // Past this point the ray is above every terrain sample.
  if (ray.dz > 0.0) s_exit = std::min(s_exit, (terrain_max - ray.z0) / ray.dz);
  if (s_exit <= 0.0) return false;

  const double ds = cfg.step_length / horizontal;
  std::vector<double> cuts;
  for (double s0 = 0.0; s0 < s_exit; s0 += ds) {
    const double s1 = std::min(s0 + ds, s_exit);
    cuts.clear();
    cuts.push_back(s0);
    cell_crossings(ray.u0, ray.du, s0, s1, cuts);
    cell_crossings(ray.v0, ray.dv, s0, s1, cuts);
    cuts.push_back(s1);
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      if (cuts[i + 1] > cuts[i] && piece_occluded(field, ray, cuts[i], cuts[i + 1])) return true;
    }
  }
  return false;
}

}  // namespace

void validate(const DepthMap& depth) {
  if (depth.height() < 2 || depth.width() < 2) throw InputError("depth map must be at least 2x2");
  for (float v : depth.values()) {
    if (!std::isfinite(v)) throw InputError("depth map contains a non-finite value");
    if (v < 0.0f || v > 1.0f) throw InputError("depth values must lie in [0, 1]");
  }
}

void validate(const RaycastConfig& cfg) {
  if (!(cfg.step_length > 0.0)) throw InputError("step_length must be positive");
  if (!(cfg.occlusion_bias >= 0.0)) throw InputError("occlusion_bias must be non-negative");
}

ShadowMap raycast_shadow(const DepthMap& depth, const LightPosition& light, const RaycastConfig& cfg) {
  validate(depth);
  validate(cfg);
  if (!std::isfinite(light.x) || !std::isfinite(light.y) || !std::isfinite(light.z)) {
    throw InputError("light position must be finite");
  }
  const double terrain_max = depth.max();
  if (!(light.z > 1.0) || light.z <= terrain_max) {
    throw PreconditionError("light must sit above the terrain (z > 1), got z=" + std::to_string(light.z));
  }

  const Heightfield field(depth);
  ShadowMap shadow(depth.height(), depth.width(), 1.0f);
  for (int r = 0; r < depth.height(); ++r) {
    for (int c = 0; c < depth.width(); ++c) {
      if (occluded(field, r, c, light, cfg, terrain_max)) shadow(r, c) = 0.0f;
    }
  }
  return shadow;
}

ShadowMap apply_shadow_mask(const ShadowMap& shadow, const BinaryMask& mask, double darkness) {
  if (!shadow.same_shape(mask)) throw InputError("mask shape does not match shadow map");
  if (!(darkness >= 0.0 && darkness <= 1.0)) throw InputError("darkness must lie in [0, 1]");
  ShadowMap out = shadow;
  const float keep = static_cast<float>(1.0 - darkness);
  auto values = out.values();
  auto m = mask.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    float v = m[i] >= 0.5f ? values[i] * keep : values[i];
    values[i] = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

}  // namespace shadowsteer
