#pragma once

// Independent reference for heightfield shadows: dense fixed-step sampling of
// the bilinear terrain along each shadow ray. Shares no code with the
// library's ray caster.

#include <algorithm>
#include <cmath>
#include <vector>

namespace oracle {

struct Verdict {
  bool shadowed = false;
  // max over samples of (terrain - ray height); > 0 means occluded.
  double margin = -1e9;
};

inline double bilinear(const std::vector<float>& depth, int h, int w, double u, double v) {
  auto at = [&](int r, int c) {
    r = std::min(std::max(r, 0), h - 1);
    c = std::min(std::max(c, 0), w - 1);
    return static_cast<double>(depth[static_cast<std::size_t>(r) * w + c]);
  };
  const double fu0 = std::floor(u);
  const double fv0 = std::floor(v);
  const int c0 = static_cast<int>(fu0);
  const int r0 = static_cast<int>(fv0);
  const double a = u - fu0;
  const double b = v - fv0;
  return (1 - a) * (1 - b) * at(r0, c0) + a * (1 - b) * at(r0, c0 + 1) +
         (1 - a) * b * at(r0 + 1, c0) + a * b * at(r0 + 1, c0 + 1);
}

/// step_cells: horizontal sample spacing in grid cells (0.01 in the checks).
inline Verdict march(const std::vector<float>& depth, int h, int w, int row, int col,
                     double lx, double ly, double lz, double bias, double step_cells) {
  Verdict verdict;
  const double px = (col + 0.5) / w;
  const double py = (row + 0.5) / h;
  const double pz = depth[static_cast<std::size_t>(row) * w + col] + bias;
  const double du = (lx - px) * w;
  const double dv = (ly - py) * h;
  const double len = std::sqrt(du * du + dv * dv);
  if (len == 0.0) return verdict;
  const double n_steps = std::ceil(len / step_cells);
  for (double k = 1; k <= n_steps; ++k) {
    const double s = k / n_steps;
    const double u = col + du * s;
    const double v = row + dv * s;
    if (u < -0.5 || u > w - 0.5 || v < -0.5 || v > h - 0.5) break;
    const double z = pz + (lz - pz) * s;
    if (z > 1.0) break;
    const double gap = bilinear(depth, h, w, u, v) - z;
    verdict.margin = std::max(verdict.margin, gap);
    if (gap > 0) verdict.shadowed = true;
  }
  return verdict;
}

}  // namespace oracle
