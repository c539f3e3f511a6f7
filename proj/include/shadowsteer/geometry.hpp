#pragma once

#include "shadowsteer/grid.hpp"

namespace shadowsteer {

/// Point light in scene units. The heightfield occupies the unit square in
/// (x, y) with elevation in [0, 1]; z is height above that plane.
struct LightPosition {
  double x = 0.5;
  double y = 0.5;
  double z = 10.0;

  friend bool operator==(const LightPosition&, const LightPosition&) = default;
};

struct RaycastConfig {
  /// Horizontal marching increment, as a fraction of one grid cell.
  double step_length = 0.5;
  /// Rays start this far above the surface to avoid self-occlusion.
  double occlusion_bias = 1e-3;
};

void validate(const DepthMap& depth);
void validate(const RaycastConfig& cfg);

/// Hard shadows cast by the heightfield onto itself. Pixel (r, c) sits at
/// ((c + 0.5) / W, (r + 0.5) / H); terrain between pixel centres is bilinear.
/// A pixel is shadowed (0) when the segment from its biased surface point to
/// the light passes below the terrain anywhere inside the unit square.
///
/// Each marching step is split at cell boundaries and the terrain-minus-ray
/// height along every piece is an exact quadratic, so the test never misses a
/// thin ridge between samples.
///
/// Throws PreconditionError when light.z <= 1 (the light must clear the
/// tallest possible terrain) and InputError on NaN or out-of-range depth.
ShadowMap raycast_shadow(const DepthMap& depth, const LightPosition& light,
                         const RaycastConfig& cfg = {});

/// Darkens the masked region: out = shadow * (1 - darkness) where mask is 1.
ShadowMap apply_shadow_mask(const ShadowMap& shadow, const BinaryMask& mask, double darkness);

}  // namespace shadowsteer
