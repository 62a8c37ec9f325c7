#pragma once

#include <cstdint>

#include "skelfuse/mesh.hpp"

namespace skelfuse {

struct SynthResolution {
  int rings = 128;    // cross-sections along the arch, poles excluded
  int segments = 40;  // vertices per cross-section
};

/// Labelled synthetic tooth row: a closed gum tube swept along a circular
/// arch (apex on +y, arch in the z=0 plane) carrying n_teeth ellipsoidal
/// bumps on its upper side. Bump faces get labels 1..n_teeth, the rest 0.
/// `noise` displaces vertices along their normals (Gaussian, std = noise).
/// Pure function of its arguments. Throws ArgumentError unless
/// 2 <= n_teeth <= 16 and noise >= 0.
TriMesh synth_tooth_row(std::uint64_t seed, int n_teeth, double noise,
                        SynthResolution resolution = {});

}  // namespace skelfuse
