#pragma once

#include <vector>

#include "deltamap/geometry.hpp"

namespace deltamap {

// Least-squares rigid transform mapping src[i] onto dst[i] (SVD of the
// cross-covariance, reflection corrected). When the pairing does not pin
// down a rotation (fewer than 3 points, or points collinear), the rotation
// falls back to identity with the centroid-difference translation and
// *degenerate is set.
RigidTransform fit_rigid(const std::vector<Point3>& src,
                         const std::vector<Point3>& dst,
                         bool* degenerate = nullptr);

}  // namespace deltamap
