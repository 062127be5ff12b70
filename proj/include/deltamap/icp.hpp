#pragma once

#include <stdexcept>
#include <vector>

#include "deltamap/geometry.hpp"

namespace deltamap {

struct IcpParams {
    int max_iter = 30;
    double corr_dist = 0.5;  // max correspondence distance, meters
    double convergence_eps = 1e-6;
};

struct IcpResult {
    RigidTransform transform;      // maps source frame into target frame
    double rms = 0.0;              // inlier RMS under the returned transform
    double inlier_fraction = 0.0;  // matched source points / source size
    int iterations = 0;
    bool converged = false;        // false only when max_iter ran out
    std::vector<double> rms_history;  // non-increasing by construction
};

// Initial alignment with no correspondences at all.
class IcpError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Point-to-point ICP with max-distance correspondence rejection. An update
// is accepted only if the re-matched RMS does not increase, so the reported
// per-iteration fitness sequence never rises; a worsening step reverts and
// terminates.
IcpResult icp_register(const PointCloud& source, const PointCloud& target,
                       const RigidTransform& init, const IcpParams& params = {});

}  // namespace deltamap
