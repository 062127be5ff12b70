/*
 * Multi-mission pose graph: trajectories of posed scans tied together by
 * odometry and loop-closure factors, optimized jointly by batch Gauss-Newton
 * on SE(3) residuals.
 */
#pragma once

#include <string>
#include <vector>

#include "deltamap/geometry.hpp"
#include "deltamap/se3.hpp"

namespace deltamap {

struct TrajectoryNode {
    double timestamp = 0.0;
    RigidTransform pose;  // sensor-to-site
    PointCloud scan;      // sensor frame
};

struct MissionTrajectory {
    std::string mission_id;
    std::vector<TrajectoryNode> nodes;

    // >= 1 node, strictly increasing timestamps
    void check_invariants() const;
};

enum class FactorKind { Odometry, LoopClosure };

struct NodeRef {
    int mission = 0;
    int node = 0;
    bool operator==(const NodeRef& o) const {
        return mission == o.mission && node == o.node;
    }
};

struct Factor {
    FactorKind kind = FactorKind::Odometry;
    NodeRef a, b;
    RigidTransform relative;  // measured X_a^{-1} X_b
    Matrix6d information = Matrix6d::Identity();
};

// diag(1/sigma_trans^2 x3, 1/sigma_rot^2 x3), matching (rho, phi) twists.
Matrix6d diag_information(double sigma_trans, double sigma_rot);

struct MissionGraph {
    std::vector<MissionTrajectory> trajectories;
    std::vector<Factor> factors;
    // Gauge: the first node of the first mission is softly anchored here.
    RigidTransform gauge_pose = RigidTransform::identity();

    void set_gauge_from_first_pose();
    // endpoints reference existing distinct nodes; information symmetric
    void check_invariants() const;
};

struct OptimizeOptions {
    int max_iter = 50;
    double rel_tol = 1e-12;      // relative error decrease for convergence
    double gauge_weight = 1e8;   // anchor information scale
};

struct OptimizeReport {
    int iterations = 0;
    double initial_error = 0.0;
    double final_error = 0.0;
    bool converged = false;
};

// Minimizes the information-weighted squared norm of log(Z^-1 X_a^-1 X_b)
// over all factors plus the gauge anchor. Gauss-Newton steps with Levenberg
// damping when a step fails to decrease the error; only improving steps are
// applied, so final_error <= initial_error always. Poses update in place.
// Throws on a graph whose factors do not connect all nodes, and on singular
// normal equations (the message names the first underconstrained node).
OptimizeReport optimize_pose_graph(MissionGraph& graph,
                                   const OptimizeOptions& options = {});

}  // namespace deltamap
