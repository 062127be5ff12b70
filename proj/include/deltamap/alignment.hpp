/*
 * Joint multi-mission registration: propose inter-mission loop closures by
 * pose proximity, refine each with local scan-to-scan ICP, gate acceptance,
 * and jointly optimize all trajectories into one frame. Registration is
 * always local scan pairs; there is deliberately no whole-map ICP path.
 */
#pragma once

#include <filesystem>
#include <utility>
#include <vector>

#include "deltamap/icp.hpp"
#include "deltamap/pose_graph.hpp"

namespace deltamap {

// For every node of `a`, the nearest node of `b` (by pose translation) within
// `radius` under the current rough alignment. At most one pair per a-node.
std::vector<std::pair<int, int>> propose_loop_closures(
    const MissionTrajectory& a, const MissionTrajectory& b, double radius);

struct AlignParams {
    double loop_radius = 10.0;
    IcpParams icp;
    double accept_min_inlier_fraction = 0.6;
    double accept_max_rms = 0.10;  // 2x the default octree resolution
    double sigma_odom_trans = 0.05, sigma_odom_rot = 0.01;
    double sigma_loop_trans = 0.05, sigma_loop_rot = 0.01;
    double icp_voxel_leaf = 0.0;  // > 0: downsample scans before ICP
    OptimizeOptions optimize;
};

struct LoopClosureRecord {
    int mission_a = 0, node_a = 0;
    int mission_b = 0, node_b = 0;
    double rms = 0.0;
    double inlier_fraction = 0.0;
    bool accepted = false;
};

struct AlignResult {
    MissionGraph graph;              // optimized poses
    std::vector<PointCloud> merged;  // one cloud per mission, common frame
    OptimizeReport report;
    std::vector<LoopClosureRecord> closures;
};

// Builds odometry factors from each mission's own pose deltas, adds accepted
// inter-mission ICP results as loop-closure factors, optimizes, and emits
// per-mission merged clouds in the common frame. A single mission passes
// through with its poses anchored. Throws if any mission ends up with no
// accepted closure linking it to the rest.
AlignResult align_missions(const std::vector<MissionTrajectory>& missions,
                           const AlignParams& params = {});

// Text pose format: one "timestamp tx ty tz qx qy qz qw" line per scan.
// The manifest lists one scan path per pose line, resolved relative to the
// manifest's directory. Scans missing a stored sensor origin default to the
// sensor-frame origin (0,0,0).
MissionTrajectory load_trajectory(const std::filesystem::path& pose_file,
                                  const std::filesystem::path& manifest_file,
                                  const std::string& mission_id);
void save_trajectory_poses(const MissionTrajectory& traj,
                           const std::filesystem::path& pose_file);

}  // namespace deltamap
