#include "deltamap/alignment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "deltamap/cloud_io.hpp"
#include "deltamap/common.hpp"

namespace deltamap {

std::vector<std::pair<int, int>> propose_loop_closures(
    const MissionTrajectory& a, const MissionTrajectory& b, double radius) {
    require(radius > 0.0, "propose_loop_closures: radius must be positive");
    a.check_invariants();
    b.check_invariants();
    std::vector<std::pair<int, int>> out;
    for (size_t i = 0; i < a.nodes.size(); ++i) {
        const Point3 pa = a.nodes[i].pose.translation;
        int best = -1;
        double best_d = radius;
        for (size_t j = 0; j < b.nodes.size(); ++j) {
            const double d = (b.nodes[j].pose.translation - pa).norm();
            if (d < best_d || (best < 0 && d == best_d)) {
                best = static_cast<int>(j);
                best_d = d;
            }
        }
        if (best >= 0)
            out.emplace_back(static_cast<int>(i), best);
    }
    return out;
}

AlignResult align_missions(const std::vector<MissionTrajectory>& missions,
                           const AlignParams& params) {
    require(!missions.empty(), "align_missions: no missions");
    for (const MissionTrajectory& m : missions) m.check_invariants();

    AlignResult result;
    result.graph.trajectories = missions;
    MissionGraph& graph = result.graph;
    graph.set_gauge_from_first_pose();

    const Matrix6d odom_info =
        diag_information(params.sigma_odom_trans, params.sigma_odom_rot);
    const Matrix6d loop_info =
        diag_information(params.sigma_loop_trans, params.sigma_loop_rot);

    for (size_t m = 0; m < graph.trajectories.size(); ++m) {
        const auto& nodes = graph.trajectories[m].nodes;
        for (size_t i = 0; i + 1 < nodes.size(); ++i) {
            Factor f;
            f.kind = FactorKind::Odometry;
            f.a = NodeRef{static_cast<int>(m), static_cast<int>(i)};
            f.b = NodeRef{static_cast<int>(m), static_cast<int>(i) + 1};
            f.relative = nodes[i].pose.inverse() * nodes[i + 1].pose;
            f.information = odom_info;
            graph.factors.push_back(f);
        }
    }

    const auto scan_for_icp = [&](const TrajectoryNode& n) {
        if (params.icp_voxel_leaf > 0.0)
            return voxel_downsample(n.scan, params.icp_voxel_leaf);
        return n.scan;
    };

    if (missions.size() > 1) {
        for (size_t p = 0; p < missions.size(); ++p) {
            for (size_t q = p + 1; q < missions.size(); ++q) {
                const auto candidates = propose_loop_closures(
                    graph.trajectories[p], graph.trajectories[q],
                    params.loop_radius);
                for (const auto& [i, j] : candidates) {
                    const TrajectoryNode& na =
                        graph.trajectories[p].nodes[static_cast<size_t>(i)];
                    const TrajectoryNode& nb =
                        graph.trajectories[q].nodes[static_cast<size_t>(j)];
                    if (na.scan.empty() || nb.scan.empty()) continue;
                    LoopClosureRecord rec;
                    rec.mission_a = static_cast<int>(p);
                    rec.node_a = i;
                    rec.mission_b = static_cast<int>(q);
                    rec.node_b = j;
                    // Initial guess from the rough poses: maps frame of na
                    // into frame of nb.
                    const RigidTransform init = nb.pose.inverse() * na.pose;
                    try {
                        const IcpResult icp = icp_register(
                            scan_for_icp(na), scan_for_icp(nb), init, params.icp);
                        rec.rms = icp.rms;
                        rec.inlier_fraction = icp.inlier_fraction;
                        rec.accepted =
                            icp.inlier_fraction >=
                                params.accept_min_inlier_fraction &&
                            icp.rms <= params.accept_max_rms;
                        if (rec.accepted) {
                            Factor f;
                            f.kind = FactorKind::LoopClosure;
                            f.a = NodeRef{static_cast<int>(p), i};
                            f.b = NodeRef{static_cast<int>(q), j};
                            // icp.transform == X_b^-1 X_a, factor wants X_a^-1 X_b
                            f.relative = icp.transform.inverse();
                            f.information = loop_info;
                            graph.factors.push_back(f);
                        }
                    } catch (const IcpError&) {
                        rec.rms = std::numeric_limits<double>::infinity();
                        rec.inlier_fraction = 0.0;
                        rec.accepted = false;
                    }
                    result.closures.push_back(rec);
                }
            }
        }

        // Every mission must be tied to the rest through accepted closures.
        std::vector<int> parent(missions.size());
        std::iota(parent.begin(), parent.end(), 0);
        const auto find = [&](int x) {
            while (parent[static_cast<size_t>(x)] != x)
                x = parent[static_cast<size_t>(x)] =
                    parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
            return x;
        };
        for (const LoopClosureRecord& rec : result.closures)
            if (rec.accepted)
                parent[static_cast<size_t>(find(rec.mission_a))] =
                    find(rec.mission_b);
        for (size_t m = 1; m < missions.size(); ++m)
            if (find(static_cast<int>(m)) != find(0))
                throw std::runtime_error(
                    "align_missions: no accepted loop closures connect mission " +
                    missions[m].mission_id + " to the rest");
    }

    result.report = optimize_pose_graph(graph, params.optimize);

    result.merged.reserve(graph.trajectories.size());
    for (const MissionTrajectory& t : graph.trajectories) {
        bool all_labeled = true;
        for (const TrajectoryNode& n : t.nodes)
            all_labeled = all_labeled && (n.scan.empty() || n.scan.has_labels());
        PointCloud merged;
        for (const TrajectoryNode& n : t.nodes) {
            PointCloud posed = transform_cloud(n.scan, n.pose);
            if (!all_labeled) posed.labels.clear();
            posed.origin.reset();
            merged.append(posed);
        }
        result.merged.push_back(std::move(merged));
    }
    return result;
}

MissionTrajectory load_trajectory(const std::filesystem::path& pose_file,
                                  const std::filesystem::path& manifest_file,
                                  const std::string& mission_id) {
    std::ifstream poses(pose_file);
    if (!poses)
        throw std::runtime_error("load_trajectory: cannot open " +
                                 pose_file.string());
    std::ifstream manifest(manifest_file);
    if (!manifest)
        throw std::runtime_error("load_trajectory: cannot open " +
                                 manifest_file.string());

    MissionTrajectory traj;
    traj.mission_id = mission_id;

    std::vector<std::filesystem::path> scan_paths;
    std::string line;
    while (std::getline(manifest, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto last = line.find_last_not_of(" \t\r");
        scan_paths.emplace_back(manifest_file.parent_path() /
                                line.substr(first, last - first + 1));
    }

    size_t line_no = 0;
    size_t node_idx = 0;
    while (std::getline(poses, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ss(line);
        double ts, tx, ty, tz, qx, qy, qz, qw;
        if (!(ss >> ts >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
            throw std::runtime_error("load_trajectory: malformed pose at " +
                                     pose_file.string() + ":" +
                                     std::to_string(line_no));
        Eigen::Quaterniond q(qw, qx, qy, qz);
        if (std::abs(q.norm() - 1.0) > 1e-3)
            throw std::runtime_error(
                "load_trajectory: quaternion far from unit length at " +
                pose_file.string() + ":" + std::to_string(line_no));
        TrajectoryNode node;
        node.timestamp = ts;
        node.pose.rotation = q.normalized().toRotationMatrix();
        node.pose.translation = Point3(tx, ty, tz);
        if (node_idx >= scan_paths.size())
            throw std::runtime_error(
                "load_trajectory: manifest lists fewer scans than poses");
        node.scan = load_cloud(scan_paths[node_idx]);
        if (!node.scan.origin) node.scan.origin = Point3::Zero();
        traj.nodes.push_back(std::move(node));
        ++node_idx;
    }
    if (node_idx < scan_paths.size())
        throw std::runtime_error(
            "load_trajectory: manifest lists more scans than poses");
    traj.check_invariants();
    return traj;
}

void save_trajectory_poses(const MissionTrajectory& traj,
                           const std::filesystem::path& pose_file) {
    std::ofstream os(pose_file);
    if (!os)
        throw std::runtime_error("save_trajectory_poses: cannot open " +
                                 pose_file.string());
    os << "# timestamp tx ty tz qx qy qz qw\n";
    char buf[256];
    for (const TrajectoryNode& n : traj.nodes) {
        const Eigen::Quaterniond q = n.pose.quaternion();
        std::snprintf(buf, sizeof(buf),
                      "%.9g %.9g %.9g %.9g %.17g %.17g %.17g %.17g\n",
                      n.timestamp, n.pose.translation.x(),
                      n.pose.translation.y(), n.pose.translation.z(), q.x(),
                      q.y(), q.z(), q.w());
        os << buf;
    }
    if (!os)
        throw std::runtime_error("save_trajectory_poses: write failed for " +
                                 pose_file.string());
}

}  // namespace deltamap
