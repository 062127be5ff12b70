/*
 * End-to-end change detection between two missions: align, build one
 * occupancy octree per mission from the optimized poses, difference them,
 * project the changed voxels back to points, segment, describe, group into
 * correspondences, and recover per-object transforms. Every knob lives in
 * PipelineConfig; the JSON form rejects unknown keys so typos fail loudly.
 */
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "deltamap/alignment.hpp"
#include "deltamap/descriptor.hpp"
#include "deltamap/evaluation.hpp"
#include "deltamap/grouping.hpp"
#include "deltamap/octree.hpp"
#include "deltamap/segmentation.hpp"

namespace deltamap {

struct PipelineConfig {
    uint64_t seed = 1;
    int threads = 0;  // 0: hardware default

    struct {
        double resolution = 0.05;
        int depth = 13;
        double max_range = 120.0;
        double hit_probability = 0.7;
        double miss_probability = 0.4;
    } octree;

    struct {
        double threshold = 0.5;
        // Count a voxel as changed only when both missions observed it;
        // suppresses phantom changes in space one mission never saw
        // (e.g. the floor patch a removed object used to hide).
        bool require_observed_both = true;
    } diff;

    struct {
        double loop_radius = 10.0;
        int icp_max_iter = 30;
        double icp_corr_dist = 0.5;
        double voxel_leaf = 0.1;
        double min_inlier_fraction = 0.6;
        double max_rms = 0.10;
    } align;

    std::optional<Aabb> crop;

    struct {
        bool enable = true;
        double distance = 0.03;        // RANSAC inlier threshold
        double max_angle_deg = 10.0;   // plane tilt limit from +z
        int iterations = 200;
        std::optional<double> floor_z;  // accept only planes near this height
        double floor_z_tolerance = 0.3;
        double removal_margin = 0.08;  // strip change points this close to it
    } ground;

    struct {
        bool enable = true;
        double radius = 0.12;
        int order = 2;
    } smooth;

    struct {
        bool enable = true;
        double voxel = 0.05;
        int min_neighbors = 2;
    } denoise;

    struct {
        double tolerance = 0.10;
        size_t min_size = 30;
        size_t max_size = 0;
    } cluster;

    struct {
        bool enable = false;  // face-level splitting hurts boxy objects
        int normal_k = 12;
        double angle_deg = 20.0;
        double curvature = 0.1;
    } region_grow;

    struct {
        double overlap_ratio = 0.5;
    } merge_split;

    struct {
        double voxel = 0.05;    // downsample before describing
        size_t min_points = 10;  // drop smaller segments
    } descriptor;

    struct {
        double alpha = 0.5;
        double beta = 0.5;
        int k_max = 10;
        // Moved pairs whose registration residual exceeds this are demoted
        // to an added/removed pair; clustering can force dissimilar objects
        // into one class when the class count is underestimated. <= 0 turns
        // the gate off.
        double max_move_rms = 0.10;
    } grouping;

    struct {
        double match_radius = 0.05;
        std::set<uint32_t> exclude_labels = {0};
    } evaluation;

    void check_invariants() const;
};

PipelineConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const PipelineConfig& c);  // full echo

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
};

struct DetectResult {
    AlignResult alignment;
    ChangeSet changes;
    PointCloud merged_a, merged_b;    // aligned full missions, labeled
    PointCloud changed_a, changed_b;  // projected change points per mission
    std::vector<Segment> segments_a, segments_b;
    std::vector<DescribedObject> objects_a, objects_b;
    ElbowResult elbow;
    DescriptorClustering clustering;
    ClusterConfidence cluster_conf;
    AssignResult assignment;
    std::vector<StageTiming> timings;
    std::vector<std::string> log;
};

// Runs the full flow on two missions. Any stage failure rethrows as
// std::runtime_error prefixed with "[stage]".
DetectResult run_detect(const MissionTrajectory& mission_a,
                        const MissionTrajectory& mission_b,
                        const PipelineConfig& cfg);

ChangeReport make_change_report(const DetectResult& result,
                                std::optional<MetricsReport> metrics = {});

// Mission directory layout: poses.txt (timestamp + pose per line),
// scans.txt (one scan path per pose, relative to the directory), and the
// scan files themselves.
void save_mission(const MissionTrajectory& mission,
                  const std::filesystem::path& dir);
MissionTrajectory load_mission(const std::filesystem::path& dir,
                               const std::string& mission_id);

}  // namespace deltamap
