#include "deltamap/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "deltamap/cloud_io.hpp"
#include "deltamap/common.hpp"
#include "deltamap/json_util.hpp"

namespace deltamap {

void PipelineConfig::check_invariants() const {
    require(threads >= 0, "config: threads must be >= 0");
    require(octree.resolution > 0.0, "config: octree.resolution must be positive");
    require(octree.depth >= 1 && octree.depth <= 21,
            "config: octree.depth out of range");
    require(octree.max_range > 0.0, "config: octree.max_range must be positive");
    require(octree.hit_probability > 0.5 && octree.hit_probability < 1.0,
            "config: octree.hit_probability must be in (0.5, 1)");
    require(octree.miss_probability > 0.0 && octree.miss_probability < 0.5,
            "config: octree.miss_probability must be in (0, 0.5)");
    require(diff.threshold > 0.0 && diff.threshold < 1.0,
            "config: diff.threshold must be in (0, 1)");
    require(align.loop_radius > 0.0, "config: align.loop_radius must be positive");
    require(align.icp_max_iter >= 1, "config: align.icp_max_iter must be >= 1");
    require(align.icp_corr_dist > 0.0,
            "config: align.icp_corr_dist must be positive");
    require(align.voxel_leaf >= 0.0, "config: align.voxel_leaf must be >= 0");
    require(align.min_inlier_fraction >= 0.0 && align.min_inlier_fraction <= 1.0,
            "config: align.min_inlier_fraction must be in [0, 1]");
    require(align.max_rms > 0.0, "config: align.max_rms must be positive");
    if (crop) require(crop->valid(), "config: crop box has min > max");
    require(ground.distance > 0.0, "config: ground.distance must be positive");
    require(ground.max_angle_deg > 0.0 && ground.max_angle_deg <= 90.0,
            "config: ground.max_angle_deg must be in (0, 90]");
    require(ground.iterations >= 1, "config: ground.iterations must be >= 1");
    require(ground.floor_z_tolerance > 0.0,
            "config: ground.floor_z_tolerance must be positive");
    require(ground.removal_margin >= 0.0,
            "config: ground.removal_margin must be >= 0");
    require(smooth.radius > 0.0, "config: smooth.radius must be positive");
    require(smooth.order == 1 || smooth.order == 2,
            "config: smooth.order must be 1 or 2");
    require(denoise.voxel > 0.0, "config: denoise.voxel must be positive");
    require(denoise.min_neighbors >= 0 && denoise.min_neighbors <= 6,
            "config: denoise.min_neighbors must be in [0, 6]");
    require(cluster.tolerance > 0.0, "config: cluster.tolerance must be positive");
    require(cluster.min_size >= 1, "config: cluster.min_size must be >= 1");
    require(region_grow.normal_k >= 3, "config: region_grow.normal_k must be >= 3");
    require(region_grow.angle_deg > 0.0 && region_grow.angle_deg <= 90.0,
            "config: region_grow.angle_deg must be in (0, 90]");
    require(region_grow.curvature > 0.0,
            "config: region_grow.curvature must be positive");
    require(merge_split.overlap_ratio > 0.0 && merge_split.overlap_ratio <= 1.0,
            "config: merge_split.overlap_ratio must be in (0, 1]");
    require(descriptor.voxel >= 0.0, "config: descriptor.voxel must be >= 0");
    require(descriptor.min_points >= 10,
            "config: descriptor.min_points must be >= 10");
    require(grouping.alpha >= 0.0 && grouping.beta >= 0.0 &&
                grouping.alpha + grouping.beta > 0.0,
            "config: grouping weights must be non-negative, not both zero");
    require(grouping.k_max >= 1, "config: grouping.k_max must be >= 1");
    require(evaluation.match_radius > 0.0,
            "config: evaluation.match_radius must be positive");
}

PipelineConfig config_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j,
                        {"seed", "threads", "octree", "diff", "align", "crop",
                         "ground", "smooth", "denoise", "cluster", "region_grow",
                         "merge_split", "descriptor", "grouping", "evaluation"},
                        "config");
    PipelineConfig c;
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);

    if (j.contains("octree")) {
        const auto& s = j["octree"];
        reject_unknown_keys(s,
                            {"resolution", "depth", "max_range",
                             "hit_probability", "miss_probability"},
                            "config.octree");
        c.octree.resolution = s.value("resolution", c.octree.resolution);
        c.octree.depth = s.value("depth", c.octree.depth);
        c.octree.max_range = s.value("max_range", c.octree.max_range);
        c.octree.hit_probability = s.value("hit_probability", c.octree.hit_probability);
        c.octree.miss_probability =
            s.value("miss_probability", c.octree.miss_probability);
    }
    if (j.contains("diff")) {
        const auto& s = j["diff"];
        reject_unknown_keys(s, {"threshold", "require_observed_both"},
                            "config.diff");
        c.diff.threshold = s.value("threshold", c.diff.threshold);
        c.diff.require_observed_both =
            s.value("require_observed_both", c.diff.require_observed_both);
    }
    if (j.contains("align")) {
        const auto& s = j["align"];
        reject_unknown_keys(s,
                            {"loop_radius", "icp_max_iter", "icp_corr_dist",
                             "voxel_leaf", "min_inlier_fraction", "max_rms"},
                            "config.align");
        c.align.loop_radius = s.value("loop_radius", c.align.loop_radius);
        c.align.icp_max_iter = s.value("icp_max_iter", c.align.icp_max_iter);
        c.align.icp_corr_dist = s.value("icp_corr_dist", c.align.icp_corr_dist);
        c.align.voxel_leaf = s.value("voxel_leaf", c.align.voxel_leaf);
        c.align.min_inlier_fraction =
            s.value("min_inlier_fraction", c.align.min_inlier_fraction);
        c.align.max_rms = s.value("max_rms", c.align.max_rms);
    }
    if (j.contains("crop") && !j["crop"].is_null()) {
        reject_unknown_keys(j["crop"], {"min", "max"}, "config.crop");
        Aabb box;
        box.min = vec3_from_json(j["crop"]["min"], "config.crop.min");
        box.max = vec3_from_json(j["crop"]["max"], "config.crop.max");
        c.crop = box;
    }
    if (j.contains("ground")) {
        const auto& s = j["ground"];
        reject_unknown_keys(s,
                            {"enable", "distance", "max_angle_deg", "iterations",
                             "floor_z", "floor_z_tolerance", "removal_margin"},
                            "config.ground");
        c.ground.enable = s.value("enable", c.ground.enable);
        c.ground.distance = s.value("distance", c.ground.distance);
        c.ground.max_angle_deg = s.value("max_angle_deg", c.ground.max_angle_deg);
        c.ground.iterations = s.value("iterations", c.ground.iterations);
        if (s.contains("floor_z") && !s["floor_z"].is_null())
            c.ground.floor_z = s["floor_z"].get<double>();
        c.ground.floor_z_tolerance =
            s.value("floor_z_tolerance", c.ground.floor_z_tolerance);
        c.ground.removal_margin = s.value("removal_margin", c.ground.removal_margin);
    }
    if (j.contains("smooth")) {
        const auto& s = j["smooth"];
        reject_unknown_keys(s, {"enable", "radius", "order"}, "config.smooth");
        c.smooth.enable = s.value("enable", c.smooth.enable);
        c.smooth.radius = s.value("radius", c.smooth.radius);
        c.smooth.order = s.value("order", c.smooth.order);
    }
    if (j.contains("denoise")) {
        const auto& s = j["denoise"];
        reject_unknown_keys(s, {"enable", "voxel", "min_neighbors"},
                            "config.denoise");
        c.denoise.enable = s.value("enable", c.denoise.enable);
        c.denoise.voxel = s.value("voxel", c.denoise.voxel);
        c.denoise.min_neighbors = s.value("min_neighbors", c.denoise.min_neighbors);
    }
    if (j.contains("cluster")) {
        const auto& s = j["cluster"];
        reject_unknown_keys(s, {"tolerance", "min_size", "max_size"},
                            "config.cluster");
        c.cluster.tolerance = s.value("tolerance", c.cluster.tolerance);
        c.cluster.min_size = s.value("min_size", c.cluster.min_size);
        c.cluster.max_size = s.value("max_size", c.cluster.max_size);
    }
    if (j.contains("region_grow")) {
        const auto& s = j["region_grow"];
        reject_unknown_keys(s, {"enable", "normal_k", "angle_deg", "curvature"},
                            "config.region_grow");
        c.region_grow.enable = s.value("enable", c.region_grow.enable);
        c.region_grow.normal_k = s.value("normal_k", c.region_grow.normal_k);
        c.region_grow.angle_deg = s.value("angle_deg", c.region_grow.angle_deg);
        c.region_grow.curvature = s.value("curvature", c.region_grow.curvature);
    }
    if (j.contains("merge_split")) {
        const auto& s = j["merge_split"];
        reject_unknown_keys(s, {"overlap_ratio"}, "config.merge_split");
        c.merge_split.overlap_ratio =
            s.value("overlap_ratio", c.merge_split.overlap_ratio);
    }
    if (j.contains("descriptor")) {
        const auto& s = j["descriptor"];
        reject_unknown_keys(s, {"voxel", "min_points"}, "config.descriptor");
        c.descriptor.voxel = s.value("voxel", c.descriptor.voxel);
        c.descriptor.min_points = s.value("min_points", c.descriptor.min_points);
    }
    if (j.contains("grouping")) {
        const auto& s = j["grouping"];
        reject_unknown_keys(s, {"alpha", "beta", "k_max", "max_move_rms"},
                            "config.grouping");
        c.grouping.alpha = s.value("alpha", c.grouping.alpha);
        c.grouping.beta = s.value("beta", c.grouping.beta);
        c.grouping.k_max = s.value("k_max", c.grouping.k_max);
        c.grouping.max_move_rms =
            s.value("max_move_rms", c.grouping.max_move_rms);
    }
    if (j.contains("evaluation")) {
        const auto& s = j["evaluation"];
        reject_unknown_keys(s, {"match_radius", "exclude_labels"},
                            "config.evaluation");
        c.evaluation.match_radius = s.value("match_radius", c.evaluation.match_radius);
        if (s.contains("exclude_labels")) {
            c.evaluation.exclude_labels.clear();
            for (const auto& v : s["exclude_labels"])
                c.evaluation.exclude_labels.insert(v.get<uint32_t>());
        }
    }
    c.check_invariants();
    return c;
}

nlohmann::ordered_json config_to_json(const PipelineConfig& c) {
    nlohmann::ordered_json j;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    j["octree"] = {{"resolution", c.octree.resolution},
                   {"depth", c.octree.depth},
                   {"max_range", c.octree.max_range},
                   {"hit_probability", c.octree.hit_probability},
                   {"miss_probability", c.octree.miss_probability}};
    j["diff"] = {{"threshold", c.diff.threshold},
                 {"require_observed_both", c.diff.require_observed_both}};
    j["align"] = {{"loop_radius", c.align.loop_radius},
                  {"icp_max_iter", c.align.icp_max_iter},
                  {"icp_corr_dist", c.align.icp_corr_dist},
                  {"voxel_leaf", c.align.voxel_leaf},
                  {"min_inlier_fraction", c.align.min_inlier_fraction},
                  {"max_rms", c.align.max_rms}};
    if (c.crop)
        j["crop"] = {{"min", {c.crop->min.x(), c.crop->min.y(), c.crop->min.z()}},
                     {"max", {c.crop->max.x(), c.crop->max.y(), c.crop->max.z()}}};
    else
        j["crop"] = nullptr;
    j["ground"] = {{"enable", c.ground.enable},
                   {"distance", c.ground.distance},
                   {"max_angle_deg", c.ground.max_angle_deg},
                   {"iterations", c.ground.iterations},
                   {"floor_z", c.ground.floor_z
                                   ? nlohmann::ordered_json(*c.ground.floor_z)
                                   : nlohmann::ordered_json(nullptr)},
                   {"floor_z_tolerance", c.ground.floor_z_tolerance},
                   {"removal_margin", c.ground.removal_margin}};
    j["smooth"] = {{"enable", c.smooth.enable},
                   {"radius", c.smooth.radius},
                   {"order", c.smooth.order}};
    j["denoise"] = {{"enable", c.denoise.enable},
                    {"voxel", c.denoise.voxel},
                    {"min_neighbors", c.denoise.min_neighbors}};
    j["cluster"] = {{"tolerance", c.cluster.tolerance},
                    {"min_size", c.cluster.min_size},
                    {"max_size", c.cluster.max_size}};
    j["region_grow"] = {{"enable", c.region_grow.enable},
                        {"normal_k", c.region_grow.normal_k},
                        {"angle_deg", c.region_grow.angle_deg},
                        {"curvature", c.region_grow.curvature}};
    j["merge_split"] = {{"overlap_ratio", c.merge_split.overlap_ratio}};
    j["descriptor"] = {{"voxel", c.descriptor.voxel},
                       {"min_points", c.descriptor.min_points}};
    j["grouping"] = {{"alpha", c.grouping.alpha},
                     {"beta", c.grouping.beta},
                     {"k_max", c.grouping.k_max},
                     {"max_move_rms", c.grouping.max_move_rms}};
    j["evaluation"]["match_radius"] = c.evaluation.match_radius;
    j["evaluation"]["exclude_labels"] = c.evaluation.exclude_labels;
    return j;
}

namespace {

// Fits the ground plane with the configured gate, trying a few seeds before
// giving up: RANSAC can latch onto a table top, and the z-intercept check
// near floor_z catches that. Returns nullopt (with a reason) when no
// acceptable plane exists, e.g. after a crop that excludes the floor.
std::optional<PlaneModel> fit_ground(const PointCloud& cloud,
                                     const PipelineConfig& cfg,
                                     std::string& reason) {
    const double max_angle = deg2rad(cfg.ground.max_angle_deg);
    for (uint64_t attempt = 0; attempt < 5; ++attempt) {
        PlaneModel plane;
        try {
            auto fit = ransac_ground(cloud, cfg.ground.distance, max_angle,
                                     cfg.ground.iterations, cfg.seed + attempt);
            plane = std::move(fit.first);
        } catch (const std::exception& e) {
            reason = e.what();
            continue;
        }
        if (plane.inliers.empty()) {
            reason = "no horizontal plane found";
            continue;
        }
        if (!cfg.ground.floor_z) return plane;
        const Point3 c = cloud_centroid(cloud);
        if (std::abs(plane.normal.z()) < 1e-6) continue;
        const double z = -(plane.d + plane.normal.x() * c.x() +
                           plane.normal.y() * c.y()) /
                         plane.normal.z();
        if (std::abs(z - *cfg.ground.floor_z) <= cfg.ground.floor_z_tolerance)
            return plane;
        reason = "plane height " + std::to_string(z) + " not near floor_z " +
                 std::to_string(*cfg.ground.floor_z);
    }
    return std::nullopt;
}

PointCloud strip_near_plane(const PointCloud& cloud, const PlaneModel& plane,
                            double margin) {
    PointCloud out;
    out.origin = cloud.origin;
    for (size_t i = 0; i < cloud.size(); ++i) {
        if (plane.distance(cloud.points[i]) <= margin) continue;
        out.points.push_back(cloud.points[i]);
        if (cloud.has_labels()) out.labels.push_back(cloud.labels[i]);
    }
    return out;
}

std::vector<Segment> renumber(std::vector<Segment> segments, int mission) {
    uint32_t next = 1;
    for (auto& s : segments) {
        s.mission = mission;
        s.id = next++;
    }
    return segments;
}

}  // namespace

DetectResult run_detect(const MissionTrajectory& mission_a,
                        const MissionTrajectory& mission_b,
                        const PipelineConfig& cfg) {
    cfg.check_invariants();
    if (cfg.threads > 0) set_max_threads(cfg.threads);

    DetectResult r;
    auto stage = [&r](const char* name, auto&& fn) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            fn();
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("[") + name + "] " + e.what());
        }
        const std::chrono::duration<double> dt =
            std::chrono::steady_clock::now() - t0;
        r.timings.push_back({name, dt.count()});
    };
    auto note = [&r](std::string line) { r.log.push_back(std::move(line)); };

    stage("align", [&] {
        AlignParams ap;
        ap.loop_radius = cfg.align.loop_radius;
        ap.icp.max_iter = cfg.align.icp_max_iter;
        ap.icp.corr_dist = cfg.align.icp_corr_dist;
        ap.icp_voxel_leaf = cfg.align.voxel_leaf;
        ap.accept_min_inlier_fraction = cfg.align.min_inlier_fraction;
        ap.accept_max_rms = cfg.align.max_rms;
        r.alignment = align_missions({mission_a, mission_b}, ap);
        r.merged_a = r.alignment.merged.at(0);
        r.merged_b = r.alignment.merged.at(1);
        size_t accepted = 0;
        for (const auto& c : r.alignment.closures) accepted += c.accepted;
        note("align: " + std::to_string(accepted) + "/" +
             std::to_string(r.alignment.closures.size()) +
             " loop closures accepted");
    });

    if (cfg.crop) {
        stage("crop", [&] {
            r.merged_a = crop_box(r.merged_a, *cfg.crop);
            r.merged_b = crop_box(r.merged_b, *cfg.crop);
        });
    }

    OccupancyOctree* oct_a = nullptr;
    OccupancyOctree* oct_b = nullptr;
    std::optional<OccupancyOctree> tree_a, tree_b;
    stage("octree", [&] {
        Aabb box;
        bool first = true;
        for (const auto* cloud : {&r.merged_a, &r.merged_b}) {
            for (const auto& p : cloud->points) {
                if (first) {
                    box.min = box.max = p;
                    first = false;
                } else {
                    box.min = box.min.cwiseMin(p);
                    box.max = box.max.cwiseMax(p);
                }
            }
        }
        require(!first, "no points in either mission");

        OctreeParams op;
        op.resolution = cfg.octree.resolution;
        op.depth = cfg.octree.depth;
        op.max_range = cfg.octree.max_range;
        op.p_hit = cfg.octree.hit_probability;
        op.p_miss = cfg.octree.miss_probability;
        op.center = box.center();
        tree_a.emplace(op);
        tree_b.emplace(op);

        auto insert_mission = [&](const MissionTrajectory& m, int idx,
                                  OccupancyOctree& tree) {
            const auto& opt = r.alignment.graph.trajectories.at(idx);
            for (size_t k = 0; k < m.nodes.size(); ++k) {
                PointCloud world =
                    transform_cloud(m.nodes[k].scan, opt.nodes.at(k).pose);
                tree.insert_scan(world);
            }
        };
        insert_mission(mission_a, 0, *tree_a);
        insert_mission(mission_b, 1, *tree_b);
        oct_a = &*tree_a;
        oct_b = &*tree_b;
    });

    stage("diff", [&] {
        r.changes = diff_octrees(*oct_a, *oct_b, cfg.diff.threshold,
                                 cfg.diff.require_observed_both);
        note("diff: " + std::to_string(r.changes.added.size()) + " added / " +
             std::to_string(r.changes.removed.size()) + " removed voxels");
    });

    stage("project", [&] {
        r.changed_a = project_changes(r.changes, r.merged_a, ChangeSide::Removed);
        r.changed_b = project_changes(r.changes, r.merged_b, ChangeSide::Added);
        note("project: " + std::to_string(r.changed_a.size()) + " / " +
             std::to_string(r.changed_b.size()) + " change points");
    });

    if (cfg.ground.enable) {
        stage("ground", [&] {
            const auto strip = [&](PointCloud& changed, const PointCloud& merged,
                                   const char* which) {
                if (changed.empty()) return;
                std::string reason;
                const auto plane = fit_ground(merged, cfg, reason);
                if (!plane) {
                    note(std::string("ground ") + which +
                         ": no acceptable plane (" + reason + "), skipped");
                    return;
                }
                const size_t before = changed.size();
                changed = strip_near_plane(changed, *plane,
                                           cfg.ground.removal_margin);
                note(std::string("ground ") + which + ": stripped " +
                     std::to_string(before - changed.size()) + " points");
            };
            strip(r.changed_a, r.merged_a, "A");
            strip(r.changed_b, r.merged_b, "B");
        });
    }

    if (cfg.denoise.enable) {
        stage("denoise", [&] {
            const size_t before_a = r.changed_a.size();
            const size_t before_b = r.changed_b.size();
            r.changed_a = denoise_morphological(r.changed_a, cfg.denoise.voxel, 1,
                                                1, cfg.denoise.min_neighbors);
            r.changed_b = denoise_morphological(r.changed_b, cfg.denoise.voxel, 1,
                                                1, cfg.denoise.min_neighbors);
            note("denoise: " + std::to_string(before_a) + " -> " +
                 std::to_string(r.changed_a.size()) + " / " +
                 std::to_string(before_b) + " -> " +
                 std::to_string(r.changed_b.size()) + " points");
        });
    }

    if (cfg.smooth.enable) {
        stage("smooth", [&] {
            r.changed_a = mls_smooth(r.changed_a, cfg.smooth.radius, cfg.smooth.order);
            r.changed_b = mls_smooth(r.changed_b, cfg.smooth.radius, cfg.smooth.order);
        });
    }

    stage("cluster", [&] {
        r.segments_a = euclidean_cluster(r.changed_a, cfg.cluster.tolerance,
                                         cfg.cluster.min_size,
                                         cfg.cluster.max_size, 0, 1);
        r.segments_b = euclidean_cluster(r.changed_b, cfg.cluster.tolerance,
                                         cfg.cluster.min_size,
                                         cfg.cluster.max_size, 1, 1);
        note("cluster: " + std::to_string(r.segments_a.size()) + " + " +
             std::to_string(r.segments_b.size()) + " segments");
    });

    if (cfg.region_grow.enable) {
        stage("region_grow", [&] {
            auto refine_side = [&](std::vector<Segment>& segments, int mission) {
                std::vector<Segment> out;
                for (const auto& s : segments) {
                    auto subs = region_grow_refine(
                        s, cfg.region_grow.normal_k,
                        deg2rad(cfg.region_grow.angle_deg),
                        cfg.region_grow.curvature);
                    out.insert(out.end(), subs.begin(), subs.end());
                }
                segments = renumber(std::move(out), mission);
            };
            refine_side(r.segments_a, 0);
            refine_side(r.segments_b, 1);
        });
    }

    stage("merge_split", [&] {
        auto [sa, sb] = merge_or_split(
            r.segments_a, r.segments_b, cfg.merge_split.overlap_ratio,
            cfg.octree.resolution, cfg.cluster.tolerance, cfg.cluster.min_size);
        r.segments_a = std::move(sa);
        r.segments_b = std::move(sb);
    });

    stage("describe", [&] {
        auto shrink = [&](const std::vector<Segment>& segments) {
            std::vector<Segment> out;
            for (const auto& s : segments) {
                PointCloud down = cfg.descriptor.voxel > 0.0
                                      ? voxel_downsample(s.cloud, cfg.descriptor.voxel)
                                      : s.cloud;
                if (down.size() < cfg.descriptor.min_points) continue;
                Segment d = make_segment(std::move(down), s.mission, s.id);
                out.push_back(std::move(d));
            }
            return out;
        };
        const auto small_a = shrink(r.segments_a);
        const auto small_b = shrink(r.segments_b);
        std::vector<Segment> all;
        all.insert(all.end(), small_a.begin(), small_a.end());
        all.insert(all.end(), small_b.begin(), small_b.end());
        const auto described = describe_all(all);
        r.objects_a.assign(described.begin(),
                           described.begin() + static_cast<long>(small_a.size()));
        r.objects_b.assign(described.begin() + static_cast<long>(small_a.size()),
                           described.end());
        note("describe: " + std::to_string(r.objects_a.size()) + " + " +
             std::to_string(r.objects_b.size()) + " objects");
    });

    stage("group", [&] {
        std::vector<DescriptorVector> all;
        for (const auto& o : r.objects_a) all.push_back(o.descriptor.values);
        for (const auto& o : r.objects_b) all.push_back(o.descriptor.values);
        if (all.empty()) return;
        const int k_max =
            std::min<int>(cfg.grouping.k_max, static_cast<int>(all.size()));
        r.elbow = select_k_elbow(all, k_max, cfg.seed);
        r.clustering = kmeans(all, r.elbow.k_star, cfg.seed);
        r.cluster_conf = cluster_confidence(r.clustering, all);
        note("group: k = " + std::to_string(r.elbow.k_star) + " of " +
             std::to_string(k_max));
    });

    stage("assign", [&] {
        if (r.objects_a.empty() && r.objects_b.empty()) return;
        r.assignment = assign_correspondences(r.objects_a, r.objects_b,
                                              r.clustering, cfg.grouping.alpha,
                                              cfg.grouping.beta);

        // Underestimated class counts can force two different objects into
        // a moved pair; a rigid registration that cannot bring the clouds
        // together gives such pairs away.
        if (cfg.grouping.max_move_rms > 0.0) {
            std::vector<Correspondence> kept;
            size_t demoted = 0;
            for (auto& c : r.assignment.correspondences) {
                if (c.kind != Correspondence::Kind::Moved || !c.transform ||
                    c.transform->rms <= cfg.grouping.max_move_rms) {
                    kept.push_back(std::move(c));
                    continue;
                }
                ++demoted;
                Correspondence rem;
                rem.kind = Correspondence::Kind::Removed;
                rem.class_id = c.class_id;
                rem.index_a = c.index_a;
                Correspondence add;
                add.kind = Correspondence::Kind::Added;
                add.class_id = c.class_id;
                add.index_b = c.index_b;
                kept.push_back(std::move(rem));
                kept.push_back(std::move(add));
            }
            r.assignment.correspondences = std::move(kept);
            if (demoted)
                note("assign: demoted " + std::to_string(demoted) +
                     " moved pair(s) with registration rms above " +
                     std::to_string(cfg.grouping.max_move_rms));
        }

        size_t moved = 0;
        for (const auto& c : r.assignment.correspondences)
            moved += c.kind == Correspondence::Kind::Moved;
        note("assign: " + std::to_string(moved) + " moved, " +
             std::to_string(r.assignment.correspondences.size() - moved) +
             " added/removed");
    });

    return r;
}

ChangeReport make_change_report(const DetectResult& result,
                                std::optional<MetricsReport> metrics) {
    ChangeReport report;
    report.objects_a = result.objects_a;
    report.objects_b = result.objects_b;
    report.assignment = result.assignment;
    report.cluster_conf = result.cluster_conf;
    report.metrics = std::move(metrics);
    return report;
}

void save_mission(const MissionTrajectory& mission,
                  const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    save_trajectory_poses(mission, dir / "poses.txt");
    std::string manifest;
    for (size_t k = 0; k < mission.nodes.size(); ++k) {
        char name[32];
        std::snprintf(name, sizeof(name), "scan_%04zu.ply", k);
        save_cloud(mission.nodes[k].scan, dir / name, CloudFormat::PlyBinary);
        manifest += name;
        manifest += '\n';
    }
    std::ofstream out(dir / "scans.txt", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / "scans.txt").string());
    out << manifest;
}

MissionTrajectory load_mission(const std::filesystem::path& dir,
                               const std::string& mission_id) {
    return load_trajectory(dir / "poses.txt", dir / "scans.txt", mission_id);
}

}  // namespace deltamap
