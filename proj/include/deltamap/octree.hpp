/*
 * Log-odds occupancy octree with free-space ray casting, plus the
 * inter-mission differencing that drives change detection.
 *
 * The tree covers a cube of side resolution * 2^depth whose corners lie on
 * the global voxel grid, centered near a configurable point. Leaves store
 * clamped log-odds; space that was never updated stays unallocated and reads
 * back as "unknown". A scan insertion casts one ray per point from the scan
 * origin: traversed voxels get a miss update, the endpoint voxel a hit.
 * Within one insertion each voxel is updated at most once, and a hit wins
 * over a miss.
 */
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <unordered_set>
#include <vector>

#include "deltamap/common.hpp"
#include "deltamap/geometry.hpp"

namespace deltamap {

// Leaf-grid index. key = floor(p / resolution) per axis, independent of any
// particular tree, so keys are comparable across co-registered trees.
struct VoxelKey {
    int32_t x = 0, y = 0, z = 0;

    bool operator==(const VoxelKey& o) const {
        return x == o.x && y == o.y && z == o.z;
    }
    bool operator!=(const VoxelKey& o) const { return !(*this == o); }
};

struct VoxelKeyHash {
    size_t operator()(const VoxelKey& k) const {
        uint64_t s = (static_cast<uint64_t>(static_cast<uint32_t>(k.x)) << 42) ^
                     (static_cast<uint64_t>(static_cast<uint32_t>(k.y)) << 21) ^
                     static_cast<uint64_t>(static_cast<uint32_t>(k.z));
        return static_cast<size_t>(splitmix64(s));
    }
};

using VoxelKeySet = std::unordered_set<VoxelKey, VoxelKeyHash>;

// Voxels that changed occupancy state between two co-registered trees.
// added:   occupied in B, free or unknown in A
// removed: occupied in A, free or unknown in B
struct ChangeSet {
    VoxelKeySet added;
    VoxelKeySet removed;
    double resolution = 0.05;

    bool empty() const { return added.empty() && removed.empty(); }
};

struct OctreeParams {
    double resolution = 0.05;     // leaf edge length, meters
    int depth = 13;               // side = resolution * 2^depth (409.6 m default)
    Point3 center = Point3::Zero();
    double p_hit = 0.7;           // endpoint update probability
    double p_miss = 0.4;          // traversed-voxel update probability
    double clamp_min = 0.12;      // probability clamping bounds
    double clamp_max = 0.97;
    double max_range = 120.0;     // rays longer than this update free space only
};

class OccupancyOctree {
public:
    static constexpr int kMaxDepth = 21;

    explicit OccupancyOctree(const OctreeParams& params = {});

    double resolution() const { return params_.resolution; }
    int depth() const { return params_.depth; }
    const OctreeParams& params() const { return params_; }
    size_t leaf_count() const { return leaves_.size(); }

    // Leaf key containing p. Throws if p lies outside the addressable cube.
    VoxelKey key_of(const Point3& p) const;
    bool in_extent(const Point3& p) const;
    bool in_extent(const VoxelKey& k) const;
    Point3 voxel_center(const VoxelKey& k) const;

    // Casts one ray per scan point from scan.origin (required). Each voxel is
    // updated at most once per call and endpoint hits win over misses. Points
    // beyond max_range or outside the tree extent truncate the ray to a
    // free-space-only update.
    void insert_scan(const PointCloud& scan);

    // Single-ray update. Unlike insert_scan there is no cross-call
    // deduplication, so repeated identical rays accumulate.
    void insert_ray(const Point3& origin, const Point3& endpoint);

    // Occupancy probability, or nullopt for never-observed space.
    std::optional<double> query_occupancy(const Point3& p) const;
    std::optional<double> query_occupancy(const VoxelKey& key) const;

    // Visits every observed leaf as (key, occupancy probability), ordered by
    // descending tree path, which is the same order for any insertion history
    // producing the same leaf set.
    void for_each_leaf(
        const std::function<void(const VoxelKey&, double)>& visit) const;

    // Binary format: magic "DMOC0001", then resolution, center, depth and
    // sensor-model parameters, a leaf count, and key + log-odds records.
    void save(const std::filesystem::path& path) const;
    static OccupancyOctree load(const std::filesystem::path& path);

private:
    struct Leaf {
        double log_odds = 0.0;  // double so one hit reads back exactly p_hit
        uint32_t stamp = 0;     // last insertion that touched this leaf
        uint8_t stamp_kind = 0; // 1 if that insertion registered a hit here
    };

    // Internal node. Child slot: 0 = absent, otherwise index+1 into nodes_
    // (levels above 0) or leaves_ (level 0). Depth is fixed, so which pool a
    // slot refers to is implied by the level.
    using Node = std::array<int32_t, 8>;

    // Descent cache. Consecutive ray voxels share most of their path, so a
    // step re-descends only below the first differing key bit.
    struct Cursor {
        std::array<int32_t, kMaxDepth> path{};
        uint32_t ux = 0, uy = 0, uz = 0;
        int32_t leaf = -1;
        bool valid = false;
    };

    bool grid_coords(const VoxelKey& key, uint32_t& ux, uint32_t& uy,
                     uint32_t& uz) const;
    int32_t find_leaf(const VoxelKey& key) const;  // -1 if unallocated
    Leaf& reach_leaf(Cursor& c, uint32_t ux, uint32_t uy, uint32_t uz);
    void apply_hit(Leaf& leaf);
    void apply_miss(Leaf& leaf);
    bool clip_segment(const Point3& a, const Point3& b, double& t0,
                      double& t1) const;
    void cast_ray(Cursor& cursor, const Point3& start, const Point3& end,
                  bool endpoint_is_hit, uint32_t id);

    OctreeParams params_;
    double log_hit_ = 0.0, log_miss_ = 0.0, log_min_ = 0.0, log_max_ = 0.0;
    int64_t min_key_[3] = {0, 0, 0};  // grid key of the cube's min corner
    uint32_t cells_ = 0;              // 2^depth per axis
    std::vector<Node> nodes_;         // nodes_[0] is the root
    std::vector<Leaf> leaves_;
    uint32_t insertion_id_ = 0;
};

namespace detail {

// Amanatides-Woo voxel walk. Visits every voxel of the segment a->b in
// order, both endpoints' voxels included. Visit receives int64 grid keys.
template <class Visit>
inline void walk_ray_voxels(const Point3& a, const Point3& b,
                            double resolution, Visit&& visit) {
    const double inv = 1.0 / resolution;
    int64_t c[3], e[3];
    for (int i = 0; i < 3; ++i) {
        c[i] = static_cast<int64_t>(std::floor(a[i] * inv));
        e[i] = static_cast<int64_t>(std::floor(b[i] * inv));
    }
    const Point3 d = b - a;
    int64_t step[3];
    double tmax[3], tdelta[3];
    for (int i = 0; i < 3; ++i) {
        if (d[i] > 0.0) {
            step[i] = 1;
            tdelta[i] = resolution / d[i];
            tmax[i] = (static_cast<double>(c[i] + 1) * resolution - a[i]) / d[i];
        } else if (d[i] < 0.0) {
            step[i] = -1;
            tdelta[i] = -resolution / d[i];
            tmax[i] = (static_cast<double>(c[i]) * resolution - a[i]) / d[i];
        } else {
            step[i] = 0;
            tdelta[i] = std::numeric_limits<double>::infinity();
            tmax[i] = std::numeric_limits<double>::infinity();
        }
    }
    // Exact arithmetic needs at most the key Manhattan distance in steps;
    // the slack guards against a boundary-grazing float walk stalling.
    int64_t guard = std::abs(e[0] - c[0]) + std::abs(e[1] - c[1]) +
                    std::abs(e[2] - c[2]) + 3;
    while (true) {
        visit(c[0], c[1], c[2]);
        if (c[0] == e[0] && c[1] == e[1] && c[2] == e[2]) break;
        if (--guard < 0) break;
        int axis = 0;
        if (tmax[1] < tmax[axis]) axis = 1;
        if (tmax[2] < tmax[axis]) axis = 2;
        c[axis] += step[axis];
        tmax[axis] += tdelta[axis];
    }
}

}  // namespace detail

// Voxels traversed by the segment origin->endpoint, endpoint voxel included.
std::vector<VoxelKey> ray_voxels(const Point3& origin, const Point3& endpoint,
                                 double resolution);

// Voxelwise comparison of two co-registered trees at an occupancy threshold.
// A voxel counts occupied when its probability exceeds `threshold` and free
// when observed at or below it. Only leaves observed in at least one tree
// are visited. With require_observed_both, voxels unknown in either tree are
// treated as static.
ChangeSet diff_octrees(const OccupancyOctree& tree_a,
                       const OccupancyOctree& tree_b, double threshold = 0.5,
                       bool require_observed_both = false);

// Points of mission_cloud whose voxel lies in the selected side of the
// change set. Labels carry through; order is preserved.
enum class ChangeSide { Added, Removed };
PointCloud project_changes(const ChangeSet& changes,
                           const PointCloud& mission_cloud, ChangeSide side);

// Voxel centers of a change set as a labeled cloud (1 = added, 2 = removed),
// sorted for reproducible output.
PointCloud changeset_to_cloud(const ChangeSet& changes);

}  // namespace deltamap
