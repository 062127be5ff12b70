/*
 * From a difference point cloud to discrete candidate objects: ground
 * removal, surface smoothing, morphological denoising, clustering,
 * normal-based refinement, and cross-mission overlap resolution.
 */
#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "deltamap/geometry.hpp"

namespace deltamap {

struct PlaneModel {
    Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();  // unit, n.z >= 0
    double d = 0.0;                                     // n.p + d = 0
    std::vector<uint32_t> inliers;

    double distance(const Point3& p) const {
        return std::abs(normal.dot(p) + d);
    }
};

struct Segment {
    PointCloud cloud;
    Point3 centroid = Point3::Zero();
    int mission = 0;
    uint32_t id = 0;
};

// Builds a segment with its centroid from a cloud.
Segment make_segment(PointCloud cloud, int mission, uint32_t id);
Point3 cloud_centroid(const PointCloud& cloud);

// Sample-consensus ground plane: of `iters` random 3-point hypotheses whose
// normal lies within max_angle_from_up of +z, picks the one with the most
// points within dist_thresh, and returns it plus the cloud with those
// inliers removed. Sampling depends only on (seed, size), so the selected
// hypothesis scales with its input. Throws when no hypothesis satisfies the
// angle constraint.
std::pair<PlaneModel, PointCloud> ransac_ground(const PointCloud& cloud,
                                                double dist_thresh,
                                                double max_angle_from_up,
                                                int iters, uint64_t seed = 1);

// Moving-least-squares smoothing: each point is projected onto a polynomial
// surface (order 1 or 2) fitted over its radius-neighborhood in a local
// PCA frame with Gaussian distance weights. Points whose neighborhood is
// smaller than the polynomial support pass through unchanged. Point count
// and order are preserved.
PointCloud mls_smooth(const PointCloud& cloud, double radius, int poly_order);

// Occupancy-grid open filter. Erosion removes voxels with fewer than
// min_neighbors occupied 6-neighbors (a rank rule: solids and surface
// shells are stable, isolated voxels and thin strings are not); dilation
// adds all 6-neighbors. Runs erode_n erosions then dilate_n dilations and
// keeps the points whose original voxel survives.
PointCloud denoise_morphological(const PointCloud& cloud, double voxel,
                                 int erode_n, int dilate_n,
                                 int min_neighbors = 2);

// Connected components of the tol-neighborhood graph. Components outside
// [min_size, max_size] are discarded (max_size 0 means unlimited). Segment
// ids count up from first_id in order of each component's first point.
std::vector<Segment> euclidean_cluster(const PointCloud& cloud, double tol,
                                       size_t min_size, size_t max_size = 0,
                                       int mission = 0, uint32_t first_id = 0);

// Splits a segment along normal discontinuities: per-point normals and
// curvatures from PCA over normal_k neighbors, smooth regions grown from
// low-curvature seeds, neighbor admission gated on the angle between the
// current front point's normal and the candidate's. Sub-segments cover the
// parent exactly; fragments smaller than normal_k are absorbed into the
// adjacent region that dominates their neighborhoods. Degenerate (near
// collinear) segments pass through whole. Sub-segment ids are local
// (0, 1, ...); callers renumber.
std::vector<Segment> region_grow_refine(const Segment& segment, int normal_k,
                                        double angle_thresh,
                                        double curvature_thresh);

// Cross-mission overlap resolution at voxel granularity. For each pair
// (a in A, b in B), overlap ratio = |vox(a) n vox(b)| / min(|vox(a)|,
// |vox(b)|); pairs above the threshold have their shared voxels carved out
// of both segments and the remainders re-clustered, so a partially moved
// object separates into its old-only and new-only parts and identical
// segments vanish. Carved fragments get fresh ids above the side's maximum.
std::pair<std::vector<Segment>, std::vector<Segment>> merge_or_split(
    const std::vector<Segment>& segments_a,
    const std::vector<Segment>& segments_b, double overlap_ratio_thresh,
    double resolution = 0.05, double recluster_tol = 0.10,
    size_t recluster_min_size = 20);

}  // namespace deltamap
