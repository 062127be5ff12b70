#include "deltamap/segmentation.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "deltamap/common.hpp"
#include "deltamap/neighbor_grid.hpp"

namespace deltamap {

namespace {

// 21 bits per axis around the origin; ample for site-scale clouds.
uint64_t pack_cell(int64_t x, int64_t y, int64_t z) {
    const uint64_t m = (1ULL << 21) - 1;
    return ((static_cast<uint64_t>(x + (1LL << 20)) & m) << 42) |
           ((static_cast<uint64_t>(y + (1LL << 20)) & m) << 21) |
           (static_cast<uint64_t>(z + (1LL << 20)) & m);
}

uint64_t cell_of(const Point3& p, double inv_voxel) {
    return pack_cell(static_cast<int64_t>(std::floor(p.x() * inv_voxel)),
                     static_cast<int64_t>(std::floor(p.y() * inv_voxel)),
                     static_cast<int64_t>(std::floor(p.z() * inv_voxel)));
}

void unpack_cell(uint64_t c, int64_t& x, int64_t& y, int64_t& z) {
    const uint64_t m = (1ULL << 21) - 1;
    x = static_cast<int64_t>((c >> 42) & m) - (1LL << 20);
    y = static_cast<int64_t>((c >> 21) & m) - (1LL << 20);
    z = static_cast<int64_t>(c & m) - (1LL << 20);
}

// Grid cell edge that keeps the expected bucket occupancy near one point.
double knn_cell_size(const std::vector<Point3>& pts) {
    Point3 lo = pts.front(), hi = pts.front();
    for (const Point3& p : pts) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    Eigen::Vector3d e = hi - lo;
    std::sort(e.data(), e.data() + 3, std::greater<double>());
    const double n = static_cast<double>(pts.size());
    // Density estimate that survives collapsed dimensions: an exactly
    // planar cloud falls back to area, an exactly linear one to length.
    const double cell = std::max({std::cbrt(e(0) * e(1) * e(2) / n),
                                  std::sqrt(e(0) * e(1) / n), e(0) / n});
    return std::max(cell, 1e-4);
}

PointCloud subset_cloud(const PointCloud& cloud,
                        const std::vector<uint32_t>& idx) {
    PointCloud out;
    out.origin = cloud.origin;
    out.points.reserve(idx.size());
    const bool labeled = cloud.has_labels();
    if (labeled) out.labels.reserve(idx.size());
    for (uint32_t i : idx) {
        out.points.push_back(cloud.points[i]);
        if (labeled) out.labels.push_back(cloud.labels[i]);
    }
    return out;
}

}  // namespace

Point3 cloud_centroid(const PointCloud& cloud) {
    require(!cloud.empty(), "cloud_centroid: empty cloud");
    KahanSum x, y, z;
    for (const Point3& p : cloud.points) {
        x.add(p.x());
        y.add(p.y());
        z.add(p.z());
    }
    const double n = static_cast<double>(cloud.points.size());
    return Point3(x.value() / n, y.value() / n, z.value() / n);
}

Segment make_segment(PointCloud cloud, int mission, uint32_t id) {
    Segment s;
    s.centroid = cloud_centroid(cloud);
    s.cloud = std::move(cloud);
    s.mission = mission;
    s.id = id;
    return s;
}

std::pair<PlaneModel, PointCloud> ransac_ground(const PointCloud& cloud,
                                                double dist_thresh,
                                                double max_angle_from_up,
                                                int iters, uint64_t seed) {
    cloud.check_invariants();
    require(cloud.points.size() >= 3, "ransac_ground: need at least 3 points");
    require(dist_thresh > 0.0, "ransac_ground: dist_thresh must be positive");
    require(max_angle_from_up > 0.0 && max_angle_from_up <= kPi / 2.0,
            "ransac_ground: max_angle_from_up must lie in (0, pi/2]");
    require(iters >= 1, "ransac_ground: iters must be >= 1");

    const size_t n = cloud.points.size();
    CounterRng rng(hash_combine(seed, 0x67726e64ULL));
    const double cos_max = std::cos(max_angle_from_up);

    Eigen::Vector3d best_n = Eigen::Vector3d::UnitZ();
    double best_d = 0.0;
    size_t best_count = 0;
    bool any_valid = false;

    for (int it = 0; it < iters; ++it) {
        size_t ia = rng.next_u64() % n;
        size_t ib = rng.next_u64() % n;
        size_t ic = rng.next_u64() % n;
        if (ia == ib || ib == ic || ia == ic) continue;
        const Point3& a = cloud.points[ia];
        Eigen::Vector3d normal =
            (cloud.points[ib] - a).cross(cloud.points[ic] - a);
        const double len = normal.norm();
        if (len < 1e-12) continue;
        normal /= len;
        if (normal.z() < 0.0) normal = -normal;
        if (normal.z() < cos_max) continue;
        any_valid = true;
        const double d = -normal.dot(a);
        size_t count = 0;
        for (const Point3& p : cloud.points)
            if (std::abs(normal.dot(p) + d) <= dist_thresh) ++count;
        if (count > best_count) {
            best_count = count;
            best_n = normal;
            best_d = d;
        }
    }
    if (!any_valid)
        throw std::runtime_error(
            "ransac_ground: no plane hypothesis within the allowed tilt");

    PlaneModel plane;
    plane.normal = best_n;
    plane.d = best_d;
    std::vector<uint32_t> keep;
    for (uint32_t i = 0; i < n; ++i) {
        if (std::abs(best_n.dot(cloud.points[i]) + best_d) <= dist_thresh)
            plane.inliers.push_back(i);
        else
            keep.push_back(i);
    }
    return {std::move(plane), subset_cloud(cloud, keep)};
}

PointCloud mls_smooth(const PointCloud& cloud, double radius, int poly_order) {
    cloud.check_invariants();
    require(radius > 0.0, "mls_smooth: radius must be positive");
    require(poly_order == 1 || poly_order == 2,
            "mls_smooth: poly_order must be 1 or 2");
    if (cloud.empty()) return cloud;

    const int n_terms = poly_order == 1 ? 3 : 6;
    const double h2 = radius * radius;
    const NeighborGrid grid(cloud.points, radius);

    PointCloud out = cloud;
    std::vector<uint32_t> nbrs;
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        const Point3& p = cloud.points[i];
        nbrs = grid.radius_neighbors(p, radius);
        if (static_cast<int>(nbrs.size()) < n_terms) continue;

        KahanSum cx, cy, cz;
        for (uint32_t j : nbrs) {
            cx.add(cloud.points[j].x());
            cy.add(cloud.points[j].y());
            cz.add(cloud.points[j].z());
        }
        const double m = static_cast<double>(nbrs.size());
        const Point3 c(cx.value() / m, cy.value() / m, cz.value() / m);

        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (uint32_t j : nbrs) {
            const Eigen::Vector3d q = cloud.points[j] - c;
            cov += q * q.transpose();
        }
        const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        const Eigen::Vector3d en = eig.eigenvectors().col(0);  // normal
        const Eigen::Vector3d eu = eig.eigenvectors().col(2);
        const Eigen::Vector3d ev = eig.eigenvectors().col(1);

        Eigen::MatrixXd ata = Eigen::MatrixXd::Zero(n_terms, n_terms);
        Eigen::VectorXd atb = Eigen::VectorXd::Zero(n_terms);
        Eigen::VectorXd row(n_terms);
        for (uint32_t j : nbrs) {
            const Eigen::Vector3d q = cloud.points[j] - c;
            const double u = q.dot(eu), v = q.dot(ev), w = q.dot(en);
            const double wt = std::exp(-q.squaredNorm() / h2);
            row(0) = 1.0;
            row(1) = u;
            row(2) = v;
            if (poly_order == 2) {
                row(3) = u * u;
                row(4) = u * v;
                row(5) = v * v;
            }
            ata.noalias() += wt * row * row.transpose();
            atb.noalias() += wt * w * row;
        }
        const Eigen::VectorXd coeff = ata.ldlt().solve(atb);
        if (!coeff.allFinite()) continue;

        const Eigen::Vector3d q0 = p - c;
        const double u0 = q0.dot(eu), v0 = q0.dot(ev), w0 = q0.dot(en);
        double f = coeff(0) + coeff(1) * u0 + coeff(2) * v0;
        if (poly_order == 2)
            f += coeff(3) * u0 * u0 + coeff(4) * u0 * v0 + coeff(5) * v0 * v0;
        // A projection jumping further than the neighborhood radius means the
        // fit was ill-conditioned; keep the original point.
        if (!std::isfinite(f) || std::abs(f - w0) > radius) continue;
        out.points[i] = c + u0 * eu + v0 * ev + f * en;
    }
    return out;
}

PointCloud denoise_morphological(const PointCloud& cloud, double voxel,
                                 int erode_n, int dilate_n, int min_neighbors) {
    cloud.check_invariants();
    require(voxel > 0.0, "denoise_morphological: voxel must be positive");
    require(erode_n >= 0 && dilate_n >= 0,
            "denoise_morphological: pass counts must be non-negative");
    require(min_neighbors >= 0 && min_neighbors <= 6,
            "denoise_morphological: min_neighbors must lie in [0, 6]");
    if (cloud.empty()) return cloud;

    const double inv = 1.0 / voxel;
    std::unordered_set<uint64_t> occ;
    for (const Point3& p : cloud.points) occ.insert(cell_of(p, inv));

    const auto neighbors6 = [](uint64_t c, uint64_t out[6]) {
        int64_t x, y, z;
        unpack_cell(c, x, y, z);
        out[0] = pack_cell(x + 1, y, z);
        out[1] = pack_cell(x - 1, y, z);
        out[2] = pack_cell(x, y + 1, z);
        out[3] = pack_cell(x, y - 1, z);
        out[4] = pack_cell(x, y, z + 1);
        out[5] = pack_cell(x, y, z - 1);
    };

    uint64_t nb[6];
    for (int pass = 0; pass < erode_n; ++pass) {
        std::unordered_set<uint64_t> next;
        for (uint64_t c : occ) {
            int count = 0;
            neighbors6(c, nb);
            for (int k = 0; k < 6; ++k)
                if (occ.count(nb[k])) ++count;
            if (count >= min_neighbors) next.insert(c);
        }
        occ.swap(next);
    }
    for (int pass = 0; pass < dilate_n; ++pass) {
        std::unordered_set<uint64_t> next = occ;
        for (uint64_t c : occ) {
            neighbors6(c, nb);
            for (int k = 0; k < 6; ++k) next.insert(nb[k]);
        }
        occ.swap(next);
    }

    std::vector<uint32_t> keep;
    for (uint32_t i = 0; i < cloud.points.size(); ++i)
        if (occ.count(cell_of(cloud.points[i], inv))) keep.push_back(i);
    return subset_cloud(cloud, keep);
}

std::vector<Segment> euclidean_cluster(const PointCloud& cloud, double tol,
                                       size_t min_size, size_t max_size,
                                       int mission, uint32_t first_id) {
    cloud.check_invariants();
    require(tol > 0.0, "euclidean_cluster: tol must be positive");
    require(min_size >= 1, "euclidean_cluster: min_size must be >= 1");
    std::vector<Segment> out;
    if (cloud.empty()) return out;

    const size_t n = cloud.points.size();
    std::vector<uint32_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0u);
    const auto find = [&](uint32_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };

    const NeighborGrid grid(cloud.points, tol);
    for (uint32_t i = 0; i < n; ++i) {
        for (uint32_t j : grid.radius_neighbors(cloud.points[i], tol)) {
            if (j <= i) continue;
            const uint32_t ri = find(i), rj = find(j);
            if (ri != rj) parent[std::max(ri, rj)] = std::min(ri, rj);
        }
    }

    // Components keyed by root; emitted in order of their first point.
    std::unordered_map<uint32_t, std::vector<uint32_t>> comps;
    std::vector<uint32_t> order;
    for (uint32_t i = 0; i < n; ++i) {
        const uint32_t r = find(i);
        auto [it, inserted] = comps.try_emplace(r);
        if (inserted) order.push_back(r);
        it->second.push_back(i);
    }

    uint32_t id = first_id;
    for (uint32_t r : order) {
        const std::vector<uint32_t>& members = comps[r];
        if (members.size() < min_size) continue;
        if (max_size > 0 && members.size() > max_size) continue;
        out.push_back(make_segment(subset_cloud(cloud, members), mission, id++));
    }
    return out;
}

std::vector<Segment> region_grow_refine(const Segment& segment, int normal_k,
                                        double angle_thresh,
                                        double curvature_thresh) {
    segment.cloud.check_invariants();
    require(normal_k >= 3, "region_grow_refine: normal_k must be >= 3");
    require(angle_thresh > 0.0, "region_grow_refine: angle_thresh must be positive");
    const size_t n = segment.cloud.points.size();
    require(n >= static_cast<size_t>(normal_k),
            "region_grow_refine: segment smaller than normal_k");
    const std::vector<Point3>& pts = segment.cloud.points;

    // Collinear input has no meaningful normals; hand the segment back whole.
    {
        const Point3 c = cloud_centroid(segment.cloud);
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (const Point3& p : pts) {
            const Eigen::Vector3d q = p - c;
            cov += q * q.transpose();
        }
        const Eigen::Vector3d ev =
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(cov).eigenvalues();
        if (ev(1) <= 1e-10 * std::max(ev(2), 1e-300)) return {segment};
    }

    const NeighborGrid grid(pts, knn_cell_size(pts));
    std::vector<std::vector<uint32_t>> knn(n);
    std::vector<Eigen::Vector3d> normals(n);
    std::vector<double> curvature(n);
    for (size_t i = 0; i < n; ++i) {
        knn[i] = grid.knn(pts[i], static_cast<size_t>(normal_k));
        Eigen::Vector3d c = Eigen::Vector3d::Zero();
        for (uint32_t j : knn[i]) c += pts[j];
        c /= static_cast<double>(knn[i].size());
        Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
        for (uint32_t j : knn[i]) {
            const Eigen::Vector3d q = pts[j] - c;
            cov += q * q.transpose();
        }
        const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        normals[i] = eig.eigenvectors().col(0);
        const double tr = eig.eigenvalues().sum();
        curvature[i] = tr > 0.0 ? eig.eigenvalues()(0) / tr : 0.0;
    }

    std::vector<uint32_t> seed_order(n);
    std::iota(seed_order.begin(), seed_order.end(), 0u);
    std::sort(seed_order.begin(), seed_order.end(), [&](uint32_t a, uint32_t b) {
        if (curvature[a] != curvature[b]) return curvature[a] < curvature[b];
        return a < b;
    });

    const double cos_thresh = std::cos(angle_thresh);
    std::vector<int> region_of(n, -1);
    std::vector<std::vector<uint32_t>> regions;
    std::deque<uint32_t> front;
    for (uint32_t seed : seed_order) {
        if (region_of[seed] >= 0) continue;
        const int r = static_cast<int>(regions.size());
        regions.emplace_back();
        regions.back().push_back(seed);
        region_of[seed] = r;
        front.assign(1, seed);
        while (!front.empty()) {
            const uint32_t s = front.front();
            front.pop_front();
            for (uint32_t nb : knn[s]) {
                if (region_of[nb] >= 0) continue;
                if (std::abs(normals[s].dot(normals[nb])) < cos_thresh) continue;
                region_of[nb] = r;
                regions[static_cast<size_t>(r)].push_back(nb);
                if (curvature[nb] < curvature_thresh) front.push_back(nb);
            }
        }
    }

    // Fragments below normal_k points are artifacts of seams between smooth
    // patches; fold each into the large region that dominates its members'
    // neighborhoods.
    const size_t tiny = static_cast<size_t>(normal_k);
    if (regions.size() > 1) {
        for (size_t r = 0; r < regions.size(); ++r) {
            if (regions[r].size() >= tiny || regions[r].empty()) continue;
            std::unordered_map<int, size_t> votes;
            for (uint32_t i : regions[r])
                for (uint32_t nb : knn[i]) {
                    const int r2 = region_of[nb];
                    if (r2 >= 0 && static_cast<size_t>(r2) != r &&
                        regions[static_cast<size_t>(r2)].size() >= tiny)
                        ++votes[r2];
                }
            if (votes.empty()) continue;
            int target = -1;
            size_t best = 0;
            for (const auto& [r2, v] : votes)
                if (v > best || (v == best && (target < 0 || r2 < target))) {
                    best = v;
                    target = r2;
                }
            for (uint32_t i : regions[r]) {
                region_of[i] = target;
                regions[static_cast<size_t>(target)].push_back(i);
            }
            regions[r].clear();
        }
    }

    std::vector<Segment> out;
    uint32_t id = 0;
    for (auto& members : regions) {
        if (members.empty()) continue;
        std::sort(members.begin(), members.end());
        Segment s = make_segment(subset_cloud(segment.cloud, members),
                                 segment.mission, id++);
        out.push_back(std::move(s));
    }
    return out;
}

std::pair<std::vector<Segment>, std::vector<Segment>> merge_or_split(
    const std::vector<Segment>& segments_a,
    const std::vector<Segment>& segments_b, double overlap_ratio_thresh,
    double resolution, double recluster_tol, size_t recluster_min_size) {
    require(overlap_ratio_thresh > 0.0 && overlap_ratio_thresh <= 1.0,
            "merge_or_split: overlap_ratio_thresh must lie in (0, 1]");
    require(resolution > 0.0, "merge_or_split: resolution must be positive");

    const double inv = 1.0 / resolution;
    const auto voxelize = [&](const Segment& s) {
        std::unordered_set<uint64_t> vox;
        for (const Point3& p : s.cloud.points) vox.insert(cell_of(p, inv));
        return vox;
    };
    std::vector<std::unordered_set<uint64_t>> vox_a, vox_b;
    vox_a.reserve(segments_a.size());
    vox_b.reserve(segments_b.size());
    for (const Segment& s : segments_a) vox_a.push_back(voxelize(s));
    for (const Segment& s : segments_b) vox_b.push_back(voxelize(s));

    // Shared voxels of every over-threshold pair, per segment.
    std::vector<std::unordered_set<uint64_t>> carve_a(segments_a.size()),
        carve_b(segments_b.size());
    for (size_t i = 0; i < segments_a.size(); ++i) {
        for (size_t j = 0; j < segments_b.size(); ++j) {
            const auto& small = vox_a[i].size() <= vox_b[j].size() ? vox_a[i]
                                                                   : vox_b[j];
            const auto& large = vox_a[i].size() <= vox_b[j].size() ? vox_b[j]
                                                                   : vox_a[i];
            if (small.empty()) continue;
            size_t inter = 0;
            for (uint64_t c : small)
                if (large.count(c)) ++inter;
            const double ratio =
                static_cast<double>(inter) / static_cast<double>(small.size());
            if (ratio <= overlap_ratio_thresh || inter == 0) continue;
            for (uint64_t c : small)
                if (large.count(c)) {
                    carve_a[i].insert(c);
                    carve_b[j].insert(c);
                }
        }
    }

    const auto rebuild = [&](const std::vector<Segment>& segments,
                             const std::vector<std::unordered_set<uint64_t>>&
                                 carve) {
        uint32_t next_id = 0;
        for (const Segment& s : segments) next_id = std::max(next_id, s.id + 1);
        std::vector<Segment> out;
        for (size_t i = 0; i < segments.size(); ++i) {
            if (carve[i].empty()) {
                out.push_back(segments[i]);
                continue;
            }
            std::vector<uint32_t> keep;
            for (uint32_t k = 0; k < segments[i].cloud.points.size(); ++k)
                if (!carve[i].count(cell_of(segments[i].cloud.points[k], inv)))
                    keep.push_back(k);
            if (keep.empty()) continue;
            const PointCloud residual = subset_cloud(segments[i].cloud, keep);
            std::vector<Segment> frags =
                euclidean_cluster(residual, recluster_tol, recluster_min_size,
                                  0, segments[i].mission, next_id);
            next_id += static_cast<uint32_t>(frags.size());
            for (Segment& f : frags) out.push_back(std::move(f));
        }
        return out;
    };

    return {rebuild(segments_a, carve_a), rebuild(segments_b, carve_b)};
}

}  // namespace deltamap
