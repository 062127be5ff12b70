/*
 * Uniform hash grid over a fixed point set. Cell size is chosen per use as
 * the typical query radius, so radius queries touch a 3x3x3 block of cells.
 * Larger radii and kNN fall back to ring expansion.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <unordered_map>
#include <vector>

#include "deltamap/geometry.hpp"

namespace deltamap {

class NeighborGrid {
public:
    NeighborGrid(const std::vector<Point3>& points, double cell_size)
        : points_(points), cell_(cell_size), inv_cell_(1.0 / cell_size) {
        require(cell_size > 0.0, "NeighborGrid: cell size must be positive");
        cells_.reserve(points.size());
        for (uint32_t i = 0; i < points.size(); ++i) {
            const Point3& p = points[i];
            const int64_t cx = coord(p.x()), cy = coord(p.y()), cz = coord(p.z());
            cells_[pack(cx, cy, cz)].push_back(i);
            lo_[0] = std::min(lo_[0], cx); hi_[0] = std::max(hi_[0], cx);
            lo_[1] = std::min(lo_[1], cy); hi_[1] = std::max(hi_[1], cy);
            lo_[2] = std::min(lo_[2], cz); hi_[2] = std::max(hi_[2], cz);
        }
    }

    // Indices of all points with ||p - q|| <= r.
    std::vector<uint32_t> radius_neighbors(const Point3& q, double r) const {
        std::vector<uint32_t> out;
        const double r2 = r * r;
        visit_block(q, r, [&](uint32_t idx) {
            if ((points_[idx] - q).squaredNorm() <= r2) out.push_back(idx);
        });
        return out;
    }

    bool has_neighbor_within(const Point3& q, double r) const {
        const double r2 = r * r;
        bool found = false;
        visit_block(q, r, [&](uint32_t idx) {
            if (!found && (points_[idx] - q).squaredNorm() <= r2) found = true;
        });
        return found;
    }

    // Closest point within r, if any.
    std::optional<uint32_t> nearest_within(const Point3& q, double r) const {
        double best = r * r;
        std::optional<uint32_t> best_idx;
        visit_block(q, r, [&](uint32_t idx) {
            const double d2 = (points_[idx] - q).squaredNorm();
            if (d2 <= best) {
                best = d2;
                best_idx = idx;
            }
        });
        return best_idx;
    }

    // k nearest neighbors by expanding ring search. Returns up to k indices,
    // sorted by distance (query point itself included if it is in the set).
    std::vector<uint32_t> knn(const Point3& q, size_t k) const {
        std::vector<std::pair<double, uint32_t>> cand;
        if (points_.empty() || k == 0) return {};
        const int64_t cx = coord(q.x()), cy = coord(q.y()), cz = coord(q.z());
        // rings beyond this cover no occupied cells
        const int64_t last_ring = std::max(
            {std::abs(cx - lo_[0]), std::abs(hi_[0] - cx), std::abs(cy - lo_[1]),
             std::abs(hi_[1] - cy), std::abs(cz - lo_[2]), std::abs(hi_[2] - cz)});
        for (int64_t ring = 0;; ++ring) {
            // cells whose Chebyshev distance from the query cell equals ring
            for (int64_t dx = -ring; dx <= ring; ++dx)
                for (int64_t dy = -ring; dy <= ring; ++dy)
                    for (int64_t dz = -ring; dz <= ring; ++dz) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
                            continue;
                        auto it = cells_.find(pack(cx + dx, cy + dy, cz + dz));
                        if (it == cells_.end()) continue;
                        for (uint32_t idx : it->second)
                            cand.emplace_back((points_[idx] - q).squaredNorm(), idx);
                    }
            if (ring >= last_ring) break;  // all occupied cells visited
            // Points in rings <= R are complete for distances < R*cell; stop
            // once k candidates fit inside the guaranteed-complete radius.
            const double safe = static_cast<double>(ring) * cell_;
            if (cand.size() >= k) {
                std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end());
                if (cand[k - 1].first <= safe * safe) break;
            }
        }
        const size_t n = std::min(k, cand.size());
        std::partial_sort(cand.begin(), cand.begin() + n, cand.end());
        std::vector<uint32_t> out;
        out.reserve(n);
        for (size_t i = 0; i < n; ++i) out.push_back(cand[i].second);
        return out;
    }

    const std::vector<Point3>& points() const { return points_; }

private:
    static uint64_t pack(int64_t x, int64_t y, int64_t z) {
        const uint64_t m = (1ULL << 21) - 1;
        return ((static_cast<uint64_t>(x) & m) << 42) |
               ((static_cast<uint64_t>(y) & m) << 21) |
               (static_cast<uint64_t>(z) & m);
    }
    int64_t coord(double v) const { return static_cast<int64_t>(std::floor(v * inv_cell_)); }
    uint64_t key_of(const Point3& p) const {
        return pack(coord(p.x()), coord(p.y()), coord(p.z()));
    }

    template <typename Visit>
    void visit_block(const Point3& q, double r, Visit&& visit) const {
        const int64_t x0 = coord(q.x() - r), x1 = coord(q.x() + r);
        const int64_t y0 = coord(q.y() - r), y1 = coord(q.y() + r);
        const int64_t z0 = coord(q.z() - r), z1 = coord(q.z() + r);
        for (int64_t x = x0; x <= x1; ++x)
            for (int64_t y = y0; y <= y1; ++y)
                for (int64_t z = z0; z <= z1; ++z) {
                    auto it = cells_.find(pack(x, y, z));
                    if (it == cells_.end()) continue;
                    for (uint32_t idx : it->second) visit(idx);
                }
    }

    std::vector<Point3> points_;
    double cell_;
    double inv_cell_;
    std::unordered_map<uint64_t, std::vector<uint32_t>> cells_;
    int64_t lo_[3] = {std::numeric_limits<int64_t>::max(),
                      std::numeric_limits<int64_t>::max(),
                      std::numeric_limits<int64_t>::max()};
    int64_t hi_[3] = {std::numeric_limits<int64_t>::min(),
                      std::numeric_limits<int64_t>::min(),
                      std::numeric_limits<int64_t>::min()};
};

}  // namespace deltamap
