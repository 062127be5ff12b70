#include "deltamap/geometry.hpp"

#include <cmath>
#include <map>
#include <unordered_map>

namespace deltamap {

PointCloud transform_cloud(const PointCloud& cloud, const RigidTransform& T) {
    require(T.is_valid(), "transform_cloud: invalid rigid transform");
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points) out.points.push_back(T.apply(p));
    out.labels = cloud.labels;
    if (cloud.origin) out.origin = T.apply(*cloud.origin);
    return out;
}

PointCloud crop_box(const PointCloud& cloud, const Aabb& box) {
    require(box.valid(), "crop_box: box.min must be <= box.max");
    PointCloud out;
    out.origin = cloud.origin;
    for (size_t i = 0; i < cloud.size(); ++i) {
        if (box.contains(cloud.points[i])) {
            out.points.push_back(cloud.points[i]);
            if (cloud.has_labels()) out.labels.push_back(cloud.labels[i]);
        }
    }
    return out;
}

namespace {

struct VoxelAccum {
    KahanSum x, y, z;
    size_t count = 0;
    std::map<uint32_t, size_t> label_votes;
};

inline int64_t cell_coord(double v, double inv_leaf) {
    return static_cast<int64_t>(std::floor(v * inv_leaf));
}

struct CellKey {
    int64_t x, y, z;
    bool operator==(const CellKey& o) const {
        return x == o.x && y == o.y && z == o.z;
    }
};

struct CellKeyHash {
    size_t operator()(const CellKey& k) const {
        uint64_t h = hash_combine(static_cast<uint64_t>(k.x),
                                  static_cast<uint64_t>(k.y));
        return hash_combine(h, static_cast<uint64_t>(k.z));
    }
};

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, double leaf) {
    require(leaf > 0.0, "voxel_downsample: leaf size must be positive");
    const double inv_leaf = 1.0 / leaf;

    std::unordered_map<CellKey, VoxelAccum, CellKeyHash> cells;
    cells.reserve(cloud.size());
    // Remember first-touch order so output is deterministic.
    std::vector<const CellKey*> order;
    order.reserve(cloud.size());

    for (size_t i = 0; i < cloud.size(); ++i) {
        const Point3& p = cloud.points[i];
        CellKey key{cell_coord(p.x(), inv_leaf), cell_coord(p.y(), inv_leaf),
                    cell_coord(p.z(), inv_leaf)};
        auto [it, inserted] = cells.try_emplace(key);
        if (inserted) order.push_back(&it->first);
        VoxelAccum& acc = it->second;
        acc.x.add(p.x());
        acc.y.add(p.y());
        acc.z.add(p.z());
        acc.count++;
        if (cloud.has_labels()) acc.label_votes[cloud.labels[i]]++;
    }

    PointCloud out;
    out.origin = cloud.origin;
    out.points.reserve(cells.size());
    if (cloud.has_labels()) out.labels.reserve(cells.size());
    for (const CellKey* key : order) {
        const VoxelAccum& acc = cells.at(*key);
        const double n = static_cast<double>(acc.count);
        out.points.emplace_back(acc.x.value() / n, acc.y.value() / n,
                                acc.z.value() / n);
        if (cloud.has_labels()) {
            uint32_t best = 0;
            size_t best_votes = 0;
            for (const auto& [label, votes] : acc.label_votes) {
                if (votes > best_votes) {  // map order makes ties -> smaller id
                    best = label;
                    best_votes = votes;
                }
            }
            out.labels.push_back(best);
        }
    }
    return out;
}

}  // namespace deltamap
