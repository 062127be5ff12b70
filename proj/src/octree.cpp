#include "deltamap/octree.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace deltamap {

namespace {

double logit(double p) { return std::log(p / (1.0 - p)); }
double prob(double log_odds) { return 1.0 / (1.0 + std::exp(-log_odds)); }

template <class T>
void write_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

constexpr char kMagic[8] = {'D', 'M', 'O', 'C', '0', '0', '0', '1'};

}  // namespace

OccupancyOctree::OccupancyOctree(const OctreeParams& params) : params_(params) {
    require(params_.resolution > 0.0, "octree: resolution must be positive");
    require(params_.depth >= 1 && params_.depth <= kMaxDepth,
            "octree: depth out of range");
    require(params_.center.allFinite(), "octree: center must be finite");
    require(params_.p_hit > 0.5 && params_.p_hit < 1.0,
            "octree: p_hit must lie in (0.5, 1)");
    require(params_.p_miss > 0.0 && params_.p_miss < 0.5,
            "octree: p_miss must lie in (0, 0.5)");
    require(params_.clamp_min > 0.0 && params_.clamp_min < 0.5,
            "octree: clamp_min must lie in (0, 0.5)");
    require(params_.clamp_max > 0.5 && params_.clamp_max < 1.0,
            "octree: clamp_max must lie in (0.5, 1)");
    require(params_.max_range > 0.0, "octree: max_range must be positive");

    log_hit_ = logit(params_.p_hit);
    log_miss_ = logit(params_.p_miss);
    log_min_ = logit(params_.clamp_min);
    log_max_ = logit(params_.clamp_max);
    cells_ = 1u << params_.depth;
    for (int i = 0; i < 3; ++i) {
        min_key_[i] =
            static_cast<int64_t>(std::floor(params_.center[i] / params_.resolution)) -
            static_cast<int64_t>(cells_ / 2);
    }
    nodes_.push_back(Node{});
}

bool OccupancyOctree::grid_coords(const VoxelKey& key, uint32_t& ux, uint32_t& uy,
                                  uint32_t& uz) const {
    const int64_t gx = static_cast<int64_t>(key.x) - min_key_[0];
    const int64_t gy = static_cast<int64_t>(key.y) - min_key_[1];
    const int64_t gz = static_cast<int64_t>(key.z) - min_key_[2];
    if (gx < 0 || gy < 0 || gz < 0 || gx >= cells_ || gy >= cells_ || gz >= cells_)
        return false;
    ux = static_cast<uint32_t>(gx);
    uy = static_cast<uint32_t>(gy);
    uz = static_cast<uint32_t>(gz);
    return true;
}

VoxelKey OccupancyOctree::key_of(const Point3& p) const {
    require(p.allFinite(), "octree: point is not finite");
    require(in_extent(p), "octree: point outside tree extent");
    const double inv = 1.0 / params_.resolution;
    return VoxelKey{static_cast<int32_t>(std::floor(p.x() * inv)),
                    static_cast<int32_t>(std::floor(p.y() * inv)),
                    static_cast<int32_t>(std::floor(p.z() * inv))};
}

bool OccupancyOctree::in_extent(const Point3& p) const {
    if (!p.allFinite()) return false;
    const double inv = 1.0 / params_.resolution;
    for (int i = 0; i < 3; ++i) {
        const double g = std::floor(p[i] * inv) - static_cast<double>(min_key_[i]);
        if (g < 0.0 || g >= static_cast<double>(cells_)) return false;
    }
    return true;
}

bool OccupancyOctree::in_extent(const VoxelKey& k) const {
    uint32_t ux, uy, uz;
    return grid_coords(k, ux, uy, uz);
}

Point3 OccupancyOctree::voxel_center(const VoxelKey& k) const {
    const double r = params_.resolution;
    return Point3((k.x + 0.5) * r, (k.y + 0.5) * r, (k.z + 0.5) * r);
}

int32_t OccupancyOctree::find_leaf(const VoxelKey& key) const {
    uint32_t ux, uy, uz;
    if (!grid_coords(key, ux, uy, uz)) return -1;
    int32_t node = 0;
    for (int level = params_.depth - 1; level >= 1; --level) {
        const int bit = static_cast<int>((((ux >> level) & 1u) << 2) |
                                         (((uy >> level) & 1u) << 1) |
                                         ((uz >> level) & 1u));
        const int32_t slot = nodes_[node][bit];
        if (slot == 0) return -1;
        node = slot - 1;
    }
    const int bit = static_cast<int>(((ux & 1u) << 2) | ((uy & 1u) << 1) | (uz & 1u));
    const int32_t slot = nodes_[node][bit];
    return slot == 0 ? -1 : slot - 1;
}

OccupancyOctree::Leaf& OccupancyOctree::reach_leaf(Cursor& c, uint32_t ux,
                                                   uint32_t uy, uint32_t uz) {
    const int top = params_.depth - 1;
    int start;
    if (!c.valid) {
        start = top;
        c.path[top] = 0;
        c.valid = true;
    } else {
        const uint32_t diff = (c.ux ^ ux) | (c.uy ^ uy) | (c.uz ^ uz);
        if (diff == 0) return leaves_[c.leaf];
        start = std::min(static_cast<int>(std::bit_width(diff)) - 1, top);
    }
    int32_t node = c.path[start];
    for (int level = start; level >= 1; --level) {
        const int bit = static_cast<int>((((ux >> level) & 1u) << 2) |
                                         (((uy >> level) & 1u) << 1) |
                                         ((uz >> level) & 1u));
        int32_t slot = nodes_[node][bit];
        if (slot == 0) {
            nodes_.push_back(Node{});
            slot = static_cast<int32_t>(nodes_.size());
            nodes_[node][bit] = slot;
        }
        node = slot - 1;
        c.path[level - 1] = node;
    }
    const int bit = static_cast<int>(((ux & 1u) << 2) | ((uy & 1u) << 1) | (uz & 1u));
    int32_t slot = nodes_[node][bit];
    if (slot == 0) {
        leaves_.push_back(Leaf{});
        slot = static_cast<int32_t>(leaves_.size());
        nodes_[node][bit] = slot;
    }
    c.ux = ux;
    c.uy = uy;
    c.uz = uz;
    c.leaf = slot - 1;
    return leaves_[c.leaf];
}

void OccupancyOctree::apply_hit(Leaf& leaf) {
    leaf.log_odds = std::clamp(leaf.log_odds + log_hit_, log_min_, log_max_);
}

void OccupancyOctree::apply_miss(Leaf& leaf) {
    leaf.log_odds = std::clamp(leaf.log_odds + log_miss_, log_min_, log_max_);
}

bool OccupancyOctree::clip_segment(const Point3& a, const Point3& b, double& t0,
                                   double& t1) const {
    t0 = 0.0;
    t1 = 1.0;
    const double r = params_.resolution;
    for (int i = 0; i < 3; ++i) {
        const double lo = static_cast<double>(min_key_[i]) * r;
        const double hi = lo + static_cast<double>(cells_) * r;
        const double d = b[i] - a[i];
        if (std::abs(d) < 1e-300) {
            if (a[i] < lo || a[i] > hi) return false;
            continue;
        }
        double ta = (lo - a[i]) / d;
        double tb = (hi - a[i]) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    return true;
}

void OccupancyOctree::cast_ray(Cursor& cursor, const Point3& start,
                               const Point3& end, bool endpoint_is_hit,
                               uint32_t id) {
    const double res = params_.resolution;
    const double inv = 1.0 / res;
    const int64_t ex = static_cast<int64_t>(std::floor(end.x() * inv));
    const int64_t ey = static_cast<int64_t>(std::floor(end.y() * inv));
    const int64_t ez = static_cast<int64_t>(std::floor(end.z() * inv));
    detail::walk_ray_voxels(start, end, res, [&](int64_t x, int64_t y, int64_t z) {
        if (endpoint_is_hit && x == ex && y == ey && z == ez) return;
        const int64_t gx = x - min_key_[0];
        const int64_t gy = y - min_key_[1];
        const int64_t gz = z - min_key_[2];
        if (gx < 0 || gy < 0 || gz < 0 || gx >= cells_ || gy >= cells_ ||
            gz >= cells_)
            return;
        Leaf& leaf = reach_leaf(cursor, static_cast<uint32_t>(gx),
                                static_cast<uint32_t>(gy), static_cast<uint32_t>(gz));
        if (leaf.stamp == id) return;
        apply_miss(leaf);
        leaf.stamp = id;
        leaf.stamp_kind = 0;
    });
}

void OccupancyOctree::insert_scan(const PointCloud& scan) {
    require(scan.origin.has_value(), "insert_scan: scan has no sensor origin");
    const Point3 o = *scan.origin;
    require(o.allFinite(), "insert_scan: sensor origin is not finite");
    const uint32_t id = ++insertion_id_;

    struct Ray {
        Point3 start, end;
        bool hit;
    };
    std::vector<Ray> rays;
    rays.reserve(scan.points.size());
    for (const Point3& p : scan.points) {
        if (!p.allFinite()) continue;
        const Point3 d = p - o;
        const double range = d.norm();
        bool hit = true;
        Point3 end = p;
        if (range > params_.max_range) {
            end = o + d * (params_.max_range / range);
            hit = false;
        }
        double t0, t1;
        if (!clip_segment(o, end, t0, t1)) continue;
        if (t1 < 1.0) hit = false;
        const Point3 dir = end - o;
        rays.push_back(Ray{o + dir * t0, o + dir * t1, hit});
    }

    // Hits first so that a voxel that is some ray's endpoint never takes a
    // miss from another ray of the same scan.
    Cursor cursor;
    const double inv = 1.0 / params_.resolution;
    for (const Ray& r : rays) {
        if (!r.hit) continue;
        const int64_t gx =
            static_cast<int64_t>(std::floor(r.end.x() * inv)) - min_key_[0];
        const int64_t gy =
            static_cast<int64_t>(std::floor(r.end.y() * inv)) - min_key_[1];
        const int64_t gz =
            static_cast<int64_t>(std::floor(r.end.z() * inv)) - min_key_[2];
        if (gx < 0 || gy < 0 || gz < 0 || gx >= cells_ || gy >= cells_ ||
            gz >= cells_)
            continue;
        Leaf& leaf = reach_leaf(cursor, static_cast<uint32_t>(gx),
                                static_cast<uint32_t>(gy), static_cast<uint32_t>(gz));
        if (leaf.stamp == id && leaf.stamp_kind == 1) continue;
        apply_hit(leaf);
        leaf.stamp = id;
        leaf.stamp_kind = 1;
    }
    for (const Ray& r : rays) cast_ray(cursor, r.start, r.end, r.hit, id);
}

void OccupancyOctree::insert_ray(const Point3& origin, const Point3& endpoint) {
    require(origin.allFinite() && endpoint.allFinite(),
            "insert_ray: non-finite input");
    const uint32_t id = ++insertion_id_;
    const Point3 d = endpoint - origin;
    const double range = d.norm();
    bool hit = true;
    Point3 end = endpoint;
    if (range > params_.max_range) {
        end = origin + d * (params_.max_range / range);
        hit = false;
    }
    double t0, t1;
    if (!clip_segment(origin, end, t0, t1)) return;
    if (t1 < 1.0) hit = false;
    const Point3 dir = end - origin;
    const Point3 s = origin + dir * t0;
    const Point3 e = origin + dir * t1;

    Cursor cursor;
    if (hit) {
        const double inv = 1.0 / params_.resolution;
        const int64_t gx = static_cast<int64_t>(std::floor(e.x() * inv)) - min_key_[0];
        const int64_t gy = static_cast<int64_t>(std::floor(e.y() * inv)) - min_key_[1];
        const int64_t gz = static_cast<int64_t>(std::floor(e.z() * inv)) - min_key_[2];
        if (gx >= 0 && gy >= 0 && gz >= 0 && gx < cells_ && gy < cells_ &&
            gz < cells_) {
            Leaf& leaf = reach_leaf(cursor, static_cast<uint32_t>(gx),
                                    static_cast<uint32_t>(gy),
                                    static_cast<uint32_t>(gz));
            apply_hit(leaf);
            leaf.stamp = id;
            leaf.stamp_kind = 1;
        }
    }
    cast_ray(cursor, s, e, hit, id);
}

std::optional<double> OccupancyOctree::query_occupancy(const Point3& p) const {
    if (!in_extent(p)) return std::nullopt;
    const double inv = 1.0 / params_.resolution;
    const VoxelKey k{static_cast<int32_t>(std::floor(p.x() * inv)),
                     static_cast<int32_t>(std::floor(p.y() * inv)),
                     static_cast<int32_t>(std::floor(p.z() * inv))};
    return query_occupancy(k);
}

std::optional<double> OccupancyOctree::query_occupancy(const VoxelKey& key) const {
    const int32_t leaf = find_leaf(key);
    if (leaf < 0) return std::nullopt;
    return prob(leaves_[static_cast<size_t>(leaf)].log_odds);
}

void OccupancyOctree::for_each_leaf(
    const std::function<void(const VoxelKey&, double)>& visit) const {
    struct Item {
        int32_t node;
        int level;
        uint32_t ux, uy, uz;
    };
    std::vector<Item> stack;
    stack.push_back(Item{0, params_.depth - 1, 0, 0, 0});
    while (!stack.empty()) {
        const Item it = stack.back();
        stack.pop_back();
        const Node& n = nodes_[static_cast<size_t>(it.node)];
        if (it.level == 0) {
            for (int bit = 0; bit < 8; ++bit) {
                const int32_t slot = n[static_cast<size_t>(bit)];
                if (slot == 0) continue;
                const uint32_t cx = it.ux | static_cast<uint32_t>((bit >> 2) & 1);
                const uint32_t cy = it.uy | static_cast<uint32_t>((bit >> 1) & 1);
                const uint32_t cz = it.uz | static_cast<uint32_t>(bit & 1);
                const VoxelKey k{
                    static_cast<int32_t>(static_cast<int64_t>(cx) + min_key_[0]),
                    static_cast<int32_t>(static_cast<int64_t>(cy) + min_key_[1]),
                    static_cast<int32_t>(static_cast<int64_t>(cz) + min_key_[2])};
                visit(k, prob(leaves_[static_cast<size_t>(slot - 1)].log_odds));
            }
            continue;
        }
        for (int bit = 7; bit >= 0; --bit) {
            const int32_t slot = n[static_cast<size_t>(bit)];
            if (slot == 0) continue;
            stack.push_back(
                Item{slot - 1, it.level - 1,
                     it.ux | (static_cast<uint32_t>((bit >> 2) & 1) << it.level),
                     it.uy | (static_cast<uint32_t>((bit >> 1) & 1) << it.level),
                     it.uz | (static_cast<uint32_t>(bit & 1) << it.level)});
        }
    }
}

void OccupancyOctree::save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw std::runtime_error("octree save: cannot open " + path.string());
    os.write(kMagic, sizeof(kMagic));
    write_raw(os, params_.resolution);
    write_raw(os, params_.center.x());
    write_raw(os, params_.center.y());
    write_raw(os, params_.center.z());
    write_raw(os, static_cast<int32_t>(params_.depth));
    write_raw(os, params_.p_hit);
    write_raw(os, params_.p_miss);
    write_raw(os, params_.clamp_min);
    write_raw(os, params_.clamp_max);
    write_raw(os, params_.max_range);
    write_raw(os, static_cast<uint64_t>(leaves_.size()));

    // Same walk as for_each_leaf but emitting raw log-odds, so a load
    // reproduces the tree bit for bit.
    struct Item {
        int32_t node;
        int level;
        uint32_t ux, uy, uz;
    };
    std::vector<Item> stack;
    stack.push_back(Item{0, params_.depth - 1, 0, 0, 0});
    while (!stack.empty()) {
        const Item it = stack.back();
        stack.pop_back();
        const Node& n = nodes_[static_cast<size_t>(it.node)];
        if (it.level == 0) {
            for (int bit = 0; bit < 8; ++bit) {
                const int32_t slot = n[static_cast<size_t>(bit)];
                if (slot == 0) continue;
                const uint32_t cx = it.ux | static_cast<uint32_t>((bit >> 2) & 1);
                const uint32_t cy = it.uy | static_cast<uint32_t>((bit >> 1) & 1);
                const uint32_t cz = it.uz | static_cast<uint32_t>(bit & 1);
                write_raw(os, static_cast<int32_t>(static_cast<int64_t>(cx) +
                                                   min_key_[0]));
                write_raw(os, static_cast<int32_t>(static_cast<int64_t>(cy) +
                                                   min_key_[1]));
                write_raw(os, static_cast<int32_t>(static_cast<int64_t>(cz) +
                                                   min_key_[2]));
                write_raw(os, leaves_[static_cast<size_t>(slot - 1)].log_odds);
            }
            continue;
        }
        for (int bit = 7; bit >= 0; --bit) {
            const int32_t slot = n[static_cast<size_t>(bit)];
            if (slot == 0) continue;
            stack.push_back(
                Item{slot - 1, it.level - 1,
                     it.ux | (static_cast<uint32_t>((bit >> 2) & 1) << it.level),
                     it.uy | (static_cast<uint32_t>((bit >> 1) & 1) << it.level),
                     it.uz | (static_cast<uint32_t>(bit & 1) << it.level)});
        }
    }
    if (!os)
        throw std::runtime_error("octree save: write failed for " + path.string());
}

OccupancyOctree OccupancyOctree::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw std::runtime_error("octree load: cannot open " + path.string());
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("octree load: bad magic in " + path.string());

    OctreeParams params;
    params.resolution = read_raw<double>(is);
    params.center.x() = read_raw<double>(is);
    params.center.y() = read_raw<double>(is);
    params.center.z() = read_raw<double>(is);
    params.depth = read_raw<int32_t>(is);
    params.p_hit = read_raw<double>(is);
    params.p_miss = read_raw<double>(is);
    params.clamp_min = read_raw<double>(is);
    params.clamp_max = read_raw<double>(is);
    params.max_range = read_raw<double>(is);
    const uint64_t count = read_raw<uint64_t>(is);
    if (!is)
        throw std::runtime_error("octree load: truncated header in " +
                                 path.string());

    OccupancyOctree tree(params);
    Cursor cursor;
    for (uint64_t i = 0; i < count; ++i) {
        VoxelKey k;
        k.x = read_raw<int32_t>(is);
        k.y = read_raw<int32_t>(is);
        k.z = read_raw<int32_t>(is);
        const double lo = read_raw<double>(is);
        if (!is)
            throw std::runtime_error("octree load: truncated record " +
                                     std::to_string(i) + " in " + path.string());
        uint32_t ux, uy, uz;
        if (!tree.grid_coords(k, ux, uy, uz))
            throw std::runtime_error("octree load: leaf key outside extent in " +
                                     path.string());
        Leaf& leaf = tree.reach_leaf(cursor, ux, uy, uz);
        leaf.log_odds = std::clamp(lo, tree.log_min_, tree.log_max_);
    }
    return tree;
}

std::vector<VoxelKey> ray_voxels(const Point3& origin, const Point3& endpoint,
                                 double resolution) {
    require(resolution > 0.0, "ray_voxels: resolution must be positive");
    require(origin.allFinite() && endpoint.allFinite(),
            "ray_voxels: non-finite input");
    std::vector<VoxelKey> out;
    detail::walk_ray_voxels(origin, endpoint, resolution,
                            [&](int64_t x, int64_t y, int64_t z) {
                                out.push_back(VoxelKey{static_cast<int32_t>(x),
                                                       static_cast<int32_t>(y),
                                                       static_cast<int32_t>(z)});
                            });
    return out;
}

ChangeSet diff_octrees(const OccupancyOctree& tree_a, const OccupancyOctree& tree_b,
                       double threshold, bool require_observed_both) {
    require(tree_a.resolution() == tree_b.resolution(),
            "diff_octrees: resolution mismatch");
    require(threshold > 0.0 && threshold < 1.0,
            "diff_octrees: threshold must lie in (0, 1)");
    ChangeSet cs;
    cs.resolution = tree_a.resolution();
    tree_a.for_each_leaf([&](const VoxelKey& k, double occ_a) {
        if (occ_a <= threshold) return;
        const std::optional<double> occ_b = tree_b.query_occupancy(k);
        if (!occ_b.has_value()) {
            if (!require_observed_both) cs.removed.insert(k);
        } else if (*occ_b <= threshold) {
            cs.removed.insert(k);
        }
    });
    tree_b.for_each_leaf([&](const VoxelKey& k, double occ_b) {
        if (occ_b <= threshold) return;
        const std::optional<double> occ_a = tree_a.query_occupancy(k);
        if (!occ_a.has_value()) {
            if (!require_observed_both) cs.added.insert(k);
        } else if (*occ_a <= threshold) {
            cs.added.insert(k);
        }
    });
    return cs;
}

PointCloud project_changes(const ChangeSet& changes,
                           const PointCloud& mission_cloud, ChangeSide side) {
    require(changes.resolution > 0.0,
            "project_changes: change set has no resolution");
    mission_cloud.check_invariants();
    const VoxelKeySet& keys =
        side == ChangeSide::Added ? changes.added : changes.removed;
    PointCloud out;
    out.origin = mission_cloud.origin;
    const double inv = 1.0 / changes.resolution;
    const bool labeled = mission_cloud.has_labels();
    for (size_t i = 0; i < mission_cloud.points.size(); ++i) {
        const Point3& p = mission_cloud.points[i];
        const VoxelKey k{static_cast<int32_t>(std::floor(p.x() * inv)),
                         static_cast<int32_t>(std::floor(p.y() * inv)),
                         static_cast<int32_t>(std::floor(p.z() * inv))};
        if (keys.find(k) == keys.end()) continue;
        out.points.push_back(p);
        if (labeled) out.labels.push_back(mission_cloud.labels[i]);
    }
    return out;
}

PointCloud changeset_to_cloud(const ChangeSet& changes) {
    require(changes.resolution > 0.0,
            "changeset_to_cloud: change set has no resolution");
    std::vector<std::pair<VoxelKey, uint32_t>> rows;
    rows.reserve(changes.added.size() + changes.removed.size());
    for (const VoxelKey& k : changes.added) rows.emplace_back(k, 1u);
    for (const VoxelKey& k : changes.removed) rows.emplace_back(k, 2u);
    std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second < b.second;
        if (a.first.x != b.first.x) return a.first.x < b.first.x;
        if (a.first.y != b.first.y) return a.first.y < b.first.y;
        return a.first.z < b.first.z;
    });
    PointCloud out;
    out.points.reserve(rows.size());
    out.labels.reserve(rows.size());
    const double r = changes.resolution;
    for (const auto& [k, label] : rows) {
        out.points.emplace_back((k.x + 0.5) * r, (k.y + 0.5) * r, (k.z + 0.5) * r);
        out.labels.push_back(label);
    }
    return out;
}

}  // namespace deltamap
