#include "deltamap/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <stdexcept>
#include <thread>

#include "deltamap/common.hpp"
#include "deltamap/json_util.hpp"
#include "deltamap/se3.hpp"

namespace deltamap {

void SceneSpec::check_invariants() const {
    require(extent.valid() && (extent.extent().array() > 0.0).all(),
            "SceneSpec: room extent must have positive volume");
    std::set<uint32_t> seen;
    for (const auto& obj : objects) {
        require(obj.id != 0, "SceneSpec: object id 0 is reserved for the room");
        require(seen.insert(obj.id).second,
                "SceneSpec: duplicate object id " + std::to_string(obj.id));
        require(obj.pose.is_valid(1e-6), "SceneSpec: invalid object pose");
    }
}

void LidarModel::check_invariants() const {
    require(channels >= 1, "LidarModel: channels must be positive");
    require(vertical_fov_deg > 0.0 && vertical_fov_deg <= 180.0,
            "LidarModel: vertical fov must be in (0, 180]");
    require(horizontal_resolution_deg > 0.0 &&
                horizontal_resolution_deg <= 360.0,
            "LidarModel: horizontal resolution must be in (0, 360]");
    require(max_range > 0.0, "LidarModel: max range must be positive");
    require(range_sigma >= 0.0 && std::isfinite(range_sigma),
            "LidarModel: range sigma must be non-negative");
}

int LidarModel::azimuth_steps() const {
    return std::max(1, static_cast<int>(360.0 / horizontal_resolution_deg));
}

LidarModel lidar_preset(const std::string& name) {
    if (name == "os0-128-like") return {128, 90.0, 0.35, 50.0, 0.01};
    if (name == "xt32-like") return {32, 31.0, 0.36, 120.0, 0.01};
    throw std::invalid_argument("unknown lidar preset \"" + name + "\"");
}

namespace {

void add_tri(std::vector<Triangle>& out, const Point3& a, const Point3& b,
             const Point3& c) {
    out.push_back({a, b, c});
}

void add_quad(std::vector<Triangle>& out, const Point3& a, const Point3& b,
              const Point3& c, const Point3& d) {
    add_tri(out, a, b, c);
    add_tri(out, a, c, d);
}

void add_box(std::vector<Triangle>& out, const Point3& size,
             const RigidTransform& pose) {
    const double x = size.x() / 2, y = size.y() / 2, z = size.z() / 2;
    Point3 v[8];
    int n = 0;
    for (double sz : {-z, z})
        for (double sy : {-y, y})
            for (double sx : {-x, x}) v[n++] = pose.apply({sx, sy, sz});
    // corner order: bit0 = +x, bit1 = +y, bit2 = +z
    add_quad(out, v[0], v[2], v[3], v[1]);  // bottom
    add_quad(out, v[4], v[5], v[7], v[6]);  // top
    add_quad(out, v[0], v[1], v[5], v[4]);  // -y
    add_quad(out, v[2], v[6], v[7], v[3]);  // +y
    add_quad(out, v[0], v[4], v[6], v[2]);  // -x
    add_quad(out, v[1], v[3], v[7], v[5]);  // +x
}

void add_cylinder(std::vector<Triangle>& out, const Point3& size,
                  const RigidTransform& pose) {
    constexpr int kSegs = 24;
    const double rx = size.x() / 2, ry = size.y() / 2, hz = size.z() / 2;
    std::vector<Point3> top(kSegs), bot(kSegs);
    for (int i = 0; i < kSegs; ++i) {
        const double th = 2.0 * kPi * i / kSegs;
        const double cx = rx * std::cos(th), cy = ry * std::sin(th);
        top[i] = pose.apply({cx, cy, hz});
        bot[i] = pose.apply({cx, cy, -hz});
    }
    const Point3 ct = pose.apply({0, 0, hz}), cb = pose.apply({0, 0, -hz});
    for (int i = 0; i < kSegs; ++i) {
        const int j = (i + 1) % kSegs;
        add_quad(out, bot[i], bot[j], top[j], top[i]);
        add_tri(out, ct, top[i], top[j]);
        add_tri(out, cb, bot[j], bot[i]);
    }
}

void add_sphere(std::vector<Triangle>& out, const Point3& size,
                const RigidTransform& pose) {
    constexpr int kStacks = 8, kSlices = 16;
    const double rx = size.x() / 2, ry = size.y() / 2, rz = size.z() / 2;
    auto vert = [&](int s, int t) {
        const double phi = kPi * s / kStacks;              // 0 at +z pole
        const double th = 2.0 * kPi * (t % kSlices) / kSlices;
        return pose.apply({rx * std::sin(phi) * std::cos(th),
                           ry * std::sin(phi) * std::sin(th),
                           rz * std::cos(phi)});
    };
    for (int s = 0; s < kStacks; ++s) {
        for (int t = 0; t < kSlices; ++t) {
            const Point3 a = vert(s, t), b = vert(s + 1, t);
            const Point3 c = vert(s + 1, t + 1), d = vert(s, t + 1);
            if (s == 0)
                add_tri(out, a, b, c);  // a == d at the pole
            else if (s == kStacks - 1)
                add_tri(out, a, b, d);  // b == c at the pole
            else
                add_quad(out, a, b, c, d);
        }
    }
}

void add_shape(std::vector<Triangle>& out, const Shape& shape,
               const RigidTransform& pose) {
    switch (shape.kind) {
        case ShapeKind::Box:
            add_box(out, shape.size, pose);
            break;
        case ShapeKind::Cylinder:
            add_cylinder(out, shape.size, pose);
            break;
        case ShapeKind::Sphere:
            add_sphere(out, shape.size, pose);
            break;
        case ShapeKind::Composite:
            require(!shape.parts.empty(), "composite shape with no parts");
            for (const auto& part : shape.parts)
                add_shape(out, part.shape, pose * part.pose);
            break;
    }
    require((shape.kind == ShapeKind::Composite) ||
                (shape.size.array() > 0.0).all(),
            "shape sizes must be positive");
}

Aabb bounds_of(const std::vector<Triangle>& tris, size_t first, size_t count) {
    Aabb b;
    b.min = tris[first].a;
    b.max = tris[first].a;
    for (size_t i = first; i < first + count; ++i) {
        for (const Point3* p : {&tris[i].a, &tris[i].b, &tris[i].c}) {
            b.min = b.min.cwiseMin(*p);
            b.max = b.max.cwiseMax(*p);
        }
    }
    return b;
}

bool boxes_overlap(const Aabb& a, const Aabb& b) {
    return (a.min.array() < b.max.array()).all() &&
           (b.min.array() < a.max.array()).all();
}

// Two-sided Moller-Trumbore; nullopt on miss or t <= t_min.
std::optional<double> ray_triangle(const Point3& o, const Point3& d,
                                   const Triangle& tri, double t_min) {
    const Point3 e1 = tri.b - tri.a, e2 = tri.c - tri.a;
    const Point3 pv = d.cross(e2);
    const double det = e1.dot(pv);
    if (std::abs(det) < 1e-14) return std::nullopt;
    const double inv = 1.0 / det;
    const Point3 tv = o - tri.a;
    const double u = tv.dot(pv) * inv;
    if (u < -1e-9 || u > 1.0 + 1e-9) return std::nullopt;
    const Point3 qv = tv.cross(e1);
    const double v = d.dot(qv) * inv;
    if (v < -1e-9 || u + v > 1.0 + 1e-9) return std::nullopt;
    const double t = e2.dot(qv) * inv;
    if (t <= t_min) return std::nullopt;
    return t;
}

bool ray_box(const Point3& o, const Point3& d, const Aabb& b, double t_max) {
    double t0 = 0.0, t1 = t_max;
    for (int i = 0; i < 3; ++i) {
        const double inv = 1.0 / d[i];
        double ta = (b.min[i] - o[i]) * inv;
        double tb = (b.max[i] - o[i]) * inv;
        if (inv < 0.0) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return false;
    }
    return true;
}

}  // namespace

Scene build_scene(const SceneSpec& spec) {
    spec.check_invariants();
    Scene scene;
    scene.extent = spec.extent;

    auto add_group = [&](uint32_t label, std::vector<Triangle>&& tris) {
        Scene::Group g;
        g.label = label;
        g.first = scene.triangles.size();
        g.count = tris.size();
        scene.triangles.insert(scene.triangles.end(), tris.begin(), tris.end());
        scene.labels.insert(scene.labels.end(), tris.size(), label);
        g.bounds = bounds_of(scene.triangles, g.first, g.count);
        scene.groups.push_back(g);
    };

    {
        const Point3 lo = spec.extent.min, hi = spec.extent.max;
        std::vector<Triangle> room;
        add_quad(room, {lo.x(), lo.y(), lo.z()}, {hi.x(), lo.y(), lo.z()},
                 {hi.x(), hi.y(), lo.z()}, {lo.x(), hi.y(), lo.z()});  // floor
        if (spec.ceiling)
            add_quad(room, {lo.x(), lo.y(), hi.z()}, {hi.x(), lo.y(), hi.z()},
                     {hi.x(), hi.y(), hi.z()}, {lo.x(), hi.y(), hi.z()});
        if (spec.walls) {
            add_quad(room, {lo.x(), lo.y(), lo.z()}, {hi.x(), lo.y(), lo.z()},
                     {hi.x(), lo.y(), hi.z()}, {lo.x(), lo.y(), hi.z()});
            add_quad(room, {lo.x(), hi.y(), lo.z()}, {hi.x(), hi.y(), lo.z()},
                     {hi.x(), hi.y(), hi.z()}, {lo.x(), hi.y(), hi.z()});
            add_quad(room, {lo.x(), lo.y(), lo.z()}, {lo.x(), hi.y(), lo.z()},
                     {lo.x(), hi.y(), hi.z()}, {lo.x(), lo.y(), hi.z()});
            add_quad(room, {hi.x(), lo.y(), lo.z()}, {hi.x(), hi.y(), lo.z()},
                     {hi.x(), hi.y(), hi.z()}, {hi.x(), lo.y(), hi.z()});
        }
        add_group(0, std::move(room));
    }

    for (const auto& obj : spec.objects) {
        std::vector<Triangle> tris;
        add_shape(tris, obj.shape, obj.pose);
        add_group(obj.id, std::move(tris));
        const Aabb& b = scene.groups.back().bounds;
        require(spec.extent.contains(b.min) && spec.extent.contains(b.max),
                "object " + std::to_string(obj.id) +
                    " extends outside the room extent");
    }

    for (size_t i = 1; i < scene.groups.size(); ++i)
        for (size_t j = i + 1; j < scene.groups.size(); ++j)
            if (boxes_overlap(scene.groups[i].bounds, scene.groups[j].bounds))
                scene.warnings.push_back(
                    "objects " + std::to_string(scene.groups[i].label) + " and " +
                    std::to_string(scene.groups[j].label) +
                    " have overlapping bounds");
    return scene;
}

PointCloud simulate_scan(const Scene& scene, const RigidTransform& sensor_pose,
                         const LidarModel& lidar, uint64_t seed) {
    lidar.check_invariants();
    require(sensor_pose.is_valid(1e-6), "simulate_scan: invalid sensor pose");
    const Point3 origin = sensor_pose.translation;
    require(scene.extent.contains(origin),
            "simulate_scan: sensor is outside the scene extent");

    const int n_az = lidar.azimuth_steps();
    const int n_ch = lidar.channels;
    const size_t n_rays = static_cast<size_t>(n_ch) * n_az;
    const double fov = deg2rad(lidar.vertical_fov_deg);
    const double az_step = deg2rad(lidar.horizontal_resolution_deg);

    std::vector<Point3> pts(n_rays);
    std::vector<uint32_t> lbls(n_rays);
    std::vector<uint8_t> got(n_rays, 0);

    auto trace = [&](size_t first, size_t last) {
        for (size_t ray = first; ray < last; ++ray) {
            const int ch = static_cast<int>(ray) / n_az;
            const int az = static_cast<int>(ray) % n_az;
            const double el =
                n_ch == 1 ? 0.0 : -fov / 2 + fov * ch / (n_ch - 1);
            const double th = az * az_step;
            const Point3 dir = sensor_pose.rotation *
                               Point3(std::cos(el) * std::cos(th),
                                      std::cos(el) * std::sin(th), std::sin(el));

            double best_t = lidar.max_range;
            uint32_t best_label = 0;
            bool found = false;
            for (const auto& g : scene.groups) {
                if (!ray_box(origin, dir, g.bounds, best_t)) continue;
                for (size_t i = g.first; i < g.first + g.count; ++i) {
                    const auto t =
                        ray_triangle(origin, dir, scene.triangles[i], 1e-6);
                    if (t && *t < best_t) {
                        best_t = *t;
                        best_label = g.label;
                        found = true;
                    }
                }
            }
            if (!found) continue;

            CounterRng rng(hash_combine(
                hash_combine(hash_combine(seed, 0x726179ULL),
                             static_cast<uint64_t>(ch)),
                static_cast<uint64_t>(az)));
            const double range = best_t + lidar.range_sigma * rng.next_gaussian();
            if (range <= 1e-6) continue;
            pts[ray] = origin + range * dir;
            lbls[ray] = best_label;
            got[ray] = 1;
        }
    };

    unsigned n_threads = std::min(static_cast<unsigned>(max_threads()), 16u);
    if (n_rays < 8192) n_threads = 1;
    if (n_threads <= 1) {
        trace(0, n_rays);
    } else {
        std::vector<std::thread> pool;
        const size_t chunk = (n_rays + n_threads - 1) / n_threads;
        for (unsigned t = 0; t < n_threads; ++t) {
            const size_t first = t * chunk;
            const size_t last = std::min(n_rays, first + chunk);
            if (first >= last) break;
            pool.emplace_back(trace, first, last);
        }
        for (auto& th : pool) th.join();
    }

    PointCloud out;
    out.origin = origin;
    for (size_t ray = 0; ray < n_rays; ++ray) {
        if (!got[ray]) continue;
        out.points.push_back(pts[ray]);
        out.labels.push_back(lbls[ray]);
    }
    return out;
}

MissionTrajectory generate_mission(const Scene& scene,
                                   const std::vector<RigidTransform>& trajectory,
                                   const LidarModel& lidar, uint64_t seed,
                                   const std::string& mission_id,
                                   double odom_sigma_trans,
                                   double odom_sigma_rot) {
    require(!trajectory.empty(), "generate_mission: empty trajectory");
    require(odom_sigma_trans >= 0.0 && odom_sigma_rot >= 0.0,
            "generate_mission: odometry sigmas must be non-negative");

    MissionTrajectory out;
    out.mission_id = mission_id;
    const bool noisy = odom_sigma_trans > 0.0 || odom_sigma_rot > 0.0;
    RigidTransform odom = trajectory.front();
    for (size_t k = 0; k < trajectory.size(); ++k) {
        const PointCloud world = simulate_scan(
            scene, trajectory[k],
            lidar, hash_combine(hash_combine(seed, 0x7363616eULL), k));
        TrajectoryNode node;
        node.timestamp = 0.1 * static_cast<double>(k);
        node.scan = transform_cloud(world, trajectory[k].inverse());
        if (k == 0) {
            node.pose = odom;
        } else {
            RigidTransform rel = trajectory[k - 1].inverse() * trajectory[k];
            if (noisy) {
                CounterRng rng(hash_combine(hash_combine(seed, 0x6f646f6dULL), k));
                Vector6d xi;
                for (int i = 0; i < 3; ++i) xi[i] = odom_sigma_trans * rng.next_gaussian();
                for (int i = 3; i < 6; ++i) xi[i] = odom_sigma_rot * rng.next_gaussian();
                rel = rel * se3_exp(xi);
            }
            odom = odom * rel;
            node.pose = odom;
        }
        out.nodes.push_back(std::move(node));
    }
    out.check_invariants();
    return out;
}

std::vector<RigidTransform> ellipse_trajectory(const Aabb& extent, int count,
                                               double z, double rx, double ry) {
    require(count >= 1, "ellipse_trajectory: count must be positive");
    require(extent.valid(), "ellipse_trajectory: invalid extent");
    if (rx <= 0.0) rx = 0.35 * extent.extent().x();
    if (ry <= 0.0) ry = 0.35 * extent.extent().y();
    const Point3 c = extent.center();

    std::vector<RigidTransform> out;
    out.reserve(static_cast<size_t>(count));
    for (int k = 0; k < count; ++k) {
        const double th = 2.0 * kPi * k / count;
        RigidTransform pose;
        pose.translation = {c.x() + rx * std::cos(th), c.y() + ry * std::sin(th), z};
        pose.rotation =
            Eigen::AngleAxisd(th + kPi / 2, Eigen::Vector3d::UnitZ())
                .toRotationMatrix();
        out.push_back(pose);
    }
    return out;
}

std::pair<SceneSpec, std::set<uint32_t>> apply_changes(const SceneSpec& spec,
                                                       const ChangeScript& script) {
    spec.check_invariants();
    SceneSpec b = spec;
    std::set<uint32_t> gt;

    auto find = [&](uint32_t id) {
        for (auto it = b.objects.begin(); it != b.objects.end(); ++it)
            if (it->id == id) return it;
        throw std::invalid_argument("change script references unknown object id " +
                                    std::to_string(id));
    };

    for (const auto& act : script.actions) {
        switch (act.kind) {
            case ChangeAction::Kind::Move: {
                auto it = find(act.id);
                it->pose = act.transform * it->pose;
                break;
            }
            case ChangeAction::Kind::Remove:
                b.objects.erase(find(act.id));
                break;
            case ChangeAction::Kind::Add: {
                require(act.id != 0, "change script: added id must be nonzero");
                for (const auto& obj : b.objects)
                    require(obj.id != act.id,
                            "change script adds an id that already exists: " +
                                std::to_string(act.id));
                b.objects.push_back({act.id, act.shape, act.pose});
                break;
            }
        }
        gt.insert(act.id);
    }
    b.check_invariants();
    return {b, gt};
}

namespace {

Shape shape_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.contains("shape"))
        throw std::invalid_argument(where + ": missing \"shape\"");
    const std::string kind = j["shape"].get<std::string>();
    Shape s;
    if (kind == "box")
        s.kind = ShapeKind::Box;
    else if (kind == "cylinder")
        s.kind = ShapeKind::Cylinder;
    else if (kind == "sphere")
        s.kind = ShapeKind::Sphere;
    else if (kind == "composite")
        s.kind = ShapeKind::Composite;
    else
        throw std::invalid_argument(where + ": unknown shape \"" + kind + "\"");

    if (s.kind == ShapeKind::Composite) {
        if (!j.contains("parts") || !j["parts"].is_array() || j["parts"].empty())
            throw std::invalid_argument(where +
                                        ": composite needs a non-empty \"parts\"");
        size_t n = 0;
        for (const auto& pj : j["parts"]) {
            const std::string pw = where + ".parts[" + std::to_string(n++) + "]";
            reject_unknown_keys(pj, {"shape", "size", "parts", "pose"}, pw);
            ShapePart part;
            part.shape = shape_from_json(pj, pw);
            if (pj.contains("pose"))
                part.pose = pose_from_json(pj["pose"], pw + ".pose");
            s.parts.push_back(std::move(part));
        }
    } else {
        if (!j.contains("size"))
            throw std::invalid_argument(where + ": missing \"size\"");
        s.size = vec3_from_json(j["size"], where + ".size", true);
        require((s.size.array() > 0.0).all(), where + ": sizes must be positive");
    }
    return s;
}

nlohmann::ordered_json shape_to_json(const Shape& s) {
    nlohmann::ordered_json j;
    switch (s.kind) {
        case ShapeKind::Box: j["shape"] = "box"; break;
        case ShapeKind::Cylinder: j["shape"] = "cylinder"; break;
        case ShapeKind::Sphere: j["shape"] = "sphere"; break;
        case ShapeKind::Composite: j["shape"] = "composite"; break;
    }
    if (s.kind == ShapeKind::Composite) {
        j["parts"] = nlohmann::ordered_json::array();
        for (const auto& part : s.parts) {
            auto pj = shape_to_json(part.shape);
            pj["pose"] = pose_to_json(part.pose);
            j["parts"].push_back(std::move(pj));
        }
    } else {
        j["size"] = {s.size.x(), s.size.y(), s.size.z()};
    }
    return j;
}

}  // namespace

SceneSpec scene_spec_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j, {"extent", "walls", "ceiling", "objects"}, "scene");
    if (!j.contains("extent"))
        throw std::invalid_argument("scene: missing \"extent\"");
    reject_unknown_keys(j["extent"], {"min", "max"}, "scene.extent");

    SceneSpec spec;
    spec.extent.min = vec3_from_json(j["extent"]["min"], "scene.extent.min");
    spec.extent.max = vec3_from_json(j["extent"]["max"], "scene.extent.max");
    spec.walls = j.value("walls", false);
    spec.ceiling = j.value("ceiling", false);

    size_t n = 0;
    for (const auto& oj : j.value("objects", nlohmann::json::array())) {
        const std::string where = "scene.objects[" + std::to_string(n++) + "]";
        reject_unknown_keys(oj, {"id", "shape", "size", "parts", "pose"}, where);
        if (!oj.contains("id"))
            throw std::invalid_argument(where + ": missing \"id\"");
        SceneObject obj;
        obj.id = oj["id"].get<uint32_t>();
        obj.shape = shape_from_json(oj, where);
        if (oj.contains("pose"))
            obj.pose = pose_from_json(oj["pose"], where + ".pose");
        spec.objects.push_back(std::move(obj));
    }
    spec.check_invariants();
    return spec;
}

nlohmann::ordered_json scene_spec_to_json(const SceneSpec& spec) {
    nlohmann::ordered_json j;
    j["extent"]["min"] = {spec.extent.min.x(), spec.extent.min.y(),
                          spec.extent.min.z()};
    j["extent"]["max"] = {spec.extent.max.x(), spec.extent.max.y(),
                          spec.extent.max.z()};
    j["walls"] = spec.walls;
    j["ceiling"] = spec.ceiling;
    j["objects"] = nlohmann::ordered_json::array();
    for (const auto& obj : spec.objects) {
        auto oj = shape_to_json(obj.shape);
        oj["id"] = obj.id;
        oj["pose"] = pose_to_json(obj.pose);
        j["objects"].push_back(std::move(oj));
    }
    return j;
}

ChangeScript change_script_from_json(const nlohmann::json& j) {
    reject_unknown_keys(j, {"changes"}, "script");
    ChangeScript script;
    size_t n = 0;
    for (const auto& cj : j.value("changes", nlohmann::json::array())) {
        const std::string where = "script.changes[" + std::to_string(n++) + "]";
        reject_unknown_keys(
            cj, {"id", "action", "transform", "shape", "size", "parts", "pose"},
            where);
        if (!cj.contains("id") || !cj.contains("action"))
            throw std::invalid_argument(where + ": needs \"id\" and \"action\"");
        ChangeAction act;
        act.id = cj["id"].get<uint32_t>();
        const std::string action = cj["action"].get<std::string>();
        if (action == "move") {
            act.kind = ChangeAction::Kind::Move;
            if (!cj.contains("transform"))
                throw std::invalid_argument(where + ": move needs \"transform\"");
            act.transform = pose_from_json(cj["transform"], where + ".transform");
        } else if (action == "remove") {
            act.kind = ChangeAction::Kind::Remove;
        } else if (action == "add") {
            act.kind = ChangeAction::Kind::Add;
            act.shape = shape_from_json(cj, where);
            if (cj.contains("pose"))
                act.pose = pose_from_json(cj["pose"], where + ".pose");
        } else {
            throw std::invalid_argument(where + ": unknown action \"" + action +
                                        "\"");
        }
        script.actions.push_back(std::move(act));
    }
    return script;
}

}  // namespace deltamap
