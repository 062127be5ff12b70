/*
 * Synthetic multi-mission dataset generator. Scenes are triangle soups built
 * from labeled primitives (box, cylinder, sphere, composites) inside a room;
 * a spinning-LiDAR model casts one ray per (channel, azimuth step) and keeps
 * the first hit, with Gaussian range noise. Scripted changes move, add, or
 * remove objects between missions and define per-point ground truth.
 *
 * Label 0 is reserved for room surfaces (floor, walls, ceiling).
 */
#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "deltamap/geometry.hpp"
#include "deltamap/pose_graph.hpp"

namespace deltamap {

enum class ShapeKind { Box, Cylinder, Sphere, Composite };

struct ShapePart;

// size holds full extents: box edge lengths; cylinder x/y diameters and z
// height; sphere diameters (ellipsoids allowed). Composites tessellate each
// part in its local pose; nested composites are permitted.
struct Shape {
    ShapeKind kind = ShapeKind::Box;
    Point3 size = Point3::Ones();
    std::vector<ShapePart> parts;
};

struct ShapePart {
    Shape shape;
    RigidTransform pose;  // relative to the owning object
};

struct SceneObject {
    uint32_t id = 0;  // must be nonzero; 0 is the room label
    Shape shape;
    RigidTransform pose;
};

struct SceneSpec {
    Aabb extent;
    bool walls = false;    // room sides as geometry, label 0
    bool ceiling = false;  // likewise; the floor is always present
    std::vector<SceneObject> objects;

    void check_invariants() const;  // unique nonzero ids, valid extent
};

struct Triangle {
    Point3 a, b, c;
};

struct Scene {
    std::vector<Triangle> triangles;
    std::vector<uint32_t> labels;  // one object id per triangle

    // Contiguous triangle ranges with a shared label and bounding box, used
    // to cull whole objects per ray.
    struct Group {
        uint32_t label = 0;
        size_t first = 0, count = 0;
        Aabb bounds;
    };
    std::vector<Group> groups;
    Aabb extent;
    std::vector<std::string> warnings;  // e.g. overlapping object volumes
};

// Tessellates every object plus the room surfaces. Objects must lie inside
// the room extent; overlapping object bounds produce a warning, not an error.
Scene build_scene(const SceneSpec& spec);

struct LidarModel {
    int channels = 128;
    double vertical_fov_deg = 90.0;
    double horizontal_resolution_deg = 0.35;
    double max_range = 50.0;
    double range_sigma = 0.01;

    void check_invariants() const;
    int azimuth_steps() const;
};

// Known names: "os0-128-like" (128 ch, 90 deg, 50 m), "xt32-like" (32 ch,
// 31 deg, 120 m). Throws on anything else.
LidarModel lidar_preset(const std::string& name);

// One ray per (channel, azimuth step) from the sensor pose; first hit wins,
// range gets zero-mean Gaussian noise (sigma from the model, one draw per
// ray keyed by seed/channel/azimuth, so results are thread-count independent
// and bit-reproducible). Points are in world coordinates, labeled with the
// hit object's id; cloud origin = sensor position. Rays that miss or exceed
// max_range produce nothing.
PointCloud simulate_scan(const Scene& scene, const RigidTransform& sensor_pose,
                         const LidarModel& lidar, uint64_t seed);

// One scan per pose, stored in the sensor frame. Node poses are the
// odometry: exact copies of `trajectory` when both sigmas are zero, else
// dead-reckoned with per-step Gaussian noise on the relative motion.
MissionTrajectory generate_mission(const Scene& scene,
                                   const std::vector<RigidTransform>& trajectory,
                                   const LidarModel& lidar, uint64_t seed,
                                   const std::string& mission_id,
                                   double odom_sigma_trans = 0.0,
                                   double odom_sigma_rot = 0.0);

// Poses on an axis-aligned ellipse around the room center at height z,
// yaw following the tangent. rx/ry default to 70% of the room half-extents.
std::vector<RigidTransform> ellipse_trajectory(const Aabb& extent, int count,
                                               double z, double rx = 0.0,
                                               double ry = 0.0);

struct ChangeAction {
    enum class Kind { Move, Remove, Add };
    Kind kind = Kind::Move;
    uint32_t id = 0;
    RigidTransform transform;  // Move: applied in world frame, on the left
    Shape shape;               // Add
    RigidTransform pose;       // Add
};

struct ChangeScript {
    std::vector<ChangeAction> actions;
};

// Returns the mission-B spec and the ground-truth changed ids (every moved,
// removed, and added id). Unknown ids and duplicate adds throw.
std::pair<SceneSpec, std::set<uint32_t>> apply_changes(const SceneSpec& spec,
                                                       const ChangeScript& script);

SceneSpec scene_spec_from_json(const nlohmann::json& j);
nlohmann::ordered_json scene_spec_to_json(const SceneSpec& spec);
ChangeScript change_script_from_json(const nlohmann::json& j);

}  // namespace deltamap
