#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <set>

#include <deltamap/common.hpp>
#include <deltamap/scenegen.hpp>

using namespace deltamap;

namespace {

SceneSpec room(double hx = 4.0, double hy = 3.0, double hz = 2.5) {
    SceneSpec spec;
    spec.extent.min = Point3(-hx, -hy, 0.0);
    spec.extent.max = Point3(hx, hy, hz);
    spec.walls = true;
    return spec;
}

SceneObject box_at(uint32_t id, const Point3& size, const Point3& center,
                   double yaw = 0.0) {
    SceneObject o;
    o.id = id;
    o.shape.kind = ShapeKind::Box;
    o.shape.size = size;
    o.pose.rotation =
        Eigen::AngleAxisd(yaw, Point3::UnitZ()).toRotationMatrix();
    o.pose.translation = center;
    return o;
}

}  // namespace

TEST_CASE("tessellation counts per primitive") {
    SceneSpec spec = room();
    spec.walls = false;
    const Scene bare = build_scene(spec);
    CHECK(bare.triangles.size() == 2);  // floor only
    CHECK(bare.labels == std::vector<uint32_t>{0, 0});

    spec.walls = true;
    spec.ceiling = true;
    spec.objects.push_back(box_at(1, Point3(0.4, 0.6, 0.8), Point3(1, 1, 0.4)));
    SceneObject cyl;
    cyl.id = 2;
    cyl.shape.kind = ShapeKind::Cylinder;
    cyl.shape.size = Point3(0.3, 0.3, 1.0);
    cyl.pose.translation = Point3(-1.5, 0.5, 0.5);
    spec.objects.push_back(cyl);
    SceneObject ball;
    ball.id = 3;
    ball.shape.kind = ShapeKind::Sphere;
    ball.shape.size = Point3(0.5, 0.5, 0.5);
    ball.pose.translation = Point3(0.0, -1.5, 0.6);
    spec.objects.push_back(ball);

    const Scene scene = build_scene(spec);
    REQUIRE(scene.groups.size() == 4);
    CHECK(scene.groups[0].count == 12);   // floor + ceiling + 4 walls
    CHECK(scene.groups[1].count == 12);   // box
    CHECK(scene.groups[2].count == 96);   // cylinder: 24 segments
    CHECK(scene.groups[3].count == 224);  // sphere: 8 stacks x 16 slices
    CHECK(scene.triangles.size() == 12 + 12 + 96 + 224);

    // Group bounds enclose the shape they claim.
    const Aabb& bb = scene.groups[1].bounds;
    CHECK(bb.min.isApprox(Point3(0.8, 0.7, 0.0), 1e-9));
    CHECK(bb.max.isApprox(Point3(1.2, 1.3, 0.8), 1e-9));

    // Composites tessellate the sum of their parts.
    SceneSpec comp_spec = room();
    SceneObject comp;
    comp.id = 7;
    comp.shape.kind = ShapeKind::Composite;
    ShapePart part;
    part.shape.kind = ShapeKind::Box;
    part.shape.size = Point3(0.2, 0.2, 0.2);
    comp.shape.parts.push_back(part);
    part.shape.kind = ShapeKind::Cylinder;
    part.pose.translation = Point3(0, 0, 0.3);
    comp.shape.parts.push_back(part);
    comp.pose.translation = Point3(0, 0, 0.5);
    comp_spec.objects.push_back(comp);
    const Scene composite = build_scene(comp_spec);
    CHECK(composite.groups[1].count == 12 + 96);
}

TEST_CASE("scene validation") {
    SceneSpec spec = room();
    spec.objects.push_back(box_at(1, Point3(0.4, 0.4, 0.4), Point3(0, 0, 0.2)));
    spec.objects.push_back(box_at(1, Point3(0.4, 0.4, 0.4), Point3(2, 0, 0.2)));
    CHECK_THROWS(spec.check_invariants());  // duplicate id

    spec.objects[1].id = 0;
    CHECK_THROWS(spec.check_invariants());  // label 0 is the room

    spec.objects[1].id = 2;
    spec.objects[1].pose.translation = Point3(10, 0, 0.2);
    CHECK_THROWS(build_scene(spec));  // outside the room

    spec.objects[1].pose.translation = Point3(0.1, 0.1, 0.3);
    const Scene overlapping = build_scene(spec);
    REQUIRE(overlapping.warnings.size() == 1);
    CHECK(overlapping.warnings[0].find("1") != std::string::npos);
    CHECK(overlapping.warnings[0].find("2") != std::string::npos);
}

TEST_CASE("a zero-noise scan returns exact ranges on a known wall") {
    SceneSpec spec = room(4.0, 3.0, 2.5);
    const Scene scene = build_scene(spec);

    LidarModel lidar;
    lidar.channels = 1;
    lidar.vertical_fov_deg = 0.0;
    lidar.horizontal_resolution_deg = 90.0;
    lidar.max_range = 50.0;
    lidar.range_sigma = 0.0;

    RigidTransform pose;
    pose.translation = Point3(0.0, 0.0, 1.0);
    const PointCloud scan = simulate_scan(scene, pose, lidar, 1);

    // Four horizontal rays at azimuths 0/90/180/270 hit the four walls.
    REQUIRE(scan.size() == 4);
    REQUIRE(scan.has_labels());
    std::multiset<double> hits;
    for (const Point3& p : scan.points) {
        CHECK(p.z() == doctest::Approx(1.0).epsilon(1e-12));
        hits.insert(std::max(std::abs(p.x()), std::abs(p.y())));
    }
    // Two walls at x = +-4, two at y = +-3.
    auto it = hits.begin();
    CHECK(*it++ == doctest::Approx(3.0));
    CHECK(*it++ == doctest::Approx(3.0));
    CHECK(*it++ == doctest::Approx(4.0));
    CHECK(*it++ == doctest::Approx(4.0));
    for (uint32_t l : scan.labels) CHECK(l == 0);
    CHECK(scan.origin.has_value());
    CHECK(scan.origin->isApprox(Point3(0, 0, 1)));
}

TEST_CASE("occlusion keeps the first hit only") {
    SceneSpec spec = room();
    spec.objects.push_back(box_at(5, Point3(0.5, 0.5, 2.0), Point3(2.0, 0.0, 1.0)));
    const Scene scene = build_scene(spec);

    LidarModel lidar;
    lidar.channels = 1;
    lidar.vertical_fov_deg = 0.0;
    lidar.horizontal_resolution_deg = 360.0;  // a single ray down +x
    lidar.range_sigma = 0.0;
    RigidTransform pose;
    pose.translation = Point3(0.0, 0.0, 1.0);

    const PointCloud scan = simulate_scan(scene, pose, lidar, 1);
    REQUIRE(scan.size() == 1);
    CHECK(scan.labels[0] == 5);  // the box, not the wall behind it
    CHECK(scan.points[0].x() == doctest::Approx(1.75));
}

TEST_CASE("scans are bit-identical for a fixed seed and thread count free") {
    SceneSpec spec = room();
    spec.objects.push_back(box_at(1, Point3(0.6, 0.6, 1.0), Point3(1.5, 1.0, 0.5)));
    const Scene scene = build_scene(spec);
    const LidarModel lidar = lidar_preset("xt32-like");
    RigidTransform pose;
    pose.translation = Point3(0, 0, 1.2);

    const PointCloud a = simulate_scan(scene, pose, lidar, 7);
    set_max_threads(1);
    const PointCloud b = simulate_scan(scene, pose, lidar, 7);
    set_max_threads(0);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a.points[i] == b.points[i]);
        CHECK(a.labels[i] == b.labels[i]);
    }

    const PointCloud c = simulate_scan(scene, pose, lidar, 8);
    bool any_differs = c.size() != a.size();
    for (size_t i = 0; !any_differs && i < a.size(); ++i)
        any_differs = !(a.points[i] == c.points[i]);
    CHECK(any_differs);  // the seed actually feeds the noise
}

TEST_CASE("lidar presets and validation") {
    const LidarModel os0 = lidar_preset("os0-128-like");
    CHECK(os0.channels == 128);
    CHECK(os0.max_range == doctest::Approx(50.0));
    const LidarModel xt32 = lidar_preset("xt32-like");
    CHECK(xt32.channels == 32);
    CHECK(xt32.max_range == doctest::Approx(120.0));
    CHECK_THROWS(lidar_preset("vlp-16"));

    LidarModel bad;
    bad.channels = 0;
    CHECK_THROWS(bad.check_invariants());
    LidarModel coarse;
    coarse.horizontal_resolution_deg = 0.35;
    CHECK(coarse.azimuth_steps() == static_cast<int>(std::lround(360.0 / 0.35)));
}

TEST_CASE("missions dead-reckon exactly when odometry noise is off") {
    SceneSpec spec = room();
    spec.objects.push_back(box_at(1, Point3(0.8, 0.5, 1.2), Point3(2.0, 1.0, 0.6)));
    const Scene scene = build_scene(spec);
    LidarModel lidar = lidar_preset("xt32-like");
    lidar.horizontal_resolution_deg = 2.0;

    const auto traj = ellipse_trajectory(spec.extent, 6, 1.2);
    REQUIRE(traj.size() == 6);
    const MissionTrajectory mission =
        generate_mission(scene, traj, lidar, 3, "m0");
    REQUIRE(mission.nodes.size() == 6);
    CHECK(mission.mission_id == "m0");

    for (size_t i = 0; i < 6; ++i) {
        const auto& n = mission.nodes[i];
        CHECK(n.timestamp == doctest::Approx(0.1 * static_cast<double>(i)));
        // Zero noise: stored pose equals the requested pose.
        CHECK((n.pose.translation - traj[i].translation).norm() < 1e-12);
        CHECK((n.pose.rotation - traj[i].rotation).norm() < 1e-12);
        // Scans are sensor-frame: transforming by the pose lands points
        // inside the room.
        REQUIRE(n.scan.size() > 0);
        const PointCloud world = transform_cloud(n.scan, n.pose);
        for (const Point3& p : world.points) {
            CHECK(p.x() >= spec.extent.min.x() - 1e-6);
            CHECK(p.x() <= spec.extent.max.x() + 1e-6);
        }
    }

    // With noise the stored poses drift off the commanded trajectory.
    const MissionTrajectory noisy =
        generate_mission(scene, traj, lidar, 3, "m1", 0.02, 0.005);
    double drift = 0.0;
    for (size_t i = 0; i < 6; ++i)
        drift += (noisy.nodes[i].pose.translation - traj[i].translation).norm();
    CHECK(drift > 1e-4);
}

TEST_CASE("ellipse trajectories stay inside the room") {
    const SceneSpec spec = room(5.0, 4.0, 3.0);
    const auto traj = ellipse_trajectory(spec.extent, 16, 1.4);
    REQUIRE(traj.size() == 16);
    for (const auto& pose : traj) {
        CHECK(spec.extent.contains(pose.translation));
        CHECK(pose.translation.z() == doctest::Approx(1.4));
        CHECK(pose.is_valid());
    }
    CHECK_THROWS(ellipse_trajectory(spec.extent, 0, 1.0));
}

TEST_CASE("change scripts rewrite the spec and report ground truth") {
    SceneSpec spec = room();
    spec.objects.push_back(box_at(1, Point3(0.5, 0.5, 0.5), Point3(2, 1, 0.25)));
    spec.objects.push_back(box_at(2, Point3(0.5, 0.5, 0.5), Point3(-2, 1, 0.25)));
    spec.objects.push_back(box_at(3, Point3(0.5, 0.5, 0.5), Point3(0, -2, 0.25)));

    ChangeScript script;
    ChangeAction move;
    move.kind = ChangeAction::Kind::Move;
    move.id = 1;
    move.transform.translation = Point3(-1.0, 0.5, 0.0);
    script.actions.push_back(move);
    ChangeAction remove;
    remove.kind = ChangeAction::Kind::Remove;
    remove.id = 2;
    script.actions.push_back(remove);
    ChangeAction add;
    add.kind = ChangeAction::Kind::Add;
    add.id = 9;
    add.shape.kind = ShapeKind::Sphere;
    add.shape.size = Point3(0.4, 0.4, 0.4);
    add.pose.translation = Point3(1.0, -1.0, 0.3);
    script.actions.push_back(add);

    const auto [after, changed] = apply_changes(spec, script);
    CHECK(changed == std::set<uint32_t>{1, 2, 9});
    REQUIRE(after.objects.size() == 3);  // moved, kept, added

    bool saw_moved = false, saw_kept = false, saw_added = false;
    for (const auto& o : after.objects) {
        if (o.id == 1) {
            saw_moved = true;
            // World-frame left multiplication shifts the center.
            CHECK(o.pose.translation.isApprox(Point3(1.0, 1.5, 0.25)));
        }
        if (o.id == 3) saw_kept = true;
        if (o.id == 9) saw_added = true;
        CHECK(o.id != 2);
    }
    CHECK(saw_moved);
    CHECK(saw_kept);
    CHECK(saw_added);

    // Unknown target and colliding add are errors.
    ChangeScript bad_move;
    bad_move.actions.push_back(ChangeAction{});
    bad_move.actions[0].id = 42;
    CHECK_THROWS(apply_changes(spec, bad_move));
    ChangeScript bad_add;
    ChangeAction dup = add;
    dup.id = 3;
    bad_add.actions.push_back(dup);
    CHECK_THROWS(apply_changes(spec, bad_add));
}

TEST_CASE("specs round trip through json") {
    SceneSpec spec = room();
    spec.ceiling = true;
    spec.objects.push_back(box_at(4, Point3(0.7, 0.4, 0.9), Point3(1, 2, 0.45), 0.3));
    SceneObject comp;
    comp.id = 6;
    comp.shape.kind = ShapeKind::Composite;
    ShapePart part;
    part.shape.kind = ShapeKind::Sphere;
    part.shape.size = Point3(0.3, 0.3, 0.3);
    part.pose.translation = Point3(0, 0, 0.4);
    comp.shape.parts.push_back(part);
    comp.pose.translation = Point3(-2, -1, 0.5);
    spec.objects.push_back(comp);

    const nlohmann::ordered_json j = scene_spec_to_json(spec);
    const SceneSpec back = scene_spec_from_json(j);
    CHECK(back.extent.min.isApprox(spec.extent.min));
    CHECK(back.walls == spec.walls);
    CHECK(back.ceiling == spec.ceiling);
    REQUIRE(back.objects.size() == 2);
    CHECK(back.objects[0].id == 4);
    CHECK(back.objects[0].pose.translation.isApprox(spec.objects[0].pose.translation));
    CHECK(back.objects[0].pose.rotation.isApprox(spec.objects[0].pose.rotation));
    CHECK(back.objects[1].shape.parts.size() == 1);

    // The triangle soups agree exactly.
    const Scene s1 = build_scene(spec);
    const Scene s2 = build_scene(back);
    REQUIRE(s1.triangles.size() == s2.triangles.size());
    for (size_t i = 0; i < s1.triangles.size(); ++i)
        CHECK(s1.triangles[i].a.isApprox(s2.triangles[i].a, 1e-12));

    CHECK_THROWS(scene_spec_from_json(nlohmann::json{{"bogus", 1}}));
}
