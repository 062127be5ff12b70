#include "deltamap/geometry.hpp"

#include <cmath>
#include <map>
#include <vector>

#include "deltamap/common.hpp"
#include "doctest.h"

using namespace deltamap;

namespace {

RigidTransform random_transform(CounterRng& rng) {
    const Eigen::Vector3d axis =
        Eigen::Vector3d(rng.next_gaussian(), rng.next_gaussian(),
                        rng.next_gaussian())
            .normalized();
    const double angle = rng.next_double() * 2.0 * kPi;
    RigidTransform T;
    T.rotation = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
    T.translation = Eigen::Vector3d(rng.next_gaussian(), rng.next_gaussian(),
                                    rng.next_gaussian());
    return T;
}

}  // namespace

TEST_CASE("compose matches applying transforms in sequence") {
    CounterRng rng(5);
    for (int i = 0; i < 50; ++i) {
        const RigidTransform a = random_transform(rng);
        const RigidTransform b = random_transform(rng);
        const Point3 p(rng.next_gaussian(), rng.next_gaussian(),
                       rng.next_gaussian());
        CHECK(((a * b).apply(p) - a.apply(b.apply(p))).norm() < 1e-12);
    }
}

TEST_CASE("inverse undoes apply and keeps rotations orthonormal") {
    CounterRng rng(6);
    for (int i = 0; i < 50; ++i) {
        const RigidTransform T = random_transform(rng);
        const Point3 p(rng.next_gaussian(), rng.next_gaussian(),
                       rng.next_gaussian());
        CHECK((T.inverse().apply(T.apply(p)) - p).norm() < 1e-12);
        CHECK(T.inverse().is_valid());
        const RigidTransform id = T * T.inverse();
        CHECK((id.rotation - Eigen::Matrix3d::Identity()).norm() < 1e-12);
        CHECK(id.translation.norm() < 1e-12);
    }
}

TEST_CASE("quaternion round trip preserves the rotation") {
    CounterRng rng(7);
    for (int i = 0; i < 20; ++i) {
        const RigidTransform T = random_transform(rng);
        const RigidTransform back =
            RigidTransform::from_quaternion(T.quaternion(), T.translation);
        CHECK((back.rotation - T.rotation).norm() < 1e-12);
    }
}

TEST_CASE("transform_cloud moves points, labels, and the origin together") {
    PointCloud cloud;
    cloud.points = {{1, 0, 0}, {0, 2, 0}};
    cloud.labels = {3, 9};
    cloud.origin = Point3(0.5, 0.5, 0.5);
    RigidTransform T;
    T.rotation = Eigen::AngleAxisd(kPi / 2, Eigen::Vector3d::UnitZ()).matrix();
    T.translation = {10, 0, 0};

    const PointCloud out = transform_cloud(cloud, T);
    CHECK((out.points[0] - Point3(10, 1, 0)).norm() < 1e-12);
    CHECK((out.points[1] - Point3(8, 0, 0)).norm() < 1e-12);
    CHECK(out.labels == std::vector<uint32_t>{3, 9});
    REQUIRE(out.origin.has_value());
    CHECK((*out.origin - Point3(9.5, 0.5, 0.5)).norm() < 1e-12);
}

TEST_CASE("crop_box keeps exactly the inclusive box, brute-force checked") {
    CounterRng rng(8);
    PointCloud cloud;
    for (int i = 0; i < 500; ++i) {
        cloud.points.emplace_back(rng.next_double() * 4 - 2,
                                  rng.next_double() * 4 - 2,
                                  rng.next_double() * 4 - 2);
        cloud.labels.push_back(static_cast<uint32_t>(i));
    }
    Aabb box{{-1, -0.5, 0}, {1, 1.5, 2}};
    const PointCloud cropped = crop_box(cloud, box);

    size_t expected = 0;
    for (size_t i = 0; i < cloud.size(); ++i)
        if (box.contains(cloud.points[i])) {
            REQUIRE(expected < cropped.size());
            CHECK(cropped.points[expected] == cloud.points[i]);
            CHECK(cropped.labels[expected] == cloud.labels[i]);
            ++expected;
        }
    CHECK(cropped.size() == expected);
    CHECK(expected > 20);  // the box is not accidentally empty
}

TEST_CASE("voxel_downsample emits voxel centroids with majority labels") {
    PointCloud cloud;
    // Voxel (0,0,0) with leaf 1: three points, labels 2,2,5 -> majority 2.
    cloud.points = {{0.1, 0.1, 0.1}, {0.3, 0.2, 0.1}, {0.2, 0.6, 0.4}};
    cloud.labels = {2, 5, 2};
    // Voxel (3,0,0): one point.
    cloud.points.emplace_back(3.5, 0.5, 0.5);
    cloud.labels.push_back(7);

    const PointCloud down = voxel_downsample(cloud, 1.0);
    REQUIRE(down.size() == 2);

    std::map<int, size_t> by_cell;
    for (size_t i = 0; i < down.size(); ++i)
        by_cell[static_cast<int>(std::floor(down.points[i].x()))] = i;

    const size_t c0 = by_cell.at(0);
    CHECK((down.points[c0] - Point3(0.2, 0.3, 0.2)).norm() < 1e-12);
    CHECK(down.labels[c0] == 2);
    const size_t c3 = by_cell.at(3);
    CHECK((down.points[c3] - Point3(3.5, 0.5, 0.5)).norm() < 1e-12);
    CHECK(down.labels[c3] == 7);
}

TEST_CASE("voxel_downsample label ties pick the smaller id") {
    PointCloud cloud;
    cloud.points = {{0.1, 0, 0}, {0.2, 0, 0}};
    cloud.labels = {9, 4};
    const PointCloud down = voxel_downsample(cloud, 1.0);
    REQUIRE(down.size() == 1);
    CHECK(down.labels[0] == 4);
}

TEST_CASE("append refuses to mix labeled and unlabeled clouds") {
    PointCloud labeled;
    labeled.points = {{0, 0, 0}};
    labeled.labels = {1};
    PointCloud plain;
    plain.points = {{1, 1, 1}};
    CHECK_THROWS_AS(labeled.append(plain), std::invalid_argument);
}

TEST_CASE("cloud invariants reject NaN coordinates and ragged labels") {
    PointCloud cloud;
    cloud.points = {{0, 0, std::nan("")}};
    CHECK_THROWS_AS(cloud.check_invariants(), std::invalid_argument);
    cloud.points = {{0, 0, 0}, {1, 1, 1}};
    cloud.labels = {1};
    CHECK_THROWS_AS(cloud.check_invariants(), std::invalid_argument);
}
