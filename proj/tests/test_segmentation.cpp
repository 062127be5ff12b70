#include <doctest.h>

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <set>

#include <deltamap/common.hpp>
#include <deltamap/segmentation.hpp>

using namespace deltamap;

namespace {

// Horizontal plane patch with uniform jitter plus whatever the caller adds.
PointCloud plane_patch(double z, double half, double jitter, CounterRng& rng,
                       int per_axis = 40) {
    PointCloud c;
    for (int i = 0; i <= per_axis; ++i) {
        for (int j = 0; j <= per_axis; ++j) {
            const double x = -half + 2.0 * half * i / per_axis;
            const double y = -half + 2.0 * half * j / per_axis;
            const double dz = jitter * (rng.next_double() * 2.0 - 1.0);
            c.points.push_back(Point3(x, y, z + dz));
        }
    }
    return c;
}

PointCloud ball(const Point3& center, double radius, int n, CounterRng& rng) {
    PointCloud c;
    for (int i = 0; i < n; ++i) {
        Point3 dir(rng.next_gaussian(), rng.next_gaussian(), rng.next_gaussian());
        dir.normalize();
        c.points.push_back(center + dir * radius * std::cbrt(rng.next_double()));
    }
    return c;
}

}  // namespace

TEST_CASE("ransac finds the dominant near-horizontal plane") {
    CounterRng rng(5);
    PointCloud cloud = plane_patch(0.3, 2.0, 0.01, rng);
    const size_t ground_n = cloud.size();
    cloud.append(ball(Point3(0.5, -0.3, 1.2), 0.3, 400, rng));

    const auto [plane, rest] = ransac_ground(cloud, 0.03, 15.0 * M_PI / 180.0, 200);
    CHECK(plane.normal.z() > 0.99);
    // n.p + d = 0 at the plane: d is minus the plane height.
    CHECK(plane.d == doctest::Approx(-0.3).epsilon(0.05));
    CHECK(plane.inliers.size() > ground_n * 0.95);
    CHECK(plane.inliers.size() <= ground_n);
    CHECK(rest.size() + plane.inliers.size() == cloud.size());
    // Everything left behind is off the plane.
    for (const Point3& p : rest.points) CHECK(plane.distance(p) > 0.03);
}

TEST_CASE("ransac refuses a cloud with no near-horizontal plane") {
    // A vertical wall only.
    PointCloud wall;
    for (int i = 0; i <= 40; ++i)
        for (int k = 0; k <= 40; ++k)
            wall.points.push_back(Point3(1.0, i * 0.05, k * 0.05));
    CHECK_THROWS(ransac_ground(wall, 0.03, 10.0 * M_PI / 180.0, 100));
}

TEST_CASE("ransac is reproducible for a fixed seed") {
    CounterRng rng(9);
    PointCloud cloud = plane_patch(0.0, 1.5, 0.02, rng);
    cloud.append(ball(Point3(0, 0, 1.0), 0.4, 500, rng));
    const auto [p1, r1] = ransac_ground(cloud, 0.04, 0.3, 150, 42);
    const auto [p2, r2] = ransac_ground(cloud, 0.04, 0.3, 150, 42);
    CHECK(p1.inliers == p2.inliers);
    CHECK(p1.normal == p2.normal);
    CHECK(p1.d == p2.d);
    REQUIRE(r1.size() == r2.size());
}

TEST_CASE("mls smoothing pulls noisy samples toward the surface") {
    CounterRng rng(21);
    PointCloud noisy = plane_patch(0.5, 1.0, 0.03, rng, 50);
    const PointCloud smooth = mls_smooth(noisy, 0.15, 2);
    REQUIRE(smooth.size() == noisy.size());

    auto z_variance = [](const PointCloud& c) {
        KahanSum sum, sq;
        for (const Point3& p : c.points) sum.add(p.z());
        const double mean = sum.value() / static_cast<double>(c.size());
        for (const Point3& p : c.points) sq.add((p.z() - mean) * (p.z() - mean));
        return sq.value() / static_cast<double>(c.size());
    };
    CHECK(z_variance(smooth) < z_variance(noisy) * 0.25);

    // A lone point with no neighborhood passes through unchanged.
    PointCloud lonely;
    lonely.points.push_back(Point3(10.0, 10.0, 10.0));
    lonely.append(noisy);
    const PointCloud out = mls_smooth(lonely, 0.15, 2);
    CHECK(out.points[0] == Point3(10.0, 10.0, 10.0));
}

TEST_CASE("morphological opening strips speckle and keeps solids") {
    CounterRng rng(33);
    // A solid slab of voxels...
    PointCloud cloud;
    for (int i = 0; i < 12; ++i)
        for (int j = 0; j < 12; ++j)
            for (int k = 0; k < 4; ++k)
                cloud.points.push_back(
                    Point3(0.025 + i * 0.05, 0.025 + j * 0.05, 0.025 + k * 0.05));
    const size_t slab_n = cloud.size();
    // ...plus isolated specks far apart.
    for (int i = 0; i < 30; ++i) {
        cloud.points.push_back(Point3(3.0 + i * 0.7, rng.next_double() * 5.0,
                                      rng.next_double()));
    }

    const PointCloud kept = denoise_morphological(cloud, 0.05, 1, 1);
    CHECK(kept.size() >= slab_n * 0.9);
    for (const Point3& p : kept.points) CHECK(p.x() < 1.0);  // specks gone
}

TEST_CASE("clustering separates blobs and honors the size gates") {
    CounterRng rng(8);
    PointCloud cloud = ball(Point3(0, 0, 0), 0.3, 300, rng);
    cloud.append(ball(Point3(2, 0, 0), 0.3, 250, rng));
    cloud.append(ball(Point3(0, 2, 0.5), 0.25, 200, rng));
    cloud.points.push_back(Point3(-3, -3, 0));  // singleton

    const auto segments = euclidean_cluster(cloud, 0.2, 50, 0, 1, 10);
    REQUIRE(segments.size() == 3);
    size_t total = 0;
    std::set<uint32_t> ids;
    for (const auto& s : segments) {
        total += s.cloud.size();
        ids.insert(s.id);
        CHECK(s.mission == 1);
        CHECK(cloud_centroid(s.cloud).isApprox(s.centroid));
    }
    CHECK(total == cloud.size() - 1);
    CHECK(ids == std::set<uint32_t>{10, 11, 12});

    // max_size discards the biggest blob.
    const auto capped = euclidean_cluster(cloud, 0.2, 50, 260);
    CHECK(capped.size() == 2);

    // A tolerance wide enough to bridge the gaps gives one component.
    const auto merged = euclidean_cluster(cloud, 5.0, 1);
    CHECK(merged.size() == 1);
}

TEST_CASE("region growing splits along a sharp crease") {
    // Two plates joined at a right angle along the y axis.
    PointCloud cloud;
    for (int i = 0; i <= 30; ++i) {
        for (int j = 0; j <= 30; ++j) {
            cloud.points.push_back(Point3(-0.02 * i, j * 0.02, 0.0));
            cloud.points.push_back(Point3(0.0, j * 0.02, 0.02 + 0.02 * i));
        }
    }
    const Segment seg = make_segment(cloud, 0, 7);
    const auto parts =
        region_grow_refine(seg, 12, 40.0 * M_PI / 180.0, 0.08);
    REQUIRE(parts.size() == 2);
    CHECK(parts[0].cloud.size() + parts[1].cloud.size() == cloud.size());

    // Each side is normal-pure: one part horizontal, the other vertical.
    auto mean_abs_z = [](const Segment& s) {
        double acc = 0.0;
        for (const Point3& p : s.cloud.points) acc += std::abs(p.z());
        return acc / static_cast<double>(s.cloud.size());
    };
    const double a = mean_abs_z(parts[0]);
    const double b = mean_abs_z(parts[1]);
    CHECK(std::min(a, b) < 0.01);
    CHECK(std::max(a, b) > 0.2);
}

TEST_CASE("region growing passes a smooth patch through whole") {
    CounterRng rng(2);
    PointCloud cloud = plane_patch(0.0, 0.5, 0.0, rng, 25);
    const auto parts = region_grow_refine(make_segment(cloud, 0, 0), 10,
                                          30.0 * M_PI / 180.0, 0.05);
    REQUIRE(parts.size() == 1);
    CHECK(parts[0].cloud.size() == cloud.size());
}

TEST_CASE("overlap resolution removes twins and splits partial movers") {
    CounterRng rng(14);
    // Segment pair 1: identical in both missions (object did not move).
    const PointCloud same = ball(Point3(0, 0, 0.3), 0.3, 500, rng);
    // Segment pair 2: B's copy shifted by less than the diameter.
    const PointCloud before = ball(Point3(3, 0, 0.3), 0.4, 700, rng);
    PointCloud after = before;
    for (Point3& p : after.points) p.x() += 0.25;

    std::vector<Segment> sa{make_segment(same, 0, 0), make_segment(before, 0, 1)};
    std::vector<Segment> sb{make_segment(same, 1, 0), make_segment(after, 1, 1)};

    const auto [ra, rb] = merge_or_split(sa, sb, 0.5, 0.05, 0.12, 20);

    // The identical pair disappears entirely from both sides.
    for (const auto& s : ra)
        CHECK((cloud_centroid(s.cloud) - Point3(0, 0, 0.3)).norm() > 1.0);
    for (const auto& s : rb)
        CHECK((cloud_centroid(s.cloud) - Point3(0, 0, 0.3)).norm() > 1.0);

    // The mover leaves an old-only sliver in A and a new-only sliver in B,
    // on opposite sides of the shared core.
    REQUIRE(ra.size() >= 1);
    REQUIRE(rb.size() >= 1);
    double max_a_x = -1e9, min_b_x = 1e9;
    for (const auto& s : ra)
        max_a_x = std::max(max_a_x, cloud_centroid(s.cloud).x());
    for (const auto& s : rb)
        min_b_x = std::min(min_b_x, cloud_centroid(s.cloud).x());
    CHECK(max_a_x < min_b_x);

    // Disjoint segments pass through untouched.
    std::vector<Segment> lone_a{make_segment(ball(Point3(-4, 0, 0.3), 0.3, 300, rng), 0, 5)};
    std::vector<Segment> lone_b{make_segment(ball(Point3(4, 4, 0.3), 0.3, 300, rng), 1, 9)};
    const auto [pa, pb] = merge_or_split(lone_a, lone_b, 0.5);
    REQUIRE(pa.size() == 1);
    REQUIRE(pb.size() == 1);
    CHECK(pa[0].cloud.size() == 300);
    CHECK(pb[0].cloud.size() == 300);
    CHECK(pa[0].id == 5);
    CHECK(pb[0].id == 9);
}
