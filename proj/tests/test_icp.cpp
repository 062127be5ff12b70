#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>

#include <deltamap/common.hpp>
#include <deltamap/icp.hpp>

using namespace deltamap;

namespace {

// Two perpendicular plates and a rod: full 3D constraint, no symmetry.
// Grid positions are jittered so the cloud is not self-similar under a
// one-cell lattice shift, which would give point-to-point ICP spurious
// local minima.
PointCloud structured_cloud() {
    CounterRng rng(77);
    auto jitter = [&rng] { return rng.next_gaussian() * 0.008; };
    PointCloud c;
    for (int i = 0; i <= 20; ++i) {
        for (int j = 0; j <= 12; ++j) {
            c.points.push_back(
                Point3(i * 0.05 + jitter(), j * 0.05 + jitter(), jitter()));
            c.points.push_back(
                Point3(i * 0.05 + jitter(), jitter(), 0.2 + j * 0.05 + jitter()));
        }
    }
    for (int i = 0; i <= 30; ++i)
        c.points.push_back(Point3(0.3 + jitter(), 0.6 + i * 0.02 + jitter(),
                                  0.4 + jitter()));
    return c;
}

RigidTransform make_transform(double angle_deg, const Point3& axis,
                              const Point3& t) {
    RigidTransform out;
    out.rotation =
        Eigen::AngleAxisd(angle_deg * M_PI / 180.0, axis.normalized())
            .toRotationMatrix();
    out.translation = t;
    return out;
}

double rotation_error_deg(const RigidTransform& a, const RigidTransform& b) {
    const Eigen::Matrix3d r = a.rotation.transpose() * b.rotation;
    return Eigen::AngleAxisd(r).angle() * 180.0 / M_PI;
}

}  // namespace

TEST_CASE("identical clouds register to the identity") {
    const PointCloud cloud = structured_cloud();
    const IcpResult res = icp_register(cloud, cloud, RigidTransform::identity());
    CHECK(res.converged);
    CHECK(res.rms == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(res.inlier_fraction == doctest::Approx(1.0));
    CHECK(rotation_error_deg(res.transform, RigidTransform::identity()) < 1e-9);
    CHECK(res.transform.translation.norm() < 1e-12);
}

TEST_CASE("a scripted offset is recovered from a rough initial guess") {
    const PointCloud source = structured_cloud();
    const RigidTransform truth =
        make_transform(9.0, Point3(0.2, -0.4, 1.0), Point3(0.35, -0.18, 0.09));
    const PointCloud target = transform_cloud(source, truth);

    const RigidTransform init =
        make_transform(4.0, Point3(0.0, 0.0, 1.0), Point3(0.3, -0.1, 0.0));
    const IcpResult res = icp_register(source, target, init);

    CHECK(res.converged);
    CHECK(rotation_error_deg(res.transform, truth) < 1e-4);
    CHECK((res.transform.translation - truth.translation).norm() < 1e-5);
    CHECK(res.rms < 1e-6);
    CHECK(res.transform.is_valid());
}

TEST_CASE("per-iteration fitness never rises") {
    const PointCloud source = structured_cloud();
    const RigidTransform truth =
        make_transform(14.0, Point3(1.0, 0.3, 0.2), Point3(-0.2, 0.3, 0.12));
    PointCloud target = transform_cloud(source, truth);

    // Clip part of the target so correspondences are imperfect.
    PointCloud clipped;
    for (const Point3& p : target.points)
        if (p.y() < 0.55) clipped.points.push_back(p);

    const IcpResult res =
        icp_register(source, clipped, RigidTransform::identity());
    REQUIRE(res.rms_history.size() >= 1);
    for (size_t i = 1; i < res.rms_history.size(); ++i)
        CHECK(res.rms_history[i] <= res.rms_history[i - 1] + 1e-15);
    CHECK(res.rms == doctest::Approx(res.rms_history.back()));
}

TEST_CASE("far outliers are ignored by the correspondence gate") {
    const PointCloud source = structured_cloud();
    const RigidTransform truth =
        make_transform(6.0, Point3(0.1, 1.0, 0.1), Point3(0.2, 0.05, -0.04));
    const PointCloud clean_target = transform_cloud(source, truth);
    PointCloud target = clean_target;
    CounterRng rng(3);
    for (int i = 0; i < 50; ++i) {
        target.points.push_back(Point3(8.0 + rng.next_double(),
                                       8.0 + rng.next_double(),
                                       8.0 + rng.next_double()));
    }

    // Points past corr_dist can never be selected, so the outlier-laden run
    // must reproduce the clean one.
    const RigidTransform init =
        make_transform(5.0, Point3(0.1, 1.0, 0.1), Point3(0.18, 0.0, 0.0));
    const IcpResult clean = icp_register(source, clean_target, init);
    const IcpResult res = icp_register(source, target, init);
    CHECK(res.converged);
    CHECK(rotation_error_deg(res.transform, clean.transform) < 1e-12);
    CHECK((res.transform.translation - clean.transform.translation).norm() <
          1e-12);
    CHECK(res.rms == doctest::Approx(clean.rms));
    CHECK(rotation_error_deg(res.transform, truth) < 1e-3);
    CHECK((res.transform.translation - truth.translation).norm() < 1e-4);
}

TEST_CASE("no correspondences under the initial guess is an error") {
    const PointCloud source = structured_cloud();
    PointCloud far_target = structured_cloud();
    for (Point3& p : far_target.points) p += Point3(50.0, 0.0, 0.0);

    IcpParams params;
    params.corr_dist = 0.5;
    CHECK_THROWS_AS(
        icp_register(source, far_target, RigidTransform::identity(), params),
        IcpError);
    CHECK_THROWS(icp_register(PointCloud{}, far_target, RigidTransform::identity()));
}

TEST_CASE("iteration budget exhaustion reports non-convergence") {
    const PointCloud source = structured_cloud();
    const RigidTransform truth =
        make_transform(25.0, Point3(0.3, 0.3, 1.0), Point3(0.3, 0.2, 0.1));
    const PointCloud target = transform_cloud(source, truth);

    IcpParams tight;
    tight.max_iter = 1;
    const IcpResult res =
        icp_register(source, target, RigidTransform::identity(), tight);
    CHECK_FALSE(res.converged);
    CHECK(res.iterations == 1);

    IcpParams roomy;
    roomy.max_iter = 200;
    const IcpResult full =
        icp_register(source, target, RigidTransform::identity(), roomy);
    CHECK(full.converged);
    CHECK(full.iterations < 200);
}
