#include "deltamap/rigid_fit.hpp"

#include <Eigen/Dense>

#include "deltamap/common.hpp"

namespace deltamap {

RigidTransform fit_rigid(const std::vector<Point3>& src,
                         const std::vector<Point3>& dst, bool* degenerate) {
    require(!src.empty(), "fit_rigid: empty input");
    require(src.size() == dst.size(), "fit_rigid: size mismatch");
    if (degenerate) *degenerate = false;

    const size_t n = src.size();
    KahanSum sx, sy, sz, dx, dy, dz;
    for (size_t i = 0; i < n; ++i) {
        sx.add(src[i].x());
        sy.add(src[i].y());
        sz.add(src[i].z());
        dx.add(dst[i].x());
        dy.add(dst[i].y());
        dz.add(dst[i].z());
    }
    const Point3 cs(sx.value() / n, sy.value() / n, sz.value() / n);
    const Point3 cd(dx.value() / n, dy.value() / n, dz.value() / n);

    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    for (size_t i = 0; i < n; ++i)
        h += (src[i] - cs) * (dst[i] - cd).transpose();

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(
        h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Vector3d sing = svd.singularValues();

    RigidTransform t = RigidTransform::identity();
    // Two informative directions are needed for a unique rotation.
    if (n < 3 || sing(1) <= 1e-12 * (sing(0) + 1e-300) || sing(1) <= 1e-300) {
        if (degenerate) *degenerate = true;
        t.translation = cd - cs;
        return t;
    }

    Eigen::Matrix3d r = svd.matrixV() * svd.matrixU().transpose();
    if (r.determinant() < 0.0) {
        Eigen::Matrix3d v = svd.matrixV();
        v.col(2) *= -1.0;
        r = v * svd.matrixU().transpose();
    }
    t.rotation = r;
    t.translation = cd - r * cs;
    return t;
}

}  // namespace deltamap
