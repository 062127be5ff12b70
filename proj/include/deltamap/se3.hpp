/*
 * SE(3) tangent-space math for registration and pose-graph optimization.
 * Twists are ordered (rho, phi): translation part first, rotation last.
 */
#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "deltamap/geometry.hpp"

namespace deltamap {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

inline Eigen::Matrix3d so3_hat(const Eigen::Vector3d& w) {
    Eigen::Matrix3d m;
    m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
    return m;
}

inline Eigen::Matrix3d so3_exp(const Eigen::Vector3d& w) {
    const double theta = w.norm();
    const Eigen::Matrix3d W = so3_hat(w);
    if (theta < 1e-10) return Eigen::Matrix3d::Identity() + W + 0.5 * W * W;
    const double a = std::sin(theta) / theta;
    const double b = (1.0 - std::cos(theta)) / (theta * theta);
    return Eigen::Matrix3d::Identity() + a * W + b * W * W;
}

// Rotation vector with angle in [0, pi]. Quaternion-based, stable near both
// 0 and pi.
inline Eigen::Vector3d so3_log(const Eigen::Matrix3d& R) {
    Eigen::Quaterniond q(R);
    q.normalize();
    if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    const Eigen::Vector3d v = q.vec();
    const double n = v.norm();
    if (n < 1e-12) return 2.0 * v;
    const double theta = 2.0 * std::atan2(n, q.w());
    return v * (theta / n);
}

// Left Jacobian of SO(3); maps the translation part of a twist to the
// translation of its exponential.
inline Eigen::Matrix3d so3_left_jacobian(const Eigen::Vector3d& w) {
    const double theta = w.norm();
    const Eigen::Matrix3d W = so3_hat(w);
    if (theta < 1e-6)
        return Eigen::Matrix3d::Identity() + 0.5 * W + W * W / 6.0;
    const double t2 = theta * theta;
    const double a = (1.0 - std::cos(theta)) / t2;
    const double b = (theta - std::sin(theta)) / (t2 * theta);
    return Eigen::Matrix3d::Identity() + a * W + b * W * W;
}

inline Eigen::Matrix3d so3_left_jacobian_inv(const Eigen::Vector3d& w) {
    const double theta = w.norm();
    const Eigen::Matrix3d W = so3_hat(w);
    if (theta < 1e-6)
        return Eigen::Matrix3d::Identity() - 0.5 * W + W * W / 12.0;
    const double k =
        (1.0 - 0.5 * theta / std::tan(0.5 * theta)) / (theta * theta);
    return Eigen::Matrix3d::Identity() - 0.5 * W + k * W * W;
}

inline RigidTransform se3_exp(const Vector6d& xi) {
    const Eigen::Vector3d rho = xi.head<3>();
    const Eigen::Vector3d phi = xi.tail<3>();
    RigidTransform t;
    t.rotation = so3_exp(phi);
    t.translation = so3_left_jacobian(phi) * rho;
    return t;
}

inline Vector6d se3_log(const RigidTransform& t) {
    const Eigen::Vector3d phi = so3_log(t.rotation);
    Vector6d xi;
    xi.tail<3>() = phi;
    xi.head<3>() = so3_left_jacobian_inv(phi) * t.translation;
    return xi;
}

// Adj(T) * xi = (R rho + t x (R phi), R phi)
inline Matrix6d se3_adjoint(const RigidTransform& t) {
    Matrix6d a = Matrix6d::Zero();
    a.topLeftCorner<3, 3>() = t.rotation;
    a.topRightCorner<3, 3>() = so3_hat(t.translation) * t.rotation;
    a.bottomRightCorner<3, 3>() = t.rotation;
    return a;
}

inline Matrix6d se3_ad(const Vector6d& xi) {
    Matrix6d a = Matrix6d::Zero();
    const Eigen::Matrix3d P = so3_hat(xi.tail<3>());
    a.topLeftCorner<3, 3>() = P;
    a.topRightCorner<3, 3>() = so3_hat(xi.head<3>());
    a.bottomRightCorner<3, 3>() = P;
    return a;
}

// Inverse right Jacobian, second-order series. Accurate for the small
// residual magnitudes a converging graph solve produces.
inline Matrix6d se3_right_jacobian_inv(const Vector6d& xi) {
    const Matrix6d ad = se3_ad(xi);
    return Matrix6d::Identity() + 0.5 * ad + (1.0 / 12.0) * ad * ad;
}

}  // namespace deltamap
