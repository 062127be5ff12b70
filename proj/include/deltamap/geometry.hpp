/*
 * Core geometric types shared by every stage: points, rigid transforms,
 * point clouds with optional per-point object labels, axis-aligned boxes,
 * and the basic cloud filters (transform, crop, voxel downsample).
 */
#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cstdint>
#include <optional>
#include <vector>

#include "deltamap/common.hpp"

namespace deltamap {

using Point3 = Eigen::Vector3d;

// Rigid transform (rotation + translation). Rotation must stay orthonormal
// with det +1; is_valid() checks this to 1e-9.
struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    static RigidTransform identity() { return {}; }

    static RigidTransform from_quaternion(const Eigen::Quaterniond& q,
                                          const Eigen::Vector3d& t) {
        RigidTransform T;
        T.rotation = q.normalized().toRotationMatrix();
        T.translation = t;
        return T;
    }

    Eigen::Quaterniond quaternion() const {
        return Eigen::Quaterniond(rotation);
    }

    Point3 apply(const Point3& p) const { return rotation * p + translation; }

    RigidTransform compose(const RigidTransform& other) const {
        // (this ∘ other)(p) = this(other(p))
        RigidTransform out;
        out.rotation = rotation * other.rotation;
        out.translation = rotation * other.translation + translation;
        return out;
    }

    RigidTransform inverse() const {
        RigidTransform out;
        out.rotation = rotation.transpose();
        out.translation = -(rotation.transpose() * translation);
        return out;
    }

    bool is_valid(double tol = 1e-9) const {
        const Eigen::Matrix3d err =
            rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
        if (err.cwiseAbs().maxCoeff() > tol) return false;
        if (std::abs(rotation.determinant() - 1.0) > tol) return false;
        return translation.allFinite();
    }
};

inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    return a.compose(b);
}

// Point cloud: positions plus an optional label channel (non-negative object
// ids, same length as points) and an optional sensor origin. The origin is
// required for occupancy insertion; it travels with the cloud through
// transforms.
struct PointCloud {
    std::vector<Point3> points;
    std::vector<uint32_t> labels;   // empty, or one id per point
    std::optional<Point3> origin;

    size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    bool has_labels() const { return !labels.empty(); }

    void check_invariants() const {
        require(labels.empty() || labels.size() == points.size(),
                "PointCloud: label channel length mismatch");
        for (const auto& p : points)
            require(p.allFinite(), "PointCloud: non-finite coordinate");
    }

    void append(const PointCloud& other) {
        // Label channels must agree: either both carry labels or neither.
        if (points.empty() && labels.empty() && other.has_labels())
            labels.reserve(other.size());
        points.insert(points.end(), other.points.begin(), other.points.end());
        if (has_labels() || other.has_labels()) {
            require(labels.size() + other.labels.size() == points.size(),
                    "PointCloud::append: cannot mix labeled and unlabeled clouds");
            labels.insert(labels.end(), other.labels.begin(), other.labels.end());
        }
    }
};

struct Aabb {
    Point3 min = Point3::Zero();
    Point3 max = Point3::Zero();

    bool valid() const { return (min.array() <= max.array()).all(); }
    bool contains(const Point3& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    Point3 center() const { return 0.5 * (min + max); }
    Point3 extent() const { return max - min; }
};

// Applies R·p + t to every point; labels copied, origin transformed too.
PointCloud transform_cloud(const PointCloud& cloud, const RigidTransform& T);

// Keeps exactly the points with box.min <= p <= box.max (componentwise).
PointCloud crop_box(const PointCloud& cloud, const Aabb& box);

// One output point per occupied voxel, at the centroid of the voxel's
// points. Labels: majority label of the voxel's points (ties -> smaller id).
// The origin is carried through unchanged.
PointCloud voxel_downsample(const PointCloud& cloud, double leaf);

}  // namespace deltamap
