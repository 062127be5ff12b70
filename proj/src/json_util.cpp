#include "deltamap/json_util.hpp"

#include <stdexcept>

#include "deltamap/common.hpp"

namespace deltamap {

void reject_unknown_keys(const nlohmann::json& j,
                         std::initializer_list<const char*> allowed,
                         const std::string& where) {
    if (!j.is_object())
        throw std::invalid_argument(where + ": expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (key == a) {
                known = true;
                break;
            }
        if (!known)
            throw std::invalid_argument(where + ": unknown key \"" + key + "\"");
    }
}

Point3 vec3_from_json(const nlohmann::json& j, const std::string& where,
                      bool fill_scalar) {
    if (!j.is_array() || j.empty() || j.size() > 3 ||
        (!fill_scalar && j.size() != 3))
        throw std::invalid_argument(where + ": expected an [x,y,z] array");
    Point3 v;
    for (int i = 0; i < 3; ++i) {
        const auto& e = j[std::min<size_t>(i, j.size() - 1)];
        if (!e.is_number())
            throw std::invalid_argument(where + ": non-numeric component");
        v[i] = e.get<double>();
    }
    require(v.allFinite(), where + ": non-finite component");
    return v;
}

RigidTransform pose_from_json(const nlohmann::json& j, const std::string& where) {
    reject_unknown_keys(j, {"t", "rpy_deg", "q"}, where);
    if (j.contains("rpy_deg") && j.contains("q"))
        throw std::invalid_argument(where + ": give rpy_deg or q, not both");

    RigidTransform out;
    if (j.contains("t")) out.translation = vec3_from_json(j["t"], where + ".t");
    if (j.contains("rpy_deg")) {
        const Point3 rpy = vec3_from_json(j["rpy_deg"], where + ".rpy_deg");
        out.rotation =
            (Eigen::AngleAxisd(deg2rad(rpy.z()), Eigen::Vector3d::UnitZ()) *
             Eigen::AngleAxisd(deg2rad(rpy.y()), Eigen::Vector3d::UnitY()) *
             Eigen::AngleAxisd(deg2rad(rpy.x()), Eigen::Vector3d::UnitX()))
                .toRotationMatrix();
    } else if (j.contains("q")) {
        const auto& q = j["q"];
        if (!q.is_array() || q.size() != 4)
            throw std::invalid_argument(where + ".q: expected [qx,qy,qz,qw]");
        Eigen::Quaterniond quat(q[3].get<double>(), q[0].get<double>(),
                                q[1].get<double>(), q[2].get<double>());
        if (std::abs(quat.norm() - 1.0) > 1e-3)
            throw std::invalid_argument(where + ".q: quaternion is not unit length");
        out.rotation = quat.normalized().toRotationMatrix();
    }
    return out;
}

nlohmann::ordered_json pose_to_json(const RigidTransform& t) {
    const Eigen::Quaterniond q = t.quaternion();
    nlohmann::ordered_json j;
    j["t"] = {t.translation.x(), t.translation.y(), t.translation.z()};
    j["q"] = {q.x(), q.y(), q.z(), q.w()};
    return j;
}

}  // namespace deltamap
