/*
 * Helpers for the declarative JSON files (scenes, change scripts, pipeline
 * configs): strict key checking and the shared pose/vector encodings.
 *
 * Pose encoding: {"t": [x,y,z], "rpy_deg": [roll,pitch,yaw]} or
 * {"t": [x,y,z], "q": [qx,qy,qz,qw]}; both fields optional, identity default.
 */
#pragma once

#include <initializer_list>
#include <string>

#include "json.hpp"

#include "deltamap/geometry.hpp"

namespace deltamap {

// Throws std::invalid_argument naming the first unknown key and `where`.
void reject_unknown_keys(const nlohmann::json& j,
                         std::initializer_list<const char*> allowed,
                         const std::string& where);

// Accepts [x,y,z]; with fill_scalar, [x] and [x,y] extend the last value.
Point3 vec3_from_json(const nlohmann::json& j, const std::string& where,
                      bool fill_scalar = false);

RigidTransform pose_from_json(const nlohmann::json& j, const std::string& where);
nlohmann::ordered_json pose_to_json(const RigidTransform& t);

}  // namespace deltamap
