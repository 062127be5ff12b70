/*
 * Point cloud file I/O.
 *
 * Supported formats:
 *   - PLY, ascii and binary_little_endian (vertex props x y z, optional
 *     scalar `label`; unknown vertex properties are skipped on read)
 *   - PCD, ascii (FIELDS x y z [label])
 *   - XYZ text: `x y z [label]` per line, `#` comments
 *
 * The sensor origin, when present, is carried in a `sensor_origin x y z`
 * comment so scan clouds survive a save/load round trip intact.
 */
#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "deltamap/geometry.hpp"

namespace deltamap {

enum class CloudFormat { PlyAscii, PlyBinary, Pcd, Xyz };

// Picks a format from the file extension (.ply -> PlyBinary, .pcd, .xyz/.txt).
CloudFormat format_from_path(const std::filesystem::path& path);

struct CloudIoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Throws CloudIoError with file/line (or byte offset) context on malformed
// input, and on any non-finite coordinate.
PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format);
PointCloud load_cloud(const std::filesystem::path& path);  // sniffs format

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                CloudFormat format);
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path);

}  // namespace deltamap
