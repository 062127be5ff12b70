#include "deltamap/cloud_io.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

namespace deltamap {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
    throw CloudIoError(path.string() + ": " + what);
}

[[noreturn]] void fail_line(const std::filesystem::path& path, size_t line,
                            const std::string& what) {
    fail(path, "line " + std::to_string(line) + ": " + what);
}

std::string fmt_double(double v) {
    char buf[32];
    snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

bool parse_origin_comment(const std::string& line, Point3& origin) {
    // matches "... sensor_origin x y z" in a comment line
    const auto pos = line.find("sensor_origin");
    if (pos == std::string::npos) return false;
    std::istringstream ss(line.substr(pos + std::strlen("sensor_origin")));
    double x, y, z;
    if (!(ss >> x >> y >> z)) return false;
    origin = Point3(x, y, z);
    return true;
}

// ---------------------------------------------------------------- PLY read

enum class PlyType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

size_t ply_type_size(PlyType t) {
    switch (t) {
        case PlyType::Int8:
        case PlyType::UInt8: return 1;
        case PlyType::Int16:
        case PlyType::UInt16: return 2;
        case PlyType::Int32:
        case PlyType::UInt32:
        case PlyType::Float32: return 4;
        case PlyType::Float64: return 8;
    }
    return 0;
}

bool ply_parse_type(const std::string& s, PlyType& out) {
    if (s == "char" || s == "int8") out = PlyType::Int8;
    else if (s == "uchar" || s == "uint8") out = PlyType::UInt8;
    else if (s == "short" || s == "int16") out = PlyType::Int16;
    else if (s == "ushort" || s == "uint16") out = PlyType::UInt16;
    else if (s == "int" || s == "int32") out = PlyType::Int32;
    else if (s == "uint" || s == "uint32") out = PlyType::UInt32;
    else if (s == "float" || s == "float32") out = PlyType::Float32;
    else if (s == "double" || s == "float64") out = PlyType::Float64;
    else return false;
    return true;
}

struct PlyProperty {
    std::string name;
    PlyType type;
};

struct PlyHeader {
    bool binary = false;
    size_t vertex_count = 0;
    std::vector<PlyProperty> vertex_props;
    std::optional<Point3> origin;
    size_t header_lines = 0;
};

PlyHeader read_ply_header(std::istream& in, const std::filesystem::path& path) {
    PlyHeader h;
    std::string line;
    size_t lineno = 0;

    auto next_line = [&]() -> bool {
        if (!std::getline(in, line)) return false;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        ++lineno;
        return true;
    };

    if (!next_line() || line != "ply") fail(path, "not a PLY file (missing 'ply' magic)");

    std::string current_element;
    bool format_seen = false;
    while (next_line()) {
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "comment" || tok == "obj_info") {
            Point3 o;
            if (parse_origin_comment(line, o)) h.origin = o;
        } else if (tok == "format") {
            std::string fmt, ver;
            ss >> fmt >> ver;
            if (fmt == "ascii") h.binary = false;
            else if (fmt == "binary_little_endian") h.binary = true;
            else fail_line(path, lineno, "unsupported PLY format '" + fmt + "'");
            format_seen = true;
        } else if (tok == "element") {
            std::string name;
            size_t count = 0;
            ss >> name >> count;
            current_element = name;
            if (name == "vertex") h.vertex_count = count;
            else if (count > 0)
                fail_line(path, lineno, "unsupported non-vertex element '" + name + "'");
        } else if (tok == "property") {
            if (current_element != "vertex") continue;
            std::string type_s, name;
            ss >> type_s;
            if (type_s == "list")
                fail_line(path, lineno, "list properties not supported on vertices");
            ss >> name;
            PlyType t;
            if (!ply_parse_type(type_s, t))
                fail_line(path, lineno, "unknown property type '" + type_s + "'");
            h.vertex_props.push_back({name, t});
        } else if (tok == "end_header") {
            if (!format_seen) fail(path, "PLY header missing format line");
            h.header_lines = lineno;
            return h;
        }
    }
    fail(path, "PLY header missing end_header");
}

double decode_ply_value(const char* bytes, PlyType t) {
    switch (t) {
        case PlyType::Int8: return static_cast<double>(*reinterpret_cast<const int8_t*>(bytes));
        case PlyType::UInt8: return static_cast<double>(*reinterpret_cast<const uint8_t*>(bytes));
        case PlyType::Int16: { int16_t v; std::memcpy(&v, bytes, 2); return v; }
        case PlyType::UInt16: { uint16_t v; std::memcpy(&v, bytes, 2); return v; }
        case PlyType::Int32: { int32_t v; std::memcpy(&v, bytes, 4); return v; }
        case PlyType::UInt32: { uint32_t v; std::memcpy(&v, bytes, 4); return v; }
        case PlyType::Float32: { float v; std::memcpy(&v, bytes, 4); return v; }
        case PlyType::Float64: { double v; std::memcpy(&v, bytes, 8); return v; }
    }
    return 0.0;
}

PointCloud read_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(path, "cannot open file");
    PlyHeader h = read_ply_header(in, path);

    int ix = -1, iy = -1, iz = -1, ilabel = -1;
    for (size_t i = 0; i < h.vertex_props.size(); ++i) {
        const auto& p = h.vertex_props[i];
        if (p.name == "x") ix = static_cast<int>(i);
        else if (p.name == "y") iy = static_cast<int>(i);
        else if (p.name == "z") iz = static_cast<int>(i);
        else if (p.name == "label") ilabel = static_cast<int>(i);
    }
    if (ix < 0 || iy < 0 || iz < 0) fail(path, "PLY vertex element lacks x/y/z");

    PointCloud cloud;
    cloud.origin = h.origin;
    cloud.points.reserve(h.vertex_count);
    if (ilabel >= 0) cloud.labels.reserve(h.vertex_count);

    if (h.binary) {
        size_t record_size = 0;
        std::vector<size_t> offsets(h.vertex_props.size());
        for (size_t i = 0; i < h.vertex_props.size(); ++i) {
            offsets[i] = record_size;
            record_size += ply_type_size(h.vertex_props[i].type);
        }
        std::vector<char> rec(record_size);
        for (size_t v = 0; v < h.vertex_count; ++v) {
            if (!in.read(rec.data(), static_cast<std::streamsize>(record_size)))
                fail(path, "truncated binary body at vertex " + std::to_string(v) +
                               " (byte offset " + std::to_string(in.tellg()) + ")");
            const double x = decode_ply_value(rec.data() + offsets[ix], h.vertex_props[ix].type);
            const double y = decode_ply_value(rec.data() + offsets[iy], h.vertex_props[iy].type);
            const double z = decode_ply_value(rec.data() + offsets[iz], h.vertex_props[iz].type);
            if (!is_finite(x) || !is_finite(y) || !is_finite(z))
                fail(path, "non-finite coordinate at vertex " + std::to_string(v));
            cloud.points.emplace_back(x, y, z);
            if (ilabel >= 0) {
                const double l = decode_ply_value(rec.data() + offsets[ilabel],
                                                  h.vertex_props[ilabel].type);
                if (l < 0) fail(path, "negative label at vertex " + std::to_string(v));
                cloud.labels.push_back(static_cast<uint32_t>(l));
            }
        }
    } else {
        std::string line;
        size_t lineno = h.header_lines;
        for (size_t v = 0; v < h.vertex_count; ++v) {
            if (!std::getline(in, line))
                fail(path, "truncated ascii body: expected " +
                               std::to_string(h.vertex_count) + " vertices, got " +
                               std::to_string(v));
            ++lineno;
            std::istringstream ss(line);
            std::vector<double> vals(h.vertex_props.size());
            for (size_t i = 0; i < h.vertex_props.size(); ++i) {
                if (!(ss >> vals[i]))
                    fail_line(path, lineno, "malformed vertex record");
            }
            if (!is_finite(vals[ix]) || !is_finite(vals[iy]) || !is_finite(vals[iz]))
                fail_line(path, lineno, "non-finite coordinate");
            cloud.points.emplace_back(vals[ix], vals[iy], vals[iz]);
            if (ilabel >= 0) {
                if (vals[ilabel] < 0) fail_line(path, lineno, "negative label");
                cloud.labels.push_back(static_cast<uint32_t>(vals[ilabel]));
            }
        }
    }
    return cloud;
}

void write_ply(const PointCloud& cloud, const std::filesystem::path& path, bool binary) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(path, "cannot open file for writing");
    out << "ply\n";
    out << "format " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n";
    if (cloud.origin)
        out << "comment sensor_origin " << fmt_double(cloud.origin->x()) << " "
            << fmt_double(cloud.origin->y()) << " " << fmt_double(cloud.origin->z())
            << "\n";
    out << "element vertex " << cloud.size() << "\n";
    out << "property double x\nproperty double y\nproperty double z\n";
    if (cloud.has_labels()) out << "property uint label\n";
    out << "end_header\n";

    if (binary) {
        for (size_t i = 0; i < cloud.size(); ++i) {
            const Point3& p = cloud.points[i];
            double xyz[3] = {p.x(), p.y(), p.z()};
            out.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
            if (cloud.has_labels()) {
                const uint32_t l = cloud.labels[i];
                out.write(reinterpret_cast<const char*>(&l), sizeof(l));
            }
        }
    } else {
        for (size_t i = 0; i < cloud.size(); ++i) {
            const Point3& p = cloud.points[i];
            out << fmt_double(p.x()) << " " << fmt_double(p.y()) << " "
                << fmt_double(p.z());
            if (cloud.has_labels()) out << " " << cloud.labels[i];
            out << "\n";
        }
    }
    if (!out) fail(path, "write failure");
}

// ---------------------------------------------------------------- PCD

PointCloud read_pcd(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(path, "cannot open file");

    std::string line;
    size_t lineno = 0;
    std::vector<std::string> fields;
    size_t count = 0;
    bool data_seen = false;
    std::optional<Point3> origin;

    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            Point3 o;
            if (parse_origin_comment(line, o)) origin = o;
            continue;
        }
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "FIELDS") {
            std::string f;
            while (ss >> f) fields.push_back(f);
        } else if (key == "POINTS") {
            ss >> count;
        } else if (key == "DATA") {
            std::string mode;
            ss >> mode;
            if (mode != "ascii") fail_line(path, lineno, "only DATA ascii is supported");
            data_seen = true;
            break;
        }
        // VERSION / SIZE / TYPE / COUNT / WIDTH / HEIGHT / VIEWPOINT: ignored
    }
    if (!data_seen) fail(path, "PCD header missing DATA line");

    int ix = -1, iy = -1, iz = -1, ilabel = -1;
    for (size_t i = 0; i < fields.size(); ++i) {
        if (fields[i] == "x") ix = static_cast<int>(i);
        else if (fields[i] == "y") iy = static_cast<int>(i);
        else if (fields[i] == "z") iz = static_cast<int>(i);
        else if (fields[i] == "label") ilabel = static_cast<int>(i);
    }
    if (ix < 0 || iy < 0 || iz < 0) fail(path, "PCD FIELDS lacks x/y/z");

    PointCloud cloud;
    cloud.origin = origin;
    cloud.points.reserve(count);
    for (size_t v = 0; v < count; ++v) {
        if (!std::getline(in, line))
            fail(path, "truncated body: expected " + std::to_string(count) +
                           " points, got " + std::to_string(v));
        ++lineno;
        std::istringstream ss(line);
        std::vector<double> vals(fields.size());
        for (size_t i = 0; i < fields.size(); ++i)
            if (!(ss >> vals[i])) fail_line(path, lineno, "malformed point record");
        if (!is_finite(vals[ix]) || !is_finite(vals[iy]) || !is_finite(vals[iz]))
            fail_line(path, lineno, "non-finite coordinate");
        cloud.points.emplace_back(vals[ix], vals[iy], vals[iz]);
        if (ilabel >= 0) {
            if (vals[ilabel] < 0) fail_line(path, lineno, "negative label");
            cloud.labels.push_back(static_cast<uint32_t>(vals[ilabel]));
        }
    }
    return cloud;
}

void write_pcd(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(path, "cannot open file for writing");
    const bool labeled = cloud.has_labels();
    out << "# .PCD v0.7 - Point Cloud Data file format\n";
    if (cloud.origin)
        out << "# sensor_origin " << fmt_double(cloud.origin->x()) << " "
            << fmt_double(cloud.origin->y()) << " " << fmt_double(cloud.origin->z())
            << "\n";
    out << "VERSION 0.7\n";
    out << "FIELDS x y z" << (labeled ? " label" : "") << "\n";
    out << "SIZE 8 8 8" << (labeled ? " 4" : "") << "\n";
    out << "TYPE F F F" << (labeled ? " U" : "") << "\n";
    out << "COUNT 1 1 1" << (labeled ? " 1" : "") << "\n";
    out << "WIDTH " << cloud.size() << "\n";
    out << "HEIGHT 1\n";
    if (cloud.origin)
        out << "VIEWPOINT " << fmt_double(cloud.origin->x()) << " "
            << fmt_double(cloud.origin->y()) << " " << fmt_double(cloud.origin->z())
            << " 1 0 0 0\n";
    else
        out << "VIEWPOINT 0 0 0 1 0 0 0\n";
    out << "POINTS " << cloud.size() << "\n";
    out << "DATA ascii\n";
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Point3& p = cloud.points[i];
        out << fmt_double(p.x()) << " " << fmt_double(p.y()) << " " << fmt_double(p.z());
        if (labeled) out << " " << cloud.labels[i];
        out << "\n";
    }
    if (!out) fail(path, "write failure");
}

// ---------------------------------------------------------------- XYZ text

PointCloud read_xyz(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(path, "cannot open file");
    PointCloud cloud;
    std::string line;
    size_t lineno = 0;
    std::optional<bool> labeled;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            Point3 o;
            if (parse_origin_comment(line, o)) cloud.origin = o;
            continue;
        }
        std::istringstream ss(line);
        double x, y, z;
        if (!(ss >> x >> y >> z)) fail_line(path, lineno, "malformed record");
        if (!is_finite(x) || !is_finite(y) || !is_finite(z))
            fail_line(path, lineno, "non-finite coordinate");
        double label;
        const bool has_label = static_cast<bool>(ss >> label);
        if (!labeled.has_value()) labeled = has_label;
        else if (*labeled != has_label)
            fail_line(path, lineno, "inconsistent column count");
        cloud.points.emplace_back(x, y, z);
        if (has_label) {
            if (label < 0) fail_line(path, lineno, "negative label");
            cloud.labels.push_back(static_cast<uint32_t>(label));
        }
    }
    return cloud;
}

void write_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(path, "cannot open file for writing");
    if (cloud.origin)
        out << "# sensor_origin " << fmt_double(cloud.origin->x()) << " "
            << fmt_double(cloud.origin->y()) << " " << fmt_double(cloud.origin->z())
            << "\n";
    for (size_t i = 0; i < cloud.size(); ++i) {
        const Point3& p = cloud.points[i];
        out << fmt_double(p.x()) << " " << fmt_double(p.y()) << " " << fmt_double(p.z());
        if (cloud.has_labels()) out << " " << cloud.labels[i];
        out << "\n";
    }
    if (!out) fail(path, "write failure");
}

}  // namespace

CloudFormat format_from_path(const std::filesystem::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".ply") return CloudFormat::PlyBinary;
    if (ext == ".pcd") return CloudFormat::Pcd;
    if (ext == ".xyz" || ext == ".txt") return CloudFormat::Xyz;
    throw CloudIoError(path.string() + ": cannot infer cloud format from extension");
}

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format) {
    if (!std::filesystem::exists(path))
        throw CloudIoError(path.string() + ": file does not exist");
    switch (format) {
        case CloudFormat::PlyAscii:
        case CloudFormat::PlyBinary:
            return read_ply(path);  // reader handles both encodings
        case CloudFormat::Pcd:
            return read_pcd(path);
        case CloudFormat::Xyz:
            return read_xyz(path);
    }
    throw CloudIoError("unreachable");
}

PointCloud load_cloud(const std::filesystem::path& path) {
    return load_cloud(path, format_from_path(path));
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                CloudFormat format) {
    cloud.check_invariants();
    switch (format) {
        case CloudFormat::PlyAscii: write_ply(cloud, path, false); return;
        case CloudFormat::PlyBinary: write_ply(cloud, path, true); return;
        case CloudFormat::Pcd: write_pcd(cloud, path); return;
        case CloudFormat::Xyz: write_xyz(cloud, path); return;
    }
    throw CloudIoError("unreachable");
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
    save_cloud(cloud, path, format_from_path(path));
}

}  // namespace deltamap
