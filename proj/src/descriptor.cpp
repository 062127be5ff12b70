#include "deltamap/descriptor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "deltamap/common.hpp"

namespace deltamap {

namespace {

// Linear-interpolation binning: mass splits between the two nearest bin
// centers, so a small motion of a sample moves the histogram smoothly.
void soft_bin(std::vector<KahanSum>& bins, double t01) {
    const int n = static_cast<int>(bins.size());
    const double x = std::clamp(t01, 0.0, 1.0) * n - 0.5;
    const int b0 = static_cast<int>(std::floor(x));
    const double frac = x - b0;
    const int lo = std::clamp(b0, 0, n - 1);
    const int hi = std::clamp(b0 + 1, 0, n - 1);
    bins[static_cast<size_t>(lo)].add(1.0 - frac);
    bins[static_cast<size_t>(hi)].add(frac);
}

}  // namespace

Descriptor describe(const Segment& segment, const DescriptorParams& params,
                    const std::optional<CountContext>& counts) {
    require(params.radial_bins >= 1 && params.angle_bins >= 1 &&
                params.radial_bins + params.angle_bins == kDescriptorDim - 4,
            "describe: bin counts must total 12");
    const std::vector<Point3>& pts = segment.cloud.points;
    require(pts.size() >= 10, "describe: segment needs at least 10 points");

    const size_t n = pts.size();
    KahanSum cx, cy, cz;
    for (const Point3& p : pts) {
        cx.add(p.x());
        cy.add(p.y());
        cz.add(p.z());
    }
    const Point3 c(cx.value() / static_cast<double>(n),
                   cy.value() / static_cast<double>(n),
                   cz.value() / static_cast<double>(n));

    // Covariance accumulated entrywise with compensation.
    std::array<KahanSum, 6> cov_acc;  // xx xy xz yy yz zz
    KahanSum r2_acc;
    std::vector<double> radii(n);
    double r_max = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d q = pts[i] - c;
        cov_acc[0].add(q.x() * q.x());
        cov_acc[1].add(q.x() * q.y());
        cov_acc[2].add(q.x() * q.z());
        cov_acc[3].add(q.y() * q.y());
        cov_acc[4].add(q.y() * q.z());
        cov_acc[5].add(q.z() * q.z());
        const double r2 = q.squaredNorm();
        r2_acc.add(r2);
        radii[i] = std::sqrt(r2);
        r_max = std::max(r_max, radii[i]);
    }
    Eigen::Matrix3d cov;
    cov << cov_acc[0].value(), cov_acc[1].value(), cov_acc[2].value(),
        cov_acc[1].value(), cov_acc[3].value(), cov_acc[4].value(),
        cov_acc[2].value(), cov_acc[4].value(), cov_acc[5].value();
    cov /= static_cast<double>(n);

    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    // ascending from the solver; l1 >= l2 >= l3 wanted
    const double l1 = std::max(eig.eigenvalues()(2), 0.0);
    const double l2 = std::max(eig.eigenvalues()(1), 0.0);
    const double l3 = std::max(eig.eigenvalues()(0), 0.0);
    const Eigen::Vector3d axis = eig.eigenvectors().col(2);

    double scale = params.scale == DescriptorParams::Scale::RmsRadius
                       ? std::sqrt(r2_acc.value() / static_cast<double>(n))
                       : r_max;
    if (scale < 1e-12) scale = 1.0;  // all points coincide

    std::vector<KahanSum> radial(static_cast<size_t>(params.radial_bins));
    for (size_t i = 0; i < n; ++i) soft_bin(radial, radii[i] / scale / 2.0);

    std::vector<KahanSum> angular(static_cast<size_t>(params.angle_bins));
    KahanSum ang_mass;
    for (size_t i = 0; i < n; ++i) {
        if (radii[i] < 1e-12) continue;  // no direction at the centroid
        const double cosang =
            std::clamp(std::abs((pts[i] - c).dot(axis)) / radii[i], 0.0, 1.0);
        soft_bin(angular, std::acos(cosang) / (kPi / 2.0));
        ang_mass.add(1.0);
    }

    Descriptor out;
    int slot = 0;
    for (KahanSum& b : radial)
        out.values(slot++) = b.value() / static_cast<double>(n);

    // Ratios of a rank-deficient covariance are noise; pin them.
    const double tiny = 1e-12 * std::max(l1, 1e-300);
    out.values(slot++) = l1 <= 1e-300 ? 1.0 : l2 / l1;
    out.values(slot++) = l1 <= 1e-300 ? 1.0 : l3 / l1;
    out.values(slot++) = l2 <= tiny ? 1.0 : l3 / l2;

    const double am = ang_mass.value();
    for (KahanSum& b : angular)
        out.values(slot++) = am > 0.0 ? b.value() / am : 0.0;

    double count_slot = 0.5;
    if (counts) {
        const double span = counts->hi - counts->lo;
        if (span > 1e-12)
            count_slot = std::clamp(
                (std::log1p(static_cast<double>(n)) - counts->lo) / span, 0.0,
                1.0);
    }
    out.values(slot++) = count_slot;

    out.values /= out.values.norm();
    return out;
}

std::vector<DescribedObject> describe_all(const std::vector<Segment>& segments,
                                          const DescriptorParams& params) {
    std::string failures;
    for (size_t i = 0; i < segments.size(); ++i)
        if (segments[i].cloud.points.size() < 10)
            failures += (failures.empty() ? "" : ", ") + std::to_string(i);
    if (!failures.empty())
        throw std::invalid_argument(
            "describe_all: segments too small at indices " + failures);

    std::optional<CountContext> ctx;
    if (!segments.empty()) {
        CountContext c;
        c.lo = std::numeric_limits<double>::max();
        c.hi = std::numeric_limits<double>::lowest();
        for (const Segment& s : segments) {
            const double l =
                std::log1p(static_cast<double>(s.cloud.points.size()));
            c.lo = std::min(c.lo, l);
            c.hi = std::max(c.hi, l);
        }
        ctx = c;
    }

    std::vector<DescribedObject> out;
    out.reserve(segments.size());
    for (const Segment& s : segments)
        out.push_back(DescribedObject{s, describe(s, params, ctx)});
    return out;
}

void export_descriptors(const std::vector<DescribedObject>& objects,
                        const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os)
        throw std::runtime_error("export_descriptors: cannot open " +
                                 path.string());
    char buf[64];
    for (const DescribedObject& o : objects) {
        os << o.segment.id;
        for (int k = 0; k < kDescriptorDim; ++k) {
            std::snprintf(buf, sizeof(buf), " %.17g", o.descriptor.values(k));
            os << buf;
        }
        os << '\n';
    }
    if (!os)
        throw std::runtime_error("export_descriptors: write failed for " +
                                 path.string());
}

std::vector<std::pair<uint32_t, Descriptor>> import_descriptors(
    const std::filesystem::path& path, const std::vector<uint32_t>* valid_ids) {
    std::ifstream is(path);
    if (!is)
        throw std::runtime_error("import_descriptors: cannot open " +
                                 path.string());
    std::vector<std::pair<uint32_t, Descriptor>> out;
    std::string line;
    size_t row = 0;
    while (std::getline(is, line)) {
        ++row;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ss(line);
        uint64_t id;
        if (!(ss >> id))
            throw std::runtime_error("import_descriptors: bad id at row " +
                                     std::to_string(row));
        Descriptor d;
        int k = 0;
        double v;
        while (ss >> v) {
            if (k >= kDescriptorDim) ++k;  // just count the overflow
            else d.values(k++) = v;
        }
        if (k != kDescriptorDim)
            throw std::runtime_error(
                "import_descriptors: row " + std::to_string(row) + " has " +
                std::to_string(k) + " values, expected " +
                std::to_string(kDescriptorDim));
        if (!d.values.allFinite())
            throw std::runtime_error("import_descriptors: non-finite value at row " +
                                     std::to_string(row));
        const double norm = d.values.norm();
        if (norm <= 0.0)
            throw std::runtime_error("import_descriptors: zero descriptor at row " +
                                     std::to_string(row));
        d.values /= norm;
        if (valid_ids &&
            std::find(valid_ids->begin(), valid_ids->end(),
                      static_cast<uint32_t>(id)) == valid_ids->end())
            throw std::runtime_error("import_descriptors: unknown segment id " +
                                     std::to_string(id) + " at row " +
                                     std::to_string(row));
        out.emplace_back(static_cast<uint32_t>(id), d);
    }
    return out;
}

}  // namespace deltamap
