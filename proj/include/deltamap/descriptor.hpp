/*
 * 16-dimensional rigid-motion-invariant shape descriptor per segment, built
 * only from quantities that survive any SE(3) transform of the cloud:
 * slots 0-7   soft histogram of centroid distances scaled by RMS radius,
 * slots 8-10  sorted covariance eigenvalue ratios (l2/l1, l3/l1, l3/l2),
 * slots 11-14 soft histogram of angles to the principal axis, folded to
 *             [0, pi/2],
 * slot  15    log1p point count, min-max scaled over the batch.
 * The result is L2-normalized. A file hook imports externally computed
 * descriptors of the same shape.
 */
#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "deltamap/segmentation.hpp"

namespace deltamap {

inline constexpr int kDescriptorDim = 16;
using DescriptorVector = Eigen::Matrix<double, kDescriptorDim, 1>;

struct Descriptor {
    DescriptorVector values = DescriptorVector::Zero();
};

struct DescribedObject {
    Segment segment;
    Descriptor descriptor;
};

struct DescriptorParams {
    int radial_bins = 8;
    int angle_bins = 4;
    enum class Scale { RmsRadius, MaxRadius };
    Scale scale = Scale::RmsRadius;
};

// Batch min/max of log1p(point count); fixes the count slot's scaling for
// one run so descriptors within the run are comparable.
struct CountContext {
    double lo = 0.0;
    double hi = 0.0;
};

// Descriptor of one segment (>= 10 points). Without a count context the
// count slot sits at its midpoint 0.5. Accumulations are compensated, so a
// permutation of the input moves the result by < 1e-9.
Descriptor describe(const Segment& segment, const DescriptorParams& params = {},
                    const std::optional<CountContext>& counts = std::nullopt);

// Order-preserving batch describe. Derives the count context from this
// batch. Throws a single error listing every failing segment index.
std::vector<DescribedObject> describe_all(const std::vector<Segment>& segments,
                                          const DescriptorParams& params = {});

// Text rows "segment_id v1 ... v16".
void export_descriptors(const std::vector<DescribedObject>& objects,
                        const std::filesystem::path& path);

// Parses and L2-normalizes rows. When valid_ids is given, a row naming an
// id outside it is an error (reported with its row number).
std::vector<std::pair<uint32_t, Descriptor>> import_descriptors(
    const std::filesystem::path& path,
    const std::vector<uint32_t>* valid_ids = nullptr);

}  // namespace deltamap
