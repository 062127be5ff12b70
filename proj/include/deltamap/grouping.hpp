/*
 * Cross-mission instance grouping: K-means over descriptors with an elbow
 * rule for K, per-cluster scatter confidence, correspondence assignment by
 * weighted physical/descriptor distance with the odd-count rule, and rigid
 * registration of matched pairs.
 */
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "deltamap/descriptor.hpp"
#include "deltamap/geometry.hpp"

namespace deltamap {

struct DescriptorClustering {
    int k = 1;
    std::vector<int> assignments;  // one per descriptor
    std::vector<DescriptorVector> centroids;
    double wcss = 0.0;
    std::vector<double> wcss_history;  // per Lloyd iteration, non-increasing
};

// Lloyd's algorithm with k-means++ seeding from `seed`. Runs to an
// assignment fixpoint or 100 iterations; an emptied cluster is reseeded at
// the point farthest from its assigned centroid. Centroids returned are the
// exact means of the final assignment.
DescriptorClustering kmeans(const std::vector<DescriptorVector>& descriptors,
                            int k, uint64_t seed);

struct ElbowResult {
    int k_star = 1;
    std::vector<double> wcss_curve;  // index i holds best WCSS for K = i+1
    bool degenerate = false;  // fewer than 3 candidate K values; K forced to 1
};

// Best-of-5-seeds K-means for each K in 1..k_max; the knee is the interior K
// whose curve point lies farthest from the chord joining the curve's ends.
ElbowResult select_k_elbow(const std::vector<DescriptorVector>& descriptors,
                           int k_max, uint64_t seed = 1);

struct ClusterConfidence {
    std::vector<double> mean_distance;  // mean member-to-centroid L2, per cluster
    std::vector<double> confidence;     // min-max of mean_distance over clusters
    bool degenerate = false;  // single cluster or flat distances; all zero
};

ClusterConfidence cluster_confidence(const DescriptorClustering& clustering,
                                     const std::vector<DescriptorVector>& descriptors);

// Min/max of raw physical and descriptor distances over a class's candidate
// pairs; fixes the scaling of both terms of the weighted distance.
struct NormContext {
    double p_min = 0.0, p_max = 0.0;
    double d_min = 0.0, d_max = 0.0;
};

NormContext norm_context(const std::vector<double>& physical,
                         const std::vector<double>& descriptor);

struct WeightedDistanceResult {
    double value = 0.0;
    bool p_degenerate = false;  // flat physical range; term contributed 0
    bool d_degenerate = false;
};

// alpha * minmax(centroid distance) + beta * minmax(descriptor L2 distance).
WeightedDistanceResult weighted_distance(const DescribedObject& a,
                                         const DescribedObject& b, double alpha,
                                         double beta, const NormContext& ctx);

struct RegisterResult {
    RigidTransform transform;
    bool degenerate = false;  // covariance rank < 2; identity rotation
    int iterations = 0;
    double rms = 0.0;  // nearest-neighbor residual under the final transform
};

// Rigid transform mapping segment a onto segment b: both clouds centered on
// their centroids, rotation from SVD of the cross-covariance under iterated
// nearest-neighbor pairing, translation from the matched-centroid rule
// t = centroid_b - R * centroid_a. Always returns a proper rotation.
RegisterResult register_pair(const Segment& a, const Segment& b);

struct Correspondence {
    enum class Kind { Moved, Added, Removed };
    Kind kind = Kind::Moved;
    int class_id = 0;
    std::optional<size_t> index_a;  // into objects_a
    std::optional<size_t> index_b;  // into objects_b
    double weighted_dist = 0.0;
    double pair_confidence = 0.0;
    std::optional<RegisterResult> transform;  // moved pairs only
};

struct MatchEntry {
    int class_id = 0;
    uint32_t object_a_id = 0;  // segment ids
    uint32_t object_b_id = 0;
    double confidence = 0.0;  // 1 - minmax(weighted distance) within class
};

struct MatchMatrix {
    std::vector<MatchEntry> entries;
};

struct AssignResult {
    std::vector<Correspondence> correspondences;
    MatchMatrix matrix;
};

// Per descriptor class: candidate pairs are mission-A x mission-B members.
// An odd class first drops the instance with the greatest summed weighted
// distance to all other members (emitted as added/removed); the rest pair
// by minimum total weighted distance, exactly for classes of at most 8
// objects and greedily above that; leftovers become added/removed. Matched
// pairs get a recovered rigid transform. `clustering.assignments` covers
// objects_a followed by objects_b.
AssignResult assign_correspondences(const std::vector<DescribedObject>& objects_a,
                                    const std::vector<DescribedObject>& objects_b,
                                    const DescriptorClustering& clustering,
                                    double alpha = 0.5, double beta = 0.5);

}  // namespace deltamap
