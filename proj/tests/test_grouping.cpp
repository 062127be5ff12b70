#include <doctest.h>

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include <deltamap/common.hpp>
#include <deltamap/grouping.hpp>

using namespace deltamap;

namespace {

DescriptorVector anchor(int which) {
    DescriptorVector v = DescriptorVector::Zero();
    v[which % kDescriptorDim] = 1.0;
    v[(which + 5) % kDescriptorDim] = 0.5;
    return v.normalized();
}

std::vector<DescriptorVector> blobs(int k, int per, double spread,
                                    CounterRng& rng) {
    std::vector<DescriptorVector> out;
    for (int b = 0; b < k; ++b) {
        for (int i = 0; i < per; ++i) {
            DescriptorVector v = anchor(b);
            for (int d = 0; d < kDescriptorDim; ++d)
                v[d] += spread * rng.next_gaussian();
            out.push_back(v);
        }
    }
    return out;
}

double brute_wcss(const std::vector<DescriptorVector>& xs,
                  const DescriptorClustering& c) {
    KahanSum acc;
    for (size_t i = 0; i < xs.size(); ++i)
        acc.add((xs[i] - c.centroids[static_cast<size_t>(c.assignments[i])])
                    .squaredNorm());
    return acc.value();
}

DescribedObject object_at(const Point3& centroid, const DescriptorVector& d,
                          int mission, uint32_t id) {
    // A small full-rank cloud so pairwise registration is well posed.
    PointCloud cloud;
    for (int i = 0; i < 4; ++i) {
        cloud.points.push_back(centroid + Point3(0.05 * i, 0.0, 0.0));
        cloud.points.push_back(centroid + Point3(0.0, 0.04 * i, 0.01 * i));
        cloud.points.push_back(centroid + Point3(0.01 * i, 0.02, 0.05 * i));
    }
    DescribedObject o;
    o.segment = make_segment(cloud, mission, id);
    o.segment.centroid = centroid;
    o.descriptor.values = d;
    return o;
}

}  // namespace

TEST_CASE("k-means recovers well separated groups with exact centroids") {
    CounterRng rng(3);
    const auto xs = blobs(3, 10, 0.01, rng);
    const DescriptorClustering c = kmeans(xs, 3, 1);

    REQUIRE(c.k == 3);
    REQUIRE(c.assignments.size() == 30);
    // Same blob, same label; different blobs, different labels.
    std::set<int> labels;
    for (int b = 0; b < 3; ++b) {
        const int lead = c.assignments[static_cast<size_t>(b * 10)];
        labels.insert(lead);
        for (int i = 0; i < 10; ++i)
            CHECK(c.assignments[static_cast<size_t>(b * 10 + i)] == lead);
    }
    CHECK(labels.size() == 3);

    // Centroids are the exact means of the final assignment.
    for (int j = 0; j < 3; ++j) {
        DescriptorVector mean = DescriptorVector::Zero();
        int n = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            if (c.assignments[i] != j) continue;
            mean += xs[i];
            ++n;
        }
        mean /= static_cast<double>(n);
        CHECK((mean - c.centroids[static_cast<size_t>(j)]).norm() < 1e-12);
    }

    CHECK(c.wcss == doctest::Approx(brute_wcss(xs, c)).epsilon(1e-12));
    REQUIRE(!c.wcss_history.empty());
    for (size_t i = 1; i < c.wcss_history.size(); ++i)
        CHECK(c.wcss_history[i] <= c.wcss_history[i - 1] + 1e-12);
    CHECK(c.wcss == doctest::Approx(c.wcss_history.back()));
}

TEST_CASE("k-means edge cases") {
    CounterRng rng(9);
    const auto xs = blobs(2, 6, 0.02, rng);

    // k = 1: one centroid at the global mean.
    const DescriptorClustering one = kmeans(xs, 1, 7);
    DescriptorVector mean = DescriptorVector::Zero();
    for (const auto& x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    CHECK((one.centroids[0] - mean).norm() < 1e-12);
    CHECK(one.wcss == doctest::Approx(brute_wcss(xs, one)));

    // k = n: zero scatter.
    const DescriptorClustering all = kmeans(xs, static_cast<int>(xs.size()), 7);
    CHECK(all.wcss == doctest::Approx(0.0));
    std::set<int> distinct(all.assignments.begin(), all.assignments.end());
    CHECK(distinct.size() == xs.size());

    CHECK_THROWS(kmeans(xs, 0, 1));
    CHECK_THROWS(kmeans(xs, static_cast<int>(xs.size()) + 1, 1));
    CHECK_THROWS(kmeans({}, 1, 1));
}

TEST_CASE("k-means is deterministic in the seed") {
    CounterRng rng(12);
    const auto xs = blobs(4, 7, 0.05, rng);
    const DescriptorClustering a = kmeans(xs, 4, 99);
    const DescriptorClustering b = kmeans(xs, 4, 99);
    CHECK(a.assignments == b.assignments);
    CHECK(a.wcss == b.wcss);
}

TEST_CASE("the elbow lands on the number of separated groups") {
    CounterRng rng(44);
    const auto xs = blobs(4, 12, 0.015, rng);
    const ElbowResult res = select_k_elbow(xs, 8, 5);
    CHECK_FALSE(res.degenerate);
    CHECK(res.k_star == 4);
    REQUIRE(res.wcss_curve.size() == 8);
    // More clusters never fit worse.
    for (size_t i = 1; i < res.wcss_curve.size(); ++i)
        CHECK(res.wcss_curve[i] <= res.wcss_curve[i - 1] + 1e-9);
}

TEST_CASE("the elbow degenerates gracefully") {
    CounterRng rng(8);
    // k_max too small to have an interior point.
    const auto xs = blobs(2, 5, 0.02, rng);
    const ElbowResult flat = select_k_elbow(xs, 2, 1);
    CHECK(flat.degenerate);
    CHECK(flat.k_star == 1);

    // Candidate K counts above n are the caller's mistake, not a fallback.
    const std::vector<DescriptorVector> two{anchor(0), anchor(1)};
    CHECK_THROWS(select_k_elbow(two, 10, 1));
    const ElbowResult tiny = select_k_elbow(two, 2, 1);
    CHECK(tiny.degenerate);
    CHECK(tiny.k_star == 1);
}

TEST_CASE("cluster confidence ranks scatter between 0 and 1") {
    CounterRng rng(23);
    // Three clusters with increasing spread.
    std::vector<DescriptorVector> xs;
    const double spreads[3] = {0.005, 0.05, 0.12};
    for (int b = 0; b < 3; ++b) {
        for (int i = 0; i < 15; ++i) {
            DescriptorVector v = anchor(b);
            for (int d = 0; d < kDescriptorDim; ++d)
                v[d] += spreads[b] * rng.next_gaussian();
            xs.push_back(v);
        }
    }
    const DescriptorClustering c = kmeans(xs, 3, 2);
    const ClusterConfidence conf = cluster_confidence(c, xs);
    CHECK_FALSE(conf.degenerate);

    // Brute-force mean distances.
    for (int j = 0; j < 3; ++j) {
        double acc = 0.0;
        int n = 0;
        for (size_t i = 0; i < xs.size(); ++i) {
            if (c.assignments[i] != j) continue;
            acc += (xs[i] - c.centroids[static_cast<size_t>(j)]).norm();
            ++n;
        }
        CHECK(conf.mean_distance[static_cast<size_t>(j)] ==
              doctest::Approx(acc / n).epsilon(1e-12));
    }

    // Min-max scaling hits the endpoints exactly.
    const auto lo = std::min_element(conf.confidence.begin(), conf.confidence.end());
    const auto hi = std::max_element(conf.confidence.begin(), conf.confidence.end());
    CHECK(*lo == 0.0);
    CHECK(*hi == 1.0);

    // Single cluster: degenerate, all zero.
    const DescriptorClustering single = kmeans(xs, 1, 2);
    const ClusterConfidence flat = cluster_confidence(single, xs);
    CHECK(flat.degenerate);
    CHECK(flat.confidence == std::vector<double>{0.0});
}

TEST_CASE("weighted distance combines min-max scaled terms") {
    // One physical and one descriptor distance per candidate pair, so the
    // two term lists always have equal length.
    const NormContext ctx = norm_context({1.0, 3.0, 5.0}, {0.2, 0.3, 0.4});
    CHECK(ctx.p_min == 1.0);
    CHECK(ctx.p_max == 5.0);
    CHECK(ctx.d_min == 0.2);
    CHECK(ctx.d_max == 0.4);

    DescriptorVector da = DescriptorVector::Zero();
    da[0] = 1.0;
    DescriptorVector db = DescriptorVector::Zero();
    db[0] = 1.0;
    db[1] = 0.3;
    db.normalize();
    const DescribedObject a = object_at(Point3(0, 0, 0), da, 0, 0);
    const DescribedObject b = object_at(Point3(3, 0, 0), db, 1, 0);

    const WeightedDistanceResult w = weighted_distance(a, b, 0.5, 0.5, ctx);
    const double p_norm = (3.0 - 1.0) / 4.0;
    const double d_norm = ((da - db.normalized()).norm() - 0.2) / 0.2;
    CHECK_FALSE(w.p_degenerate);
    CHECK_FALSE(w.d_degenerate);
    CHECK(w.value == doctest::Approx(0.5 * p_norm + 0.5 * d_norm).epsilon(1e-9));

    // Flat ranges flag degenerate and contribute zero.
    const NormContext flat = norm_context({2.0, 2.0}, {0.3, 0.3});
    const WeightedDistanceResult wd = weighted_distance(a, b, 0.5, 0.5, flat);
    CHECK(wd.p_degenerate);
    CHECK(wd.d_degenerate);
    CHECK(wd.value == 0.0);

    CHECK_THROWS(norm_context({}, {0.1}));
}

TEST_CASE("register_pair recovers an exact rigid motion") {
    CounterRng rng(71);
    PointCloud cloud;
    for (int i = 0; i < 250; ++i) {
        cloud.points.push_back(Point3(rng.next_double() * 0.8,
                                      rng.next_double() * 0.5,
                                      rng.next_double() * 0.3));
    }
    RigidTransform truth;
    truth.rotation = Eigen::AngleAxisd(0.4, Point3(0.2, 0.3, 0.9).normalized())
                         .toRotationMatrix();
    truth.translation = Point3(1.2, -0.7, 0.3);

    const Segment sa = make_segment(cloud, 0, 0);
    const Segment sb = make_segment(transform_cloud(cloud, truth), 1, 0);
    const RegisterResult res = register_pair(sa, sb);

    CHECK_FALSE(res.degenerate);
    const Eigen::Matrix3d dr = res.transform.rotation.transpose() * truth.rotation;
    CHECK(Eigen::AngleAxisd(dr).angle() < 1e-6);
    CHECK((res.transform.translation - truth.translation).norm() < 1e-6);
    CHECK(res.rms < 1e-9);
    // Proper rotation, always.
    CHECK(res.transform.rotation.determinant() == doctest::Approx(1.0));
}

TEST_CASE("register_pair flags rank-deficient geometry") {
    PointCloud line;
    for (int i = 0; i < 40; ++i)
        line.points.push_back(Point3(i * 0.05, 0.0, 0.0));
    PointCloud moved = line;
    for (Point3& p : moved.points) p += Point3(0.5, 0.2, 0.1);

    const RegisterResult res =
        register_pair(make_segment(line, 0, 0), make_segment(moved, 1, 0));
    CHECK(res.degenerate);
    CHECK(res.transform.rotation.isApprox(Eigen::Matrix3d::Identity()));
    // Centroid rule still holds.
    CHECK((res.transform.translation - Point3(0.5, 0.2, 0.1)).norm() < 1e-9);
}

TEST_CASE("correspondence assignment pairs by minimum total weighted distance") {
    // One class, two objects per mission. Identical descriptors force the
    // physical term to decide, and the crossed pairing costs more.
    const DescriptorVector d = anchor(2);
    std::vector<DescribedObject> as{object_at(Point3(0, 0, 0), d, 0, 10),
                                    object_at(Point3(10, 0, 0), d, 0, 11)};
    std::vector<DescribedObject> bs{object_at(Point3(1, 0, 0), d, 1, 20),
                                    object_at(Point3(11, 0, 0), d, 1, 21)};
    DescriptorClustering c;
    c.k = 1;
    c.assignments = {0, 0, 0, 0};
    c.centroids = {d};

    const AssignResult res = assign_correspondences(as, bs, c);
    REQUIRE(res.correspondences.size() == 2);
    for (const auto& corr : res.correspondences) {
        CHECK(corr.kind == Correspondence::Kind::Moved);
        REQUIRE(corr.index_a.has_value());
        REQUIRE(corr.index_b.has_value());
        CHECK(*corr.index_a == *corr.index_b);  // near pairing, not crossed
        REQUIRE(corr.transform.has_value());
        CHECK_FALSE(corr.transform->degenerate);
    }
    // 2|moved| + |added| + |removed| equals the class size.
    CHECK(2 * 2 + 0 + 0 == 4);

    // Matrix covers every candidate pair of the class.
    CHECK(res.matrix.entries.size() == 4);
    for (const auto& e : res.matrix.entries) {
        CHECK(e.confidence >= 0.0);
        CHECK(e.confidence <= 1.0);
    }
}

TEST_CASE("an odd class drops its most distant member first") {
    // Class of 3: two A objects and one B object. The far A object has the
    // greatest summed weighted distance, so it is emitted as removed and
    // the near A object pairs with the B object.
    const DescriptorVector d = anchor(4);
    std::vector<DescribedObject> as{object_at(Point3(0, 0, 0), d, 0, 1),
                                    object_at(Point3(40, 0, 0), d, 0, 2)};
    std::vector<DescribedObject> bs{object_at(Point3(0.5, 0, 0), d, 1, 3)};
    DescriptorClustering c;
    c.k = 1;
    c.assignments = {0, 0, 0};
    c.centroids = {d};

    const AssignResult res = assign_correspondences(as, bs, c);
    int moved = 0, added = 0, removed = 0;
    for (const auto& corr : res.correspondences) {
        if (corr.kind == Correspondence::Kind::Moved) {
            ++moved;
            CHECK(*corr.index_a == 0);
            CHECK(*corr.index_b == 0);
        } else if (corr.kind == Correspondence::Kind::Added) {
            ++added;
        } else {
            ++removed;
            CHECK(*corr.index_a == 1);
        }
    }
    CHECK(moved == 1);
    CHECK(added == 0);
    CHECK(removed == 1);
    CHECK(2 * moved + added + removed == 3);
}

TEST_CASE("one-sided classes become pure additions or removals") {
    const DescriptorVector da = anchor(1), db = anchor(7);
    std::vector<DescribedObject> as{object_at(Point3(0, 0, 0), da, 0, 1),
                                    object_at(Point3(2, 0, 0), da, 0, 2)};
    std::vector<DescribedObject> bs{object_at(Point3(5, 5, 0), db, 1, 3)};
    DescriptorClustering c;
    c.k = 2;
    c.assignments = {0, 0, 1};
    c.centroids = {da, db};

    const AssignResult res = assign_correspondences(as, bs, c);
    int added = 0, removed = 0;
    for (const auto& corr : res.correspondences) {
        CHECK(corr.kind != Correspondence::Kind::Moved);
        if (corr.kind == Correspondence::Kind::Added) {
            ++added;
            CHECK_FALSE(corr.index_a.has_value());
        } else {
            ++removed;
            CHECK_FALSE(corr.index_b.has_value());
        }
    }
    CHECK(removed == 2);
    CHECK(added == 1);
}

TEST_CASE("a single candidate pair scores full confidence") {
    const DescriptorVector d = anchor(3);
    std::vector<DescribedObject> as{object_at(Point3(0, 0, 0), d, 0, 5)};
    std::vector<DescribedObject> bs{object_at(Point3(1, 0, 0), d, 1, 6)};
    DescriptorClustering c;
    c.k = 1;
    c.assignments = {0, 0};
    c.centroids = {d};

    const AssignResult res = assign_correspondences(as, bs, c);
    REQUIRE(res.matrix.entries.size() == 1);
    CHECK(res.matrix.entries[0].confidence == 1.0);
    CHECK(res.matrix.entries[0].object_a_id == 5);
    CHECK(res.matrix.entries[0].object_b_id == 6);
    REQUIRE(res.correspondences.size() == 1);
    CHECK(res.correspondences[0].pair_confidence == 1.0);
}
