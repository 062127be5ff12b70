#include "deltamap/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <tuple>

#include "deltamap/common.hpp"
#include "deltamap/neighbor_grid.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace deltamap {

namespace {

double sq_dist(const DescriptorVector& a, const DescriptorVector& b) {
    return (a - b).squaredNorm();
}

// Nearest centroid by squared distance; ties go to the lower index.
int nearest_centroid(const DescriptorVector& x,
                     const std::vector<DescriptorVector>& centroids) {
    int best = 0;
    double best_d = sq_dist(x, centroids[0]);
    for (int j = 1; j < static_cast<int>(centroids.size()); ++j) {
        const double d = sq_dist(x, centroids[j]);
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

std::vector<DescriptorVector> mean_centroids(
    const std::vector<DescriptorVector>& x, const std::vector<int>& assign,
    const std::vector<DescriptorVector>& previous, int k) {
    std::vector<DescriptorVector> out(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) {
        std::array<KahanSum, kDescriptorDim> acc{};
        size_t count = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            if (assign[i] != j) continue;
            for (int d = 0; d < kDescriptorDim; ++d) acc[d].add(x[i][d]);
            ++count;
        }
        if (count == 0) {
            out[static_cast<size_t>(j)] = previous[static_cast<size_t>(j)];
            continue;
        }
        for (int d = 0; d < kDescriptorDim; ++d)
            out[static_cast<size_t>(j)][d] = acc[d].value() / static_cast<double>(count);
    }
    return out;
}

double assignment_wcss(const std::vector<DescriptorVector>& x,
                       const std::vector<int>& assign,
                       const std::vector<DescriptorVector>& centroids) {
    KahanSum total;
    for (size_t i = 0; i < x.size(); ++i)
        total.add(sq_dist(x[i], centroids[static_cast<size_t>(assign[i])]));
    return total.value();
}

}  // namespace

DescriptorClustering kmeans(const std::vector<DescriptorVector>& descriptors,
                            int k, uint64_t seed) {
    require(k >= 1, "kmeans: k must be positive");
    const size_t n = descriptors.size();
    require(n >= static_cast<size_t>(k), "kmeans: fewer descriptors than clusters");

    CounterRng rng(hash_combine(seed, 0x6b6d6575734bULL));

    // k-means++ seeding.
    std::vector<DescriptorVector> centroids;
    centroids.reserve(static_cast<size_t>(k));
    centroids.push_back(descriptors[rng.next_u64() % n]);
    std::vector<double> d2(n, 0.0);
    while (centroids.size() < static_cast<size_t>(k)) {
        KahanSum total;
        for (size_t i = 0; i < n; ++i) {
            double best = sq_dist(descriptors[i], centroids[0]);
            for (size_t c = 1; c < centroids.size(); ++c)
                best = std::min(best, sq_dist(descriptors[i], centroids[c]));
            d2[i] = best;
            total.add(best);
        }
        size_t pick = n - 1;
        if (total.value() <= 0.0) {
            pick = rng.next_u64() % n;
        } else {
            const double u = rng.next_double() * total.value();
            double acc = 0.0;
            for (size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (acc >= u) {
                    pick = i;
                    break;
                }
            }
        }
        centroids.push_back(descriptors[pick]);
    }

    DescriptorClustering out;
    out.k = k;
    out.assignments.assign(n, -1);

    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (size_t i = 0; i < n; ++i) {
            const int a = nearest_centroid(descriptors[i], centroids);
            if (a != out.assignments[i]) changed = true;
            out.assignments[i] = a;
        }
        if (!changed) break;

        centroids = mean_centroids(descriptors, out.assignments, centroids, k);

        // Reseed any emptied cluster at the point farthest from its assigned
        // centroid; the next sweep claims it at distance zero.
        std::vector<size_t> counts(static_cast<size_t>(k), 0);
        for (int a : out.assignments) ++counts[static_cast<size_t>(a)];
        for (int j = 0; j < k; ++j) {
            if (counts[static_cast<size_t>(j)] > 0) continue;
            size_t far_i = 0;
            double far_d = -1.0;
            for (size_t i = 0; i < n; ++i) {
                const double d =
                    sq_dist(descriptors[i],
                            centroids[static_cast<size_t>(out.assignments[i])]);
                if (d > far_d) {
                    far_d = d;
                    far_i = i;
                }
            }
            centroids[static_cast<size_t>(j)] = descriptors[far_i];
        }

        out.wcss_history.push_back(assignment_wcss(descriptors, out.assignments, centroids));
    }

    centroids = mean_centroids(descriptors, out.assignments, centroids, k);
    out.centroids = std::move(centroids);
    out.wcss = assignment_wcss(descriptors, out.assignments, out.centroids);
    return out;
}

ElbowResult select_k_elbow(const std::vector<DescriptorVector>& descriptors,
                           int k_max, uint64_t seed) {
    require(k_max >= 1, "select_k_elbow: k_max must be positive");
    require(descriptors.size() >= static_cast<size_t>(k_max),
            "select_k_elbow: k_max exceeds the number of descriptors");

    ElbowResult out;
    for (int k = 1; k <= k_max; ++k) {
        double best = std::numeric_limits<double>::infinity();
        for (uint64_t restart = 0; restart < 5; ++restart) {
            const uint64_t s = hash_combine(hash_combine(seed, static_cast<uint64_t>(k)), restart);
            best = std::min(best, kmeans(descriptors, k, s).wcss);
        }
        out.wcss_curve.push_back(best);
    }

    if (k_max < 3) {
        out.k_star = 1;
        out.degenerate = true;
        return out;
    }
    if (out.wcss_curve.front() <= 0.0) {
        out.k_star = 1;  // all descriptors coincide
        return out;
    }

    // Perpendicular distance from (K, WCSS_K) to the chord joining the
    // curve's endpoints; largest interior distance wins, ties to smaller K.
    const double x1 = 1.0, y1 = out.wcss_curve.front();
    const double x2 = static_cast<double>(k_max), y2 = out.wcss_curve.back();
    const double denom = std::hypot(x2 - x1, y2 - y1);
    int best_k = 2;
    double best_d = -1.0;
    for (int k = 2; k < k_max; ++k) {
        const double w = out.wcss_curve[static_cast<size_t>(k - 1)];
        const double d =
            std::abs((y2 - y1) * k - (x2 - x1) * w + x2 * y1 - y2 * x1) / denom;
        if (d > best_d) {
            best_d = d;
            best_k = k;
        }
    }
    out.k_star = best_k;
    return out;
}

ClusterConfidence cluster_confidence(const DescriptorClustering& clustering,
                                     const std::vector<DescriptorVector>& descriptors) {
    require(clustering.assignments.size() == descriptors.size(),
            "cluster_confidence: assignment/descriptor count mismatch");
    require(clustering.centroids.size() == static_cast<size_t>(clustering.k),
            "cluster_confidence: centroid count does not match k");

    const int k = clustering.k;
    ClusterConfidence out;
    out.mean_distance.assign(static_cast<size_t>(k), 0.0);
    out.confidence.assign(static_cast<size_t>(k), 0.0);

    std::vector<KahanSum> sums(static_cast<size_t>(k));
    std::vector<size_t> counts(static_cast<size_t>(k), 0);
    for (size_t i = 0; i < descriptors.size(); ++i) {
        const auto j = static_cast<size_t>(clustering.assignments[i]);
        require(j < static_cast<size_t>(k), "cluster_confidence: assignment out of range");
        sums[j].add((descriptors[i] - clustering.centroids[j]).norm());
        ++counts[j];
    }
    for (int j = 0; j < k; ++j)
        if (counts[static_cast<size_t>(j)] > 0)
            out.mean_distance[static_cast<size_t>(j)] =
                sums[static_cast<size_t>(j)].value() /
                static_cast<double>(counts[static_cast<size_t>(j)]);

    if (k < 2) {
        out.degenerate = true;
        return out;
    }
    const auto [lo_it, hi_it] =
        std::minmax_element(out.mean_distance.begin(), out.mean_distance.end());
    const double lo = *lo_it, hi = *hi_it;
    if (hi - lo <= 0.0) {
        out.degenerate = true;  // flat scatter; ranking is meaningless
        return out;
    }
    for (int j = 0; j < k; ++j)
        out.confidence[static_cast<size_t>(j)] =
            (out.mean_distance[static_cast<size_t>(j)] - lo) / (hi - lo);
    return out;
}

NormContext norm_context(const std::vector<double>& physical,
                         const std::vector<double>& descriptor) {
    require(physical.size() == descriptor.size(),
            "norm_context: term count mismatch");
    NormContext ctx;
    if (physical.empty()) return ctx;
    const auto [p_lo, p_hi] = std::minmax_element(physical.begin(), physical.end());
    const auto [d_lo, d_hi] = std::minmax_element(descriptor.begin(), descriptor.end());
    ctx.p_min = *p_lo;
    ctx.p_max = *p_hi;
    ctx.d_min = *d_lo;
    ctx.d_max = *d_hi;
    return ctx;
}

WeightedDistanceResult weighted_distance(const DescribedObject& a,
                                         const DescribedObject& b, double alpha,
                                         double beta, const NormContext& ctx) {
    require(alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0,
            "weighted_distance: weights must be non-negative and not both zero");

    WeightedDistanceResult out;
    const double dp = (a.segment.centroid - b.segment.centroid).norm();
    const double dd = (a.descriptor.values - b.descriptor.values).norm();

    const double p_span = ctx.p_max - ctx.p_min;
    if (p_span > 0.0) {
        out.value += alpha * std::clamp((dp - ctx.p_min) / p_span, 0.0, 1.0);
    } else {
        out.p_degenerate = true;
    }
    const double d_span = ctx.d_max - ctx.d_min;
    if (d_span > 0.0) {
        out.value += beta * std::clamp((dd - ctx.d_min) / d_span, 0.0, 1.0);
    } else {
        out.d_degenerate = true;
    }
    return out;
}

RegisterResult register_pair(const Segment& a, const Segment& b) {
    require(a.cloud.size() >= 3 && b.cloud.size() >= 3,
            "register_pair: both segments need at least 3 points");

    std::vector<Eigen::Vector3d> pa(a.cloud.size()), pb(b.cloud.size());
    for (size_t i = 0; i < a.cloud.size(); ++i)
        pa[i] = a.cloud.points[i] - a.centroid;
    for (size_t i = 0; i < b.cloud.size(); ++i)
        pb[i] = b.cloud.points[i] - b.centroid;

    double extent = 0.0;
    for (const auto& p : pb) extent = std::max(extent, p.norm());
    NeighborGrid grid(pb, std::max(extent / 4.0, 1e-3));

    RegisterResult out;
    Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
    std::vector<size_t> pairing(pa.size(), 0), prev_pairing;
    for (int iter = 0; iter < 20; ++iter) {
        out.iterations = iter + 1;
        for (size_t i = 0; i < pa.size(); ++i) {
            const auto nn = grid.knn(rot * pa[i], 1);
            pairing[i] = nn.front();
        }

        Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
        for (size_t i = 0; i < pa.size(); ++i)
            h += pa[i] * pb[pairing[i]].transpose();

        Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const auto& sv = svd.singularValues();
        if (sv(1) <= 1e-12 * std::max(sv(0), 1e-300)) {
            out.degenerate = true;
            rot = Eigen::Matrix3d::Identity();
            break;
        }
        Eigen::Matrix3d v = svd.matrixV();
        if ((v * svd.matrixU().transpose()).determinant() < 0.0) v.col(2) = -v.col(2);
        const Eigen::Matrix3d next = v * svd.matrixU().transpose();

        const bool settled = (next - rot).norm() < 1e-12 && pairing == prev_pairing;
        rot = next;
        if (settled) break;
        prev_pairing = pairing;
    }

    KahanSum sq;
    for (size_t i = 0; i < pa.size(); ++i) {
        const auto nn = grid.knn(rot * pa[i], 1);
        sq.add((rot * pa[i] - pb[nn.front()]).squaredNorm());
    }
    out.rms = std::sqrt(sq.value() / static_cast<double>(pa.size()));
    out.transform.rotation = rot;
    out.transform.translation = b.centroid - rot * a.centroid;
    return out;
}

namespace {

struct ClassPairings {
    // Key: (index into class A list, index into class B list).
    std::map<std::pair<size_t, size_t>, double> dist;
    double at(size_t i, size_t j) const { return dist.at({i, j}); }
};

// Minimum-total-distance pairing of all of `small_n` against distinct picks
// from `large_n`, by exhaustive depth-first search. Ties keep the first
// (lexicographically smallest) assignment found.
void exact_assign(const ClassPairings& pairs, size_t small_n, size_t large_n,
                  bool a_is_small, std::vector<size_t>& best,
                  std::vector<size_t>& current, std::vector<bool>& used,
                  size_t depth, double cost, double& best_cost) {
    if (depth == small_n) {
        if (cost < best_cost) {
            best_cost = cost;
            best = current;
        }
        return;
    }
    for (size_t j = 0; j < large_n; ++j) {
        if (used[j]) continue;
        const double d = a_is_small ? pairs.at(depth, j) : pairs.at(j, depth);
        if (cost + d >= best_cost) continue;
        used[j] = true;
        current[depth] = j;
        exact_assign(pairs, small_n, large_n, a_is_small, best, current, used,
                     depth + 1, cost + d, best_cost);
        used[j] = false;
    }
}

}  // namespace

AssignResult assign_correspondences(const std::vector<DescribedObject>& objects_a,
                                    const std::vector<DescribedObject>& objects_b,
                                    const DescriptorClustering& clustering,
                                    double alpha, double beta) {
    const size_t na = objects_a.size();
    const size_t nb = objects_b.size();
    require(clustering.assignments.size() == na + nb,
            "assign_correspondences: clustering must cover objects_a then objects_b");
    require(alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0,
            "assign_correspondences: weights must be non-negative and not both zero");

    struct Members {
        std::vector<size_t> a, b;
    };
    std::vector<Members> classes(static_cast<size_t>(clustering.k));
    for (size_t i = 0; i < na; ++i) {
        const auto c = static_cast<size_t>(clustering.assignments[i]);
        require(c < classes.size(), "assign_correspondences: assignment out of range");
        classes[c].a.push_back(i);
    }
    for (size_t j = 0; j < nb; ++j) {
        const auto c = static_cast<size_t>(clustering.assignments[na + j]);
        require(c < classes.size(), "assign_correspondences: assignment out of range");
        classes[c].b.push_back(j);
    }

    AssignResult out;
    for (int cls = 0; cls < clustering.k; ++cls) {
        const auto& members = classes[static_cast<size_t>(cls)];
        const size_t class_size = members.a.size() + members.b.size();
        if (class_size == 0) continue;

        auto emit_removed = [&](size_t ia, double wd) {
            Correspondence c;
            c.kind = Correspondence::Kind::Removed;
            c.class_id = cls;
            c.index_a = ia;
            c.weighted_dist = wd;
            out.correspondences.push_back(std::move(c));
        };
        auto emit_added = [&](size_t ib, double wd) {
            Correspondence c;
            c.kind = Correspondence::Kind::Added;
            c.class_id = cls;
            c.index_b = ib;
            c.weighted_dist = wd;
            out.correspondences.push_back(std::move(c));
        };

        // One-sided class: every member changed; the odd rule does not apply.
        if (members.a.empty() || members.b.empty()) {
            for (size_t ia : members.a) emit_removed(ia, 0.0);
            for (size_t ib : members.b) emit_added(ib, 0.0);
            continue;
        }

        // Normalization spans come from the class's cross-mission candidate
        // pairs and are reused for intra-mission distances below.
        std::vector<double> dps, dds;
        dps.reserve(members.a.size() * members.b.size());
        dds.reserve(dps.capacity());
        for (size_t ia : members.a) {
            for (size_t ib : members.b) {
                dps.push_back((objects_a[ia].segment.centroid -
                               objects_b[ib].segment.centroid).norm());
                dds.push_back((objects_a[ia].descriptor.values -
                               objects_b[ib].descriptor.values).norm());
            }
        }
        const NormContext ctx = norm_context(dps, dds);

        ClassPairings pairs;
        double w_lo = std::numeric_limits<double>::infinity();
        double w_hi = -w_lo;
        for (size_t i = 0; i < members.a.size(); ++i) {
            for (size_t j = 0; j < members.b.size(); ++j) {
                const double w = weighted_distance(objects_a[members.a[i]],
                                                   objects_b[members.b[j]], alpha,
                                                   beta, ctx).value;
                pairs.dist[{i, j}] = w;
                w_lo = std::min(w_lo, w);
                w_hi = std::max(w_hi, w);
            }
        }

        auto pair_confidence = [&](double w) {
            if (w_hi - w_lo <= 0.0) return 1.0;
            return 1.0 - (w - w_lo) / (w_hi - w_lo);
        };
        for (size_t i = 0; i < members.a.size(); ++i)
            for (size_t j = 0; j < members.b.size(); ++j)
                out.matrix.entries.push_back({cls,
                                              objects_a[members.a[i]].segment.id,
                                              objects_b[members.b[j]].segment.id,
                                              pair_confidence(pairs.at(i, j))});

        // Odd class: drop the member with the greatest summed weighted
        // distance to all other members, mission-A members first on ties.
        std::vector<size_t> live_a(members.a.size()), live_b(members.b.size());
        for (size_t i = 0; i < live_a.size(); ++i) live_a[i] = i;
        for (size_t j = 0; j < live_b.size(); ++j) live_b[j] = j;
        std::optional<std::pair<bool, size_t>> excluded;  // (is_a, class-local index)
        if (class_size % 2 == 1) {
            auto member_obj = [&](bool is_a, size_t idx) -> const DescribedObject& {
                return is_a ? objects_a[members.a[idx]] : objects_b[members.b[idx]];
            };
            double worst = -1.0;
            for (size_t m = 0; m < class_size; ++m) {
                const bool is_a = m < members.a.size();
                const size_t idx = is_a ? m : m - members.a.size();
                KahanSum total;
                for (size_t o = 0; o < class_size; ++o) {
                    if (o == m) continue;
                    const bool o_is_a = o < members.a.size();
                    const size_t o_idx = o_is_a ? o : o - members.a.size();
                    total.add(weighted_distance(member_obj(is_a, idx),
                                                member_obj(o_is_a, o_idx), alpha,
                                                beta, ctx).value);
                }
                if (total.value() > worst) {
                    worst = total.value();
                    excluded = {is_a, idx};
                }
            }
            if (excluded->first)
                live_a.erase(live_a.begin() + static_cast<long>(excluded->second));
            else
                live_b.erase(live_b.begin() + static_cast<long>(excluded->second));
        }

        // Pair the smaller side exhaustively for small classes, greedily
        // otherwise. Matches are (class-local A index, class-local B index).
        std::vector<std::pair<size_t, size_t>> matched;
        const bool a_is_small = live_a.size() <= live_b.size();
        const auto& small = a_is_small ? live_a : live_b;
        const auto& large = a_is_small ? live_b : live_a;
        if (!small.empty()) {
            if (class_size <= 8) {
                std::vector<size_t> best, current(small.size());
                std::vector<bool> used(large.size(), false);
                double best_cost = std::numeric_limits<double>::infinity();
                ClassPairings live_pairs;
                for (size_t si = 0; si < small.size(); ++si)
                    for (size_t lj = 0; lj < large.size(); ++lj) {
                        const double d = a_is_small ? pairs.at(small[si], large[lj])
                                                    : pairs.at(large[lj], small[si]);
                        if (a_is_small)
                            live_pairs.dist[{si, lj}] = d;
                        else
                            live_pairs.dist[{lj, si}] = d;
                    }
                exact_assign(live_pairs, small.size(), large.size(), a_is_small,
                             best, current, used, 0, 0.0, best_cost);
                for (size_t si = 0; si < small.size(); ++si) {
                    const size_t lj = best[si];
                    matched.emplace_back(a_is_small ? small[si] : large[lj],
                                         a_is_small ? large[lj] : small[si]);
                }
            } else {
                struct Cand {
                    double w;
                    size_t i, j;
                };
                std::vector<Cand> cands;
                for (size_t i : live_a)
                    for (size_t j : live_b) cands.push_back({pairs.at(i, j), i, j});
                std::sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) {
                    return std::tie(x.w, x.i, x.j) < std::tie(y.w, y.i, y.j);
                });
                std::vector<bool> taken_a(members.a.size(), false),
                    taken_b(members.b.size(), false);
                const size_t want = small.size();
                for (const auto& c : cands) {
                    if (matched.size() == want) break;
                    if (taken_a[c.i] || taken_b[c.j]) continue;
                    taken_a[c.i] = true;
                    taken_b[c.j] = true;
                    matched.emplace_back(c.i, c.j);
                }
            }
        }
        std::sort(matched.begin(), matched.end());

        std::vector<bool> used_a(members.a.size(), false), used_b(members.b.size(), false);
        for (const auto& [i, j] : matched) {
            used_a[i] = true;
            used_b[j] = true;
            Correspondence c;
            c.kind = Correspondence::Kind::Moved;
            c.class_id = cls;
            c.index_a = members.a[i];
            c.index_b = members.b[j];
            c.weighted_dist = pairs.at(i, j);
            c.pair_confidence = pair_confidence(c.weighted_dist);
            c.transform = register_pair(objects_a[members.a[i]].segment,
                                        objects_b[members.b[j]].segment);
            out.correspondences.push_back(std::move(c));
        }
        for (size_t i = 0; i < members.a.size(); ++i)
            if (!used_a[i]) emit_removed(members.a[i], 0.0);
        for (size_t j = 0; j < members.b.size(); ++j)
            if (!used_b[j]) emit_added(members.b[j], 0.0);
    }
    return out;
}

}  // namespace deltamap
