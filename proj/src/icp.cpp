#include "deltamap/icp.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "deltamap/common.hpp"
#include "deltamap/neighbor_grid.hpp"
#include "deltamap/rigid_fit.hpp"

namespace deltamap {

IcpResult icp_register(const PointCloud& source, const PointCloud& target,
                       const RigidTransform& init, const IcpParams& params) {
    require(!source.empty() && !target.empty(), "icp_register: empty cloud");
    require(init.is_valid(), "icp_register: invalid initial transform");
    require(params.max_iter >= 1, "icp_register: max_iter must be >= 1");
    require(params.corr_dist > 0.0, "icp_register: corr_dist must be positive");
    require(params.convergence_eps >= 0.0,
            "icp_register: convergence_eps must be non-negative");

    const NeighborGrid grid(target.points, params.corr_dist);

    using Pairs = std::vector<std::pair<uint32_t, uint32_t>>;
    const auto match = [&](const RigidTransform& t, Pairs& pairs) {
        pairs.clear();
        KahanSum sq;
        for (uint32_t i = 0; i < source.points.size(); ++i) {
            const Point3 q = t.apply(source.points[i]);
            const auto j = grid.nearest_within(q, params.corr_dist);
            if (!j) continue;
            pairs.emplace_back(i, *j);
            sq.add((target.points[*j] - q).squaredNorm());
        }
        if (pairs.empty()) return std::numeric_limits<double>::infinity();
        return std::sqrt(sq.value() / static_cast<double>(pairs.size()));
    };

    Pairs pairs;
    double rms = match(init, pairs);
    if (pairs.empty())
        throw IcpError(
            "icp_register: no correspondences within corr_dist at the initial "
            "alignment");

    RigidTransform t = init;
    IcpResult res;
    res.rms_history.push_back(rms);
    res.converged = true;
    std::vector<Point3> s, d;
    Pairs next;
    for (int iter = 0; iter < params.max_iter; ++iter) {
        s.clear();
        d.clear();
        for (const auto& [i, j] : pairs) {
            s.push_back(source.points[i]);
            d.push_back(target.points[j]);
        }
        const RigidTransform cand = fit_rigid(s, d);
        const double cand_rms = match(cand, next);
        if (next.empty() || cand_rms > rms) break;  // revert and stop
        const double drop = rms - cand_rms;
        t = cand;
        rms = cand_rms;
        pairs.swap(next);
        res.rms_history.push_back(rms);
        if (drop < params.convergence_eps) break;
        if (iter + 1 == params.max_iter) res.converged = false;
    }
    res.transform = t;
    res.rms = rms;
    res.inlier_fraction =
        static_cast<double>(pairs.size()) / static_cast<double>(source.points.size());
    res.iterations = static_cast<int>(res.rms_history.size()) - 1;
    return res;
}

}  // namespace deltamap
