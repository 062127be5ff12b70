#include "deltamap/pose_graph.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "deltamap/common.hpp"

namespace deltamap {

void MissionTrajectory::check_invariants() const {
    require(!nodes.empty(), "trajectory " + mission_id + ": no nodes");
    for (size_t i = 0; i + 1 < nodes.size(); ++i)
        require(nodes[i].timestamp < nodes[i + 1].timestamp,
                "trajectory " + mission_id +
                    ": timestamps not strictly increasing at index " +
                    std::to_string(i + 1));
    for (const TrajectoryNode& n : nodes)
        require(n.pose.is_valid(), "trajectory " + mission_id + ": invalid pose");
}

Matrix6d diag_information(double sigma_trans, double sigma_rot) {
    require(sigma_trans > 0.0 && sigma_rot > 0.0,
            "diag_information: sigmas must be positive");
    Matrix6d info = Matrix6d::Zero();
    const double wt = 1.0 / (sigma_trans * sigma_trans);
    const double wr = 1.0 / (sigma_rot * sigma_rot);
    info.diagonal() << wt, wt, wt, wr, wr, wr;
    return info;
}

void MissionGraph::set_gauge_from_first_pose() {
    require(!trajectories.empty() && !trajectories.front().nodes.empty(),
            "pose graph: no nodes to anchor");
    gauge_pose = trajectories.front().nodes.front().pose;
}

void MissionGraph::check_invariants() const {
    for (const MissionTrajectory& t : trajectories) t.check_invariants();
    const auto valid = [&](const NodeRef& r) {
        return r.mission >= 0 &&
               r.mission < static_cast<int>(trajectories.size()) && r.node >= 0 &&
               r.node <
                   static_cast<int>(trajectories[static_cast<size_t>(r.mission)]
                                        .nodes.size());
    };
    for (size_t f = 0; f < factors.size(); ++f) {
        const Factor& fac = factors[f];
        require(valid(fac.a) && valid(fac.b),
                "pose graph: factor " + std::to_string(f) +
                    " references a missing node");
        require(!(fac.a == fac.b), "pose graph: factor " + std::to_string(f) +
                                       " endpoints coincide");
        require(fac.relative.is_valid(),
                "pose graph: factor " + std::to_string(f) + " invalid relative");
        require((fac.information - fac.information.transpose()).norm() < 1e-9,
                "pose graph: factor " + std::to_string(f) +
                    " information not symmetric");
    }
}

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(size_t n) : parent(n) {
        std::iota(parent.begin(), parent.end(), 0);
    }
    int find(int x) {
        while (parent[static_cast<size_t>(x)] != x) {
            parent[static_cast<size_t>(x)] =
                parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
            x = parent[static_cast<size_t>(x)];
        }
        return x;
    }
    void unite(int a, int b) { parent[static_cast<size_t>(find(a))] = find(b); }
};

}  // namespace

OptimizeReport optimize_pose_graph(MissionGraph& graph,
                                   const OptimizeOptions& options) {
    graph.check_invariants();
    require(options.max_iter >= 1, "optimize_pose_graph: max_iter must be >= 1");

    // Flat state indexing.
    std::vector<size_t> offset(graph.trajectories.size(), 0);
    size_t n_nodes = 0;
    for (size_t m = 0; m < graph.trajectories.size(); ++m) {
        offset[m] = n_nodes;
        n_nodes += graph.trajectories[m].nodes.size();
    }
    const auto flat = [&](const NodeRef& r) {
        return offset[static_cast<size_t>(r.mission)] + static_cast<size_t>(r.node);
    };

    UnionFind uf(n_nodes);
    for (const Factor& f : graph.factors)
        uf.unite(static_cast<int>(flat(f.a)), static_cast<int>(flat(f.b)));
    const int root = uf.find(0);
    for (size_t m = 0; m < graph.trajectories.size(); ++m)
        for (size_t i = 0; i < graph.trajectories[m].nodes.size(); ++i)
            if (uf.find(static_cast<int>(offset[m] + i)) != root)
                throw std::runtime_error(
                    "optimize_pose_graph: graph is disconnected; mission " +
                    graph.trajectories[m].mission_id + " node " +
                    std::to_string(i) + " is not reachable from the anchor");

    const auto pose_of = [&](const NodeRef& r) -> RigidTransform& {
        return graph.trajectories[static_cast<size_t>(r.mission)]
            .nodes[static_cast<size_t>(r.node)]
            .pose;
    };

    const Matrix6d gauge_info = Matrix6d::Identity() * options.gauge_weight;
    const NodeRef anchor{0, 0};

    const auto total_error = [&]() {
        double err = 0.0;
        for (const Factor& f : graph.factors) {
            const RigidTransform rel = pose_of(f.a).inverse() * pose_of(f.b);
            const Vector6d r = se3_log(f.relative.inverse() * rel);
            err += r.dot(f.information * r);
        }
        const Vector6d rg = se3_log(graph.gauge_pose.inverse() * pose_of(anchor));
        err += rg.dot(gauge_info * rg);
        return err;
    };

    OptimizeReport report;
    report.initial_error = total_error();
    double error = report.initial_error;

    const size_t dim = 6 * n_nodes;
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd b(dim);

    const auto add_block = [&](size_t row, size_t col, const Matrix6d& block) {
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c)
                triplets.emplace_back(static_cast<int>(row * 6) + r,
                                      static_cast<int>(col * 6) + c, block(r, c));
    };

    for (int iter = 0; iter < options.max_iter; ++iter) {
        triplets.clear();
        b.setZero();

        for (const Factor& f : graph.factors) {
            const RigidTransform rel = pose_of(f.a).inverse() * pose_of(f.b);
            const Vector6d r = se3_log(f.relative.inverse() * rel);
            const Matrix6d jr_inv = se3_right_jacobian_inv(r);
            const Matrix6d jb = jr_inv;
            const Matrix6d ja = -jr_inv * se3_adjoint(rel.inverse());
            const size_t ia = flat(f.a), ib = flat(f.b);
            add_block(ia, ia, ja.transpose() * f.information * ja);
            add_block(ia, ib, ja.transpose() * f.information * jb);
            add_block(ib, ia, jb.transpose() * f.information * ja);
            add_block(ib, ib, jb.transpose() * f.information * jb);
            b.segment<6>(static_cast<Eigen::Index>(ia * 6)) +=
                ja.transpose() * f.information * r;
            b.segment<6>(static_cast<Eigen::Index>(ib * 6)) +=
                jb.transpose() * f.information * r;
        }
        {
            const Vector6d rg =
                se3_log(graph.gauge_pose.inverse() * pose_of(anchor));
            const Matrix6d jg = se3_right_jacobian_inv(rg);
            add_block(0, 0, jg.transpose() * gauge_info * jg);
            b.segment<6>(0) += jg.transpose() * gauge_info * rg;
        }

        Eigen::SparseMatrix<double> h(static_cast<Eigen::Index>(dim),
                                      static_cast<Eigen::Index>(dim));
        h.setFromTriplets(triplets.begin(), triplets.end());
        const Eigen::VectorXd h_diag = h.diagonal();

        // Try a pure Gauss-Newton step first, then escalate damping until the
        // error decreases or the damping range is exhausted.
        bool improved = false;
        double new_error = error;
        std::vector<RigidTransform> saved;
        saved.reserve(n_nodes);
        for (const MissionTrajectory& t : graph.trajectories)
            for (const TrajectoryNode& n : t.nodes) saved.push_back(n.pose);

        for (double lambda = 0.0;;) {
            Eigen::SparseMatrix<double> h_damped = h;
            if (lambda > 0.0) {
                std::vector<Eigen::Triplet<double>> damped = triplets;
                for (size_t k = 0; k < dim; ++k)
                    damped.emplace_back(
                        static_cast<int>(k), static_cast<int>(k),
                        lambda * std::max(h_diag(static_cast<Eigen::Index>(k)),
                                          1e-12));
                h_damped.setFromTriplets(damped.begin(), damped.end());
            }
            Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(h_damped);
            bool solved = solver.info() == Eigen::Success;
            Eigen::VectorXd delta;
            if (solved) {
                delta = solver.solve(-b);
                solved = solver.info() == Eigen::Success && delta.allFinite();
            }
            if (!solved && lambda == 0.0) {
                // Undamped failure usually means an underconstrained node;
                // find the weakest diagonal block for the message.
                size_t worst = 0;
                double worst_rank = std::numeric_limits<double>::max();
                for (size_t k = 0; k < n_nodes; ++k) {
                    const Matrix6d blk =
                        Eigen::MatrixXd(h).block<6, 6>(
                            static_cast<Eigen::Index>(6 * k),
                            static_cast<Eigen::Index>(6 * k));
                    const double mineig =
                        Eigen::SelfAdjointEigenSolver<Matrix6d>(blk)
                            .eigenvalues()
                            .minCoeff();
                    if (mineig < worst_rank) {
                        worst_rank = mineig;
                        worst = k;
                    }
                }
                if (worst_rank <= 1e-12) {
                    size_t m = 0;
                    while (m + 1 < offset.size() && offset[m + 1] <= worst) ++m;
                    throw std::runtime_error(
                        "optimize_pose_graph: singular normal equations near "
                        "mission " +
                        graph.trajectories[m].mission_id + " node " +
                        std::to_string(worst - offset[m]));
                }
            }
            if (solved) {
                size_t k = 0;
                for (MissionTrajectory& t : graph.trajectories)
                    for (TrajectoryNode& n : t.nodes) {
                        const Vector6d d =
                            delta.segment<6>(static_cast<Eigen::Index>(6 * k));
                        n.pose = saved[k] * se3_exp(d);
                        // composing many exponentials drifts; renormalize
                        Eigen::Quaterniond q(n.pose.rotation);
                        n.pose.rotation = q.normalized().toRotationMatrix();
                        ++k;
                    }
                new_error = total_error();
                if (new_error <= error) {
                    improved = true;
                    break;
                }
                // revert and escalate damping
                k = 0;
                for (MissionTrajectory& t : graph.trajectories)
                    for (TrajectoryNode& n : t.nodes) n.pose = saved[k++];
            }
            lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
            if (lambda > 1e8) break;
        }

        report.iterations = iter + 1;
        if (!improved) {
            report.converged = true;
            break;
        }
        const double drop = error - new_error;
        error = new_error;
        if (drop <= options.rel_tol * std::max(1.0, error)) {
            report.converged = true;
            break;
        }
    }

    report.final_error = error;
    return report;
}

}  // namespace deltamap
