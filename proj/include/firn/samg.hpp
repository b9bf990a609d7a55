#pragma once

#include <Eigen/Dense>
#include <memory>
#include <numeric>
#include <random>

#include "firn/dofmap.hpp"
#include "firn/fields.hpp"
#include "firn/smoothers.hpp"
#include "firn/sparse.hpp"

namespace firn {

/// Per-level node metadata: variable dofs per node, coordinates for the
/// rigid-body basis, and column ids for column-preserving aggregation.
struct LevelNodes {
    int n_nodes = 0;
    std::vector<std::int32_t> node_dof;   // first dof of each node
    std::vector<std::int32_t> node_ndof;  // 2..6
    std::vector<std::int32_t> dof_node;   // inverse map
    std::vector<Vec3> pos;
    std::vector<std::int32_t> column;  // -1 when absent
};

inline LevelNodes level_nodes_from_dofmap(const DofMap& dm) {
    LevelNodes ln;
    ln.n_nodes = dm.n_nodes;
    ln.node_dof.assign(dm.node_dof.begin(), dm.node_dof.end());
    ln.node_ndof.assign(dm.node_ndof.begin(), dm.node_ndof.end());
    ln.pos = dm.node_pos;
    ln.column.assign(dm.node_column.begin(), dm.node_column.end());
    ln.dof_node.resize(dm.n_vel_dofs);
    for (int i = 0; i < dm.n_nodes; ++i)
        for (int c = 0; c < dm.node_ndof[i]; ++c) ln.dof_node[dm.node_dof[i] + c] = i;
    return ln;
}

/// Rigid-body near-nullspace in the packed dof basis (3 translations plus 3
/// rotations about the domain centroid), column-major n_dofs x 6.
inline std::vector<double> rigid_body_nullspace(const DofMap& dm) {
    Vec3 centroid{};
    for (const auto& p : dm.node_pos) centroid += p;
    centroid = centroid * (1.0 / std::max(1, dm.n_nodes));
    std::vector<double> B(static_cast<size_t>(dm.n_vel_dofs) * 6, 0.0);
    for (int i = 0; i < dm.n_nodes; ++i) {
        const Vec3 r = dm.node_pos[i] - centroid;
        const Vec3 modes[6] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1},
                               {0, -r.z, r.y}, {r.z, 0, -r.x}, {-r.y, r.x, 0}};
        const Mat3& Q = dm.node_frame[i];
        for (int mcol = 0; mcol < 6; ++mcol)
            for (int c = 0; c < dm.node_ndof[i]; ++c) {
                const double v = Q(0, c) * modes[mcol].x + Q(1, c) * modes[mcol].y +
                                 Q(2, c) * modes[mcol].z;
                B[static_cast<size_t>(mcol) * dm.n_vel_dofs + dm.node_dof[i] + c] = v;
            }
    }
    return B;
}

/// Strength-of-connection graph per the squared-entry test
/// |a_ij|^2 >= theta |a_ii| |a_jj| on the node-collapsed matrix. theta = 0
/// keeps the whole nonzero pattern.
inline SparseMatrix strength_graph(const SparseMatrix& node_mat, double theta) {
    SparseBuilder b(node_mat.nrows(), node_mat.ncols());
    const auto diag = node_mat.diagonal();
    for (int r = 0; r < node_mat.nrows(); ++r)
        for (std::int64_t p = node_mat.rowptr()[r]; p < node_mat.rowptr()[r + 1]; ++p) {
            const int c = node_mat.colind()[p];
            if (c == r) continue;
            const double a = node_mat.values()[p];
            if (a * a >= theta * std::abs(diag[r]) * std::abs(diag[c]))
                b.add(r, c, a);
        }
    return b.finalize();
}

struct Aggregation {
    int n_aggregates = 0;
    std::vector<std::int32_t> node_agg;
    std::vector<std::int32_t> agg_column;  // coarse column id, -1 without columns
    bool column_mode = false;
    std::uint64_t seed = 0;
};

/// Randomized greedy MIS aggregation: roots picked in shuffled order form a
/// distance-2 independent set; each takes its free neighbors, leftovers join
/// the strongest adjacent aggregate.
inline Aggregation mis_aggregate(const SparseMatrix& graph, std::uint64_t seed) {
    const int n = graph.nrows();
    Aggregation agg;
    agg.seed = seed;
    agg.node_agg.assign(n, -1);
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    int na = 0;
    for (int i : order) {
        if (agg.node_agg[i] >= 0) continue;
        bool free_nbhd = true;
        for (std::int64_t p = graph.rowptr()[i]; p < graph.rowptr()[i + 1]; ++p)
            if (agg.node_agg[graph.colind()[p]] >= 0) {
                free_nbhd = false;
                break;
            }
        if (!free_nbhd) continue;
        agg.node_agg[i] = na;
        for (std::int64_t p = graph.rowptr()[i]; p < graph.rowptr()[i + 1]; ++p)
            agg.node_agg[graph.colind()[p]] = na;
        ++na;
    }
    for (int i : order) {
        if (agg.node_agg[i] >= 0) continue;
        int best = -1;
        double best_w = -1;
        for (std::int64_t p = graph.rowptr()[i]; p < graph.rowptr()[i + 1]; ++p) {
            const int j = graph.colind()[p];
            if (agg.node_agg[j] >= 0 && std::abs(graph.values()[p]) > best_w) {
                best_w = std::abs(graph.values()[p]);
                best = agg.node_agg[j];
            }
        }
        agg.node_agg[i] = best >= 0 ? best : na++;
    }
    agg.n_aggregates = na;
    agg.agg_column.assign(na, -1);
    return agg;
}

/// Column-preserving aggregation: aggregate whole columns by MIS on the
/// column-quotient graph, then split each aggregated column vertically into
/// chunks of at least three node layers (the last chunk absorbs remainders).
/// Aggregates carry the coarse column id, so the scheme recurses.
inline Aggregation column_aggregate(const SparseMatrix& graph,
                                    const std::vector<std::int32_t>& column,
                                    const std::vector<Vec3>& pos, std::uint64_t seed) {
    const int n = graph.nrows();
    bool has_columns = false;
    for (int i = 0; i < n; ++i)
        if (column[i] >= 0) has_columns = true;
    if (!has_columns) {
        Aggregation fallback = mis_aggregate(graph, seed);
        fallback.column_mode = false;
        return fallback;
    }
    int ncol = 0;
    for (int i = 0; i < n; ++i) ncol = std::max(ncol, column[i] + 1);

    // Column-quotient graph.
    SparseBuilder qb(ncol, ncol);
    for (int i = 0; i < n; ++i)
        for (std::int64_t p = graph.rowptr()[i]; p < graph.rowptr()[i + 1]; ++p) {
            const int cj = column[graph.colind()[p]];
            const int ci = column[i];
            if (ci >= 0 && cj >= 0 && ci != cj) qb.add(ci, cj, std::abs(graph.values()[p]));
        }
    const SparseMatrix quotient = qb.finalize();
    const Aggregation colagg = mis_aggregate(quotient, seed);

    Aggregation agg;
    agg.seed = seed;
    agg.column_mode = true;
    agg.node_agg.assign(n, -1);

    // Nodes of each aggregated column, and the reference column's layers.
    std::vector<std::vector<int>> members(colagg.n_aggregates);
    for (int i = 0; i < n; ++i)
        if (column[i] >= 0) members[colagg.node_agg[column[i]]].push_back(i);

    int na = 0;
    std::vector<std::int32_t> agg_col;
    for (int g = 0; g < colagg.n_aggregates; ++g) {
        auto& nodes = members[g];
        if (nodes.empty()) continue;
        // Reference layers: distinct z of the lowest-indexed member column.
        int ref_col = ncol;
        for (int i : nodes) ref_col = std::min(ref_col, column[i]);
        std::vector<double> zs;
        for (int i : nodes)
            if (column[i] == ref_col) zs.push_back(pos[i].z);
        std::sort(zs.begin(), zs.end());
        zs.erase(std::unique(zs.begin(), zs.end(),
                             [](double a, double b) { return std::abs(a - b) < 1e-12; }),
                 zs.end());
        const int layers = static_cast<int>(zs.size());
        const int nchunks = std::max(1, layers / 3);
        // Cut heights between layer 3j-1 and 3j of the reference column.
        std::vector<double> cuts;
        for (int c = 1; c < nchunks; ++c) cuts.push_back(0.5 * (zs[3 * c - 1] + zs[3 * c]));
        for (int i : nodes) {
            int chunk = 0;
            while (chunk < static_cast<int>(cuts.size()) && pos[i].z > cuts[chunk]) ++chunk;
            agg.node_agg[i] = na + chunk;
        }
        for (int c = 0; c < nchunks; ++c) agg_col.push_back(g);
        na += nchunks;
    }
    // Nodes without a column id join the aggregate of their strongest neighbor.
    for (int i = 0; i < n; ++i) {
        if (agg.node_agg[i] >= 0) continue;
        int best = -1;
        double best_w = -1;
        for (std::int64_t p = graph.rowptr()[i]; p < graph.rowptr()[i + 1]; ++p) {
            const int j = graph.colind()[p];
            if (agg.node_agg[j] >= 0 && std::abs(graph.values()[p]) > best_w) {
                best_w = std::abs(graph.values()[p]);
                best = agg.node_agg[j];
            }
        }
        if (best < 0) {
            best = na++;
            agg_col.push_back(-1);
        }
        agg.node_agg[i] = best;
    }
    agg.n_aggregates = na;
    agg.agg_column = std::move(agg_col);
    return agg;
}

/// Tentative prolongator: per-aggregate orthonormalization of the near
/// -nullspace (thin QR); rank-deficient aggregates keep fewer coarse dofs.
struct TentativeResult {
    SparseMatrix P;
    std::vector<double> coarse_nullspace;  // nc_dofs x 6 column-major
    LevelNodes coarse;
    int rank_deficient = 0;
};

inline TentativeResult tentative_prolongator(const Aggregation& agg, const LevelNodes& fine,
                                             const std::vector<double>& nullspace, int null_dim = 6) {
    const int n_dofs = static_cast<int>(fine.dof_node.size());
    TentativeResult out;
    std::vector<std::vector<int>> members(agg.n_aggregates);
    for (int i = 0; i < fine.n_nodes; ++i) members[agg.node_agg[i]].push_back(i);

    // Coarse dof layout, then entries.
    out.coarse.n_nodes = agg.n_aggregates;
    out.coarse.node_dof.resize(agg.n_aggregates);
    out.coarse.node_ndof.resize(agg.n_aggregates);
    out.coarse.pos.resize(agg.n_aggregates);
    out.coarse.column = agg.agg_column;

    int coarse_dofs = 0;
    std::vector<int> ranks(agg.n_aggregates);
    std::vector<Eigen::MatrixXd> qs(agg.n_aggregates), cs(agg.n_aggregates);
    for (int g = 0; g < agg.n_aggregates; ++g) {
        int rows = 0;
        for (int i : members[g]) rows += fine.node_ndof[i];
        Eigen::MatrixXd N(rows, null_dim);
        int r = 0;
        Vec3 centroid{};
        for (int i : members[g]) {
            for (int c = 0; c < fine.node_ndof[i]; ++c, ++r)
                for (int m = 0; m < null_dim; ++m)
                    N(r, m) = nullspace[static_cast<size_t>(m) * n_dofs + fine.node_dof[i] + c];
            centroid += fine.pos[i];
        }
        out.coarse.pos[g] = centroid * (1.0 / std::max<size_t>(1, members[g].size()));
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(N);
        qr.setThreshold(1e-10);
        const int rank = std::max<int>(1, static_cast<int>(qr.rank()));
        if (rank < null_dim) ++out.rank_deficient;
        Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, rank);
        qs[g] = Q;
        cs[g] = Q.transpose() * N;  // coarse near-nullspace block
        ranks[g] = rank;
        out.coarse.node_ndof[g] = rank;
        out.coarse.node_dof[g] = coarse_dofs;
        coarse_dofs += rank;
    }
    out.coarse.dof_node.resize(coarse_dofs);
    for (int g = 0; g < agg.n_aggregates; ++g)
        for (int c = 0; c < ranks[g]; ++c) out.coarse.dof_node[out.coarse.node_dof[g] + c] = g;

    SparseBuilder builder(n_dofs, coarse_dofs);
    out.coarse_nullspace.assign(static_cast<size_t>(coarse_dofs) * null_dim, 0.0);
    for (int g = 0; g < agg.n_aggregates; ++g) {
        int r = 0;
        for (int i : members[g])
            for (int c = 0; c < fine.node_ndof[i]; ++c, ++r)
                for (int j = 0; j < ranks[g]; ++j) {
                    const double v = qs[g](r, j);
                    if (v != 0.0) builder.add(fine.node_dof[i] + c, out.coarse.node_dof[g] + j, v);
                }
        for (int j = 0; j < ranks[g]; ++j)
            for (int m = 0; m < null_dim; ++m)
                out.coarse_nullspace[static_cast<size_t>(m) * coarse_dofs + out.coarse.node_dof[g] +
                                     j] = cs[g](j, m);
    }
    out.P = builder.finalize();
    return out;
}

/// P = (I - omega D^{-1} A) P_tent with omega = scale / lambda_max(D^{-1}A).
inline SparseMatrix smooth_prolongator(const SparseMatrix& A, const SparseMatrix& Ptent,
                                       double omega_scale = 4.0 / 3.0,
                                       double* omega_used = nullptr) {
    const auto diag = A.diagonal();
    LinOp DA{A.nrows(), [&](const double* x, double* y) {
                 A.spmv(x, y);
                 for (int i = 0; i < A.nrows(); ++i) y[i] /= diag[i];
             }};
    const double lmax = std::max(1e-300, power_lambda_max(DA, 15));
    const double omega = omega_scale / lmax;
    if (omega_used) *omega_used = omega;
    // M = I - omega D^{-1} A, then P = M * Ptent.
    SparseBuilder mb(A.nrows(), A.ncols());
    for (int r = 0; r < A.nrows(); ++r) {
        bool diag_seen = false;
        for (std::int64_t p = A.rowptr()[r]; p < A.rowptr()[r + 1]; ++p) {
            const int c = A.colind()[p];
            double v = -omega * A.values()[p] / diag[r];
            if (c == r) {
                v += 1.0;
                diag_seen = true;
            }
            mb.add(r, c, v);
        }
        if (!diag_seen) mb.add(r, r, 1.0);
    }
    return mb.finalize().multiply(Ptent);
}

enum class AggregationMode { Standard, Column };
enum class FineResidual { HighOrder, LowOrder };

struct AmgOptions {
    AggregationMode aggregation = AggregationMode::Column;
    double theta = 0.0;
    SmootherConfig smoother{};
    int coarse_size = 50;
    int max_levels = 32;
    double omega_scale = 4.0 / 3.0;
    bool smoothed = true;
    int pre_sweeps = 1, post_sweeps = 1;
    std::uint64_t seed = 1234;
};

/// Smoothed-aggregation hierarchy with Galerkin coarse operators and a dense
/// factorization of the coarsest level.
class AmgHierarchy {
public:
    struct Level {
        SparseMatrix A;
        SparseMatrix P;  // to the next coarser level (absent on the coarsest)
        std::unique_ptr<Smoother> smoother;
        LevelNodes nodes;
        Aggregation agg;
    };

    AmgHierarchy() = default;

    /// `fine_op` is the operator whose residuals the finest smoother will see
    /// (the high-order fine-level residual option); used to calibrate the
    /// finest Chebyshev interval.
    AmgHierarchy(SparseMatrix A0, const LevelNodes& nodes0, std::vector<double> nullspace,
                 AmgOptions opt, const LinOp* fine_op = nullptr)
        : opt_(opt) {
        LevelNodes nodes = nodes0;
        std::vector<double> B = std::move(nullspace);
        SparseMatrix A = std::move(A0);
        for (int l = 0; l < opt.max_levels && A.nrows() > opt.coarse_size; ++l) {
            Level lvl;
            lvl.A = std::move(A);
            const SparseMatrix node_mat = lvl.A.block_collapse(nodes.dof_node, nodes.n_nodes);
            const SparseMatrix graph = strength_graph(node_mat, opt_.theta);
            const std::uint64_t seed = substream_seed(opt_.seed, "aggregate-" + std::to_string(l));
            lvl.agg = opt_.aggregation == AggregationMode::Column
                          ? column_aggregate(graph, nodes.column, nodes.pos, seed)
                          : mis_aggregate(graph, seed);
            if (lvl.agg.n_aggregates >= nodes.n_nodes && nodes.n_nodes > 1)
                throw std::runtime_error("amg: coarsening stagnated (no aggregation progress)");
            auto tent = tentative_prolongator(lvl.agg, nodes, B);
            lvl.P = opt_.smoothed ? smooth_prolongator(lvl.A, tent.P, opt_.omega_scale) : tent.P;
            SparseMatrix Ac = lvl.P.transpose().multiply(lvl.A.multiply(lvl.P));
            lvl.smoother =
                std::make_unique<Smoother>(lvl.A, opt_.smoother, l == 0 ? fine_op : nullptr);
            lvl.nodes = std::move(nodes);
            nodes = std::move(tent.coarse);
            B = std::move(tent.coarse_nullspace);
            levels_.push_back(std::move(lvl));
            A = std::move(Ac);
        }
        Level last;
        last.A = std::move(A);
        last.nodes = std::move(nodes);
        levels_.push_back(std::move(last));
        factor_coarsest();
    }

    /// Recompute the Galerkin products and smoothers for new fine-level
    /// coefficients, reusing all prolongators and aggregates.
    void rebuild(SparseMatrix A0, const LinOp* fine_op = nullptr) {
        levels_[0].A = std::move(A0);
        for (size_t l = 0; l + 1 < levels_.size(); ++l) {
            levels_[l].smoother = std::make_unique<Smoother>(levels_[l].A, opt_.smoother,
                                                             l == 0 ? fine_op : nullptr);
            levels_[l + 1].A =
                levels_[l].P.transpose().multiply(levels_[l].A.multiply(levels_[l].P));
        }
        factor_coarsest();
    }

    int n_levels() const { return static_cast<int>(levels_.size()); }
    const Level& level(int l) const { return levels_[l]; }

    double operator_complexity() const {
        double total = 0;
        for (const auto& l : levels_) total += double(l.A.nnz());
        return total / double(levels_.front().A.nnz());
    }

    bool stationary() const {
        for (size_t l = 0; l + 1 < levels_.size(); ++l)
            if (!levels_[l].smoother->stationary()) return false;
        return true;
    }

    /// One V-cycle for A z = r from a zero initial guess. The finest-level
    /// smoother residual may use the high-order operator.
    void vcycle(const double* r, double* z, const LinOp* fine_op = nullptr) const {
        cycle(0, r, z, fine_op);
    }

private:
    void factor_coarsest() {
        const SparseMatrix& A = levels_.back().A;
        const int n = A.nrows();
        Eigen::MatrixXd Ad = Eigen::MatrixXd::Zero(n, n);
        for (int rr = 0; rr < n; ++rr)
            for (std::int64_t p = A.rowptr()[rr]; p < A.rowptr()[rr + 1]; ++p)
                Ad(rr, A.colind()[p]) = A.values()[p];
        coarse_solver_ = Ad.ldlt();
    }

    void cycle(int l, const double* b, double* x, const LinOp* fine_op) const {
        const Level& lvl = levels_[l];
        const int n = lvl.A.nrows();
        if (l + 1 == static_cast<int>(levels_.size())) {
            Eigen::Map<const Eigen::VectorXd> bm(b, n);
            Eigen::VectorXd xs = coarse_solver_.solve(bm);
            std::copy(xs.data(), xs.data() + n, x);
            return;
        }
        const LinOp Aop =
            l == 0 && fine_op ? *fine_op
                              : LinOp{n, [&lvl](const double* xi, double* yi) { lvl.A.spmv(xi, yi); }};
        std::fill(x, x + n, 0.0);
        for (int s = 0; s < opt_.pre_sweeps; ++s) lvl.smoother->smooth(Aop, b, x);
        std::vector<double> r(n), rc(lvl.P.ncols()), zc(lvl.P.ncols());
        Aop.apply(x, r.data());
        for (int i = 0; i < n; ++i) r[i] = b[i] - r[i];
        // Restriction = P^T.
        std::fill(rc.begin(), rc.end(), 0.0);
        for (int i = 0; i < n; ++i) {
            const double ri = r[i];
            for (std::int64_t p = lvl.P.rowptr()[i]; p < lvl.P.rowptr()[i + 1]; ++p)
                rc[lvl.P.colind()[p]] += lvl.P.values()[p] * ri;
        }
        cycle(l + 1, rc.data(), zc.data(), nullptr);
        for (int i = 0; i < n; ++i) {
            double s = 0;
            for (std::int64_t p = lvl.P.rowptr()[i]; p < lvl.P.rowptr()[i + 1]; ++p)
                s += lvl.P.values()[p] * zc[lvl.P.colind()[p]];
            x[i] += s;
        }
        for (int s = 0; s < opt_.post_sweeps; ++s) lvl.smoother->smooth(Aop, b, x);
    }

    AmgOptions opt_;
    std::vector<Level> levels_;
    Eigen::LDLT<Eigen::MatrixXd> coarse_solver_;
};

} // namespace firn
