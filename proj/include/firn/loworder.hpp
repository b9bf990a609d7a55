#pragma once

#include <Eigen/Dense>
#include <vector>

#include "firn/ic0.hpp"
#include "firn/krylov.hpp"
#include "firn/sparse.hpp"
#include "firn/stokes_operator.hpp"

namespace firn {

/// Configuration of the sparse low-order velocity-block approximation: the
/// high-order nodes are re-read as a k x k x k lattice of Q1 cells.
struct LowOrderConfig {
    NodeRule::Kind quadrature = NodeRule::Kind::GaussLobatto;  // F_GL (default) or F_G
    RestrictionMode restriction = RestrictionMode::Exact;      // exact or sparse hanging rows
    bool include_newton_term = true;  // keep the anisotropic rank-one part
};

namespace lowdetail {

/// 1D subcell quadrature on the Gauss-Lobatto master grid: two points per
/// interval, either interior Gauss points or the interval endpoints.
struct SubQuad {
    std::vector<double> pts;  // 2k points in [-1,1], element reference coords
    std::vector<double> wts;
    std::vector<int> cell;  // owning interval
};

inline SubQuad make_subquad(const std::vector<double>& gll, NodeRule::Kind kind) {
    SubQuad sq;
    const int k = static_cast<int>(gll.size()) - 1;
    for (int i = 0; i < k; ++i) {
        const double a = gll[i], b = gll[i + 1], h = b - a;
        if (kind == NodeRule::Kind::Gauss) {
            const double c = 0.5 * (a + b), d = 0.5 * h / std::sqrt(3.0);
            sq.pts.push_back(c - d);
            sq.pts.push_back(c + d);
        } else {
            sq.pts.push_back(a);
            sq.pts.push_back(b);
        }
        sq.wts.push_back(0.5 * h);
        sq.wts.push_back(0.5 * h);
        sq.cell.push_back(i);
        sq.cell.push_back(i);
    }
    return sq;
}

/// 27-neighborhood block accumulator on the element node lattice.
class LocalBlocks {
public:
    LocalBlocks(int k) : k_(k), n1_(k + 1), data_(size_t(n1_ * n1_ * n1_) * 27 * 9, 0.0) {}

    void reset() { std::fill(data_.begin(), data_.end(), 0.0); }

    double& at(int ln, int off, int c, int d) {
        return data_[((size_t(ln) * 27 + off) * 3 + c) * 3 + d];
    }
    double at(int ln, int off, int c, int d) const {
        return data_[((size_t(ln) * 27 + off) * 3 + c) * 3 + d];
    }

    int k() const { return k_; }

private:
    int k_, n1_;
    std::vector<double> data_;
};

} // namespace lowdetail

/// Assemble the sparse low-order approximation of the linearized velocity
/// block at state u (coefficients evaluated from the high-order state at the
/// subcell quadrature points). Includes the basal Robin term and applies the
/// configured hanging-node restriction on both sides.
inline SparseMatrix assemble_low_order_F(const StokesOperator& op, const double* u_state,
                                         const LowOrderConfig& cfg = {}) {
    const Discretization& d = op.disc();
    const DofMap& dm = d.dm;
    const HexMesh& mesh = *d.mesh;
    const int k = d.k;
    const int k1 = k + 1;
    const int nn = dm.nn;
    const int ne = mesh.n_leaves();
    const Rheology& rheo = op.rheology();

    const auto gll = gll_rule(k).points;
    const auto sq = lowdetail::make_subquad(gll, cfg.quadrature);
    const int m = static_cast<int>(sq.pts.size());

    TensorKernels state_eval(gll, sq.pts);

    // 1D hat values and the (element-reference) derivative scale per point.
    std::vector<double> h0(m), h1(m), hd(m);
    for (int p = 0; p < m; ++p) {
        const int c = sq.cell[p];
        const double t = (sq.pts[p] - gll[c]) / (gll[c + 1] - gll[c]);
        h0[p] = 1.0 - t;
        h1[p] = t;
        hd[p] = 1.0 / (gll[c + 1] - gll[c]);
    }

    const auto& vm = dm.vel_map(cfg.restriction);
    SparseBuilder builder(d.n_u, d.n_u);
    lowdetail::LocalBlocks local(k);

    std::vector<double> ue(3 * nn), comp(nn), gxyz(size_t(3) * m * m * m);
    std::vector<Mat3> Gref(size_t(m) * m * m);
    std::vector<Vec3> xe(nn);
    std::vector<std::pair<std::pair<std::int32_t, std::int32_t>, double>> batch;
    const bool spatial_B = static_cast<bool>(rheo.B_field);

    for (int e = 0; e < ne; ++e) {
        local.reset();
        dm.element_coords(e, xe.data());
        dm.gather_velocity(e, u_state, ue.data(), RestrictionMode::Exact);
        for (int c = 0; c < 3; ++c) {
            for (int i = 0; i < nn; ++i) comp[i] = ue[3 * i + c];
            state_eval.gradient(comp.data(), gxyz.data());
            for (int q = 0; q < m * m * m; ++q)
                for (int dd = 0; dd < 3; ++dd) Gref[q](c, dd) = gxyz[3 * q + dd];
        }

        for (int lz = 0; lz < k; ++lz)
            for (int ly = 0; ly < k; ++ly)
                for (int lx = 0; lx < k; ++lx) {
                    TrilinearCell sub;
                    for (int K = 0; K < 8; ++K)
                        sub.corners[K] =
                            xe[dm.local_node(lx + (K & 1), ly + ((K >> 1) & 1), lz + (K >> 2))];
                    const double sx = 0.5 * (gll[lx + 1] - gll[lx]);
                    const double sy = 0.5 * (gll[ly + 1] - gll[ly]);
                    const double sz = 0.5 * (gll[lz + 1] - gll[lz]);
                    const int px[2] = {2 * lx, 2 * lx + 1};
                    const int py[2] = {2 * ly, 2 * ly + 1};
                    const int pz[2] = {2 * lz, 2 * lz + 1};
                    for (int qz = 0; qz < 2; ++qz)
                        for (int qy = 0; qy < 2; ++qy)
                            for (int qx = 0; qx < 2; ++qx) {
                                const int ax = px[qx], ay = py[qy], az = pz[qz];
                                const int gq = ax + m * (ay + m * az);
                                // Subcell-reference point and the Jacobian in
                                // the element reference frame.
                                const Vec3 xi{2.0 * h1[ax] - 1.0, 2.0 * h1[ay] - 1.0,
                                              2.0 * h1[az] - 1.0};
                                Mat3 Jel = trilinear_jacobian(sub, xi);
                                for (int r = 0; r < 3; ++r) {
                                    Jel(r, 0) /= sx;
                                    Jel(r, 1) /= sy;
                                    Jel(r, 2) /= sz;
                                }
                                const double dj = det(Jel);
                                if (!(dj > 0))
                                    throw std::runtime_error(
                                        "low-order: nonpositive subcell Jacobian");
                                const Mat3 JiT = transpose(inverse(Jel));
                                const double w = sq.wts[ax] * sq.wts[ay] * sq.wts[az] * dj;

                                // Frozen coefficients from the high-order state.
                                Mat3 Gp;
                                for (int c = 0; c < 3; ++c) {
                                    const Vec3 g{Gref[gq](c, 0), Gref[gq](c, 1), Gref[gq](c, 2)};
                                    const Vec3 gp = matvec(JiT, g);
                                    Gp(c, 0) = gp.x;
                                    Gp(c, 1) = gp.y;
                                    Gp(c, 2) = gp.z;
                                }
                                const StrainRate D0 = StrainRate::from_gradient(Gp);
                                const double II = D0.invariant2();
                                const double Bv =
                                    spatial_B ? rheo.B_field(trilinear_map(sub, xi)) : rheo.B;
                                const double nu =
                                    Bv * std::pow(II + rheo.eps, (1.0 - rheo.n) / (2.0 * rheo.n));
                                const double c1 = cfg.include_newton_term
                                                      ? newton_rank1_coeff(rheo, nu, II)
                                                      : 0.0;

                                // Q1 hat gradients in physical coordinates.
                                Vec3 grad[8];
                                const double bx[2] = {h0[ax], h1[ax]};
                                const double by[2] = {h0[ay], h1[ay]};
                                const double bz[2] = {h0[az], h1[az]};
                                for (int K = 0; K < 8; ++K) {
                                    const int cx = K & 1, cy = (K >> 1) & 1, cz = K >> 2;
                                    const Vec3 gref{(cx ? hd[ax] : -hd[ax]) * by[cy] * bz[cz],
                                                    bx[cx] * (cy ? hd[ay] : -hd[ay]) * bz[cz],
                                                    bx[cx] * by[cy] * (cz ? hd[az] : -hd[az])};
                                    grad[K] = matvec(JiT, gref);
                                }
                                Vec3 D0g[8];
                                if (c1 != 0.0)
                                    for (int K = 0; K < 8; ++K) {
                                        const Vec3& g = grad[K];
                                        D0g[K] = {
                                            D0.d[0] * g.x + D0.d[5] * g.y + D0.d[4] * g.z,
                                            D0.d[5] * g.x + D0.d[1] * g.y + D0.d[3] * g.z,
                                            D0.d[4] * g.x + D0.d[3] * g.y + D0.d[2] * g.z};
                                    }
                                for (int A = 0; A < 8; ++A) {
                                    const int la = dm.local_node(lx + (A & 1), ly + ((A >> 1) & 1),
                                                                 lz + (A >> 2));
                                    for (int B = 0; B < 8; ++B) {
                                        const int off = ((B & 1) - (A & 1) + 1) +
                                                        3 * (((B >> 1) & 1) - ((A >> 1) & 1) + 1) +
                                                        9 * ((B >> 2) - (A >> 2) + 1);
                                        const double gh = dot(grad[A], grad[B]);
                                        for (int c = 0; c < 3; ++c)
                                            for (int dd = 0; dd < 3; ++dd) {
                                                double v = 0.5 * nu *
                                                           ((c == dd ? gh : 0.0) +
                                                            grad[B][c] * grad[A][dd]);
                                                if (c1 != 0.0)
                                                    v -= c1 * D0g[B][dd] * D0g[A][c];
                                                if (v != 0.0) local.at(la, off, c, dd) += w * v;
                                            }
                                    }
                                }
                            }
                }

        // Basal Robin term on the k x k subfacet lattice of a bed element.
        if (d.facet_of_leaf[e] >= 0 && op.beta_fn()) {
            const auto& beta = op.beta_fn();
            for (int ly = 0; ly < k; ++ly)
                for (int lx = 0; lx < k; ++lx) {
                    Vec3 corners[4];
                    for (int K = 0; K < 4; ++K)
                        corners[K] = xe[dm.local_node(lx + (K & 1), ly + (K >> 1), 0)];
                    const int px[2] = {2 * lx, 2 * lx + 1};
                    const int py[2] = {2 * ly, 2 * ly + 1};
                    for (int qy = 0; qy < 2; ++qy)
                        for (int qx = 0; qx < 2; ++qx) {
                            const int ax = px[qx], ay = py[qy];
                            const double bxv[2] = {h0[ax], h1[ax]};
                            const double byv[2] = {h0[ay], h1[ay]};
                            // Bilinear facet geometry at the point (local
                            // coordinates u1, u2 in [0,1], weight 1/4 each).
                            const double u1 = h1[ax], u2 = h1[ay];
                            const Vec3 tx = (corners[1] - corners[0]) * (1 - u2) +
                                            (corners[3] - corners[2]) * u2;
                            const Vec3 ty = (corners[2] - corners[0]) * (1 - u1) +
                                            (corners[3] - corners[1]) * u1;
                            const Vec3 cr = cross(tx, ty);
                            const double area = norm(cr);
                            const Vec3 nrm = cr * (-1.0 / area);
                            const Vec3 xq = corners[0] * ((1 - u1) * (1 - u2)) +
                                            corners[1] * (u1 * (1 - u2)) +
                                            corners[2] * ((1 - u1) * u2) +
                                            corners[3] * (u1 * u2);
                            const double bw = 0.25 * beta(xq.x, xq.y) * area;
                            double val[4];
                            for (int K = 0; K < 4; ++K)
                                val[K] = bxv[K & 1] * byv[K >> 1];
                            for (int A = 0; A < 4; ++A) {
                                const int la = dm.local_node(lx + (A & 1), ly + (A >> 1), 0);
                                for (int B = 0; B < 4; ++B) {
                                    const int off = ((B & 1) - (A & 1) + 1) +
                                                    3 * ((B >> 1) - (A >> 1) + 1) + 9;
                                    const double pv = bw * val[A] * val[B];
                                    if (pv == 0.0) continue;
                                    for (int c = 0; c < 3; ++c)
                                        for (int dd = 0; dd < 3; ++dd) {
                                            const double tcd =
                                                (c == dd ? 1.0 : 0.0) - nrm[c] * nrm[dd];
                                            if (tcd != 0.0)
                                                local.at(la, off, c, dd) += pv * tcd;
                                        }
                                }
                            }
                        }
                }
        }

        // Expand local blocks through the restriction into global triplets.
        batch.clear();
        for (int ln = 0; ln < nn; ++ln) {
            const int ix = ln % k1, iy = (ln / k1) % k1, iz = ln / (k1 * k1);
            auto [ra, rae] = vm.row(e, nn, ln);
            for (int off = 0; off < 27; ++off) {
                const int jx = ix + off % 3 - 1, jy = iy + (off / 3) % 3 - 1, jz = iz + off / 9 - 1;
                if (jx < 0 || jx > k || jy < 0 || jy > k || jz < 0 || jz > k) continue;
                const int lnb = dm.local_node(jx, jy, jz);
                auto [rb, rbe] = vm.row(e, nn, lnb);
                // Store whole 3x3 node blocks (block-CSR convention): skip a
                // node pair only when every component coupling vanishes, as
                // the vertex rule makes all nine of them do across cell
                // diagonals.
                bool any = false;
                for (int c = 0; c < 9 && !any; ++c)
                    any = local.at(ln, off, c / 3, c % 3) != 0.0;
                if (!any) continue;
                for (int c = 0; c < 3; ++c)
                    for (int dd = 0; dd < 3; ++dd) {
                        const double v = local.at(ln, off, c, dd);
                        // Keep the upper triangle only; the mirror image of
                        // each contribution lands on the transposed entry with
                        // the same value, so finalize_mirrored restores the
                        // exact symmetric matrix.
                        for (auto* pa = ra; pa != rae; ++pa) {
                            const double wa = pa->c[c];
                            if (wa == 0.0) continue;
                            for (auto* pb = rb; pb != rbe; ++pb) {
                                const double wb = pb->c[dd];
                                if (wb == 0.0 || pa->gdof > pb->gdof) continue;
                                batch.push_back({{pa->gdof, pb->gdof}, wa * v * wb});
                            }
                        }
                    }
            }
        }
        builder.add_batch(batch);
    }
    return builder.finalize_mirrored();
}

/// Diagonally-lumped weighted pressure mass: entry i = integral of
/// psi_i / nu(u) over its element. Positive; the Schur approximation is its
/// negative.
inline std::vector<double> assemble_pressure_mass(const StokesOperator& op,
                                                  const FrozenCoeffs& fc) {
    const Discretization& d = op.disc();
    if (d.n_p == 0) return {};
    const int ne = d.mesh->n_leaves();
    const int nq = d.nq;
    const int np = d.pspace.ndofs_per_elem();
    std::vector<double> diag(d.n_p, 0.0);
    std::vector<double> wq(nq);
    for (int e = 0; e < ne; ++e) {
        for (int q = 0; q < nq; ++q)
            wq[q] = d.geo.wq(q) * d.geo.det_j(e, q) / fc.nu[static_cast<size_t>(e) * nq + q];
        d.pspace.lump_weighted_mass(wq.data(), diag.data() + static_cast<size_t>(e) * np);
    }
    for (double v : diag)
        if (!(v > 0)) throw std::runtime_error("pressure mass: nonpositive lumped entry");
    return diag;
}

/// Dense spectrum of F u = lambda Ftilde u for small problems: F applied
/// column by column, then a generalized symmetric eigensolve.
inline std::vector<double> generalized_eigen_dense(const LinOp& F, const SparseMatrix& Ft) {
    const int n = F.n;
    Eigen::MatrixXd Fd(n, n), Td(n, n);
    std::vector<double> ei(n, 0.0), col(n);
    for (int j = 0; j < n; ++j) {
        ei[j] = 1.0;
        F.apply(ei.data(), col.data());
        for (int i = 0; i < n; ++i) Fd(i, j) = col[i];
        ei[j] = 0.0;
    }
    Td.setZero();
    for (int r = 0; r < n; ++r)
        for (std::int64_t p = Ft.rowptr()[r]; p < Ft.rowptr()[r + 1]; ++p)
            Td(r, Ft.colind()[p]) = Ft.values()[p];
    Fd = 0.5 * (Fd + Fd.transpose());
    Td = 0.5 * (Td + Td.transpose());
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(Fd, Td);
    return {es.eigenvalues().data(), es.eigenvalues().data() + n};
}

/// Extremal generalized eigenvalues of F u = lambda Ftilde u by power
/// iteration on Ftilde^{-1} F and F^{-1} Ftilde (each inverse by PCG).
struct EigenExtremes {
    double lambda_min = 0, lambda_max = 0;
};

inline EigenExtremes generalized_eigen_extremes(const LinOp& F, const SparseMatrix& Ft,
                                                int outer_iters = 20, double inner_rtol = 1e-9) {
    const int n = F.n;
    IC0Factor prec(Ft, {PivotStrategy::ShiftInBlocks, 1e-3});
    PrecOp M{n, [&](const double* r, double* z) { prec.solve(r, z); }};
    LinOp Ftop{n, [&](const double* x, double* y) { Ft.spmv(x, y); }};

    LinOp fwd{n, [&](const double* x, double* y) {
                  std::vector<double> t(n);
                  F.apply(x, t.data());
                  std::fill(y, y + n, 0.0);
                  pcg(Ftop, M, t.data(), y, {0, 400, inner_rtol});
              }};
    LinOp bwd{n, [&](const double* x, double* y) {
                  std::vector<double> t(n);
                  Ft.spmv(x, t.data());
                  std::fill(y, y + n, 0.0);
                  PrecOp MF{n, [&](const double* r, double* z) { prec.solve(r, z); }};
                  pcg(F, MF, t.data(), y, {0, 800, inner_rtol});
              }};
    EigenExtremes out;
    out.lambda_max = power_lambda_max(fwd, outer_iters);
    out.lambda_min = 1.0 / power_lambda_max(bwd, outer_iters);
    return out;
}

} // namespace firn
