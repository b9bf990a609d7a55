#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "firn/dofmap.hpp"
#include "firn/fe_geometry.hpp"
#include "firn/fields.hpp"
#include "firn/mesh.hpp"
#include "firn/pressure.hpp"
#include "firn/rheology.hpp"
#include "firn/tensor.hpp"

namespace firn {

/// Everything fixed by the mesh, the order and the space choices.
struct Discretization {
    const HexMesh* mesh = nullptr;
    int k = 0;
    DofMap dm;
    NodeRule quad;
    TensorKernels tk;
    GeometryTables geo;
    BedFacetTables bedq;
    FaceKernels fk;
    PressureSpace pspace;
    RestrictionMode restriction = RestrictionMode::Exact;

    int n_u = 0;
    int n_p = 0;
    int nq = 0;

    std::vector<std::int32_t> facet_of_leaf;  // -1 when the leaf owns no bed facet
};

inline Discretization make_discretization(
    const HexMesh& mesh, int k, BoundaryConfig bc = {},
    std::optional<BedShape> bed = std::nullopt,
    PressureSpace::Family pfam = PressureSpace::Family::Qkm2,
    PressureSpace::Basis pbasis = PressureSpace::Basis::GaussNodes,
    RestrictionMode restriction = RestrictionMode::Exact) {
    Discretization d;
    d.mesh = &mesh;
    d.k = k;
    d.dm = build_dofmap(mesh, k, bc, bed);
    d.quad = gauss_rule(k);
    d.tk = TensorKernels(gll_rule(k).points, d.quad.points);
    d.geo = GeometryTables(mesh, d.dm, d.quad);
    d.bedq = BedFacetTables(mesh, d.dm, d.quad);
    d.fk = FaceKernels(gll_rule(k).points, d.quad.points);
    d.pspace = k >= 2 ? PressureSpace(pfam, pbasis, k, d.quad.points) : PressureSpace();
    d.restriction = restriction;
    d.n_u = d.dm.n_vel_dofs;
    d.n_p = k >= 2 ? mesh.n_leaves() * d.pspace.ndofs_per_elem() : 0;
    d.nq = d.geo.n_qpts();
    d.facet_of_leaf.assign(mesh.n_leaves(), -1);
    for (size_t f = 0; f < d.bedq.leaves.size(); ++f) d.facet_of_leaf[d.bedq.leaves[f]] = static_cast<int>(f);
    return d;
}

enum class Linearization { Picard, Newton };

/// Frozen per-quadrature-point coefficients of one Newton state.
struct FrozenCoeffs {
    std::vector<double> nu;       // effective viscosity
    std::vector<double> c1;       // rank-one coefficient nu (n-1)/(2n)/(II+eps)
    std::vector<StrainRate> D0;   // strain rate of the linearization state
};

/// Matrix-free application of the nonlinear residual and its linearizations.
/// The velocity block includes the viscous and basal Robin terms; pressure
/// coupling is the discrete (negative) divergence and its transpose.
class StokesOperator {
public:
    StokesOperator(const Discretization& d, Rheology rheo) : d_(&d), rheo_(rheo) {
        beta_q_.assign(d.bedq.dS.size(), 0.0);
    }

    const Discretization& disc() const { return *d_; }
    const Rheology& rheology() const { return rheo_; }

    /// Robin coefficient; kept both as a function (low-order assembly) and
    /// sampled at the bed facet quadrature points.
    void set_beta(const std::function<double(double, double)>& beta) {
        beta_fn_ = beta;
        for (size_t i = 0; i < beta_q_.size(); ++i)
            beta_q_[i] = beta(d_->bedq.pos[i].x, d_->bedq.pos[i].y);
    }
    void set_beta_const(double beta) {
        set_beta([beta](double, double) { return beta; });
    }
    const std::vector<double>& beta_q() const { return beta_q_; }
    const std::function<double(double, double)>& beta_fn() const { return beta_fn_; }

    void set_body_force(const Vec3& f) { body_force_ = f; }

    int n_u() const { return d_->n_u; }
    int n_p() const { return d_->n_p; }
    int n_total() const { return d_->n_u + d_->n_p; }

    /// Freeze coefficients at velocity state u (length n_u).
    FrozenCoeffs freeze(const double* u) const {
        const int ne = d_->mesh->n_leaves();
        const int nq = d_->nq;
        FrozenCoeffs fc;
        fc.nu.resize(static_cast<size_t>(ne) * nq);
        fc.c1.resize(static_cast<size_t>(ne) * nq);
        fc.D0.resize(static_cast<size_t>(ne) * nq);
        scratch();
        const bool spatial_B = static_cast<bool>(rheo_.B_field);
        std::vector<Vec3> xq;
        if (spatial_B) xq.resize(nq);
        for (int e = 0; e < ne; ++e) {
            gather_grads(e, u);
            if (spatial_B) quad_positions(e, xq);
            for (int q = 0; q < nq; ++q) {
                const Mat3 G = physical_gradient(e, q);
                const StrainRate D = StrainRate::from_gradient(G);
                const double II = D.invariant2();
                const size_t id = static_cast<size_t>(e) * nq + q;
                const double Bv = spatial_B ? rheo_.B_field(xq[q]) : rheo_.B;
                const double nu = Bv * std::pow(II + rheo_.eps, (1.0 - rheo_.n) / (2.0 * rheo_.n));
                fc.nu[id] = nu;
                fc.c1[id] = newton_rank1_coeff(rheo_, nu, II);
                fc.D0[id] = D;
            }
        }
        return fc;
    }

    /// y = A(x) where A is the chosen linearization at the frozen state.
    /// with_pressure=false applies only the velocity block F.
    void apply_linearized(const FrozenCoeffs& fc, Linearization mode, const double* x, double* y,
                          bool with_pressure) const {
        const int ne = d_->mesh->n_leaves();
        const int nq = d_->nq;
        const int nn = d_->dm.nn;
        scratch();
        std::fill(y, y + (with_pressure ? n_total() : n_u()), 0.0);
        const double* xp = x + d_->n_u;
        double* yp = y + d_->n_u;
        for (int e = 0; e < ne; ++e) {
            gather_grads(e, x);
            if (with_pressure && d_->n_p) d_->pspace.eval(xp + static_cast<size_t>(e) * d_->pspace.ndofs_per_elem(), pq_.data());
            for (int q = 0; q < nq; ++q) {
                const size_t id = static_cast<size_t>(e) * nq + q;
                const Mat3 G = physical_gradient(e, q);
                const StrainRate Dt = StrainRate::from_gradient(G);
                StrainRate S = Dt.scaled(fc.nu[id]);
                if (mode == Linearization::Newton && fc.c1[id] != 0.0)
                    S.axpy(-fc.c1[id] * fc.D0[id].contract(Dt), fc.D0[id]);
                const double wdet = d_->geo.wq(q) * d_->geo.det_j(e, q);
                double pr = 0.0;
                if (with_pressure && d_->n_p) {
                    pr = pq_[q];
                    divq_[q] = G(0, 0) + G(1, 1) + G(2, 2);
                }
                store_stress(e, q, S, pr, wdet);
            }
            if (with_pressure && d_->n_p) {
                for (int q = 0; q < nq; ++q) divq_[q] *= -d_->geo.wq(q) * d_->geo.det_j(e, q);
                d_->pspace.eval_transpose(divq_.data(),
                                          yp + static_cast<size_t>(e) * d_->pspace.ndofs_per_elem());
            }
            scatter_stress(e, y);
        }
    }

    /// Nonlinear residual r = N(x) - b. N at state x equals the Picard
    /// linearization applied to x itself.
    void residual(const double* x, const double* b, double* r, bool with_pressure) const {
        const FrozenCoeffs fc = freeze(x);
        apply_linearized(fc, Linearization::Picard, x, r, with_pressure);
        if (b) {
            const int n = with_pressure ? n_total() : n_u();
            for (int i = 0; i < n; ++i) r[i] -= b[i];
        }
    }

    /// Discrete dual vector of the constant body force (pressure rows zero).
    std::vector<double> assemble_body_force(bool with_pressure) const {
        const int ne = d_->mesh->n_leaves();
        const int nq = d_->nq;
        const int nn = d_->dm.nn;
        scratch();
        std::vector<double> b(with_pressure ? n_total() : n_u(), 0.0);
        std::vector<double> fq(nq), rc(nn);
        for (int e = 0; e < ne; ++e) {
            std::fill(re_.begin(), re_.end(), 0.0);
            for (int c = 0; c < 3; ++c) {
                if (body_force_[c] == 0.0) continue;
                for (int q = 0; q < nq; ++q) fq[q] = body_force_[c] * d_->geo.wq(q) * d_->geo.det_j(e, q);
                std::fill(rc.begin(), rc.end(), 0.0);
                d_->tk.interpolate_transpose(fq.data(), rc.data());
                for (int i = 0; i < nn; ++i) re_[3 * i + c] += rc[i];
            }
            d_->dm.scatter_velocity(e, re_.data(), b.data(), d_->restriction);
        }
        return b;
    }

    /// b such that x* is the exact discrete solution of the linearization at
    /// (the velocity part of) x*.
    std::vector<double> manufactured_rhs(const double* xstar, Linearization mode,
                                         bool with_pressure) const {
        const FrozenCoeffs fc = freeze(xstar);
        std::vector<double> b(with_pressure ? n_total() : n_u());
        apply_linearized(fc, mode, xstar, b.data(), with_pressure);
        return b;
    }

    /// Physical positions of the volume quadrature points of one element.
    void quad_positions(int e, std::vector<Vec3>& out) const {
        out.resize(d_->nq);
        std::vector<Vec3> xe(d_->dm.nn);
        d_->dm.element_coords(e, xe.data());
        std::vector<double> comp(d_->dm.nn), vals(d_->nq);
        for (int c = 0; c < 3; ++c) {
            for (int i = 0; i < d_->dm.nn; ++i) comp[i] = xe[i][c];
            d_->tk.interpolate(comp.data(), vals.data());
            for (int q = 0; q < d_->nq; ++q) out[q][c] = vals[q];
        }
    }

private:
    const Discretization* d_;
    Rheology rheo_;
    std::vector<double> beta_q_;
    std::function<double(double, double)> beta_fn_;
    Vec3 body_force_{0, 0, 0};

    // Element scratch.
    mutable std::vector<double> ue_, re_, uc_, gc_, gq_, hq_, pq_, divq_;

    void scratch() const {
        const int nn = d_->dm.nn, nq = d_->nq;
        if (static_cast<int>(ue_.size()) < 3 * nn) {
            ue_.resize(3 * nn);
            re_.resize(3 * nn);
            uc_.resize(nn);
            gc_.resize(3 * nq);
            gq_.resize(9 * nq);
            hq_.resize(9 * nq);
            pq_.resize(nq);
            divq_.resize(nq);
        }
    }

    /// Gather element velocity and fill gq_ with reference gradients.
    void gather_grads(int e, const double* x) const {
        const int nn = d_->dm.nn, nq = d_->nq;
        d_->dm.gather_velocity(e, x, ue_.data(), d_->restriction);
        for (int c = 0; c < 3; ++c) {
            for (int i = 0; i < nn; ++i) uc_[i] = ue_[3 * i + c];
            d_->tk.gradient(uc_.data(), gc_.data());
            for (int q = 0; q < nq; ++q)
                for (int dref = 0; dref < 3; ++dref) gq_[9 * q + 3 * c + dref] = gc_[3 * q + dref];
        }
    }

    Mat3 physical_gradient(int e, int q) const {
        Mat3 G;
        for (int c = 0; c < 3; ++c) {
            const Vec3 gref{gq_[9 * q + 3 * c], gq_[9 * q + 3 * c + 1], gq_[9 * q + 3 * c + 2]};
            const Vec3 g = d_->geo.to_physical(e, q, gref);
            G(c, 0) = g.x;
            G(c, 1) = g.y;
            G(c, 2) = g.z;
        }
        return G;
    }

    /// hq_ accumulates w detJ (S - p I) J^{-T} rows for the transpose sweep.
    void store_stress(int e, int q, const StrainRate& S, double p, double wdet) const {
        const double sxx = S.d[0] - p, syy = S.d[1] - p, szz = S.d[2] - p;
        const double syz = S.d[3], sxz = S.d[4], sxy = S.d[5];
        const Vec3 rows[3] = {{sxx, sxy, sxz}, {sxy, syy, syz}, {sxz, syz, szz}};
        for (int c = 0; c < 3; ++c) {
            const Vec3 h = d_->geo.to_physical(e, q, rows[c]) * wdet;
            hq_[9 * q + 3 * c] = h.x;
            hq_[9 * q + 3 * c + 1] = h.y;
            hq_[9 * q + 3 * c + 2] = h.z;
        }
    }

    void scatter_stress(int e, double* y) const {
        const int nn = d_->dm.nn, nq = d_->nq;
        std::fill(re_.begin(), re_.end(), 0.0);
        std::vector<double>& rc = uc_;
        for (int c = 0; c < 3; ++c) {
            for (int q = 0; q < nq; ++q) {
                gc_[3 * q] = hq_[9 * q + 3 * c];
                gc_[3 * q + 1] = hq_[9 * q + 3 * c + 1];
                gc_[3 * q + 2] = hq_[9 * q + 3 * c + 2];
            }
            std::fill(rc.begin(), rc.end(), 0.0);
            d_->tk.gradient_transpose(gc_.data(), rc.data());
            for (int i = 0; i < nn; ++i) re_[3 * i + c] += rc[i];
        }
        add_robin_element(e);
        d_->dm.scatter_velocity(e, re_.data(), y, d_->restriction);
    }

    /// Robin term on the bed facet of element e (if any), added into re_.
    /// Uses ue_ gathered by gather_grads.
    void add_robin_element(int e) const {
        const int f = d_->facet_of_leaf[e];
        if (f < 0) return;
        const int k = d_->k;
        const int nfn = (k + 1) * (k + 1);
        const int nqf = d_->bedq.nqf;
        thread_local std::vector<double> uf, ufq, vfq, rf;
        uf.resize(3 * nfn);
        ufq.resize(3 * nqf);
        vfq.resize(3 * nqf);
        rf.resize(nfn);
        for (int s = 0; s <= k; ++s)
            for (int r = 0; r <= k; ++r) {
                const int lf = r + (k + 1) * s;
                const int ln = d_->dm.local_node(r, s, 0);
                for (int c = 0; c < 3; ++c) uf[c * nfn + lf] = ue_[3 * ln + c];
            }
        std::vector<double> comp(nqf);
        for (int c = 0; c < 3; ++c) {
            d_->fk.interpolate(uf.data() + c * nfn, comp.data());
            for (int q = 0; q < nqf; ++q) ufq[3 * q + c] = comp[q];
        }
        bool any = false;
        for (int q = 0; q < nqf; ++q) {
            const size_t id = static_cast<size_t>(f) * nqf + q;
            const double bw = beta_q_[id] * d_->bedq.dS[id];
            const Vec3 n = d_->bedq.normal[id];
            const Vec3 u{ufq[3 * q], ufq[3 * q + 1], ufq[3 * q + 2]};
            const Vec3 ut = u - n * dot(n, u);
            for (int c = 0; c < 3; ++c) vfq[3 * q + c] = bw * ut[c];
            if (bw != 0.0) any = true;
        }
        if (!any) return;
        for (int c = 0; c < 3; ++c) {
            for (int q = 0; q < nqf; ++q) comp[q] = vfq[3 * q + c];
            std::fill(rf.begin(), rf.end(), 0.0);
            d_->fk.interpolate_transpose(comp.data(), rf.data());
            for (int s = 0; s <= k; ++s)
                for (int r = 0; r <= k; ++r)
                    re_[3 * d_->dm.local_node(r, s, 0) + c] += rf[r + (k + 1) * s];
        }
    }
};

/// Operator handles for Krylov methods. The operator and coefficients must
/// outlive the handle.
inline auto make_fblock_apply(const StokesOperator& op, const FrozenCoeffs& fc,
                              Linearization mode) {
    return [&op, &fc, mode](const double* x, double* y) {
        op.apply_linearized(fc, mode, x, y, false);
    };
}

inline auto make_stokes_apply(const StokesOperator& op, const FrozenCoeffs& fc,
                              Linearization mode) {
    return [&op, &fc, mode](const double* x, double* y) {
        op.apply_linearized(fc, mode, x, y, true);
    };
}

} // namespace firn
