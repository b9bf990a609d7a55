#pragma once

#include <memory>

#include "firn/loworder.hpp"
#include "firn/problems.hpp"
#include "firn/samg.hpp"
#include "firn/stokes_operator.hpp"

namespace firn {

struct BlockPrecondOptions {
    LowOrderConfig low_order{};
    AmgOptions amg{};
    FineResidual fine_residual = FineResidual::HighOrder;
    bool reuse_prolongators = true;

    BlockPrecondOptions() {
        amg.smoother.kind = SmootherKind::ChebyshevIC0;
        amg.smoother.ic0.strategy = PivotStrategy::ShiftInBlocks;
    }
};

/// Symmetric diagonal rescaling of the linearized Stokes system: velocity
/// rows scaled by diag(F_tilde)^{-1/2}, pressure rows by |S_tilde|^{-1/2}.
struct Rescaling {
    std::vector<double> d;  // multiplicative scaling per dof, empty = identity

    bool active() const { return !d.empty(); }
    void scale(double* v, int n) const {
        if (!active()) return;
        for (int i = 0; i < n; ++i) v[i] *= d[i];
    }
    double scaled_norm(const double* v, int n) const {
        double s = 0;
        for (int i = 0; i < n; ++i) {
            const double x = active() ? v[i] * d[i] : v[i];
            s += x * x;
        }
        return std::sqrt(s);
    }
};

inline Rescaling make_rescaling(const SparseMatrix& Ftilde, const std::vector<double>& schur_diag) {
    Rescaling r;
    const auto fd = Ftilde.diagonal();
    r.d.resize(fd.size() + schur_diag.size());
    for (size_t i = 0; i < fd.size(); ++i) {
        if (fd[i] == 0.0) throw std::runtime_error("rescale: zero diagonal proxy");
        r.d[i] = 1.0 / std::sqrt(std::abs(fd[i]));
    }
    for (size_t i = 0; i < schur_diag.size(); ++i) {
        if (schur_diag[i] == 0.0) throw std::runtime_error("rescale: zero Schur proxy");
        r.d[fd.size() + i] = 1.0 / std::sqrt(std::abs(schur_diag[i]));
    }
    return r;
}

/// Upper-triangular block preconditioner: z_p = S_tilde^{-1} r_p, then
/// z_u = AMG-Vcycle(r_u - B^T z_p). S_tilde is the negative lumped
/// 1/nu-weighted pressure mass; the velocity block hierarchy is built on the
/// sparse low-order matrix and reused across Newton steps.
class BlockTriPrecond {
public:
    BlockTriPrecond(const StokesOperator& op, BlockPrecondOptions opts = {})
        : op_(&op), opts_(opts) {}

    /// (Re)build for a linearization state. The high-order fine operator for
    /// smoothing is the velocity block at the same state.
    void build(const FrozenCoeffs& fc, const double* u_state, Linearization mode,
               const Rescaling* rescale = nullptr) {
        LowOrderConfig lo = opts_.low_order;
        lo.include_newton_term = lo.include_newton_term && mode == Linearization::Newton;
        Ftilde_ = assemble_low_order_F(*op_, u_state, lo);
        schur_diag_ = assemble_pressure_mass(*op_, fc);
        mode_ = mode;
        fc_ = &fc;
        rescale_ = rescale;
        if (rescale_ && rescale_->active()) {
            // F_tilde <- D_u F_tilde D_u, S <- D_p S D_p.
            const auto& d = rescale_->d;
            auto& vals = Ftilde_.values();
            for (int r = 0; r < Ftilde_.nrows(); ++r)
                for (std::int64_t p = Ftilde_.rowptr()[r]; p < Ftilde_.rowptr()[r + 1]; ++p)
                    vals[p] *= d[r] * d[Ftilde_.colind()[p]];
            const int nu = op_->n_u();
            for (size_t i = 0; i < schur_diag_.size(); ++i)
                schur_diag_[i] *= d[nu + i] * d[nu + i];
        }
        fine_op_ = LinOp{op_->n_u(), [this](const double* x, double* y) {
                             if (rescale_ && rescale_->active()) {
                                 std::vector<double> t(op_->n_u());
                                 for (int i = 0; i < op_->n_u(); ++i) t[i] = rescale_->d[i] * x[i];
                                 op_->apply_linearized(*fc_, mode_, t.data(), y, false);
                                 for (int i = 0; i < op_->n_u(); ++i) y[i] *= rescale_->d[i];
                             } else {
                                 op_->apply_linearized(*fc_, mode_, x, y, false);
                             }
                         }};
        const LinOp* calib =
            opts_.fine_residual == FineResidual::HighOrder ? &fine_op_ : nullptr;
        if (hierarchy_ && opts_.reuse_prolongators) {
            hierarchy_->rebuild(Ftilde_, calib);
        } else {
            hierarchy_ = std::make_unique<AmgHierarchy>(
                Ftilde_, level_nodes_from_dofmap(op_->disc().dm),
                rigid_body_nullspace(op_->disc().dm), opts_.amg, calib);
        }
    }

    const SparseMatrix& ftilde() const { return Ftilde_; }
    const std::vector<double>& schur_diag() const { return schur_diag_; }
    const AmgHierarchy& hierarchy() const { return *hierarchy_; }
    bool stationary() const { return hierarchy_->stationary(); }

    /// Apply to a velocity-only residual (F-block solves).
    void apply_velocity(const double* r, double* z) const {
        hierarchy_->vcycle(r, z,
                           opts_.fine_residual == FineResidual::HighOrder ? &fine_op_ : nullptr);
    }

    /// Apply to a full (velocity, pressure) residual.
    void apply(const double* r, double* z) const {
        const int nu = op_->n_u(), np = op_->n_p();
        // Pressure solve: S_tilde = -M_tilde, so z_p = -r_p / diag.
        for (int i = 0; i < np; ++i) z[nu + i] = -r[nu + i] / schur_diag_[i];
        // Velocity: r_u - B^T z_p through the full operator with zero velocity.
        std::vector<double> tmp(nu + np, 0.0), coupled(nu + np);
        std::copy(z + nu, z + nu + np, tmp.data() + nu);
        if (rescale_ && rescale_->active()) {
            for (int i = 0; i < np; ++i) tmp[nu + i] *= rescale_->d[nu + i];
            op_->apply_linearized(*fc_, mode_, tmp.data(), coupled.data(), true);
            for (int i = 0; i < nu; ++i) coupled[i] *= rescale_->d[i];
        } else {
            op_->apply_linearized(*fc_, mode_, tmp.data(), coupled.data(), true);
        }
        std::vector<double> ru(nu);
        for (int i = 0; i < nu; ++i) ru[i] = r[i] - coupled[i];
        apply_velocity(ru.data(), z);
    }

private:
    const StokesOperator* op_;
    BlockPrecondOptions opts_;
    SparseMatrix Ftilde_;
    std::vector<double> schur_diag_;
    std::unique_ptr<AmgHierarchy> hierarchy_;
    const FrozenCoeffs* fc_ = nullptr;
    Linearization mode_ = Linearization::Picard;
    const Rescaling* rescale_ = nullptr;
    LinOp fine_op_;
};

/// One preconditioned FGMRES solve of the linearized Stokes system at the
/// given frozen state.
inline SolveResult linear_stokes_solve(const StokesOperator& op, const FrozenCoeffs& fc,
                                       Linearization mode, BlockTriPrecond& precond,
                                       const double* b, double* x, KrylovConfig krylov) {
    const int n = op.n_total();
    LinOp A{n, make_stokes_apply(op, fc, mode)};
    PrecOp M{n, [&](const double* r, double* z) { precond.apply(r, z); }, precond.stationary()};
    return fgmres(A, M, b, x, krylov);
}

// ---------------------------------------------------------------------------
// Inexact Newton / Picard

struct NewtonConfig {
    double rtol = 1e-9;
    double atol = 0.0;
    int max_steps = 50;
    Linearization mode = Linearization::Newton;

    // Forcing terms: eta_k = min(eta_max, gamma ||r_k||^2 / ||r_{k-1}||^2).
    double eta_max = 0.9;
    double eta_gamma = 0.9;
    double eta_floor = 1e-10;

    // Weak Wolfe line search.
    double ls_c1 = 1e-4;
    double ls_c2 = 0.9;
    int max_backtracks = 20;

    bool rescale = false;
    KrylovConfig krylov{30, 300, 1e-2};
    BlockPrecondOptions precond{};
};

struct NewtonHistory {
    bool converged = false;
    std::vector<double> residuals;        // ||r_k|| per Newton step (incl. final)
    std::vector<double> forcing;          // eta_k used per step
    std::vector<int> krylov_iters;        // per step
    std::vector<int> backtracks;          // line-search halvings per step
    std::vector<double> step_lengths;
    std::vector<std::vector<double>> linear_histories;  // per-step Krylov residuals
    std::string failure;

    int total_krylov() const {
        int s = 0;
        for (int k : krylov_iters) s += k;
        return s;
    }
};

/// Inexact Newton-Krylov with weak-Wolfe backtracking. `b` is the discrete
/// force vector; x holds the initial guess and the solution. The Picard
/// variant uses the Picard operator both for linear solves and the step map.
inline NewtonHistory newton_solve(const StokesOperator& op, const std::vector<double>& b,
                                  NewtonConfig cfg, std::vector<double>& x) {
    const int n = op.n_total();
    NewtonHistory hist;
    BlockTriPrecond precond(op, cfg.precond);
    Rescaling rescale;

    std::vector<double> r(n), delta(n), jd(n), xtrial(n), rtrial(n);
    op.residual(x.data(), b.data(), r.data(), true);

    auto normv = [&](const std::vector<double>& v) { return rescale.scaled_norm(v.data(), n); };

    double rnorm = 0.0;
    double prev_rnorm = -1.0;
    for (int step = 0; step <= cfg.max_steps; ++step) {
        FrozenCoeffs fc = op.freeze(x.data());
        precond.build(fc, x.data(), cfg.mode, rescale.active() ? &rescale : nullptr);
        if (cfg.rescale && !rescale.active()) {
            rescale = make_rescaling(precond.ftilde(), precond.schur_diag());
            precond.build(fc, x.data(), cfg.mode, &rescale);
        }
        rnorm = normv(r);
        hist.residuals.push_back(rnorm);
        const double r0 = hist.residuals.front();
        if (rnorm <= std::max(cfg.rtol * r0, cfg.atol)) {
            hist.converged = true;
            return hist;
        }
        if (step == cfg.max_steps) break;

        double eta = cfg.eta_max;
        if (prev_rnorm > 0)
            eta = std::min(cfg.eta_max,
                           std::max(cfg.eta_floor,
                                    cfg.eta_gamma * rnorm * rnorm / (prev_rnorm * prev_rnorm)));
        hist.forcing.push_back(eta);

        // Solve J delta = -r in the (optionally rescaled) variables.
        std::vector<double> rhs(n);
        for (int i = 0; i < n; ++i) rhs[i] = -r[i];
        rescale.scale(rhs.data(), n);
        std::fill(delta.begin(), delta.end(), 0.0);
        LinOp J{n, [&](const double* v, double* y) {
                    if (rescale.active()) {
                        std::vector<double> t(n);
                        for (int i = 0; i < n; ++i) t[i] = rescale.d[i] * v[i];
                        op.apply_linearized(fc, cfg.mode, t.data(), y, true);
                        for (int i = 0; i < n; ++i) y[i] *= rescale.d[i];
                    } else {
                        op.apply_linearized(fc, cfg.mode, v, y, true);
                    }
                }};
        PrecOp M{n, [&](const double* rr, double* zz) { precond.apply(rr, zz); },
                 precond.stationary()};
        KrylovConfig kc = cfg.krylov;
        kc.rtol = eta;
        auto lin = fgmres(J, M, rhs.data(), delta.data(), kc);
        hist.krylov_iters.push_back(lin.iterations);
        hist.linear_histories.push_back(lin.resnorms);
        if (rescale.active())
            for (int i = 0; i < n; ++i) delta[i] *= rescale.d[i];

        // Weak Wolfe backtracking on phi(a) = 1/2 ||r(x + a d)||^2 (rescaled
        // norm), accepting unit steps whenever admissible. Merit derivatives
        // always use the true (Newton) Jacobian, also for Picard steps.
        op.apply_linearized(fc, Linearization::Newton, delta.data(), jd.data(), true);
        double g0 = 0;
        for (int i = 0; i < n; ++i) {
            const double di = rescale.active() ? rescale.d[i] : 1.0;
            g0 += (di * r[i]) * (di * jd[i]);
        }
        if (g0 >= 0) {
            hist.failure = "line search: not a descent direction";
            return hist;
        }
        const double phi0 = 0.5 * rnorm * rnorm;
        double alpha = 1.0;
        int bt = 0;
        bool accepted = false;
        for (; bt <= cfg.max_backtracks; ++bt) {
            for (int i = 0; i < n; ++i) xtrial[i] = x[i] + alpha * delta[i];
            op.residual(xtrial.data(), b.data(), rtrial.data(), true);
            const double rn = normv(rtrial);
            const double phi = 0.5 * rn * rn;
            if (phi <= phi0 + cfg.ls_c1 * alpha * g0) {
                // Curvature side of the weak Wolfe conditions.
                const FrozenCoeffs ft = op.freeze(xtrial.data());
                op.apply_linearized(ft, Linearization::Newton, delta.data(), jd.data(), true);
                double g1 = 0;
                for (int i = 0; i < n; ++i) {
                    const double di = rescale.active() ? rescale.d[i] : 1.0;
                    g1 += (di * rtrial[i]) * (di * jd[i]);
                }
                if (g1 >= cfg.ls_c2 * g0) {
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        hist.backtracks.push_back(bt);
        hist.step_lengths.push_back(alpha);
        if (!accepted) {
            hist.failure = "line search failed after maximum backtracks";
            return hist;
        }
        x = xtrial;
        prev_rnorm = rnorm;
        r = rtrial;
    }
    hist.failure = "maximum Newton steps exceeded";
    return hist;
}

inline NewtonHistory picard_solve(const StokesOperator& op, const std::vector<double>& b,
                                  NewtonConfig cfg, std::vector<double>& x) {
    cfg.mode = Linearization::Picard;
    return newton_solve(op, b, cfg, x);
}

} // namespace firn
