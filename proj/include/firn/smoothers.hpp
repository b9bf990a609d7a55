#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "firn/ic0.hpp"
#include "firn/krylov.hpp"
#include "firn/sparse.hpp"

namespace firn {

namespace smdetail {

/// Contiguous principal submatrix A[lo:hi, lo:hi].
inline SparseMatrix extract_block(const SparseMatrix& A, int lo, int hi) {
    SparseBuilder b(hi - lo, hi - lo);
    for (int r = lo; r < hi; ++r)
        for (std::int64_t p = A.rowptr()[r]; p < A.rowptr()[r + 1]; ++p) {
            const int c = A.colind()[p];
            if (c >= lo && c < hi) b.add(r - lo, c - lo, A.values()[p]);
        }
    return b.finalize();
}

/// Symmetric Gauss-Seidel (SSOR, omega = 1) preconditioner on one block.
class SSORBlock {
public:
    explicit SSORBlock(SparseMatrix A) : A_(std::move(A)), diag_(A_.diagonal()) {
        for (double d : diag_)
            if (d == 0.0) throw std::invalid_argument("ssor: zero diagonal");
    }

    void solve(const double* r, double* z) const {
        const int n = A_.nrows();
        std::vector<double> y(n);
        for (int i = 0; i < n; ++i) {
            double s = r[i];
            for (std::int64_t p = A_.rowptr()[i]; p < A_.rowptr()[i + 1]; ++p) {
                const int c = A_.colind()[p];
                if (c < i) s -= A_.values()[p] * y[c];
            }
            y[i] = s / diag_[i];
        }
        for (int i = 0; i < n; ++i) y[i] *= diag_[i];
        for (int i = n - 1; i >= 0; --i) {
            double s = y[i];
            for (std::int64_t p = A_.rowptr()[i]; p < A_.rowptr()[i + 1]; ++p) {
                const int c = A_.colind()[p];
                if (c > i) s -= A_.values()[p] * z[c];
            }
            z[i] = s / diag_[i];
        }
    }

private:
    SparseMatrix A_;
    std::vector<double> diag_;
};

} // namespace smdetail

enum class SmootherKind {
    SSOR,            // one application of block-Jacobi/SSOR (undamped)
    IC0,             // one application of block-Jacobi/IC(0) (undamped)
    ChebyshevSSOR,   // Chebyshev(degree)/block-Jacobi/SSOR
    ChebyshevIC0,    // Chebyshev(degree)/block-Jacobi/IC(0)
    GmresIC0,        // GMRES(m)/block-Jacobi/IC(0)
    CgIC0,           // CG(m)/block-Jacobi/IC(0)
};

struct SmootherConfig {
    SmootherKind kind = SmootherKind::ChebyshevIC0;
    int cheby_degree = 1;
    int krylov_iters = 2;
    int blocks = 1;  // contiguous dof ranges emulating process partitions
    IC0Options ic0{};
    double cheb_lo = 0.1, cheb_hi = 1.1;  // interval as fractions of lambda_max
};

/// Smoother bound to one level matrix. The residual inside the sweep may use a
/// different operator than the matrix the factors came from (high-order fine
/// -level residual), supplied per call.
class Smoother {
public:
    Smoother() = default;

    /// Factors come from A; the Chebyshev interval is estimated against
    /// `eig_op` when given (the operator whose residuals will be smoothed,
    /// e.g. the high-order fine operator), else against A itself.
    Smoother(const SparseMatrix& A, SmootherConfig cfg, const LinOp* eig_op = nullptr)
        : cfg_(cfg), n_(A.nrows()) {
        const int P = std::max(1, cfg.blocks);
        block_lo_.resize(P + 1);
        for (int b = 0; b <= P; ++b) block_lo_[b] = static_cast<int>(std::int64_t(n_) * b / P);
        const bool use_ic0 = cfg.kind != SmootherKind::SSOR && cfg.kind != SmootherKind::ChebyshevSSOR;
        for (int b = 0; b < P; ++b) {
            SparseMatrix blk = smdetail::extract_block(A, block_lo_[b], block_lo_[b + 1]);
            if (use_ic0)
                ic0_.push_back(std::make_unique<IC0Factor>(blk, cfg.ic0));
            else
                ssor_.push_back(std::make_unique<smdetail::SSORBlock>(std::move(blk)));
        }
        if (cfg.kind == SmootherKind::ChebyshevSSOR || cfg.kind == SmootherKind::ChebyshevIC0) {
            // Interval top from the preconditioned operator.
            LinOp MA{n_, [&](const double* x, double* y) {
                         std::vector<double> t(n_);
                         if (eig_op)
                             eig_op->apply(x, t.data());
                         else
                             A.spmv(x, t.data());
                         precond(t.data(), y);
                     }};
            lambda_max_ = power_lambda_max(MA, 15);
            if (!(lambda_max_ > 0)) lambda_max_ = 1.0;
        }
    }

    const SmootherConfig& config() const { return cfg_; }
    double lambda_max() const { return lambda_max_; }
    int total_modified_pivots() const {
        int m = 0;
        for (const auto& f : ic0_) m += f->modified_pivots();
        return m;
    }

    bool stationary() const {
        return cfg_.kind != SmootherKind::GmresIC0 && cfg_.kind != SmootherKind::CgIC0;
    }

    /// z = M^{-1} r (block-Jacobi of the inner factorization).
    void precond(const double* r, double* z) const {
        const int P = static_cast<int>(block_lo_.size()) - 1;
        for (int b = 0; b < P; ++b) {
            const int lo = block_lo_[b];
            if (!ic0_.empty())
                ic0_[b]->solve(r + lo, z + lo);
            else
                ssor_[b]->solve(r + lo, z + lo);
        }
    }

    /// One smoothing application of x for A x = b, with residuals computed
    /// through `op` (the level matrix or the high-order fine operator).
    void smooth(const LinOp& op, const double* b, double* x) const {
        switch (cfg_.kind) {
            case SmootherKind::SSOR:
            case SmootherKind::IC0: {
                std::vector<double> r(n_), z(n_);
                op.apply(x, r.data());
                for (int i = 0; i < n_; ++i) r[i] = b[i] - r[i];
                precond(r.data(), z.data());
                for (int i = 0; i < n_; ++i) x[i] += z[i];
                return;
            }
            case SmootherKind::ChebyshevSSOR:
            case SmootherKind::ChebyshevIC0:
                chebyshev(op, b, x);
                return;
            case SmootherKind::GmresIC0: {
                PrecOp M{n_, [this](const double* r, double* z) { precond(r, z); }, true};
                KrylovConfig kc;
                kc.restart = cfg_.krylov_iters;
                kc.maxit = cfg_.krylov_iters;
                kc.rtol = 0.0;
                kc.atol = 0.0;
                fgmres(op, M, b, x, kc);
                return;
            }
            case SmootherKind::CgIC0: {
                PrecOp M{n_, [this](const double* r, double* z) { precond(r, z); }, true};
                KrylovConfig kc;
                kc.maxit = cfg_.krylov_iters;
                kc.rtol = 0.0;
                kc.atol = 0.0;
                pcg(op, M, b, x, kc);
                return;
            }
        }
    }

private:
    void chebyshev(const LinOp& op, const double* b, double* x) const {
        const double hi = cfg_.cheb_hi * lambda_max_;
        const double lo = cfg_.cheb_lo * lambda_max_;
        const double theta = 0.5 * (hi + lo), delta = 0.5 * (hi - lo);
        std::vector<double> r(n_), z(n_), d(n_);
        op.apply(x, r.data());
        for (int i = 0; i < n_; ++i) r[i] = b[i] - r[i];
        precond(r.data(), z.data());
        for (int i = 0; i < n_; ++i) {
            d[i] = z[i] / theta;
            x[i] += d[i];
        }
        const double sigma = theta / delta;
        double rho_old = 1.0 / sigma;
        for (int it = 1; it < cfg_.cheby_degree; ++it) {
            op.apply(x, r.data());
            for (int i = 0; i < n_; ++i) r[i] = b[i] - r[i];
            precond(r.data(), z.data());
            const double rho = 1.0 / (2.0 * sigma - rho_old);
            for (int i = 0; i < n_; ++i) {
                d[i] = rho * rho_old * d[i] + (2.0 * rho / delta) * z[i];
                x[i] += d[i];
            }
            rho_old = rho;
        }
    }

    SmootherConfig cfg_;
    int n_ = 0;
    std::vector<int> block_lo_;
    std::vector<std::unique_ptr<IC0Factor>> ic0_;
    std::vector<std::unique_ptr<smdetail::SSORBlock>> ssor_;
    double lambda_max_ = 1.0;
};

} // namespace firn
