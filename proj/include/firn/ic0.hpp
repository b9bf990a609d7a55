#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "firn/sparse.hpp"

namespace firn {

enum class PivotStrategy { None, Manteuffel, ShiftInBlocks };

struct IC0Options {
    PivotStrategy strategy = PivotStrategy::None;
    double delta = 1e-3;
};

/// Zero-fill incomplete Cholesky: L has the sparsity of tril(A).
/// Pivot safeguards follow two schemes: a global Manteuffel shift A + alpha I
/// retried until the factorization exists, or local shifting "in blocks"
/// where any pivot falling below delta * diag(A) is raised to that bound.
class IC0Factor {
public:
    using Options = IC0Options;

    IC0Factor() = default;

    explicit IC0Factor(const SparseMatrix& A, Options opt = Options{}) : opt_(opt) {
        if (A.nrows() != A.ncols()) throw std::invalid_argument("ic0: square matrix required");
        build_pattern(A);
        if (opt.strategy == PivotStrategy::Manteuffel) {
            double maxdiag = 0;
            for (double d : adiag_) maxdiag = std::max(maxdiag, std::abs(d));
            double alpha = 0.0;
            for (int attempt = 0; attempt < 64; ++attempt) {
                if (try_factor(alpha, PivotStrategy::None)) {
                    shift_ = alpha;
                    attempts_ = attempt + 1;
                    return;
                }
                alpha = alpha == 0.0 ? opt.delta * maxdiag : 2.0 * alpha;
            }
            throw std::runtime_error("ic0: Manteuffel shifting did not converge");
        }
        if (!try_factor(0.0, opt.strategy)) {
            throw std::runtime_error("ic0: nonpositive pivot in row " + std::to_string(bad_row_) +
                                     " (no shift strategy)");
        }
    }

    int n() const { return n_; }
    double shift() const { return shift_; }
    int modified_pivots() const { return modified_; }
    int attempts() const { return attempts_; }

    /// z = (L L^T)^{-1} r.
    void solve(const double* r, double* z) const {
        // Forward: L y = r.
        for (int i = 0; i < n_; ++i) {
            double s = r[i];
            std::int64_t p = rowptr_[i];
            for (; p < rowptr_[i + 1] - 1; ++p) s -= lval_[p] * z[colind_[p]];
            z[i] = s / lval_[rowptr_[i + 1] - 1];
        }
        // Backward: L^T z = y, traversing rows in reverse as columns.
        for (int i = n_ - 1; i >= 0; --i) {
            z[i] /= lval_[rowptr_[i + 1] - 1];
            const double zi = z[i];
            for (std::int64_t p = rowptr_[i]; p < rowptr_[i + 1] - 1; ++p)
                z[colind_[p]] -= lval_[p] * zi;
        }
    }

    /// y = L (L^T x): the preconditioner applied forward (for spectra).
    void multiply(const double* x, double* y) const {
        std::vector<double> t(n_, 0.0);
        for (int i = 0; i < n_; ++i) {
            const double xi = x[i];
            for (std::int64_t p = rowptr_[i]; p < rowptr_[i + 1] - 1; ++p)
                t[colind_[p]] += lval_[p] * xi;
            t[i] += lval_[rowptr_[i + 1] - 1] * xi;
        }
        for (int i = 0; i < n_; ++i) {
            double s = 0;
            for (std::int64_t p = rowptr_[i]; p < rowptr_[i + 1]; ++p) s += lval_[p] * t[colind_[p]];
            y[i] = s;
        }
    }

    /// Triangular applications for symmetrized spectra: w = L^{-1} v, w = L^{-T} v.
    void forward_solve(const double* v, double* w) const {
        for (int i = 0; i < n_; ++i) {
            double s = v[i];
            for (std::int64_t p = rowptr_[i]; p < rowptr_[i + 1] - 1; ++p) s -= lval_[p] * w[colind_[p]];
            w[i] = s / lval_[rowptr_[i + 1] - 1];
        }
    }
    void backward_solve(const double* v, double* w) const {
        for (int i = 0; i < n_; ++i) w[i] = v[i];
        for (int i = n_ - 1; i >= 0; --i) {
            w[i] /= lval_[rowptr_[i + 1] - 1];
            const double wi = w[i];
            for (std::int64_t p = rowptr_[i]; p < rowptr_[i + 1] - 1; ++p)
                w[colind_[p]] -= lval_[p] * wi;
        }
    }

private:
    void build_pattern(const SparseMatrix& A) {
        n_ = A.nrows();
        rowptr_.assign(n_ + 1, 0);
        adiag_.assign(n_, 0.0);
        for (int r = 0; r < n_; ++r) {
            bool has_diag = false;
            for (std::int64_t p = A.rowptr()[r]; p < A.rowptr()[r + 1]; ++p) {
                if (A.colind()[p] < r) ++rowptr_[r + 1];
                if (A.colind()[p] == r) {
                    adiag_[r] = A.values()[p];
                    has_diag = true;
                }
            }
            ++rowptr_[r + 1];  // diagonal slot, stored last in the row
            if (!has_diag || !(adiag_[r] > 0))
                throw std::invalid_argument("ic0: positive diagonal required");
        }
        for (int r = 0; r < n_; ++r) rowptr_[r + 1] += rowptr_[r];
        colind_.resize(rowptr_[n_]);
        aval_.resize(rowptr_[n_]);
        for (int r = 0; r < n_; ++r) {
            std::int64_t q = rowptr_[r];
            for (std::int64_t p = A.rowptr()[r]; p < A.rowptr()[r + 1]; ++p)
                if (A.colind()[p] < r) {
                    colind_[q] = A.colind()[p];
                    aval_[q] = A.values()[p];
                    ++q;
                }
            colind_[q] = r;
            aval_[q] = adiag_[r];
        }
    }

    bool try_factor(double alpha, PivotStrategy strategy) {
        lval_ = aval_;
        modified_ = 0;
        for (int i = 0; i < n_; ++i) {
            const std::int64_t ibeg = rowptr_[i], idiag = rowptr_[i + 1] - 1;
            // Row update: for each k in pattern(i), subtract inner products of
            // previously computed rows.
            for (std::int64_t pk = ibeg; pk < idiag; ++pk) {
                const int kcol = colind_[pk];
                const std::int64_t kbeg = rowptr_[kcol], kdiag = rowptr_[kcol + 1] - 1;
                double s = lval_[pk];
                std::int64_t a = ibeg, b = kbeg;
                while (a < pk && b < kdiag) {
                    if (colind_[a] == colind_[b]) {
                        s -= lval_[a] * lval_[b];
                        ++a;
                        ++b;
                    } else if (colind_[a] < colind_[b])
                        ++a;
                    else
                        ++b;
                }
                lval_[pk] = s / lval_[kdiag];
                // Zero-fill factors of far-from-diagonally-dominant matrices
                // can grow without bound; surface that instead of overflowing.
                if (std::abs(lval_[pk]) > 1e154) {
                    bad_row_ = i;
                    if (strategy == PivotStrategy::ShiftInBlocks)
                        throw std::runtime_error("ic0: factor blow-up in row " +
                                                 std::to_string(i) +
                                                 " (matrix unsuitable for zero-fill factorization)");
                    return false;
                }
            }
            double d = aval_[idiag] + alpha;
            for (std::int64_t p = ibeg; p < idiag; ++p) d -= lval_[p] * lval_[p];
            if (strategy == PivotStrategy::ShiftInBlocks) {
                const double bound = opt_.delta * adiag_[i];
                if (d < bound) {
                    d = bound;
                    ++modified_;
                }
            } else if (!(d > 0)) {
                bad_row_ = i;
                return false;
            }
            lval_[idiag] = std::sqrt(d);
        }
        return true;
    }

    Options opt_;
    int n_ = 0;
    std::vector<std::int64_t> rowptr_;
    std::vector<std::int32_t> colind_;
    std::vector<double> aval_, lval_;
    std::vector<double> adiag_;
    double shift_ = 0.0;
    int modified_ = 0;
    int attempts_ = 1;
    int bad_row_ = -1;
};

} // namespace firn
