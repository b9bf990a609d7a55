#pragma once

#include <cassert>
#include <vector>

#include "firn/lagrange.hpp"
#include "firn/quadrature.hpp"

namespace firn {

/// Sum-factorized application of 1D operators on tensor-product data.
/// Data layout is x-fastest: u[ix + nx*(iy + ny*iz)].
namespace tensorkernel {

/// Contract axis 0: out[q, iy, iz] = sum_ix M(ix, q) u[ix, iy, iz].
/// M is (n_in x n_out) in BasisMatrix layout.
inline void contract_x(const BasisMatrix& M, const double* u, int n_in, int ny, int nz,
                       double* out) {
    const int n_out = M.npts;
    for (int iz = 0; iz < nz; ++iz)
        for (int iy = 0; iy < ny; ++iy) {
            const double* uc = u + static_cast<size_t>(n_in) * (iy + static_cast<size_t>(ny) * iz);
            double* oc = out + static_cast<size_t>(n_out) * (iy + static_cast<size_t>(ny) * iz);
            for (int q = 0; q < n_out; ++q) {
                double s = 0;
                for (int i = 0; i < n_in; ++i) s += M(i, q) * uc[i];
                oc[q] = s;
            }
        }
}

inline void contract_y(const BasisMatrix& M, const double* u, int nx, int n_in, int nz,
                       double* out) {
    const int n_out = M.npts;
    for (int iz = 0; iz < nz; ++iz)
        for (int q = 0; q < n_out; ++q)
            for (int ix = 0; ix < nx; ++ix) {
                double s = 0;
                for (int i = 0; i < n_in; ++i)
                    s += M(i, q) * u[ix + static_cast<size_t>(nx) * (i + static_cast<size_t>(n_in) * iz)];
                out[ix + static_cast<size_t>(nx) * (q + static_cast<size_t>(n_out) * iz)] = s;
            }
}

inline void contract_z(const BasisMatrix& M, const double* u, int nx, int ny, int n_in,
                       double* out) {
    const int n_out = M.npts;
    for (int q = 0; q < n_out; ++q)
        for (int iy = 0; iy < ny; ++iy)
            for (int ix = 0; ix < nx; ++ix) {
                double s = 0;
                for (int i = 0; i < n_in; ++i)
                    s += M(i, q) * u[ix + static_cast<size_t>(nx) * (iy + static_cast<size_t>(ny) * i)];
                out[ix + static_cast<size_t>(nx) * (iy + static_cast<size_t>(ny) * q)] = s;
            }
}

} // namespace tensorkernel

/// Precomputed 1D interpolation/differentiation matrices from a nodal basis to
/// a point set, plus their transposes for the scatter direction.
struct TensorBasis {
    int n = 0;  // nodes per direction
    int q = 0;  // evaluation points per direction
    BasisMatrix B;   // (n x q) values
    BasisMatrix D;   // (n x q) derivatives
    BasisMatrix Bt;  // (q x n)
    BasisMatrix Dt;  // (q x n)

    TensorBasis() = default;
    TensorBasis(const std::vector<double>& nodes, const std::vector<double>& pts) {
        n = static_cast<int>(nodes.size());
        q = static_cast<int>(pts.size());
        B = lagrange_values_at(nodes, pts);
        D = lagrange_derivatives_at(nodes, pts);
        Bt.nbasis = q; Bt.npts = n; Bt.data.resize(static_cast<size_t>(n) * q);
        Dt.nbasis = q; Dt.npts = n; Dt.data.resize(static_cast<size_t>(n) * q);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < q; ++j) {
                Bt(j, i) = B(i, j);
                Dt(j, i) = D(i, j);
            }
    }
};

class TensorKernels {
public:
    TensorKernels() = default;
    TensorKernels(const std::vector<double>& nodes, const std::vector<double>& pts)
        : tb_(nodes, pts) {}

    int n_nodes() const { return tb_.n * tb_.n * tb_.n; }
    int n_points() const { return tb_.q * tb_.q * tb_.q; }
    int n1d() const { return tb_.n; }
    int q1d() const { return tb_.q; }

    /// values[q] = u interpolated at point q.
    void interpolate(const double* u, double* values) const {
        scratch();
        tensorkernel::contract_x(tb_.B, u, tb_.n, tb_.n, tb_.n, s1_.data());
        tensorkernel::contract_y(tb_.B, s1_.data(), tb_.q, tb_.n, tb_.n, s2_.data());
        tensorkernel::contract_z(tb_.B, s2_.data(), tb_.q, tb_.q, tb_.n, values);
    }

    /// grad[3*q+d] = reference-coordinate derivative d of u at point q.
    void gradient(const double* u, double* grad) const {
        scratch();
        const int nq = n_points();
        tensorkernel::contract_x(tb_.D, u, tb_.n, tb_.n, tb_.n, s1_.data());
        tensorkernel::contract_y(tb_.B, s1_.data(), tb_.q, tb_.n, tb_.n, s2_.data());
        tensorkernel::contract_z(tb_.B, s2_.data(), tb_.q, tb_.q, tb_.n, s3_.data());
        for (int p = 0; p < nq; ++p) grad[3 * p] = s3_[p];
        tensorkernel::contract_x(tb_.B, u, tb_.n, tb_.n, tb_.n, s1_.data());
        tensorkernel::contract_y(tb_.D, s1_.data(), tb_.q, tb_.n, tb_.n, s2_.data());
        tensorkernel::contract_z(tb_.B, s2_.data(), tb_.q, tb_.q, tb_.n, s3_.data());
        for (int p = 0; p < nq; ++p) grad[3 * p + 1] = s3_[p];
        // reuse s1_ = B_x u from above; apply B_y then D_z
        tensorkernel::contract_y(tb_.B, s1_.data(), tb_.q, tb_.n, tb_.n, s2_.data());
        tensorkernel::contract_z(tb_.D, s2_.data(), tb_.q, tb_.q, tb_.n, s3_.data());
        for (int p = 0; p < nq; ++p) grad[3 * p + 2] = s3_[p];
    }

    /// r += B^T diag(values): accumulate point values back onto nodes.
    void interpolate_transpose(const double* values, double* r) const {
        scratch();
        tensorkernel::contract_x(tb_.Bt, values, tb_.q, tb_.q, tb_.q, s2_.data());
        tensorkernel::contract_y(tb_.Bt, s2_.data(), tb_.n, tb_.q, tb_.q, s1_.data());
        tensorkernel::contract_z(tb_.Bt, s1_.data(), tb_.n, tb_.n, tb_.q, s3_.data());
        for (int i = 0; i < n_nodes(); ++i) r[i] += s3_[i];
    }

    /// r += sum_d D_d^T g_d: accumulate reference-gradient data onto nodes.
    void gradient_transpose(const double* grad, double* r) const {
        scratch();
        const int nq = n_points();
        for (int d = 0; d < 3; ++d) {
            for (int p = 0; p < nq; ++p) s4_[p] = grad[3 * p + d];
            const BasisMatrix& mx = d == 0 ? tb_.Dt : tb_.Bt;
            const BasisMatrix& my = d == 1 ? tb_.Dt : tb_.Bt;
            const BasisMatrix& mz = d == 2 ? tb_.Dt : tb_.Bt;
            tensorkernel::contract_x(mx, s4_.data(), tb_.q, tb_.q, tb_.q, s2_.data());
            tensorkernel::contract_y(my, s2_.data(), tb_.n, tb_.q, tb_.q, s1_.data());
            tensorkernel::contract_z(mz, s1_.data(), tb_.n, tb_.n, tb_.q, s3_.data());
            for (int i = 0; i < n_nodes(); ++i) r[i] += s3_[i];
        }
    }

private:
    TensorBasis tb_;
    // Scratch sized for the largest intermediate (thread-local friendly: one
    // kernel object per thread).
    mutable std::vector<double> s1_, s2_, s3_, s4_;
    void scratch() const {
        const size_t cap = static_cast<size_t>(std::max(tb_.n, tb_.q)) * std::max(tb_.n, tb_.q) *
                           std::max(tb_.n, tb_.q);
        if (s1_.size() < cap) {
            s1_.resize(cap);
            s2_.resize(cap);
            s3_.resize(cap);
            s4_.resize(cap);
        }
    }
};

/// 2D tensor kernels for facet integrals.
class FaceKernels {
public:
    FaceKernels() = default;
    FaceKernels(const std::vector<double>& nodes, const std::vector<double>& pts)
        : tb_(nodes, pts) {}

    int n_nodes() const { return tb_.n * tb_.n; }
    int n_points() const { return tb_.q * tb_.q; }

    void interpolate(const double* u, double* values) const {
        scratch();
        tensorkernel::contract_x(tb_.B, u, tb_.n, tb_.n, 1, s1_.data());
        tensorkernel::contract_y(tb_.B, s1_.data(), tb_.q, tb_.n, 1, values);
    }

    /// Tangential reference derivatives on the face.
    void gradient(const double* u, double* grad) const {
        scratch();
        const int nq = n_points();
        tensorkernel::contract_x(tb_.D, u, tb_.n, tb_.n, 1, s1_.data());
        tensorkernel::contract_y(tb_.B, s1_.data(), tb_.q, tb_.n, 1, s2_.data());
        for (int p = 0; p < nq; ++p) grad[2 * p] = s2_[p];
        tensorkernel::contract_x(tb_.B, u, tb_.n, tb_.n, 1, s1_.data());
        tensorkernel::contract_y(tb_.D, s1_.data(), tb_.q, tb_.n, 1, s2_.data());
        for (int p = 0; p < nq; ++p) grad[2 * p + 1] = s2_[p];
    }

    void interpolate_transpose(const double* values, double* r) const {
        scratch();
        tensorkernel::contract_x(tb_.Bt, values, tb_.q, tb_.q, 1, s1_.data());
        tensorkernel::contract_y(tb_.Bt, s1_.data(), tb_.n, tb_.q, 1, s2_.data());
        for (int i = 0; i < n_nodes(); ++i) r[i] += s2_[i];
    }

private:
    TensorBasis tb_;
    mutable std::vector<double> s1_, s2_;
    void scratch() const {
        const size_t cap = static_cast<size_t>(std::max(tb_.n, tb_.q)) * std::max(tb_.n, tb_.q);
        if (s1_.size() < cap) {
            s1_.resize(cap);
            s2_.resize(cap);
        }
    }
};

} // namespace firn
