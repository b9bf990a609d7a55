#pragma once

#include <stdexcept>
#include <vector>

#include "firn/tensor.hpp"

namespace firn {

/// Element-wise discontinuous pressure space on the reference cube:
/// tensor-product Q_{k-2} with a nodal basis at Gauss or Gauss-Lobatto points,
/// or total-degree P_{k-1} with a Legendre-product (orthonormal) basis.
class PressureSpace {
public:
    enum class Family { Qkm2, Pkm1 };
    enum class Basis { GaussNodes, GLLNodes, Legendre };

    PressureSpace() = default;

    PressureSpace(Family family, Basis basis, int k, const std::vector<double>& quad_pts)
        : family_(family), basis_(basis), k_(k) {
        if (family == Family::Qkm2) {
            if (k < 2) throw std::invalid_argument("PressureSpace: Q_{k-2} needs k >= 2");
            const int pk = k - 2;
            if (pk == 0)
                nodes1d_ = {0.0};  // single constant-node basis
            else
                nodes1d_ = basis == Basis::GLLNodes ? gll_rule(pk).points : gauss_rule(pk).points;
            n1_ = pk + 1;
            ndofs_ = n1_ * n1_ * n1_;
            tk_ = TensorKernels(nodes1d_, quad_pts);
        } else {
            if (k < 2) throw std::invalid_argument("PressureSpace: P_{k-1} needs k >= 2");
            const int pk = k - 1;
            for (int a = 0; a <= pk; ++a)
                for (int b = 0; b + a <= pk; ++b)
                    for (int c = 0; c + a + b <= pk; ++c) exps_.push_back({a, b, c});
            ndofs_ = static_cast<int>(exps_.size());
            const int q1 = static_cast<int>(quad_pts.size());
            nq_ = q1 * q1 * q1;
            val_.assign(static_cast<size_t>(ndofs_) * nq_, 0.0);
            for (int i = 0; i < ndofs_; ++i) {
                const auto [a, b, c] = exps_[i];
                int p = 0;
                for (int kz = 0; kz < q1; ++kz)
                    for (int ky = 0; ky < q1; ++ky)
                        for (int kx = 0; kx < q1; ++kx, ++p)
                            val_[static_cast<size_t>(i) * nq_ + p] = legendre_orth(a, quad_pts[kx]) *
                                                                     legendre_orth(b, quad_pts[ky]) *
                                                                     legendre_orth(c, quad_pts[kz]);
            }
        }
        const int q1 = static_cast<int>(quad_pts.size());
        nq_ = q1 * q1 * q1;
    }

    Family family() const { return family_; }
    Basis basis() const { return basis_; }
    int ndofs_per_elem() const { return ndofs_; }
    const std::vector<double>& nodes1d() const { return nodes1d_; }

    /// values[q] = sum_i c_i psi_i(q) at the volume quadrature points.
    void eval(const double* coeff, double* values) const {
        if (family_ == Family::Qkm2) {
            tk_.interpolate(coeff, values);
        } else {
            for (int q = 0; q < nq_; ++q) values[q] = 0;
            for (int i = 0; i < ndofs_; ++i) {
                const double ci = coeff[i];
                const double* row = val_.data() + static_cast<size_t>(i) * nq_;
                for (int q = 0; q < nq_; ++q) values[q] += ci * row[q];
            }
        }
    }

    /// coeff[i] += sum_q psi_i(q) values[q].
    void eval_transpose(const double* values, double* coeff) const {
        if (family_ == Family::Qkm2) {
            tk_.interpolate_transpose(values, coeff);
        } else {
            for (int i = 0; i < ndofs_; ++i) {
                const double* row = val_.data() + static_cast<size_t>(i) * nq_;
                double s = 0;
                for (int q = 0; q < nq_; ++q) s += row[q] * values[q];
                coeff[i] += s;
            }
        }
    }

    /// True when the element mass matrix is diagonal for affine elements with
    /// the basis' own nodal quadrature (the Gauss-node Lagrange case).
    bool diagonal_mass() const { return family_ == Family::Qkm2 && basis_ == Basis::GaussNodes; }

    /// Diagonal lumping of the weighted mass: Lagrange bases use the row sum
    /// (= weighted integral of each basis function by partition of unity); the
    /// orthogonal Legendre basis takes the true diagonal, which stays positive.
    void lump_weighted_mass(const double* wq, double* out) const {
        if (family_ == Family::Qkm2) {
            tk_.interpolate_transpose(wq, out);
        } else {
            for (int i = 0; i < ndofs_; ++i) {
                const double* row = val_.data() + static_cast<size_t>(i) * nq_;
                double s = 0;
                for (int q = 0; q < nq_; ++q) s += row[q] * row[q] * wq[q];
                out[i] += s;
            }
        }
    }

private:
    // Orthonormal Legendre on [-1,1]: P_n * sqrt((2n+1)/2).
    static double legendre_orth(int n2, double x) {
        double p0 = 1.0, p1 = x;
        if (n2 == 0) return std::sqrt(0.5);
        for (int j = 2; j <= n2; ++j) {
            const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
            p0 = p1;
            p1 = p2;
        }
        return p1 * std::sqrt((2.0 * n2 + 1.0) / 2.0);
    }

    Family family_ = Family::Qkm2;
    Basis basis_ = Basis::GaussNodes;
    int k_ = 0, n1_ = 0, ndofs_ = 0, nq_ = 0;
    std::vector<double> nodes1d_;
    TensorKernels tk_;
    std::vector<std::array<int, 3>> exps_;
    std::vector<double> val_;
};

} // namespace firn
