#pragma once

#include <cmath>
#include <functional>

#include "firn/geometry.hpp"

namespace firn {

/// Power-law rheology: nu = B (II + eps)^{(1-n)/(2n)}.
struct Rheology {
    double n = 3.0;
    double eps = 1e-6;
    double B = 1.0;                                   // constant prefactor
    std::function<double(const Vec3&)> B_field;       // optional spatial B(T(x))

    double prefactor(const Vec3& x) const { return B_field ? B_field(x) : B; }
};

/// Symmetric strain rate and its second invariant II = (1/2) D:D.
struct StrainRate {
    // Symmetric storage: xx, yy, zz, yz, xz, xy.
    std::array<double, 6> d{};

    static StrainRate from_gradient(const Mat3& g) {
        StrainRate s;
        s.d[0] = g(0, 0);
        s.d[1] = g(1, 1);
        s.d[2] = g(2, 2);
        s.d[3] = 0.5 * (g(1, 2) + g(2, 1));
        s.d[4] = 0.5 * (g(0, 2) + g(2, 0));
        s.d[5] = 0.5 * (g(0, 1) + g(1, 0));
        return s;
    }

    double invariant2() const {
        return 0.5 * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) + d[3] * d[3] + d[4] * d[4] +
               d[5] * d[5];
    }

    /// Frobenius product D : E (full tensors, off-diagonals doubled).
    double contract(const StrainRate& o) const {
        return d[0] * o.d[0] + d[1] * o.d[1] + d[2] * o.d[2] +
               2.0 * (d[3] * o.d[3] + d[4] * o.d[4] + d[5] * o.d[5]);
    }

    StrainRate& axpy(double a, const StrainRate& o) {
        for (int i = 0; i < 6; ++i) d[i] += a * o.d[i];
        return *this;
    }

    StrainRate scaled(double a) const {
        StrainRate s = *this;
        for (double& v : s.d) v *= a;
        return s;
    }
};

inline double effective_viscosity(const Rheology& rh, double II, const Vec3& x = {}) {
    return rh.prefactor(x) * std::pow(II + rh.eps, (1.0 - rh.n) / (2.0 * rh.n));
}

/// Coefficient of the anisotropic rank-one term in the viscosity derivative:
/// dnu(u) D = nu [ D - (n-1)/(2n) * (D0:D)/(II+eps) * D0 ].
inline double newton_rank1_coeff(const Rheology& rh, double nu, double II) {
    return nu * (rh.n - 1.0) / (2.0 * rh.n) / (II + rh.eps);
}

} // namespace firn
