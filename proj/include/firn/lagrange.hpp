#pragma once

#include <cassert>
#include <vector>

namespace firn {

/// Dense row-major matrix of basis values: entry (i, q) = l_i(x_q).
struct BasisMatrix {
    int nbasis = 0;
    int npts = 0;
    std::vector<double> data;  // nbasis * npts

    double operator()(int i, int q) const { return data[static_cast<size_t>(i) * npts + q]; }
    double& operator()(int i, int q) { return data[static_cast<size_t>(i) * npts + q]; }
};

/// Value of the i-th Lagrange polynomial on `nodes` at x. Exact at nodes.
inline double lagrange_value(const std::vector<double>& nodes, int i, double x) {
    double v = 1.0;
    const int n = static_cast<int>(nodes.size());
    for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        v *= (x - nodes[j]) / (nodes[i] - nodes[j]);
    }
    return v;
}

/// Derivative of the i-th Lagrange polynomial at x (product-rule sum; exact at nodes).
inline double lagrange_derivative(const std::vector<double>& nodes, int i, double x) {
    const int n = static_cast<int>(nodes.size());
    double d = 0.0;
    for (int m = 0; m < n; ++m) {
        if (m == i) continue;
        double term = 1.0 / (nodes[i] - nodes[m]);
        for (int j = 0; j < n; ++j) {
            if (j == i || j == m) continue;
            term *= (x - nodes[j]) / (nodes[i] - nodes[j]);
        }
        d += term;
    }
    return d;
}

inline BasisMatrix lagrange_values_at(const std::vector<double>& nodes,
                                      const std::vector<double>& pts) {
    BasisMatrix m;
    m.nbasis = static_cast<int>(nodes.size());
    m.npts = static_cast<int>(pts.size());
    m.data.resize(static_cast<size_t>(m.nbasis) * m.npts);
    for (int i = 0; i < m.nbasis; ++i)
        for (int q = 0; q < m.npts; ++q) m(i, q) = lagrange_value(nodes, i, pts[q]);
    return m;
}

inline BasisMatrix lagrange_derivatives_at(const std::vector<double>& nodes,
                                           const std::vector<double>& pts) {
    BasisMatrix m;
    m.nbasis = static_cast<int>(nodes.size());
    m.npts = static_cast<int>(pts.size());
    m.data.resize(static_cast<size_t>(m.nbasis) * m.npts);
    for (int i = 0; i < m.nbasis; ++i)
        for (int q = 0; q < m.npts; ++q) m(i, q) = lagrange_derivative(nodes, i, pts[q]);
    return m;
}

} // namespace firn
