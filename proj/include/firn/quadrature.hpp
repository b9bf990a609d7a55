#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace firn {

/// 1D node/weight rule on [-1,1].
struct NodeRule {
    enum class Kind { GaussLobatto, Gauss };
    Kind kind;
    int degree = 0;               // polynomial degree k; rule has k+1 points
    std::vector<double> points;   // strictly increasing
    std::vector<double> weights;  // positive, sum to 2

    int npoints() const { return static_cast<int>(points.size()); }
};

namespace detail {

// Legendre P_n(x) and P_n'(x) by the three-term recurrence.
inline void legendre(int n, double x, double& p, double& dp) {
    double p0 = 1.0, p1 = x;
    if (n == 0) { p = p0; dp = 0.0; return; }
    for (int j = 2; j <= n; ++j) {
        const double p2 = ((2.0 * j - 1.0) * x * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
    }
    p = p1;
    dp = n * (x * p1 - p0) / (x * x - 1.0);
}

} // namespace detail

/// Gauss-Legendre rule with k+1 points; exact for degree 2k+1.
inline NodeRule gauss_rule(int k) {
    if (k < 1) throw std::invalid_argument("gauss_rule: degree must be >= 1");
    const int n = k + 1;
    NodeRule rule{NodeRule::Kind::Gauss, k, std::vector<double>(n), std::vector<double>(n)};
    for (int i = 0; i < n; ++i) {
        // Chebyshev initial guess, polished by Newton on P_n.
        double x = -std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double p, dp;
        for (int it = 0; it < 100; ++it) {
            detail::legendre(n, x, p, dp);
            const double dx = -p / dp;
            x += dx;
            if (std::abs(dx) < 1e-15) break;
        }
        detail::legendre(n, x, p, dp);
        rule.points[i] = x;
        rule.weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    // Symmetrize to kill the last bit of iteration noise.
    for (int i = 0; i < n / 2; ++i) {
        const double x = 0.5 * (rule.points[n - 1 - i] - rule.points[i]);
        rule.points[i] = -x;
        rule.points[n - 1 - i] = x;
        const double w = 0.5 * (rule.weights[i] + rule.weights[n - 1 - i]);
        rule.weights[i] = rule.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) rule.points[n / 2] = 0.0;
    return rule;
}

/// Gauss-Lobatto rule with k+1 points (endpoints included); exact for degree 2k-1.
inline NodeRule gll_rule(int k) {
    if (k < 1) throw std::invalid_argument("gll_rule: degree must be >= 1");
    const int n = k + 1;
    NodeRule rule{NodeRule::Kind::GaussLobatto, k, std::vector<double>(n), std::vector<double>(n)};
    rule.points[0] = -1.0;
    rule.points[n - 1] = 1.0;
    // Interior points are roots of P_k'; Newton with a cosine initial guess.
    for (int i = 1; i < n - 1; ++i) {
        double x = -std::cos(M_PI * i / k);
        for (int it = 0; it < 100; ++it) {
            double p, dp;
            detail::legendre(k, x, p, dp);
            // d/dx P_k' from the Legendre ODE: (1-x^2)P'' = 2xP' - k(k+1)P
            const double d2p = (2.0 * x * dp - k * (k + 1.0) * p) / (1.0 - x * x);
            const double dx = -dp / d2p;
            x += dx;
            if (std::abs(dx) < 1e-15) break;
        }
        rule.points[i] = x;
    }
    for (int i = 0; i < n; ++i) {
        double p, dp;
        detail::legendre(k, rule.points[i], p, dp);
        rule.weights[i] = 2.0 / (k * (n)*p * p);
    }
    for (int i = 0; i < n / 2; ++i) {
        const double x = 0.5 * (rule.points[n - 1 - i] - rule.points[i]);
        rule.points[i] = -x;
        rule.points[n - 1 - i] = x;
        const double w = 0.5 * (rule.weights[i] + rule.weights[n - 1 - i]);
        rule.weights[i] = rule.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) rule.points[n / 2] = 0.0;
    return rule;
}

} // namespace firn
