#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace firn {

/// Operator action y = A x on vectors of fixed length.
struct LinOp {
    int n = 0;
    std::function<void(const double*, double*)> apply;
};

/// Preconditioner application z = M^{-1} r. Identity when apply is empty.
struct PrecOp {
    int n = 0;
    std::function<void(const double*, double*)> apply;
    bool stationary = true;

    void operator()(const double* r, double* z) const {
        if (apply)
            apply(r, z);
        else
            std::copy(r, r + n, z);
    }
};

struct KrylovConfig {
    int restart = 30;
    int maxit = 200;
    double rtol = 1e-8;
    double atol = 0.0;
};

struct SolveResult {
    bool converged = false;
    int iterations = 0;
    std::vector<double> resnorms;  // true residual per iteration, [0] = initial

    double reduction() const { return resnorms.empty() ? 1.0 : resnorms.back() / resnorms.front(); }
};

namespace krydetail {

inline double nrm2(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace krydetail

/// Restarted GMRES with right preconditioning (flexible: the preconditioner
/// may change between iterations). Modified Gram-Schmidt with one
/// reorthogonalization pass.
inline SolveResult fgmres(const LinOp& A, const PrecOp& M, const double* b, double* x,
                          const KrylovConfig& cfg) {
    using namespace krydetail;
    const int n = A.n;
    const int m = cfg.restart;
    SolveResult res;
    std::vector<double> r(n), w(n);
    std::vector<std::vector<double>> V, Z;
    Eigen::MatrixXd H(m + 1, m);
    std::vector<double> cs(m), sn(m), g(m + 1);

    A.apply(x, r.data());
    for (int i = 0; i < n; ++i) r[i] = b[i] - r[i];
    double beta = nrm2(r);
    const double target = std::max(cfg.rtol * beta, cfg.atol);
    res.resnorms.push_back(beta);
    if (beta <= cfg.atol) {
        res.converged = true;
        return res;
    }

    while (res.iterations < cfg.maxit) {
        V.assign(1, r);
        for (double& v : V[0]) v /= beta;
        Z.clear();
        std::fill(g.begin(), g.end(), 0.0);
        g[0] = beta;
        H.setZero();
        int j = 0;
        for (; j < m && res.iterations < cfg.maxit; ++j) {
            Z.emplace_back(n);
            M(V[j].data(), Z[j].data());
            A.apply(Z[j].data(), w.data());
            std::vector<double> wv(w);
            for (int pass = 0; pass < 2; ++pass)
                for (int i = 0; i <= j; ++i) {
                    const double h = dot(wv, V[i]);
                    H(i, j) += h;
                    for (int l = 0; l < n; ++l) wv[l] -= h * V[i][l];
                }
            H(j + 1, j) = nrm2(wv);
            if (!std::isfinite(H(j + 1, j)))
                throw std::runtime_error("fgmres: non-finite Arnoldi vector (operator or preconditioner produced NaN/inf)");
            const bool breakdown = H(j + 1, j) <= 1e-300;
            if (!breakdown) {
                V.emplace_back(wv);
                for (double& v : V.back()) v /= H(j + 1, j);
            }
            // Apply stored Givens rotations, then the new one.
            for (int i = 0; i < j; ++i) {
                const double t = cs[i] * H(i, j) + sn[i] * H(i + 1, j);
                H(i + 1, j) = -sn[i] * H(i, j) + cs[i] * H(i + 1, j);
                H(i, j) = t;
            }
            const double denom = std::hypot(H(j, j), H(j + 1, j));
            cs[j] = H(j, j) / denom;
            sn[j] = H(j + 1, j) / denom;
            H(j, j) = denom;
            H(j + 1, j) = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] = cs[j] * g[j];
            ++res.iterations;
            res.resnorms.push_back(std::abs(g[j + 1]));
            if (std::abs(g[j + 1]) <= target || breakdown) {
                ++j;
                break;
            }
        }
        // x += Z y with H y = g solved by back substitution.
        std::vector<double> y(j);
        for (int i = j - 1; i >= 0; --i) {
            double s = g[i];
            for (int l = i + 1; l < j; ++l) s -= H(i, l) * y[l];
            y[i] = s / H(i, i);
        }
        for (int i = 0; i < j; ++i)
            for (int l = 0; l < n; ++l) x[l] += y[i] * Z[i][l];
        A.apply(x, r.data());
        for (int i = 0; i < n; ++i) r[i] = b[i] - r[i];
        beta = nrm2(r);
        res.resnorms.back() = beta;  // replace the estimate by the true norm
        if (beta <= target) {
            res.converged = true;
            return res;
        }
    }
    return res;
}

/// Preconditioned conjugate gradients (SPD operator and preconditioner).
inline SolveResult pcg(const LinOp& A, const PrecOp& M, const double* b, double* x,
                       const KrylovConfig& cfg) {
    using namespace krydetail;
    const int n = A.n;
    SolveResult res;
    std::vector<double> r(n), z(n), p(n), Ap(n);
    A.apply(x, r.data());
    for (int i = 0; i < n; ++i) r[i] = b[i] - r[i];
    double rn = nrm2(r);
    res.resnorms.push_back(rn);
    const double target = std::max(cfg.rtol * rn, cfg.atol);
    if (rn <= cfg.atol) {
        res.converged = true;
        return res;
    }
    M(r.data(), z.data());
    p = z;
    double rz = dot(r, z);
    for (int it = 0; it < cfg.maxit; ++it) {
        A.apply(p.data(), Ap.data());
        const double alpha = rz / dot(p, Ap);
        for (int i = 0; i < n; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * Ap[i];
        }
        rn = nrm2(r);
        ++res.iterations;
        res.resnorms.push_back(rn);
        if (rn <= target) {
            res.converged = true;
            return res;
        }
        M(r.data(), z.data());
        const double rz2 = dot(r, z);
        const double betak = rz2 / rz;
        rz = rz2;
        for (int i = 0; i < n; ++i) p[i] = z[i] + betak * p[i];
    }
    return res;
}

/// Largest eigenvalue of a symmetric operator by plain Lanczos (no
/// reorthogonalization; adequate for smoothing-interval estimates).
inline double lanczos_lambda_max(const LinOp& A, int iters = 20, std::uint64_t seed = 13) {
    const int n = A.n;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> v(n), vold(n, 0.0), w(n);
    for (double& x : v) x = u(rng);
    double nv = krydetail::nrm2(v);
    for (double& x : v) x /= nv;
    std::vector<double> alpha, beta;
    double b = 0;
    const int mi = std::min(iters, n);
    for (int j = 0; j < mi; ++j) {
        A.apply(v.data(), w.data());
        for (int i = 0; i < n; ++i) w[i] -= b * vold[i];
        const double a = krydetail::dot(w, v);
        for (int i = 0; i < n; ++i) w[i] -= a * v[i];
        alpha.push_back(a);
        b = krydetail::nrm2(w);
        if (b < 1e-14) break;
        beta.push_back(b);
        vold = v;
        for (int i = 0; i < n; ++i) v[i] = w[i] / b;
    }
    const int mdim = static_cast<int>(alpha.size());
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(mdim, mdim);
    for (int i = 0; i < mdim; ++i) {
        T(i, i) = alpha[i];
        if (i + 1 < mdim) T(i, i + 1) = T(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
    return es.eigenvalues().maxCoeff();
}

/// Growth-rate estimate of the dominant eigenvalue of a general operator.
inline double power_lambda_max(const LinOp& A, int iters = 15, std::uint64_t seed = 13) {
    const int n = A.n;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> v(n), w(n);
    for (double& x : v) x = u(rng);
    double lambda = 0;
    for (int it = 0; it < iters; ++it) {
        const double nv = krydetail::nrm2(v);
        if (!std::isfinite(nv) || nv == 0.0) return std::numeric_limits<double>::quiet_NaN();
        for (double& x : v) x /= nv;
        A.apply(v.data(), w.data());
        lambda = krydetail::dot(v, w);
        v.swap(w);
    }
    return lambda;
}

} // namespace firn
