#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "firn/geometry.hpp"

namespace firn {

/// Derive an independent seed for a named randomness sub-stream, so mesh,
/// field and aggregation draws can be varied independently from one run seed.
inline std::uint64_t substream_seed(std::uint64_t seed, std::string_view name) {
    std::uint64_t h = 1469598103934665603ull ^ seed;
    for (char c : name) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

struct FourierFieldSpec {
    int N = 10;
    double gamma = 1.5;
    double L = 1.0;           // horizontal period; omega = 2 pi / L
    double noise_amp = 0.25;  // nodal noise amplitude e
    std::uint64_t seed = 0;
};

/// Truncated 2D Fourier series with random coefficients decaying as
/// |(j,k)|^{-gamma}; the pointwise noise term is added separately per node.
class FourierField {
public:
    explicit FourierField(const FourierFieldSpec& spec) : spec_(spec) {
        std::mt19937_64 rng(spec.seed);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        const int n = spec.N + 1;
        a_.assign(n * n, 0);
        b_.assign(n * n, 0);
        c_.assign(n * n, 0);
        d_.assign(n * n, 0);
        decay_.assign(n * n, 0);
        for (int j = 0; j <= spec.N; ++j)
            for (int k = 0; k <= spec.N; ++k) {
                if (j == 0 && k == 0) continue;
                const int id = j * n + k;
                a_[id] = u(rng);
                b_[id] = u(rng);
                c_[id] = u(rng);
                d_[id] = u(rng);
                decay_[id] = std::pow(double(j * j + k * k), -spec.gamma / 2.0);
            }
        omega_ = 2.0 * M_PI / spec.L;
    }

    double operator()(double x, double y) const {
        const int n = spec_.N + 1;
        double s = 0;
        for (int j = 0; j <= spec_.N; ++j)
            for (int k = 0; k <= spec_.N; ++k) {
                if (j == 0 && k == 0) continue;
                const int id = j * n + k;
                const double cj = std::cos(omega_ * j * x), sj = std::sin(omega_ * j * x);
                const double ck = std::cos(omega_ * k * y), sk = std::sin(omega_ * k * y);
                s += (a_[id] * cj * ck + b_[id] * cj * sk + c_[id] * sj * ck + d_[id] * sj * sk) *
                     decay_[id];
            }
        return s;
    }

    double dx(double x, double y) const {
        const int n = spec_.N + 1;
        double s = 0;
        for (int j = 0; j <= spec_.N; ++j)
            for (int k = 0; k <= spec_.N; ++k) {
                if (j == 0 && k == 0) continue;
                const int id = j * n + k;
                const double cj = std::cos(omega_ * j * x), sj = std::sin(omega_ * j * x);
                const double ck = std::cos(omega_ * k * y), sk = std::sin(omega_ * k * y);
                s += omega_ * j *
                     (-a_[id] * sj * ck - b_[id] * sj * sk + c_[id] * cj * ck + d_[id] * cj * sk) *
                     decay_[id];
            }
        return s;
    }

    double dy(double x, double y) const {
        const int n = spec_.N + 1;
        double s = 0;
        for (int j = 0; j <= spec_.N; ++j)
            for (int k = 0; k <= spec_.N; ++k) {
                if (j == 0 && k == 0) continue;
                const int id = j * n + k;
                const double cj = std::cos(omega_ * j * x), sj = std::sin(omega_ * j * x);
                const double ck = std::cos(omega_ * k * y), sk = std::sin(omega_ * k * y);
                s += omega_ * k *
                     (-a_[id] * cj * sk + b_[id] * cj * ck - c_[id] * sj * sk + d_[id] * sj * ck) *
                     decay_[id];
            }
        return s;
    }

    /// Coefficient energy (a^2+b^2+c^2+d^2) * decay^2 of one mode.
    double mode_energy(int j, int k) const {
        const int id = j * (spec_.N + 1) + k;
        return (a_[id] * a_[id] + b_[id] * b_[id] + c_[id] * c_[id] + d_[id] * d_[id]) *
               decay_[id] * decay_[id];
    }

    const FourierFieldSpec& spec() const { return spec_; }

private:
    FourierFieldSpec spec_;
    double omega_;
    std::vector<double> a_, b_, c_, d_, decay_;
};

/// Sample a random scalar field at the given node positions: Fourier part plus
/// independent nodal noise in [-noise_amp, noise_amp]. Deterministic per seed.
inline std::vector<double> random_field(const FourierFieldSpec& spec, const std::vector<Vec3>& nodes) {
    FourierField f(spec);
    std::vector<double> out(nodes.size());
    std::mt19937_64 rng(substream_seed(spec.seed, "nodal-noise"));
    std::uniform_real_distribution<double> u(-spec.noise_amp, spec.noise_amp);
    for (size_t i = 0; i < nodes.size(); ++i) out[i] = f(nodes[i].x, nodes[i].y) + u(rng);
    return out;
}

} // namespace firn
