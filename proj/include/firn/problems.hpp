#pragma once

#include <cmath>
#include <memory>

#include "firn/fields.hpp"
#include "firn/stokes_operator.hpp"

namespace firn {

/// Model-problem catalog: periodic slab cutouts with the two nonconforming
/// test meshes, linear (nu = beta = 1) or power-law rheology, and the basal
/// friction fields of the nonlinear studies.
struct ProblemConfig {
    // Mesh.
    RefineSpec::Kind mesh_kind = RefineSpec::Kind::Txy;
    int levels = 0;
    double phi = 1.0;
    double thickness = 1.0;

    // Spaces.
    int k = 3;
    PressureSpace::Family pfam = PressureSpace::Family::Qkm2;
    PressureSpace::Basis pbasis = PressureSpace::Basis::GaussNodes;
    RestrictionMode restriction = RestrictionMode::Exact;
    BoundaryConfig bc{};

    // Physics.
    Rheology rheo{1.0, 1e-6, 1.0};  // linear viscosity 1 by default
    enum class Beta { Constant, IsmipC, Stream } beta_kind = Beta::Constant;
    double beta_const = 1.0;
    double beta_scale = 1.0;
    double slope_deg = 0.0;  // converts to a tangential body force
    double rho = 910.0;      // kg/m^3
    double gravity = 9.81;   // m/s^2

    // Bed topography.
    bool rough_bed = false;
    double bed_gamma = 1.5;
    double bed_amp = 0.25;  // max |elevation| / thickness

    std::uint64_t seed = 1234;
};

struct Problem {
    std::unique_ptr<HexMesh> mesh;
    Discretization disc;
    std::unique_ptr<StokesOperator> op;
    ProblemConfig config;
    double domain_length = 0;
};

namespace probdetail {

/// Scale factor putting max |field| on a probe grid at `target`.
inline double bed_scale(const FourierField& f, double L, double target) {
    double mx = 0;
    const int n = 256;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            mx = std::max(mx, std::abs(f(L * i / n, L * j / n)));
    return mx > 0 ? target / mx : 0.0;
}

} // namespace probdetail

inline Problem make_problem(const ProblemConfig& cfg) {
    Problem p;
    p.config = cfg;
    const double H = cfg.thickness;
    const double L = slab_length_for_aspect(cfg.phi, H);
    p.domain_length = L;
    p.mesh = std::make_unique<HexMesh>(
        build_slab_mesh({cfg.mesh_kind, cfg.levels}, {L, L, H}, {true, true}));

    std::optional<BedShape> bed;
    std::shared_ptr<FourierField> bedfield;
    if (cfg.rough_bed) {
        FourierFieldSpec spec;
        spec.N = 10;
        spec.gamma = cfg.bed_gamma;
        spec.L = L;
        spec.noise_amp = 0.0;
        spec.seed = substream_seed(cfg.seed, "bed");
        bedfield = std::make_shared<FourierField>(spec);
        const double s = probdetail::bed_scale(*bedfield, L, cfg.bed_amp * H);
        BedShape bs;
        bs.elevation = [bedfield, s](double x, double y) { return s * (*bedfield)(x, y); };
        bs.slope_x = [bedfield, s](double x, double y) { return s * bedfield->dx(x, y); };
        bs.slope_y = [bedfield, s](double x, double y) { return s * bedfield->dy(x, y); };
        bed = bs;
    }

    p.disc = make_discretization(*p.mesh, cfg.k, cfg.bc, bed, cfg.pfam, cfg.pbasis,
                                 cfg.restriction);
    p.op = std::make_unique<StokesOperator>(p.disc, cfg.rheo);

    const double omega = 2.0 * M_PI / L;
    switch (cfg.beta_kind) {
        case ProblemConfig::Beta::Constant:
            p.op->set_beta_const(cfg.beta_const * cfg.beta_scale);
            break;
        case ProblemConfig::Beta::IsmipC:
            p.op->set_beta([=](double x, double y) {
                return cfg.beta_scale * (1000.0 + 1000.0 * std::sin(omega * x) * std::sin(omega * y));
            });
            break;
        case ProblemConfig::Beta::Stream: {
            const double beta0 = 1.0e4;  // Pa yr / m
            const double sigma = L / 16.0;
            p.op->set_beta([=](double x, double y) {
                (void)x;
                const double dy = y - 0.5 * L;
                return cfg.beta_scale * beta0 * (1.0 - 0.99 * std::exp(-dy * dy / (2 * sigma * sigma)));
            });
            break;
        }
    }
    if (cfg.slope_deg != 0.0) {
        const double theta = cfg.slope_deg * M_PI / 180.0;
        p.op->set_body_force({cfg.rho * cfg.gravity * std::sin(theta), 0, 0});
    }
    return p;
}

/// Flat-bed ice stream problem: 400 km x 400 km x 1 km periodic slab pitched
/// by 0.5 degrees, Glen exponent 3.
inline ProblemConfig stream_config(int k = 3) {
    ProblemConfig cfg;
    cfg.mesh_kind = RefineSpec::Kind::Txy;
    cfg.phi = 100.0;
    cfg.thickness = 1000.0;  // meters
    cfg.k = k;
    cfg.rheo = Rheology{3.0, 1e-6, 2.15e5};
    cfg.beta_kind = ProblemConfig::Beta::Stream;
    cfg.slope_deg = 0.5;
    return cfg;
}

/// Rough-bed variant: 1% of the basal friction plus a random bed topography.
inline ProblemConfig rough_bed_config(double gamma, int k = 3, std::uint64_t seed = 1234) {
    ProblemConfig cfg = stream_config(k);
    cfg.beta_scale = 0.01;
    cfg.rough_bed = true;
    cfg.bed_gamma = gamma;
    cfg.bed_amp = gamma <= 1.0 ? 0.5 : 0.25;
    cfg.seed = seed;
    return cfg;
}

/// ISMIP-C style slab: published friction formula, 0.1 degree slope.
inline ProblemConfig ismip_c_config(int k = 3) {
    ProblemConfig cfg;
    cfg.mesh_kind = RefineSpec::Kind::Txy;
    cfg.phi = 100.0;
    cfg.thickness = 1000.0;
    cfg.k = k;
    cfg.rheo = Rheology{3.0, 1e-6, 2.15e5};
    cfg.beta_kind = ProblemConfig::Beta::IsmipC;
    cfg.slope_deg = 0.1;
    return cfg;
}

/// Nondimensional linear test problem (nu = 1) on the chosen mesh pattern.
inline ProblemConfig linear_config(RefineSpec::Kind kind, double phi, int k, double beta = 1.0,
                                   int levels = 0) {
    ProblemConfig cfg;
    cfg.mesh_kind = kind;
    cfg.phi = phi;
    cfg.k = k;
    cfg.levels = levels;
    cfg.rheo = Rheology{1.0, 1e-6, 1.0};
    cfg.beta_const = beta;
    return cfg;
}

/// Manufactured velocity: one random scalar field per component, sampled at
/// the global nodes and packed through the node frames.
inline std::vector<double> manufactured_velocity(const Discretization& d, std::uint64_t seed) {
    FourierFieldSpec spec;
    spec.L = d.mesh->Lx;
    spec.seed = substream_seed(seed, "manufactured-u");
    std::vector<double> u(d.n_u, 0.0);
    std::array<std::vector<double>, 3> comp;
    for (int c = 0; c < 3; ++c) {
        spec.seed = substream_seed(seed, c == 0 ? "u-x" : (c == 1 ? "u-y" : "u-z"));
        comp[c] = random_field(spec, d.dm.node_pos);
    }
    for (int i = 0; i < d.dm.n_nodes; ++i) {
        const Vec3 v{comp[0][i], comp[1][i], comp[2][i]};
        const Mat3& Q = d.dm.node_frame[i];
        for (int c = 0; c < d.dm.node_ndof[i]; ++c)
            u[d.dm.node_dof[i] + c] = Q(0, c) * v.x + Q(1, c) * v.y + Q(2, c) * v.z;
    }
    return u;
}

inline std::vector<double> manufactured_pressure(const Discretization& d, std::uint64_t seed) {
    std::mt19937_64 rng(substream_seed(seed, "manufactured-p"));
    std::uniform_real_distribution<double> un(-1.0, 1.0);
    std::vector<double> p(d.n_p);
    for (double& v : p) v = un(rng);
    return p;
}

} // namespace firn
