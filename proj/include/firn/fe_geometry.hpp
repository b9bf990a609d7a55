#pragma once

#include <vector>

#include "firn/dofmap.hpp"
#include "firn/mesh.hpp"
#include "firn/tensor.hpp"

namespace firn {

/// Per-element Jacobian data at the tensor quadrature points. Boxes (every
/// slab leaf without bed displacement) take the constant-Jacobian fast path.
class GeometryTables {
public:
    GeometryTables() = default;

    GeometryTables(const HexMesh& mesh, const DofMap& dm, const NodeRule& quad)
        : mesh_(&mesh), dm_(&dm), q1d_(quad.npoints()) {
        nq_ = q1d_ * q1d_ * q1d_;
        wq_.resize(nq_);
        {
            int p = 0;
            for (int kz = 0; kz < q1d_; ++kz)
                for (int ky = 0; ky < q1d_; ++ky)
                    for (int kx = 0; kx < q1d_; ++kx, ++p)
                        wq_[p] = quad.weights[kx] * quad.weights[ky] * quad.weights[kz];
        }
        const int ne = mesh.n_leaves();
        affine_.assign(ne, 1);
        aJ_.resize(ne);
        adet_.resize(ne);
        const bool displaced = dm.bed.has_value();
        if (!displaced) {
            for (int e = 0; e < ne; ++e) {
                const auto& c = mesh.leaves[e];
                aJ_[e] = {0.5 * mesh.dx(c), 0.5 * mesh.dy(c), 0.5 * mesh.dz(c)};
                adet_[e] = aJ_[e][0] * aJ_[e][1] * aJ_[e][2];
            }
            return;
        }
        // Isoparametric path: differentiate the (constrained) coordinate field.
        kernels_ = TensorKernels(gll_rule(dm.k).points, quad.points);
        affine_.assign(ne, 0);
        JinvT_.resize(static_cast<size_t>(ne) * nq_);
        detJ_.resize(static_cast<size_t>(ne) * nq_);
        std::vector<Vec3> xe(dm.nn);
        std::vector<double> comp(dm.nn), grad(3 * nq_);
        for (int e = 0; e < ne; ++e) {
            dm.element_coords(e, xe.data());
            Mat3 J;
            std::vector<Mat3> Js(nq_);
            for (int d = 0; d < 3; ++d) {
                for (int i = 0; i < dm.nn; ++i) comp[i] = xe[i][d];
                kernels_.gradient(comp.data(), grad.data());
                for (int p = 0; p < nq_; ++p)
                    for (int c = 0; c < 3; ++c) Js[p](d, c) = grad[3 * p + c];
            }
            for (int p = 0; p < nq_; ++p) {
                const double dj = det(Js[p]);
                if (!(dj > 0)) throw std::runtime_error("GeometryTables: nonpositive Jacobian");
                detJ_[static_cast<size_t>(e) * nq_ + p] = dj;
                JinvT_[static_cast<size_t>(e) * nq_ + p] = transpose(inverse(Js[p]));
            }
        }
    }

    int n_qpts() const { return nq_; }
    bool affine(int e) const { return affine_[e] != 0; }

    /// Quadrature weight (reference measure) at point p.
    double wq(int p) const { return wq_[p]; }

    double det_j(int e, int p) const {
        return affine_[e] ? adet_[e] : detJ_[static_cast<size_t>(e) * nq_ + p];
    }

    /// J^{-T}; for boxes this is diag(2/dx, 2/dy, 2/dz).
    Mat3 jinv_t(int e, int p) const {
        if (affine_[e]) {
            Mat3 m;
            m(0, 0) = 1.0 / aJ_[e][0];
            m(1, 1) = 1.0 / aJ_[e][1];
            m(2, 2) = 1.0 / aJ_[e][2];
            return m;
        }
        return JinvT_[static_cast<size_t>(e) * nq_ + p];
    }

    /// Map a reference gradient to physical coordinates.
    Vec3 to_physical(int e, int p, const Vec3& gref) const {
        if (affine_[e])
            return {gref.x / aJ_[e][0], gref.y / aJ_[e][1], gref.z / aJ_[e][2]};
        return matvec(JinvT_[static_cast<size_t>(e) * nq_ + p], gref);
    }

private:
    const HexMesh* mesh_ = nullptr;
    const DofMap* dm_ = nullptr;
    int q1d_ = 0, nq_ = 0;
    TensorKernels kernels_;
    std::vector<double> wq_;
    std::vector<std::uint8_t> affine_;
    std::vector<std::array<double, 3>> aJ_;  // diagonal J for boxes
    std::vector<double> adet_;
    std::vector<Mat3> JinvT_;
    std::vector<double> detJ_;
};

/// Quadrature data on bed facets: surface measure, outward normal and the
/// physical position of each facet quadrature point.
struct BedFacetTables {
    int q1d = 0, nqf = 0;
    std::vector<std::int32_t> leaves;          // element of each facet
    std::vector<double> dS;                    // nqf per facet, includes quad weight
    std::vector<Vec3> normal;                  // outward (pointing out of the ice)
    std::vector<Vec3> pos;

    BedFacetTables() = default;
    BedFacetTables(const HexMesh& mesh, const DofMap& dm, const NodeRule& quad) {
        q1d = quad.npoints();
        nqf = q1d * q1d;
        leaves.assign(dm.bed_leaves.begin(), dm.bed_leaves.end());
        const int nf = static_cast<int>(leaves.size());
        dS.resize(static_cast<size_t>(nf) * nqf);
        normal.resize(static_cast<size_t>(nf) * nqf);
        pos.resize(static_cast<size_t>(nf) * nqf);
        FaceKernels fk(gll_rule(dm.k).points, quad.points);
        const int nfn = fk.n_nodes();
        std::vector<Vec3> xe(dm.nn);
        std::vector<double> comp(nfn), gradf(2 * nqf);
        std::vector<std::array<double, 2>> tx(nqf * 3);
        for (int f = 0; f < nf; ++f) {
            const int e = leaves[f];
            dm.element_coords(e, xe.data());
            // Bottom-face nodes: local t = 0, laid out (r, s).
            std::vector<Vec3> xf(nfn);
            for (int s = 0; s <= dm.k; ++s)
                for (int r = 0; r <= dm.k; ++r) xf[r + (dm.k + 1) * s] = xe[dm.local_node(r, s, 0)];
            std::array<std::vector<Vec3>, 2> tang;
            tang[0].resize(nqf);
            tang[1].resize(nqf);
            std::vector<Vec3> xq(nqf);
            for (int d = 0; d < 3; ++d) {
                for (int i = 0; i < nfn; ++i) comp[i] = xf[i][d];
                fk.gradient(comp.data(), gradf.data());
                std::vector<double> vals(nqf);
                fk.interpolate(comp.data(), vals.data());
                for (int p = 0; p < nqf; ++p) {
                    tang[0][p][d] = gradf[2 * p];
                    tang[1][p][d] = gradf[2 * p + 1];
                    xq[p][d] = vals[p];
                }
            }
            int p = 0;
            for (int qy = 0; qy < q1d; ++qy)
                for (int qx = 0; qx < q1d; ++qx, ++p) {
                    const Vec3 cr = cross(tang[0][p], tang[1][p]);  // points up into the ice
                    const double area = norm(cr);
                    const size_t idx = static_cast<size_t>(f) * nqf + p;
                    dS[idx] = area * quad.weights[qx] * quad.weights[qy];
                    normal[idx] = cr * (-1.0 / area);
                    pos[idx] = xq[p];
                }
        }
    }
};

} // namespace firn
