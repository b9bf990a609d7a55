#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "firn/geometry.hpp"
#include "firn/quadrature.hpp"

namespace firn {

/// One hexahedral leaf of the refinement forest. Anchor and extent live on an
/// integer lattice so that face adjacency and node identification are exact.
struct LeafCell {
    std::array<std::int64_t, 3> anchor{};  // min corner, lattice units
    std::array<std::int64_t, 3> extent{};  // widths, lattice units
    int hlevel = 0;                        // horizontal refinement level
    int vlevel = 0;                        // vertical refinement level
    int column = -1;                       // column id for columnar meshes
};

struct RefineSpec {
    enum class Kind { Uniform, Txy, Txyz };
    Kind kind = Kind::Uniform;
    int levels = 0;                          // extra uniform isotropic refinements
    std::array<int, 3> base = {4, 4, 2};     // base grid (Uniform kind only)
};

enum class RefineMode { Isotropic, Horizontal, Vertical };

class HexMesh {
public:
    double Lx = 1, Ly = 1, H = 1;
    std::array<bool, 2> periodic{true, true};
    std::array<std::int64_t, 3> lattice{1, 1, 1};
    std::vector<LeafCell> leaves;
    bool columnar = false;
    int n_columns = 0;

    int n_leaves() const { return static_cast<int>(leaves.size()); }

    double dx(const LeafCell& c) const { return Lx * double(c.extent[0]) / double(lattice[0]); }
    double dy(const LeafCell& c) const { return Ly * double(c.extent[1]) / double(lattice[1]); }
    double dz(const LeafCell& c) const { return H * double(c.extent[2]) / double(lattice[2]); }

    Vec3 corner(const LeafCell& c) const {
        return {Lx * double(c.anchor[0]) / double(lattice[0]),
                Ly * double(c.anchor[1]) / double(lattice[1]),
                H * double(c.anchor[2]) / double(lattice[2])};
    }

    /// Width-to-height ratio of one leaf.
    double aspect_ratio(const LeafCell& c) const { return std::max(dx(c), dy(c)) / dz(c); }

    double volume() const {
        double v = 0;
        for (const auto& c : leaves) v += dx(c) * dy(c) * dz(c);
        return v;
    }

    bool touches_bed(const LeafCell& c) const { return c.anchor[2] == 0; }
    bool touches_surface(const LeafCell& c) const { return c.anchor[2] + c.extent[2] == lattice[2]; }
};

namespace meshdetail {

inline void double_lattice(HexMesh& m, int axis) {
    m.lattice[axis] *= 2;
    for (auto& c : m.leaves) {
        c.anchor[axis] *= 2;
        c.extent[axis] *= 2;
    }
}

inline void ensure_splittable(HexMesh& m, const std::vector<std::uint8_t>& marks, RefineMode mode) {
    bool need[3] = {false, false, false};
    for (size_t i = 0; i < m.leaves.size(); ++i) {
        if (!marks[i]) continue;
        const auto& c = m.leaves[i];
        if (mode != RefineMode::Vertical) {
            if (c.extent[0] % 2) need[0] = true;
            if (c.extent[1] % 2) need[1] = true;
        }
        if (mode != RefineMode::Horizontal && c.extent[2] % 2) need[2] = true;
    }
    for (int a = 0; a < 3; ++a)
        if (need[a]) double_lattice(m, a);
}

/// Deterministic leaf order: lexicographic by anchor (z fastest within x,y).
inline void sort_leaves(HexMesh& m) {
    std::sort(m.leaves.begin(), m.leaves.end(), [](const LeafCell& a, const LeafCell& b) {
        if (a.anchor[0] != b.anchor[0]) return a.anchor[0] < b.anchor[0];
        if (a.anchor[1] != b.anchor[1]) return a.anchor[1] < b.anchor[1];
        return a.anchor[2] < b.anchor[2];
    });
}

/// Recompute column ids by grouping leaves with identical horizontal footprint.
/// Returns false if some footprint group does not stack into a full column.
inline bool assign_columns(HexMesh& m) {
    std::map<std::array<std::int64_t, 4>, std::vector<int>> groups;
    for (int i = 0; i < m.n_leaves(); ++i) {
        const auto& c = m.leaves[i];
        groups[{c.anchor[0], c.anchor[1], c.extent[0], c.extent[1]}].push_back(i);
    }
    int col = 0;
    for (auto& [foot, ids] : groups) {
        std::sort(ids.begin(), ids.end(), [&](int a, int b) {
            return m.leaves[a].anchor[2] < m.leaves[b].anchor[2];
        });
        std::int64_t z = 0;
        for (int id : ids) {
            if (m.leaves[id].anchor[2] != z) return false;
            z += m.leaves[id].extent[2];
        }
        if (z != m.lattice[2]) return false;
        for (int id : ids) m.leaves[id].column = col;
        ++col;
    }
    m.n_columns = col;
    return true;
}

} // namespace meshdetail

/// Face-adjacency index. Maps each axis-aligned plane to the leaves whose
/// lower/upper face lies on it; neighbor queries reduce to rectangle overlap.
class NeighborIndex {
public:
    explicit NeighborIndex(const HexMesh& mesh) : m_(mesh) {
        for (int a = 0; a < 3; ++a) {
            for (int i = 0; i < mesh.n_leaves(); ++i) {
                const auto& c = mesh.leaves[i];
                lower_[a][c.anchor[a]].push_back(i);
                upper_[a][c.anchor[a] + c.extent[a]].push_back(i);
            }
        }
    }

    /// Neighbors of leaf i across the face (axis, dir): dir=0 lower, dir=1 upper.
    /// Returns indices of all leaves sharing a positive-area face overlap.
    std::vector<int> neighbors(int i, int axis, int dir) const {
        const auto& c = m_.leaves[i];
        std::int64_t plane = dir ? c.anchor[axis] + c.extent[axis] : c.anchor[axis];
        const bool per = axis < 2 && m_.periodic[axis];
        if (dir == 1 && plane == m_.lattice[axis]) {
            if (!per) return {};
            plane = 0;
        }
        if (dir == 0 && plane == 0) {
            if (!per) return {};
            plane = m_.lattice[axis];
        }
        const auto& table = dir ? lower_[axis] : upper_[axis];
        auto it = table.find(plane);
        std::vector<int> out;
        if (it == table.end()) return out;
        const int t1 = (axis + 1) % 3, t2 = (axis + 2) % 3;
        for (int j : it->second) {
            if (j == i) continue;
            const auto& o = m_.leaves[j];
            if (c.anchor[t1] < o.anchor[t1] + o.extent[t1] && o.anchor[t1] < c.anchor[t1] + c.extent[t1] &&
                c.anchor[t2] < o.anchor[t2] + o.extent[t2] && o.anchor[t2] < c.anchor[t2] + c.extent[t2])
                out.push_back(j);
        }
        return out;
    }

private:
    const HexMesh& m_;
    std::unordered_map<std::int64_t, std::vector<int>> lower_[3], upper_[3];
};

/// True if every face-neighbor pair differs by at most one level per direction.
inline bool is_balanced(const HexMesh& mesh) {
    NeighborIndex idx(mesh);
    for (int i = 0; i < mesh.n_leaves(); ++i)
        for (int axis = 0; axis < 3; ++axis)
            for (int dir = 0; dir < 2; ++dir)
                for (int j : idx.neighbors(i, axis, dir)) {
                    if (std::abs(mesh.leaves[i].hlevel - mesh.leaves[j].hlevel) > 1) return false;
                    if (std::abs(mesh.leaves[i].vlevel - mesh.leaves[j].vlevel) > 1) return false;
                }
    return true;
}

namespace meshdetail {

inline void split_leaf(const LeafCell& c, RefineMode mode, std::vector<LeafCell>& out) {
    const int sx = mode == RefineMode::Vertical ? 1 : 2;
    const int sz = mode == RefineMode::Horizontal ? 1 : 2;
    const std::int64_t hx = c.extent[0] / 2, hy = c.extent[1] / 2, hz = c.extent[2] / 2;
    for (int iz = 0; iz < sz; ++iz)
        for (int iy = 0; iy < sx; ++iy)
            for (int ix = 0; ix < sx; ++ix) {
                LeafCell n = c;
                n.extent = {sx == 2 ? hx : c.extent[0], sx == 2 ? hy : c.extent[1],
                            sz == 2 ? hz : c.extent[2]};
                n.anchor = {c.anchor[0] + ix * hx, c.anchor[1] + iy * hy, c.anchor[2] + iz * hz};
                if (mode != RefineMode::Vertical) n.hlevel = c.hlevel + 1;
                if (mode != RefineMode::Horizontal) n.vlevel = c.vlevel + 1;
                out.push_back(n);
            }
}

/// One refinement sweep. For columnar meshes, horizontal refinement is lifted
/// to whole columns so the column structure survives.
inline void refine_once(HexMesh& mesh, std::vector<std::uint8_t> marks, RefineMode mode) {
    if (mesh.columnar && mode != RefineMode::Vertical) {
        std::vector<std::uint8_t> colmark(mesh.n_columns, 0);
        for (int i = 0; i < mesh.n_leaves(); ++i)
            if (marks[i]) colmark[mesh.leaves[i].column] = 1;
        std::vector<std::uint8_t> full(mesh.n_leaves());
        for (int i = 0; i < mesh.n_leaves(); ++i)
            full[i] = colmark[mesh.leaves[i].column];
        // Horizontally split every leaf of a marked column; vertically split
        // only the leaves that were marked themselves (isotropic mode).
        ensure_splittable(mesh, full, RefineMode::Isotropic);
        std::vector<LeafCell> out;
        out.reserve(mesh.leaves.size() * 2);
        for (int i = 0; i < mesh.n_leaves(); ++i) {
            const auto& c = mesh.leaves[i];
            if (!full[i]) {
                out.push_back(c);
                continue;
            }
            if (mode == RefineMode::Isotropic && marks[i])
                split_leaf(c, RefineMode::Isotropic, out);
            else
                split_leaf(c, RefineMode::Horizontal, out);
        }
        mesh.leaves = std::move(out);
    } else {
        ensure_splittable(mesh, marks, mode);
        std::vector<LeafCell> out;
        out.reserve(mesh.leaves.size() * 2);
        for (int i = 0; i < mesh.n_leaves(); ++i) {
            if (marks[i])
                split_leaf(mesh.leaves[i], mode, out);
            else
                out.push_back(mesh.leaves[i]);
        }
        mesh.leaves = std::move(out);
    }
    sort_leaves(mesh);
    if (mesh.columnar) {
        if (!assign_columns(mesh)) throw std::logic_error("refine: column structure lost");
    }
}

/// Cascading refinement until the 2:1 condition holds again.
inline void balance_closure(HexMesh& mesh) {
    for (int sweep = 0; sweep < 64; ++sweep) {
        NeighborIndex idx(mesh);
        std::vector<std::uint8_t> hmark(mesh.n_leaves(), 0), vmark(mesh.n_leaves(), 0);
        bool any = false;
        for (int i = 0; i < mesh.n_leaves(); ++i)
            for (int axis = 0; axis < 3; ++axis)
                for (int dir = 0; dir < 2; ++dir)
                    for (int j : idx.neighbors(i, axis, dir)) {
                        const auto &a = mesh.leaves[i], &b = mesh.leaves[j];
                        if (b.hlevel - a.hlevel > 1) hmark[i] = 1, any = true;
                        if (b.vlevel - a.vlevel > 1) vmark[i] = 1, any = true;
                    }
        if (!any) return;
        if (std::any_of(hmark.begin(), hmark.end(), [](auto m) { return m != 0; }))
            refine_once(mesh, hmark, RefineMode::Horizontal);
        if (std::any_of(vmark.begin(), vmark.end(), [](auto m) { return m != 0; })) {
            // Re-scan: leaf indices shifted if a horizontal pass ran above.
            NeighborIndex idx2(mesh);
            std::vector<std::uint8_t> vm(mesh.n_leaves(), 0);
            for (int i = 0; i < mesh.n_leaves(); ++i)
                for (int axis = 0; axis < 3; ++axis)
                    for (int dir = 0; dir < 2; ++dir)
                        for (int j : idx2.neighbors(i, axis, dir))
                            if (mesh.leaves[j].vlevel - mesh.leaves[i].vlevel > 1) vm[i] = 1;
            if (std::any_of(vm.begin(), vm.end(), [](auto m) { return m != 0; }))
                refine_once(mesh, vm, RefineMode::Vertical);
        }
    }
    throw std::logic_error("balance_closure: did not terminate");
}

} // namespace meshdetail

/// Refine the marked leaves (mode decides the children count: 8/4/2) and
/// restore 2:1 balance by cascading refinement.
inline HexMesh refine_and_balance(const HexMesh& mesh, const std::vector<std::uint8_t>& marks,
                                  RefineMode mode = RefineMode::Isotropic) {
    if (marks.size() != mesh.leaves.size())
        throw std::invalid_argument("refine_and_balance: one mark per leaf required");
    HexMesh out = mesh;
    meshdetail::refine_once(out, marks, mode);
    meshdetail::balance_closure(out);
    return out;
}

/// Build the slab test meshes. The Txy pattern is columnar with nonconforming
/// faces between every pair of adjacent base columns; Txyz applies the same
/// checkerboard per cell so nonconforming faces appear in all directions.
/// Both have exactly 576 leaves before the `levels` extra refinements.
inline HexMesh build_slab_mesh(const RefineSpec& spec, std::array<double, 3> extent,
                               std::array<bool, 2> periodic = {true, true}) {
    if (extent[0] <= 0 || extent[1] <= 0 || extent[2] <= 0)
        throw std::invalid_argument("build_slab_mesh: extent must be positive");
    HexMesh m;
    m.Lx = extent[0];
    m.Ly = extent[1];
    m.H = extent[2];
    m.periodic = periodic;

    const std::array<int, 3> base =
        spec.kind == RefineSpec::Kind::Uniform ? spec.base : std::array<int, 3>{4, 4, 2};
    m.lattice = {base[0], base[1], base[2]};
    for (int ix = 0; ix < base[0]; ++ix)
        for (int iy = 0; iy < base[1]; ++iy)
            for (int iz = 0; iz < base[2]; ++iz) {
                LeafCell c;
                c.anchor = {ix, iy, iz};
                c.extent = {1, 1, 1};
                m.leaves.push_back(c);
            }
    meshdetail::sort_leaves(m);
    m.columnar = spec.kind != RefineSpec::Kind::Txyz;
    if (m.columnar) meshdetail::assign_columns(m);

    if (spec.kind == RefineSpec::Kind::Txy) {
        // Checkerboard of base columns gets one isotropic refinement, then
        // every column is refined horizontally once: 32 -> 144 -> 576 leaves.
        std::vector<std::uint8_t> marks(m.n_leaves());
        for (int i = 0; i < m.n_leaves(); ++i) {
            const auto& c = m.leaves[i];
            marks[i] = static_cast<std::uint8_t>((c.anchor[0] + c.anchor[1]) % 2);
        }
        meshdetail::refine_once(m, marks, RefineMode::Isotropic);
        meshdetail::refine_once(m, std::vector<std::uint8_t>(m.n_leaves(), 1), RefineMode::Horizontal);
    } else if (spec.kind == RefineSpec::Kind::Txyz) {
        // Same counts, but the checkerboard alternates per cell in all three
        // directions, which breaks the column decomposition.
        std::vector<std::uint8_t> marks(m.n_leaves());
        for (int i = 0; i < m.n_leaves(); ++i) {
            const auto& c = m.leaves[i];
            marks[i] = static_cast<std::uint8_t>((c.anchor[0] + c.anchor[1] + c.anchor[2]) % 2);
        }
        meshdetail::refine_once(m, marks, RefineMode::Isotropic);
        meshdetail::refine_once(m, std::vector<std::uint8_t>(m.n_leaves(), 1), RefineMode::Horizontal);
    }

    for (int l = 0; l < spec.levels; ++l)
        meshdetail::refine_once(m, std::vector<std::uint8_t>(m.n_leaves(), 1), RefineMode::Isotropic);

    if (spec.kind != RefineSpec::Kind::Uniform) {
        const int expected = 576 * (1 << (3 * spec.levels));
        if (m.n_leaves() != expected)
            throw std::logic_error("build_slab_mesh: pattern produced unexpected leaf count");
    }
    if (!is_balanced(m)) throw std::logic_error("build_slab_mesh: unbalanced pattern");
    return m;
}

/// Domain length giving per-leaf aspect ratio phi on the Txy/Txyz patterns
/// (all leaves share one width:height ratio of L/(4 H) there).
inline double slab_length_for_aspect(double phi, double thickness = 1.0) {
    return 4.0 * phi * thickness;
}

// ---------------------------------------------------------------------------
// Trilinear cell geometry

/// Corner map of a (possibly perturbed) hexahedron; corner order x-fastest.
struct TrilinearCell {
    std::array<Vec3, 8> corners;
};

inline TrilinearCell leaf_box(const HexMesh& mesh, const LeafCell& c) {
    const Vec3 o = mesh.corner(c);
    const double ax = mesh.dx(c), ay = mesh.dy(c), az = mesh.dz(c);
    TrilinearCell t;
    for (int i = 0; i < 8; ++i)
        t.corners[i] = {o.x + (i & 1 ? ax : 0), o.y + (i & 2 ? ay : 0), o.z + (i & 4 ? az : 0)};
    return t;
}

inline Vec3 trilinear_map(const TrilinearCell& c, const Vec3& xi) {
    const double sx[2] = {0.5 * (1 - xi.x), 0.5 * (1 + xi.x)};
    const double sy[2] = {0.5 * (1 - xi.y), 0.5 * (1 + xi.y)};
    const double sz[2] = {0.5 * (1 - xi.z), 0.5 * (1 + xi.z)};
    Vec3 p;
    for (int i = 0; i < 8; ++i)
        p += c.corners[i] * (sx[i & 1] * sy[(i >> 1) & 1] * sz[(i >> 2) & 1]);
    return p;
}

inline Mat3 trilinear_jacobian(const TrilinearCell& c, const Vec3& xi) {
    const double sx[2] = {0.5 * (1 - xi.x), 0.5 * (1 + xi.x)};
    const double sy[2] = {0.5 * (1 - xi.y), 0.5 * (1 + xi.y)};
    const double sz[2] = {0.5 * (1 - xi.z), 0.5 * (1 + xi.z)};
    const double dx[2] = {-0.5, 0.5};
    Mat3 J;
    for (int i = 0; i < 8; ++i) {
        const int bx = i & 1, by = (i >> 1) & 1, bz = (i >> 2) & 1;
        const Vec3& p = c.corners[i];
        const double gx = dx[bx] * sy[by] * sz[bz];
        const double gy = sx[bx] * dx[by] * sz[bz];
        const double gz = sx[bx] * sy[by] * dx[bz];
        for (int d = 0; d < 3; ++d) {
            J(d, 0) += p[d] * gx;
            J(d, 1) += p[d] * gy;
            J(d, 2) += p[d] * gz;
        }
    }
    return J;
}

struct PointGeometry {
    Mat3 J;
    Mat3 JinvT;
    double detJ = 0;
};

/// Jacobian data at each point of a tensor quadrature rule on the cell.
inline std::vector<PointGeometry> element_geometry(const TrilinearCell& cell, const NodeRule& quad) {
    std::vector<PointGeometry> out;
    const int q = quad.npoints();
    out.reserve(static_cast<size_t>(q) * q * q);
    for (int kz = 0; kz < q; ++kz)
        for (int ky = 0; ky < q; ++ky)
            for (int kx = 0; kx < q; ++kx) {
                PointGeometry g;
                g.J = trilinear_jacobian(cell, {quad.points[kx], quad.points[ky], quad.points[kz]});
                g.detJ = det(g.J);
                if (!(g.detJ > 0)) throw std::runtime_error("element_geometry: nonpositive Jacobian");
                g.JinvT = transpose(inverse(g.J));
                out.push_back(g);
            }
    return out;
}

// ---------------------------------------------------------------------------
// Text dumps

inline void write_leaf_csv(const HexMesh& mesh, std::ostream& os) {
    os << "leaf,hlevel,vlevel,ax,ay,az,phi,column\n";
    for (int i = 0; i < mesh.n_leaves(); ++i) {
        const auto& c = mesh.leaves[i];
        os << i << ',' << c.hlevel << ',' << c.vlevel << ',' << c.anchor[0] << ',' << c.anchor[1]
           << ',' << c.anchor[2] << ',' << mesh.aspect_ratio(c) << ',' << c.column << '\n';
    }
}

/// Legacy-VTK unstructured grid with per-cell levels and column ids.
inline void write_vtk(const HexMesh& mesh, std::ostream& os,
                      const std::vector<double>* cell_scalar = nullptr,
                      const std::string& scalar_name = "value") {
    os << "# vtk DataFile Version 2.0\nfirn mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    os << "POINTS " << 8 * mesh.n_leaves() << " double\n";
    for (const auto& c : mesh.leaves) {
        const auto t = leaf_box(mesh, c);
        // VTK_HEXAHEDRON ordering: bottom quad CCW then top quad CCW.
        const int order[8] = {0, 1, 3, 2, 4, 5, 7, 6};
        for (int i : order)
            os << t.corners[i].x << ' ' << t.corners[i].y << ' ' << t.corners[i].z << '\n';
    }
    os << "CELLS " << mesh.n_leaves() << ' ' << 9 * mesh.n_leaves() << '\n';
    for (int i = 0; i < mesh.n_leaves(); ++i) {
        os << 8;
        for (int j = 0; j < 8; ++j) os << ' ' << 8 * i + j;
        os << '\n';
    }
    os << "CELL_TYPES " << mesh.n_leaves() << '\n';
    for (int i = 0; i < mesh.n_leaves(); ++i) os << "12\n";
    os << "CELL_DATA " << mesh.n_leaves() << '\n';
    os << "SCALARS column int 1\nLOOKUP_TABLE default\n";
    for (const auto& c : mesh.leaves) os << c.column << '\n';
    if (cell_scalar) {
        os << "SCALARS " << scalar_name << " double 1\nLOOKUP_TABLE default\n";
        for (double v : *cell_scalar) os << v << '\n';
    }
}

} // namespace firn
