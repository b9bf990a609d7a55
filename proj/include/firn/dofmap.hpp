#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "firn/geometry.hpp"
#include "firn/lagrange.hpp"
#include "firn/mesh.hpp"
#include "firn/quadrature.hpp"

namespace firn {

/// Vertically displaced bed surface z = elevation(x,y); the top stays flat.
struct BedShape {
    std::function<double(double, double)> elevation;
    std::function<double(double, double)> slope_x;
    std::function<double(double, double)> slope_y;
};

struct BoundaryConfig {
    bool eliminate_bed_normal = true;  // u.n = 0 on the bed, removed from the basis
};

namespace dofdetail {

/// Exact identity of a 1D node position on the doubled integer lattice.
/// Endpoints (and midpoints for even order) land on lattice points; interior
/// Gauss-Lobatto nodes are irrational and identified by (start, width, index).
struct AxisKey {
    std::int64_t a = 0;  // lattice point, or interval start
    std::int64_t w = 0;  // 0 for lattice points, interval width otherwise
    std::int32_t i = 0;  // node index for interior nodes

    bool operator==(const AxisKey&) const = default;
    auto operator<=>(const AxisKey&) const = default;
};

inline AxisKey make_axis_key(std::int64_t s2, std::int64_t w2, int i, int k, bool periodic,
                             std::int64_t lattice2) {
    auto wrap = [&](std::int64_t v) { return periodic ? ((v % lattice2) + lattice2) % lattice2 : v; };
    if (i == 0) return {wrap(s2), 0, 0};
    if (i == k) return {wrap(s2 + w2), 0, 0};
    if (k % 2 == 0 && i == k / 2) return {wrap(s2 + w2 / 2), 0, 0};
    return {s2, w2, i};
}

struct NodeKey {
    AxisKey x, y, z;
    bool operator==(const NodeKey&) const = default;
};

struct NodeKeyHash {
    size_t operator()(const NodeKey& k) const {
        auto mix = [](size_t h, std::int64_t v) {
            h ^= static_cast<size_t>(v) + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
            return h;
        };
        size_t h = 0;
        for (const AxisKey* a : {&k.x, &k.y, &k.z}) {
            h = mix(h, a->a);
            h = mix(h, a->w);
            h = mix(h, a->i);
        }
        return h;
    }
};

/// Real coordinate of an axis key in lattice units (not yet scaled to length).
inline double axis_position(const AxisKey& k, const std::vector<double>& gll_t) {
    if (k.w == 0) return 0.5 * double(k.a);
    return 0.5 * (double(k.a) + double(k.w) * gll_t[k.i]);
}

} // namespace dofdetail

/// One term of a hanging-node constraint: value += w * value(node).
struct Constraint {
    int node;
    double w;
};

/// Flattened per-element restriction for scalar fields: local node -> list of
/// (independent node, weight) pairs.
struct ElemScalarMap {
    std::vector<std::int32_t> offs;  // size n_elems*nn + 1
    std::vector<Constraint> entries;

    std::pair<const Constraint*, const Constraint*> row(int elem, int nn, int ln) const {
        const size_t r = static_cast<size_t>(elem) * nn + ln;
        return {entries.data() + offs[r], entries.data() + offs[r + 1]};
    }
};

/// Per-element restriction for velocity: local node -> list of (global dof,
/// 3-vector coefficient). Folds hanging-node interpolation, periodic wraps,
/// bed-frame rotation and normal-component elimination into one gather map.
struct VelEntry {
    std::int32_t gdof;
    Vec3 c;
};

struct ElemVelMap {
    std::vector<std::int32_t> offs;  // size n_elems*nn + 1
    std::vector<VelEntry> entries;

    std::pair<const VelEntry*, const VelEntry*> row(int elem, int nn, int ln) const {
        const size_t r = static_cast<size_t>(elem) * nn + ln;
        return {entries.data() + offs[r], entries.data() + offs[r + 1]};
    }
};

enum class RestrictionMode { Exact, Sparse };

class DofMap {
public:
    const HexMesh* mesh = nullptr;
    int k = 0;
    int nn = 0;  // element nodes (k+1)^3

    int n_nodes = 0;     // independent velocity nodes
    int n_vel_dofs = 0;  // packed velocity dofs (2 per bed node if eliminated)
    int n_hanging = 0;

    std::vector<Vec3> node_pos;            // physical coordinates (bed-displaced)
    std::vector<double> node_zref;         // flat-slab reference height
    std::vector<std::int32_t> node_column; // owner column, -1 if none
    std::vector<std::uint8_t> node_on_bed;
    std::vector<std::uint8_t> node_on_surface;
    std::vector<Mat3> node_frame;          // columns: tangent1, tangent2, normal (bed), else I
    std::vector<std::int32_t> node_ndof;   // 2 or 3
    std::vector<std::int32_t> node_dof;    // offset of first dof

    ElemScalarMap scalar_exact, scalar_sparse;
    ElemVelMap vel_exact, vel_sparse;

    std::vector<std::int32_t> bed_leaves;      // leaves owning a bed facet
    std::vector<std::int32_t> surface_leaves;  // leaves owning a top facet

    BoundaryConfig bc;
    std::optional<BedShape> bed;

    const ElemScalarMap& scalar_map(RestrictionMode m) const {
        return m == RestrictionMode::Exact ? scalar_exact : scalar_sparse;
    }
    const ElemVelMap& vel_map(RestrictionMode m) const {
        return m == RestrictionMode::Exact ? vel_exact : vel_sparse;
    }

    int local_node(int r, int s, int t) const { return r + (k + 1) * (s + (k + 1) * t); }

    /// Gather element velocity values (3 per local node) from a packed vector.
    void gather_velocity(int elem, const double* u, double* ue, RestrictionMode m) const {
        const auto& vm = vel_map(m);
        for (int ln = 0; ln < nn; ++ln) {
            double v0 = 0, v1 = 0, v2 = 0;
            auto [b, e] = vm.row(elem, nn, ln);
            for (auto* p = b; p != e; ++p) {
                const double x = u[p->gdof];
                v0 += p->c.x * x;
                v1 += p->c.y * x;
                v2 += p->c.z * x;
            }
            ue[3 * ln] = v0;
            ue[3 * ln + 1] = v1;
            ue[3 * ln + 2] = v2;
        }
    }

    /// Scatter-add the transpose: r += R^T re.
    void scatter_velocity(int elem, const double* re, double* r, RestrictionMode m) const {
        const auto& vm = vel_map(m);
        for (int ln = 0; ln < nn; ++ln) {
            const double v0 = re[3 * ln], v1 = re[3 * ln + 1], v2 = re[3 * ln + 2];
            auto [b, e] = vm.row(elem, nn, ln);
            for (auto* p = b; p != e; ++p) r[p->gdof] += p->c.x * v0 + p->c.y * v1 + p->c.z * v2;
        }
    }

    void gather_scalar(int elem, const double* s, double* se, RestrictionMode m) const {
        const auto& sm = scalar_map(m);
        for (int ln = 0; ln < nn; ++ln) {
            double v = 0;
            auto [b, e] = sm.row(elem, nn, ln);
            for (auto* p = b; p != e; ++p) v += p->w * s[p->node];
            se[ln] = v;
        }
    }

    /// Element node coordinates. Horizontal coordinates come from the leaf's
    /// lattice box (exact, unaffected by periodic wraps); the vertical
    /// coordinate of a displaced bed is a nodal field, so hanging nodes
    /// interpolate the independent geometry and the mapped mesh stays
    /// conforming.
    void element_coords(int elem, Vec3* xe) const {
        const auto& c = mesh->leaves[elem];
        const Vec3 o = mesh->corner(c);
        const double dx = mesh->dx(c), dy = mesh->dy(c), dz = mesh->dz(c);
        for (int t = 0; t <= k; ++t)
            for (int s = 0; s <= k; ++s)
                for (int r = 0; r <= k; ++r)
                    xe[local_node(r, s, t)] = {o.x + dx * gll01[r], o.y + dy * gll01[s],
                                               o.z + dz * gll01[t]};
        if (!bed) return;
        for (int ln = 0; ln < nn; ++ln) {
            double z = 0;
            auto [b, e] = scalar_exact.row(elem, nn, ln);
            for (auto* p = b; p != e; ++p) z += node_pos[p->node].z * p->w;
            xe[ln].z = z;
        }
    }

    std::vector<double> gll01;  // Gauss-Lobatto nodes mapped to [0,1]
};

namespace dofdetail {

struct FaceRelation {
    enum class Kind { Boundary, Conforming, FineSide, CoarseSide } kind;
    int coarse_neighbor = -1;  // for FineSide
};

inline std::array<int, 2> tangent_axes(int axis) {
    return axis == 0 ? std::array<int, 2>{1, 2}
                     : (axis == 1 ? std::array<int, 2>{0, 2} : std::array<int, 2>{0, 1});
}

inline FaceRelation classify_face(const HexMesh& mesh, const NeighborIndex& idx, int leaf, int axis,
                                  int dir) {
    const auto nbrs = idx.neighbors(leaf, axis, dir);
    if (nbrs.empty()) return {FaceRelation::Kind::Boundary};
    const auto [t1, t2] = tangent_axes(axis);
    const auto& c = mesh.leaves[leaf];
    if (nbrs.size() == 1) {
        const auto& o = mesh.leaves[nbrs[0]];
        const bool ge1 = o.extent[t1] >= c.extent[t1], ge2 = o.extent[t2] >= c.extent[t2];
        const bool eq = o.extent[t1] == c.extent[t1] && o.extent[t2] == c.extent[t2];
        if (eq && o.anchor[t1] == c.anchor[t1] && o.anchor[t2] == c.anchor[t2])
            return {FaceRelation::Kind::Conforming};
        if (ge1 && ge2) return {FaceRelation::Kind::FineSide, nbrs[0]};
        throw std::logic_error("dofmap: unsupported mixed-refinement interface");
    }
    for (int j : nbrs) {
        const auto& o = mesh.leaves[j];
        if (o.extent[t1] > c.extent[t1] || o.extent[t2] > c.extent[t2])
            throw std::logic_error("dofmap: unsupported mixed-refinement interface");
    }
    return {FaceRelation::Kind::CoarseSide};
}

} // namespace dofdetail

/// Build the global velocity node numbering with hanging-node constraints,
/// periodic identification, and bed boundary treatment.
inline DofMap build_dofmap(const HexMesh& mesh, int k, BoundaryConfig bc = {},
                           std::optional<BedShape> bed = std::nullopt) {
    using namespace dofdetail;
    if (k < 1) throw std::invalid_argument("build_dofmap: order must be >= 1");
    if (!is_balanced(mesh)) throw std::invalid_argument("build_dofmap: mesh is not 2:1 balanced");

    DofMap dm;
    dm.mesh = &mesh;
    dm.k = k;
    dm.nn = (k + 1) * (k + 1) * (k + 1);
    dm.bc = bc;
    dm.bed = bed;

    const auto gll = gll_rule(k).points;
    std::vector<double> gt(k + 1);
    for (int i = 0; i <= k; ++i) gt[i] = 0.5 * (1.0 + gll[i]);
    dm.gll01 = gt;

    const int ne = mesh.n_leaves();
    const int nn = dm.nn;
    const std::array<std::int64_t, 3> lat2 = {2 * mesh.lattice[0], 2 * mesh.lattice[1],
                                              2 * mesh.lattice[2]};

    // Pass 1: node classes from exact keys.
    std::unordered_map<NodeKey, int, NodeKeyHash> classes;
    classes.reserve(static_cast<size_t>(ne) * nn);
    std::vector<std::int32_t> img_class(static_cast<size_t>(ne) * nn);
    std::vector<NodeKey> class_key;
    for (int e = 0; e < ne; ++e) {
        const auto& c = mesh.leaves[e];
        const std::int64_t a2[3] = {2 * c.anchor[0], 2 * c.anchor[1], 2 * c.anchor[2]};
        const std::int64_t w2[3] = {2 * c.extent[0], 2 * c.extent[1], 2 * c.extent[2]};
        for (int t = 0; t <= k; ++t)
            for (int s = 0; s <= k; ++s)
                for (int r = 0; r <= k; ++r) {
                    NodeKey key{make_axis_key(a2[0], w2[0], r, k, mesh.periodic[0], lat2[0]),
                                make_axis_key(a2[1], w2[1], s, k, mesh.periodic[1], lat2[1]),
                                make_axis_key(a2[2], w2[2], t, k, false, lat2[2])};
                    auto [it, inserted] = classes.try_emplace(key, static_cast<int>(class_key.size()));
                    if (inserted) class_key.push_back(key);
                    img_class[static_cast<size_t>(e) * nn + dm.local_node(r, s, t)] = it->second;
                }
    }
    const int nclass = static_cast<int>(class_key.size());

    // Pass 2: face relations.
    NeighborIndex idx(mesh);
    std::vector<std::array<FaceRelation, 6>> faces(ne);
    for (int e = 0; e < ne; ++e)
        for (int axis = 0; axis < 3; ++axis)
            for (int dir = 0; dir < 2; ++dir)
                faces[e][2 * axis + dir] = classify_face(mesh, idx, e, axis, dir);

    for (int e = 0; e < ne; ++e) {
        if (mesh.leaves[e].anchor[2] == 0) dm.bed_leaves.push_back(e);
        if (mesh.leaves[e].anchor[2] + mesh.leaves[e].extent[2] == mesh.lattice[2])
            dm.surface_leaves.push_back(e);
    }

    // Pass 3: a class is independent iff some image of it avoids every
    // fine-side nonconforming face of its own leaf.
    auto face_locals = [&](int axis, int dir) {
        std::vector<int> out;
        for (int t = 0; t <= k; ++t)
            for (int s = 0; s <= k; ++s)
                for (int r = 0; r <= k; ++r) {
                    const int loc[3] = {r, s, t};
                    if (loc[axis] == (dir ? k : 0)) out.push_back(dm.local_node(r, s, t));
                }
        return out;
    };
    std::array<std::vector<int>, 6> face_local_sets;
    for (int axis = 0; axis < 3; ++axis)
        for (int dir = 0; dir < 2; ++dir) face_local_sets[2 * axis + dir] = face_locals(axis, dir);

    std::vector<std::uint8_t> img_on_fineside(static_cast<size_t>(ne) * nn, 0);
    for (int e = 0; e < ne; ++e)
        for (int f = 0; f < 6; ++f)
            if (faces[e][f].kind == FaceRelation::Kind::FineSide)
                for (int ln : face_local_sets[f]) img_on_fineside[static_cast<size_t>(e) * nn + ln] = 1;

    std::vector<std::uint8_t> has_free_image(nclass, 0);
    for (size_t i = 0; i < img_class.size(); ++i)
        if (!img_on_fineside[i]) has_free_image[img_class[i]] = 1;

    // Candidate constraint sources per dependent class: pick the coarsest
    // neighbor, breaking ties by leaf index then face id.
    struct Source {
        int level_sum = 1 << 30;
        int coarse_leaf = -1;
        int face = -1;  // slave leaf face id (for parametrization)
        int slave_leaf = -1;
        int slave_ln = -1;
    };
    std::vector<Source> best(nclass);
    for (int e = 0; e < ne; ++e)
        for (int f = 0; f < 6; ++f) {
            if (faces[e][f].kind != FaceRelation::Kind::FineSide) continue;
            const int j = faces[e][f].coarse_neighbor;
            const int lvl = mesh.leaves[j].hlevel + mesh.leaves[j].vlevel;
            for (int ln : face_local_sets[f]) {
                const int cls = img_class[static_cast<size_t>(e) * nn + ln];
                if (has_free_image[cls]) continue;
                Source cand{lvl, j, f, e, ln};
                Source& cur = best[cls];
                if (cand.level_sum < cur.level_sum ||
                    (cand.level_sum == cur.level_sum &&
                     (cand.coarse_leaf < cur.coarse_leaf ||
                      (cand.coarse_leaf == cur.coarse_leaf && cand.face < cur.face))))
                    cur = cand;
            }
        }

    // Raw constraints (masters may themselves be dependent; resolved below).
    auto class_axis_pos = [&](const NodeKey& key, int axis) {
        const AxisKey& a = axis == 0 ? key.x : (axis == 1 ? key.y : key.z);
        return axis_position(a, gt);  // doubled-lattice halves
    };
    // Positions may wrap on periodic axes; measure parametric coordinates on
    // the coarse face through the slave element, whose interval is unwrapped.
    auto raw_constraints = [&](int cls) {
        const Source& src = best[cls];
        if (src.coarse_leaf < 0) throw std::logic_error("dofmap: dependent node without source");
        const int axis = src.face / 2;
        const auto [t1, t2] = tangent_axes(axis);
        const auto& slave = mesh.leaves[src.slave_leaf];
        const auto& coarse = mesh.leaves[src.coarse_leaf];
        // Slave node parametric position within the slave leaf.
        const int lnr = src.slave_ln % (k + 1);
        const int lns = (src.slave_ln / (k + 1)) % (k + 1);
        const int lnt = src.slave_ln / ((k + 1) * (k + 1));
        const int loc[3] = {lnr, lns, lnt};
        auto coord = [&](int ax) {
            return double(slave.anchor[ax]) + double(slave.extent[ax]) * gt[loc[ax]];
        };
        // Express in the coarse leaf's face parametrization. Tangential
        // coordinates never wrap: periodic images only occur across the
        // face-normal axis.
        const double xi1 =
            2.0 * (coord(t1) - double(coarse.anchor[t1])) / double(coarse.extent[t1]) - 1.0;
        const double xi2 =
            2.0 * (coord(t2) - double(coarse.anchor[t2])) / double(coarse.extent[t2]) - 1.0;
        if (xi1 < -1.0 - 1e-9 || xi1 > 1.0 + 1e-9 || xi2 < -1.0 - 1e-9 || xi2 > 1.0 + 1e-9)
            throw std::logic_error("dofmap: slave face not contained in coarse face");
        return std::tuple{axis, t1, t2, xi1, xi2};
    };

    const auto gll_nodes = gll;
    std::vector<std::vector<Constraint>> exact_raw(nclass), sparse_raw(nclass);
    for (int cls = 0; cls < nclass; ++cls) {
        if (has_free_image[cls]) continue;
        const Source& src = best[cls];
        const auto [axis, t1, t2, xi1, xi2] = raw_constraints(cls);
        // The coarse element's face is opposite to the slave's face direction.
        const int coarse_face_dir = src.face % 2 ? 0 : 1;
        // Exact: tensor Lagrange weights over the coarse face grid.
        std::vector<double> w1(k + 1), w2v(k + 1), w1s, w2s;
        for (int i = 0; i <= k; ++i) {
            w1[i] = lagrange_value(gll_nodes, i, xi1);
            w2v[i] = lagrange_value(gll_nodes, i, xi2);
        }
        // Sparse: piecewise-linear weights on the nearest independent nodes.
        auto linear_weights = [&](double xi) {
            std::vector<double> w(k + 1, 0.0);
            int seg = 0;
            while (seg < k - 1 && xi > gll_nodes[seg + 1]) ++seg;
            const double a = gll_nodes[seg], b2 = gll_nodes[seg + 1];
            const double th = (xi - a) / (b2 - a);
            w[seg] = 1.0 - th;
            w[seg + 1] = th;
            return w;
        };
        w1s = linear_weights(xi1);
        w2s = linear_weights(xi2);

        auto face_master = [&](int i1, int i2) {
            int loc[3];
            loc[axis] = coarse_face_dir ? k : 0;
            loc[t1] = i1;
            loc[t2] = i2;
            return img_class[static_cast<size_t>(src.coarse_leaf) * nn +
                             dm.local_node(loc[0], loc[1], loc[2])];
        };
        for (int i2 = 0; i2 <= k; ++i2)
            for (int i1 = 0; i1 <= k; ++i1) {
                const double we = w1[i1] * w2v[i2];
                const double ws = w1s[i1] * w2s[i2];
                const int m = face_master(i1, i2);
                if (std::abs(we) > 1e-14) exact_raw[cls].push_back({m, we});
                if (std::abs(ws) > 1e-14) sparse_raw[cls].push_back({m, ws});
            }
        if (exact_raw[cls].empty()) throw std::logic_error("dofmap: empty constraint row");
    }

    // Resolve constraint chains so every master is independent.
    auto resolve = [&](std::vector<std::vector<Constraint>>& rows) {
        for (int cls = 0; cls < nclass; ++cls) {
            if (has_free_image[cls]) continue;
            for (int depth = 0; depth < 16; ++depth) {
                bool chained = false;
                std::map<int, double> acc;
                for (const auto& c : rows[cls]) {
                    if (!has_free_image[c.node]) {
                        chained = true;
                        if (c.node == cls) throw std::logic_error("dofmap: self-referential constraint");
                        for (const auto& m : rows[c.node]) acc[m.node] += c.w * m.w;
                    } else {
                        acc[c.node] += c.w;
                    }
                }
                if (!chained) break;
                rows[cls].clear();
                for (auto [n2, w] : acc)
                    if (std::abs(w) > 1e-14) rows[cls].push_back({n2, w});
                if (depth == 15) throw std::logic_error("dofmap: constraint chain too deep");
            }
        }
    };
    resolve(exact_raw);
    resolve(sparse_raw);

    // Node ordering: columnar meshes list each column's nodes consecutively
    // with the vertical index fastest; otherwise lexicographic by position.
    std::vector<double> cx(nclass), cy(nclass), cz(nclass);
    for (int cls = 0; cls < nclass; ++cls) {
        cx[cls] = class_axis_pos(class_key[cls], 0);
        cy[cls] = class_axis_pos(class_key[cls], 1);
        cz[cls] = class_axis_pos(class_key[cls], 2);
    }
    // Node columns are vertical lines of nodes (fixed x, y): the granularity
    // the column-preserving aggregation and the dof ordering operate on.
    // Non-columnar meshes get none, which disables column aggregation.
    std::vector<std::int32_t> owner_col(nclass, -1);
    if (mesh.columnar) {
        std::map<std::pair<AxisKey, AxisKey>, std::vector<int>> lines;
        for (int cls = 0; cls < nclass; ++cls)
            if (has_free_image[cls])
                lines[{class_key[cls].x, class_key[cls].y}].push_back(cls);
        // Geometric line order (x, then y) so nearby lines get nearby ids.
        std::vector<std::pair<std::pair<double, double>, const std::vector<int>*>> sorted;
        sorted.reserve(lines.size());
        for (auto& [xy, members] : lines)
            sorted.push_back({{axis_position(xy.first, gt), axis_position(xy.second, gt)}, &members});
        std::sort(sorted.begin(), sorted.end(),
                  [](auto& a, auto& b) { return a.first < b.first; });
        for (size_t line_id = 0; line_id < sorted.size(); ++line_id)
            for (int cls : *sorted[line_id].second) owner_col[cls] = static_cast<int>(line_id);
    }
    std::vector<int> indep;
    for (int cls = 0; cls < nclass; ++cls)
        if (has_free_image[cls]) indep.push_back(cls);
    std::sort(indep.begin(), indep.end(), [&](int a, int b) {
        if (owner_col[a] != owner_col[b]) return owner_col[a] < owner_col[b];
        if (cx[a] != cx[b]) return cx[a] < cx[b];
        if (cy[a] != cy[b]) return cy[a] < cy[b];
        return cz[a] < cz[b];
    });

    dm.n_nodes = static_cast<int>(indep.size());
    dm.n_hanging = nclass - dm.n_nodes;
    std::vector<int> class_to_node(nclass, -1);
    for (int i = 0; i < dm.n_nodes; ++i) class_to_node[indep[i]] = i;

    dm.node_pos.resize(dm.n_nodes);
    dm.node_zref.resize(dm.n_nodes);
    dm.node_column.resize(dm.n_nodes);
    dm.node_on_bed.resize(dm.n_nodes);
    dm.node_on_surface.resize(dm.n_nodes);
    dm.node_frame.resize(dm.n_nodes);
    dm.node_ndof.resize(dm.n_nodes);
    dm.node_dof.resize(dm.n_nodes);

    int dof = 0;
    for (int i = 0; i < dm.n_nodes; ++i) {
        const int cls = indep[i];
        const double px = mesh.Lx * cx[cls] / double(mesh.lattice[0]);
        const double py = mesh.Ly * cy[cls] / double(mesh.lattice[1]);
        const double pz = mesh.H * cz[cls] / double(mesh.lattice[2]);
        dm.node_zref[i] = pz;
        dm.node_column[i] = owner_col[cls];
        const bool on_bed = class_key[cls].z == dofdetail::AxisKey{0, 0, 0};
        const bool on_surf = class_key[cls].z == dofdetail::AxisKey{2 * mesh.lattice[2], 0, 0};
        dm.node_on_bed[i] = on_bed;
        dm.node_on_surface[i] = on_surf;
        double zphys = pz;
        Mat3 Q = Mat3::identity();
        if (bed) {
            const double b = bed->elevation(px, py);
            zphys = b * (1.0 - pz / mesh.H) + pz;
            if (on_bed) {
                const Vec3 t1v{1, 0, bed->slope_x(px, py)};
                const Vec3 t2r{0, 1, bed->slope_y(px, py)};
                Vec3 nrm = cross(t1v, t2r);  // points up into the ice
                nrm = nrm * (-1.0 / norm(nrm));
                Vec3 t1 = t1v * (1.0 / norm(t1v));
                Vec3 t2 = cross(nrm, t1);
                for (int r = 0; r < 3; ++r) {
                    Q(r, 0) = t1[r];
                    Q(r, 1) = t2[r];
                    Q(r, 2) = nrm[r];
                }
            }
        }
        dm.node_pos[i] = {px, py, zphys};
        dm.node_frame[i] = Q;
        dm.node_ndof[i] = (on_bed && bc.eliminate_bed_normal) ? 2 : 3;
        dm.node_dof[i] = dof;
        dof += dm.node_ndof[i];
    }
    dm.n_vel_dofs = dof;

    // Flatten the element maps.
    auto build_maps = [&](const std::vector<std::vector<Constraint>>& rows, ElemScalarMap& sm,
                          ElemVelMap& vm) {
        sm.offs.assign(static_cast<size_t>(ne) * nn + 1, 0);
        vm.offs.assign(static_cast<size_t>(ne) * nn + 1, 0);
        sm.entries.clear();
        vm.entries.clear();
        for (int e = 0; e < ne; ++e)
            for (int ln = 0; ln < nn; ++ln) {
                const size_t r = static_cast<size_t>(e) * nn + ln;
                const int cls = img_class[r];
                auto add = [&](int node, double w) {
                    sm.entries.push_back({node, w});
                    const Mat3& Q = dm.node_frame[node];
                    for (int c = 0; c < dm.node_ndof[node]; ++c)
                        vm.entries.push_back(
                            {dm.node_dof[node] + c, Vec3{Q(0, c), Q(1, c), Q(2, c)} * w});
                };
                if (has_free_image[cls]) {
                    add(class_to_node[cls], 1.0);
                } else {
                    for (const auto& c : rows[cls]) add(class_to_node[c.node], c.w);
                }
                sm.offs[r + 1] = static_cast<std::int32_t>(sm.entries.size());
                vm.offs[r + 1] = static_cast<std::int32_t>(vm.entries.size());
            }
    };
    build_maps(exact_raw, dm.scalar_exact, dm.vel_exact);
    build_maps(sparse_raw, dm.scalar_sparse, dm.vel_sparse);
    return dm;
}

/// Expand one packed velocity vector to a full 3-vector at a node.
inline Vec3 node_velocity(const DofMap& dm, const double* u, int node) {
    const Mat3& Q = dm.node_frame[node];
    Vec3 v{};
    for (int c = 0; c < dm.node_ndof[node]; ++c) {
        const double x = u[dm.node_dof[node] + c];
        v += Vec3{Q(0, c), Q(1, c), Q(2, c)} * x;
    }
    return v;
}

} // namespace firn
