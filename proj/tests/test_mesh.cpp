#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "firn/mesh.hpp"

using namespace firn;

namespace {

RefineSpec txy(int levels = 0) { return {RefineSpec::Kind::Txy, levels}; }
RefineSpec txyz(int levels = 0) { return {RefineSpec::Kind::Txyz, levels}; }

bool same_leaves(const HexMesh& a, const HexMesh& b) {
    if (a.n_leaves() != b.n_leaves()) return false;
    for (int i = 0; i < a.n_leaves(); ++i) {
        const auto &x = a.leaves[i], &y = b.leaves[i];
        if (x.anchor != y.anchor || x.extent != y.extent || x.hlevel != y.hlevel ||
            x.vlevel != y.vlevel || x.column != y.column)
            return false;
    }
    return true;
}

} // namespace

TEST_CASE("Txy pattern: 576 leaves, columnar, balanced") {
    const auto m = build_slab_mesh(txy(), {1, 1, 1});
    REQUIRE(m.n_leaves() == 576);
    CHECK(m.columnar);
    CHECK(m.n_columns == 160);
    CHECK(is_balanced(m));
    for (const auto& c : m.leaves) CHECK(c.column >= 0);
}

TEST_CASE("Txyz pattern: 576 leaves, not columnar, balanced") {
    const auto m = build_slab_mesh(txyz(), {1, 1, 1});
    REQUIRE(m.n_leaves() == 576);
    CHECK_FALSE(m.columnar);
    CHECK(is_balanced(m));
}

TEST_CASE("Txy has nonconforming faces only with horizontal normals") {
    const auto m = build_slab_mesh(txy(), {1, 1, 1});
    NeighborIndex idx(m);
    int nc_xy = 0;
    for (int i = 0; i < m.n_leaves(); ++i) {
        for (int dir = 0; dir < 2; ++dir) {
            // z-normal faces must match footprints exactly.
            for (int j : idx.neighbors(i, 2, dir)) {
                CHECK(m.leaves[i].anchor[0] == m.leaves[j].anchor[0]);
                CHECK(m.leaves[i].anchor[1] == m.leaves[j].anchor[1]);
                CHECK(m.leaves[i].extent[0] == m.leaves[j].extent[0]);
                CHECK(m.leaves[i].extent[1] == m.leaves[j].extent[1]);
            }
            for (int axis = 0; axis < 2; ++axis)
                for (int j : idx.neighbors(i, axis, dir))
                    if (m.leaves[i].hlevel != m.leaves[j].hlevel) ++nc_xy;
        }
    }
    CHECK(nc_xy > 0);
}

TEST_CASE("Txyz has z-normal nonconforming faces") {
    const auto m = build_slab_mesh(txyz(), {1, 1, 1});
    NeighborIndex idx(m);
    int nc_z = 0;
    for (int i = 0; i < m.n_leaves(); ++i)
        for (int dir = 0; dir < 2; ++dir)
            if (idx.neighbors(i, 2, dir).size() > 1) ++nc_z;
    CHECK(nc_z > 0);
}

TEST_CASE("volume conservation") {
    for (auto spec : {txy(), txyz(), txy(1)}) {
        const auto m = build_slab_mesh(spec, {400, 400, 1});
        CHECK(m.volume() == Catch::Approx(400.0 * 400.0 * 1.0).epsilon(1e-12));
    }
}

TEST_CASE("uniform aspect ratio across all leaves") {
    const double phi = 100;
    const double L = slab_length_for_aspect(phi);
    for (auto spec : {txy(), txyz()}) {
        const auto m = build_slab_mesh(spec, {L, L, 1});
        for (const auto& c : m.leaves) CHECK(m.aspect_ratio(c) == Catch::Approx(phi).epsilon(1e-12));
    }
}

TEST_CASE("uniform base mesh: congruent unit-aspect leaves") {
    const auto m = build_slab_mesh({RefineSpec::Kind::Uniform, 0, {2, 2, 2}}, {1, 1, 1});
    REQUIRE(m.n_leaves() == 8);
    for (const auto& c : m.leaves) {
        CHECK(m.dx(c) == Catch::Approx(0.5));
        CHECK(m.dz(c) == Catch::Approx(0.5));
        CHECK(m.aspect_ratio(c) == Catch::Approx(1.0));
    }
}

TEST_CASE("column integrity: contiguous stacks covering the thickness") {
    const auto m = build_slab_mesh(txy(), {1, 1, 1});
    std::map<int, std::vector<const LeafCell*>> cols;
    for (const auto& c : m.leaves) cols[c.column].push_back(&c);
    REQUIRE(static_cast<int>(cols.size()) == m.n_columns);
    for (auto& [id, cells] : cols) {
        std::sort(cells.begin(), cells.end(),
                  [](auto* a, auto* b) { return a->anchor[2] < b->anchor[2]; });
        std::int64_t z = 0;
        for (auto* c : cells) {
            CHECK(c->anchor[0] == cells[0]->anchor[0]);
            CHECK(c->extent[0] == cells[0]->extent[0]);
            CHECK(c->anchor[2] == z);
            z += c->extent[2];
        }
        CHECK(z == m.lattice[2]);
    }
}

TEST_CASE("determinism: same spec gives identical mesh") {
    const auto a = build_slab_mesh(txy(1), {10, 10, 1});
    const auto b = build_slab_mesh(txy(1), {10, 10, 1});
    CHECK(same_leaves(a, b));
}

TEST_CASE("uniform isotropic mark multiplies count by 8") {
    const auto m = build_slab_mesh(txy(), {1, 1, 1});
    const auto r = refine_and_balance(m, std::vector<std::uint8_t>(m.n_leaves(), 1));
    CHECK(r.n_leaves() == 4608);
    CHECK(is_balanced(r));
    CHECK(r.columnar);
}

TEST_CASE("balance closure force-refines a coarser neighbor") {
    // Two-column base; refine the leaf in column 0 twice so the neighbor is
    // forced to refine once.
    auto m = build_slab_mesh({RefineSpec::Kind::Uniform, 0, {2, 1, 1}}, {2, 1, 1},
                             {false, false});
    m.columnar = false;
    std::vector<std::uint8_t> marks(m.n_leaves(), 0);
    marks[0] = 1;
    m = refine_and_balance(m, marks, RefineMode::Isotropic);
    REQUIRE(m.n_leaves() == 9);
    marks.assign(m.n_leaves(), 0);
    // Mark a child of the refined cell that touches the big neighbor.
    for (int i = 0; i < m.n_leaves(); ++i)
        if (m.leaves[i].hlevel == 1 &&
            m.leaves[i].anchor[0] + m.leaves[i].extent[0] == m.lattice[0] / 2)
            marks[i] = 1;
    REQUIRE(std::count(marks.begin(), marks.end(), 1) == 4);
    const auto r = refine_and_balance(m, marks, RefineMode::Isotropic);
    CHECK(is_balanced(r));
    // The large neighbor can no longer be at level 0.
    for (const auto& c : r.leaves) CHECK(c.hlevel >= 1);
    CHECK(r.n_leaves() > 9 + 4 * 7);
}

TEST_CASE("vertical-only mark doubles one column height") {
    const auto m = build_slab_mesh(txy(), {1, 1, 1});
    const int col = m.leaves[0].column;
    int before = 0;
    std::vector<std::uint8_t> marks(m.n_leaves(), 0);
    for (int i = 0; i < m.n_leaves(); ++i)
        if (m.leaves[i].column == col) {
            marks[i] = 1;
            ++before;
        }
    const auto r = refine_and_balance(m, marks, RefineMode::Vertical);
    CHECK(r.n_leaves() == m.n_leaves() + before);
    int after = 0;
    for (int i = 0; i < r.n_leaves(); ++i) {
        const auto& c = r.leaves[i];
        if (c.anchor[0] * m.lattice[0] == m.leaves[0].anchor[0] * r.lattice[0] &&
            c.anchor[1] * m.lattice[1] == m.leaves[0].anchor[1] * r.lattice[1] &&
            c.extent[0] * m.lattice[0] == m.leaves[0].extent[0] * r.lattice[0])
            ++after;
    }
    CHECK(after == 2 * before);
    CHECK(is_balanced(r));
}

TEST_CASE("element geometry: axis-aligned box has constant diagonal Jacobian") {
    const auto m = build_slab_mesh({RefineSpec::Kind::Uniform, 0, {1, 1, 1}}, {3, 5, 2});
    const auto geo = element_geometry(leaf_box(m, m.leaves[0]), gauss_rule(3));
    for (const auto& g : geo) {
        CHECK(g.J(0, 0) == Catch::Approx(1.5));
        CHECK(g.J(1, 1) == Catch::Approx(2.5));
        CHECK(g.J(2, 2) == Catch::Approx(1.0));
        CHECK(g.J(0, 1) == Catch::Approx(0.0).margin(1e-15));
        CHECK(g.detJ == Catch::Approx(1.5 * 2.5 * 1.0));
    }
}

TEST_CASE("element geometry: stretched slab leaf metric ratio") {
    const double L = slab_length_for_aspect(100.0);
    const auto m = build_slab_mesh(txy(), {L, L, 1});
    const auto& c = m.leaves[0];
    const auto geo = element_geometry(leaf_box(m, c), gauss_rule(2));
    for (const auto& g : geo) CHECK(g.J(0, 0) / g.J(2, 2) == Catch::Approx(100.0));
}

TEST_CASE("element geometry: perturbed corners match finite-difference oracle") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    TrilinearCell cell;
    for (int i = 0; i < 8; ++i)
        cell.corners[i] = {double(i & 1) + u(rng), double((i >> 1) & 1) + u(rng),
                           double((i >> 2) & 1) + u(rng)};
    const auto quad = gauss_rule(2);
    const double h = 1e-6;
    for (double xs : {-0.7, 0.1}) {
        for (double ys : {-0.4, 0.8}) {
            const Vec3 xi{xs, ys, 0.3};
            const Mat3 J = trilinear_jacobian(cell, xi);
            for (int d = 0; d < 3; ++d) {
                Vec3 xp = xi, xm = xi;
                xp[d] += h;
                xm[d] -= h;
                const Vec3 fd = (trilinear_map(cell, xp) - trilinear_map(cell, xm)) * (0.5 / h);
                for (int c2 = 0; c2 < 3; ++c2) CHECK(J(c2, d) == Catch::Approx(fd[c2]).margin(1e-8));
            }
        }
    }
    // detJ against the determinant of the finite-difference Jacobian.
    const auto geo = element_geometry(cell, quad);
    int q = 0;
    for (int kz = 0; kz < quad.npoints(); ++kz)
        for (int ky = 0; ky < quad.npoints(); ++ky)
            for (int kx = 0; kx < quad.npoints(); ++kx, ++q) {
                const Vec3 xi{quad.points[kx], quad.points[ky], quad.points[kz]};
                Mat3 fdJ;
                for (int d = 0; d < 3; ++d) {
                    Vec3 xp = xi, xm = xi;
                    xp[d] += h;
                    xm[d] -= h;
                    const Vec3 col = (trilinear_map(cell, xp) - trilinear_map(cell, xm)) * (0.5 / h);
                    for (int r = 0; r < 3; ++r) fdJ(r, d) = col[r];
                }
                CHECK(geo[q].detJ == Catch::Approx(det(fdJ)).margin(1e-8));
            }
}

TEST_CASE("nonpositive Jacobian is rejected") {
    TrilinearCell cell;
    for (int i = 0; i < 8; ++i)
        cell.corners[i] = {double(i & 1), double((i >> 1) & 1), double((i >> 2) & 1)};
    std::swap(cell.corners[0], cell.corners[1]);  // inverted element
    CHECK_THROWS(element_geometry(cell, gauss_rule(1)));
}

TEST_CASE("leaf csv dump includes header and all leaves") {
    const auto m = build_slab_mesh(txy(), {1, 1, 1});
    std::ostringstream oss;
    write_leaf_csv(m, oss);
    const std::string s = oss.str();
    CHECK(s.find("leaf,hlevel,vlevel") == 0);
    CHECK(std::count(s.begin(), s.end(), '\n') == 577);
}
