#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <map>

#include "pedgen/rng.hpp"
#include "pedgen/scene.hpp"

using namespace pedgen;
using Catch::Approx;

TEST_CASE("estimate_intrinsics uses the diagonal as focal length") {
    const Intrinsics a = estimate_intrinsics(640, 480);
    REQUIRE(a.f == Approx(800.0));
    REQUIRE(a.cx == Approx(320.0));
    REQUIRE(a.cy == Approx(240.0));

    const Intrinsics b = estimate_intrinsics(100, 100);
    REQUIRE(b.f == Approx(100.0 * std::sqrt(2.0)));
    REQUIRE(b.cx == Approx(50.0));

    const Intrinsics c = estimate_intrinsics(1, 1);
    REQUIRE(c.f == Approx(std::sqrt(2.0)));
    REQUIRE(c.cx == Approx(0.5));
    REQUIRE(c.cy == Approx(0.5));

    REQUIRE_THROWS(estimate_intrinsics(0, 10));
}

TEST_CASE("unproject_depth pinhole rays") {
    const Intrinsics k = estimate_intrinsics(640, 480);  // f = 800
    DepthMap d(640, 480);
    SemanticMap s(640, 480, static_cast<std::uint8_t>(SemClass::road));

    SECTION("principal point maps to the optical axis") {
        d.set(320, 240, 5.0);
        const auto pc = unproject_depth(d, s, k, 1.0);
        REQUIRE(pc.size() == 1);
        REQUIRE(pc.points[0].p.x == Approx(0.0).margin(1e-12));
        REQUIRE(pc.points[0].p.y == Approx(0.0).margin(1e-12));
        REQUIRE(pc.points[0].p.z == Approx(5.0));
        REQUIRE(pc.points[0].cls == static_cast<std::uint8_t>(SemClass::road));
    }
    SECTION("unit tangent pixel") {
        // u = cx + f is out of this image; use a synthetic wide map instead.
        DepthMap wd(2000, 10);
        SemanticMap ws(2000, 10, 2);
        Intrinsics wk;
        wk.f = 800;
        wk.cx = 1000;
        wk.cy = 5;
        wd.set(1800, 5, 2.0);
        const auto pc = unproject_depth(wd, ws, wk, 1.0);
        REQUIRE(pc.size() == 1);
        REQUIRE(pc.points[0].p.x == Approx(2.0));
        REQUIRE(pc.points[0].p.y == Approx(0.0).margin(1e-12));
        REQUIRE(pc.points[0].p.z == Approx(2.0));

        const auto pc2 = unproject_depth(wd, ws, wk, 2.0);
        REQUIRE(pc2.points[0].p.x == Approx(4.0));
        REQUIRE(pc2.points[0].p.z == Approx(4.0));
    }
    SECTION("gamma must be positive") {
        REQUIRE_THROWS(unproject_depth(d, s, k, 0.0));
        REQUIRE_THROWS(unproject_depth(d, s, k, -1.0));
    }
    SECTION("missing depth pixels are skipped") {
        d.set(1, 1, 3.0);
        d.set(2, 2, -1.0);  // missing
        const auto pc = unproject_depth(d, s, k, 1.0);
        REQUIRE(pc.size() == 1);
    }
    SECTION("mismatched maps are rejected") {
        SemanticMap small(10, 10);
        REQUIRE_THROWS(unproject_depth(d, small, k, 1.0));
    }
}

TEST_CASE("unprojection inverts pinhole projection") {
    RngStream rng(900);
    const Intrinsics k = estimate_intrinsics(320, 240);
    DepthMap d(320, 240);
    SemanticMap s(320, 240, 0);
    std::vector<std::pair<int, int>> pixels;
    for (int i = 0; i < 200; ++i) {
        const int u = static_cast<int>(rng.below(320));
        const int v = static_cast<int>(rng.below(240));
        d.set(u, v, rng.uniform(0.5, 30.0));
        pixels.emplace_back(u, v);
    }
    const double gamma = 1.7;
    const auto pc = unproject_depth(d, s, k, gamma);
    for (const SemPoint& pt : pc.points) {
        const double u = pt.p.x * k.f / pt.p.z + k.cx;
        const double v = pt.p.y * k.f / pt.p.z + k.cy;
        // Each projected point must land back on an integer source pixel.
        REQUIRE(std::abs(u - std::round(u)) < 1e-6);
        REQUIRE(std::abs(v - std::round(v)) < 1e-6);
    }
}

TEST_CASE("depth_alignment_factor") {
    REQUIRE(depth_alignment_factor(5, 5) == Approx(1.0));
    REQUIRE(depth_alignment_factor(4, 2) == Approx(2.0));
    REQUIRE_THROWS(depth_alignment_factor(3, 0));
    REQUIRE_THROWS(depth_alignment_factor(0, 3));
}

TEST_CASE("crop_local keeps the strict local box") {
    SemanticPointCloud pc;
    pc.points.push_back({{3, 0, 0}, 0});
    pc.points.push_back({{5, 0, 0}, 0});
    pc.points.push_back({{0, 2.5, 0}, 0});
    pc.points.push_back({{-3.9, -1.9, 3.9}, 0});
    const auto local = crop_local(pc, {0, 0, 0});
    REQUIRE(local.size() == 2);
    REQUIRE(local.points[0].p.x == Approx(3.0));
    REQUIRE(local.points[1].p.x == Approx(-3.9));
}

namespace {

// Independent voxelization oracle: per-point assignment into a map, explicit
// plurality resolution over ascending class ids.
VoxelGrid voxelize_oracle(const SemanticPointCloud& pc, const Vec3& t1) {
    VoxelGrid g = VoxelGrid::empty({}, t1);
    std::map<std::size_t, std::map<int, int>> counts;
    for (const SemPoint& pt : pc.points) {
        if (pt.cls == kEgoClassId) continue;
        const int ix = static_cast<int>(std::floor((pt.p.x - g.origin.x) / g.cell[0]));
        const int iy = static_cast<int>(std::floor((pt.p.y - g.origin.y) / g.cell[1]));
        const int iz = static_cast<int>(std::floor((pt.p.z - g.origin.z) / g.cell[2]));
        counts[g.index(ix, iy, iz)][pt.cls] += 1;
    }
    for (const auto& [cell, per_class] : counts) {
        int best = -1, best_count = 0;
        for (const auto& [cls, n] : per_class) {
            if (n > best_count) {
                best = cls;
                best_count = n;
            }
        }
        g.classes[cell] = static_cast<std::uint8_t>(best);
    }
    return g;
}

SemanticPointCloud random_local_cloud(RngStream& rng, const Vec3& t1, int n) {
    SemanticPointCloud pc;
    for (int i = 0; i < n; ++i) {
        pc.points.push_back({Vec3{t1.x + rng.uniform(-3.99, 3.99), t1.y + rng.uniform(-1.99, 1.99),
                                  t1.z + rng.uniform(-3.99, 3.99)},
                             static_cast<std::uint8_t>(rng.below(kNumSemClasses))});
    }
    return pc;
}

}  // namespace

TEST_CASE("voxelize basics") {
    SECTION("empty cloud gives an all-empty grid") {
        const VoxelGrid g = voxelize({}, {0, 0, 0});
        REQUIRE(g.cell_count() == 40u * 40u * 40u);
        REQUIRE(std::all_of(g.classes.begin(), g.classes.end(),
                            [](std::uint8_t c) { return c == kVoxelEmpty; }));
        // Grid is centered on t1.
        REQUIRE(g.origin.x == Approx(-4.0));
        REQUIRE(g.origin.y == Approx(-2.0));
        REQUIRE(g.origin.z == Approx(-4.0));
    }
    SECTION("majority voting") {
        SemanticPointCloud pc;
        const Vec3 p{0.05, 0.05, 0.05};  // one cell
        pc.points.push_back({p, static_cast<std::uint8_t>(SemClass::road)});
        pc.points.push_back({p + Vec3{0.01, 0, 0}, static_cast<std::uint8_t>(SemClass::road)});
        pc.points.push_back({p + Vec3{0, 0.01, 0}, static_cast<std::uint8_t>(SemClass::sidewalk)});
        const VoxelGrid g = voxelize(pc, {0, 0, 0});
        int ix, iy, iz;
        REQUIRE(g.locate(p, ix, iy, iz));
        REQUIRE(g.at(ix, iy, iz) == static_cast<std::uint8_t>(SemClass::road));
    }
    SECTION("ties go to the smallest class id") {
        SemanticPointCloud pc;
        const Vec3 p{0.05, 0.05, 0.05};
        pc.points.push_back({p, static_cast<std::uint8_t>(SemClass::sidewalk)});
        pc.points.push_back({p + Vec3{0.01, 0, 0}, static_cast<std::uint8_t>(SemClass::road)});
        const VoxelGrid g = voxelize(pc, {0, 0, 0});
        int ix, iy, iz;
        REQUIRE(g.locate(p, ix, iy, iz));
        REQUIRE(g.at(ix, iy, iz) == static_cast<std::uint8_t>(SemClass::road));  // road < sidewalk
    }
    SECTION("ego pedestrian points are discarded") {
        SemanticPointCloud pc;
        pc.points.push_back({{0.05, 0.05, 0.05}, kEgoClassId});
        const VoxelGrid g = voxelize(pc, {0, 0, 0});
        REQUIRE(std::all_of(g.classes.begin(), g.classes.end(),
                            [](std::uint8_t c) { return c == kVoxelEmpty; }));
    }
    SECTION("points outside the extents are rejected") {
        SemanticPointCloud pc;
        pc.points.push_back({{4.5, 0, 0}, 0});
        REQUIRE_THROWS(voxelize(pc, {0, 0, 0}));
    }
    SECTION("cell boundaries are half-open") {
        // x = 0.2 sits exactly on the boundary between cells 20 and 21.
        SemanticPointCloud pc;
        pc.points.push_back({{0.2, 0.05, 0.05}, 7});
        const VoxelGrid g = voxelize(pc, {0, 0, 0});
        REQUIRE(g.at(21, 20, 20) == 7);
        REQUIRE(g.at(20, 20, 20) == kVoxelEmpty);
    }
}

TEST_CASE("voxelize equals the brute-force oracle on 1000 random clouds") {
    RngStream rng(4242);
    for (int trial = 0; trial < 1000; ++trial) {
        RngStream r = rng.split(static_cast<std::uint64_t>(trial));
        const Vec3 t1{r.uniform(-5, 5), r.uniform(-1, 1), r.uniform(-5, 5)};
        const SemanticPointCloud pc = random_local_cloud(r, t1, 150);
        const VoxelGrid a = voxelize(pc, t1);
        const VoxelGrid b = voxelize_oracle(pc, t1);
        REQUIRE(a.classes == b.classes);
    }
}

TEST_CASE("voxelize is independent of point order") {
    RngStream rng(77);
    const Vec3 t1{0, 0, 0};
    SemanticPointCloud pc = random_local_cloud(rng, t1, 400);
    const VoxelGrid a = voxelize(pc, t1);
    // Deterministic shuffle.
    for (std::size_t i = pc.points.size(); i > 1; --i)
        std::swap(pc.points[i - 1], pc.points[rng.below(i)]);
    const VoxelGrid b = voxelize(pc, t1);
    REQUIRE(a.classes == b.classes);
}

TEST_CASE("rotate_augment") {
    RngStream rng(5);
    Motion m = Motion::rest(6);
    for (int t = 0; t < 6; ++t) m.trans[static_cast<std::size_t>(t)] = {0.3 * t, 0.9, 0.1 * t};
    SemanticPointCloud pc = random_local_cloud(rng, m.trans.front(), 50);

    SECTION("zero angle is the identity") {
        const auto [mo, po] = rotate_augment(m, pc, 0.0);
        for (int t = 0; t < 6; ++t)
            REQUIRE((mo.trans[static_cast<std::size_t>(t)] - m.trans[static_cast<std::size_t>(t)]).norm() == 0.0);
        for (std::size_t i = 0; i < pc.points.size(); ++i)
            REQUIRE((po.points[i].p - pc.points[i].p).norm() == 0.0);
    }
    SECTION("full turn is the identity within 1e-6") {
        const auto [mo, po] = rotate_augment(m, pc, 2 * kPi);
        for (int t = 0; t < 6; ++t)
            REQUIRE((mo.trans[static_cast<std::size_t>(t)] - m.trans[static_cast<std::size_t>(t)]).norm() < 1e-6);
        for (std::size_t i = 0; i < pc.points.size(); ++i)
            REQUIRE((po.points[i].p - pc.points[i].p).norm() < 1e-6);
    }
    SECTION("pairwise distances are preserved") {
        const double angle = 1.234;
        const auto [mo, po] = rotate_augment(m, pc, angle);
        for (int t = 0; t < 6; ++t) {
            for (std::size_t i = 0; i < pc.points.size(); i += 7) {
                const double before = (pc.points[i].p - m.trans[static_cast<std::size_t>(t)]).norm();
                const double after = (po.points[i].p - mo.trans[static_cast<std::size_t>(t)]).norm();
                REQUIRE(after == Approx(before).margin(1e-6));
            }
        }
        // Root orientations are left-composed with the same rotation.
        const Mat3 r = rotation_about_y(angle);
        for (int t = 0; t < 6; ++t)
            REQUIRE(max_abs_diff(mo.root_orient[static_cast<std::size_t>(t)],
                                 r * m.root_orient[static_cast<std::size_t>(t)]) < 1e-12);
    }
}

TEST_CASE("voxel grid rotation by 90 degrees is exact") {
    RngStream rng(31);
    const SemanticPointCloud pc = random_local_cloud(rng, {0, 0, 0}, 300);
    const VoxelGrid g = voxelize(pc, {0, 0, 0});
    const VoxelGrid r90 = rotate_voxel_grid(g, kPi / 2);
    const VoxelGrid r180 = rotate_voxel_grid(rotate_voxel_grid(r90, kPi / 2), kPi);
    REQUIRE(r180.classes == g.classes);  // four quarter turns come home
    REQUIRE(r90.classes != g.classes);
}

TEST_CASE("voxel binary format round trips") {
    RngStream rng(99);
    const SemanticPointCloud pc = random_local_cloud(rng, {1, 0, -2}, 500);
    const VoxelGrid g = voxelize(pc, {1, 0, -2});
    const std::string path = "/tmp/pedgen_test_voxel.pgvx";
    write_voxel_grid(g, path);
    const VoxelGrid h = read_voxel_grid(path);
    REQUIRE(h.dims == g.dims);
    REQUIRE(h.classes == g.classes);
    REQUIRE(h.origin.x == Approx(g.origin.x).margin(1e-6));
    REQUIRE(h.cell[1] == Approx(0.1).margin(1e-7));
    std::remove(path.c_str());
    REQUIRE_THROWS(read_voxel_grid("/tmp/definitely_missing_voxel.pgvx"));
}
