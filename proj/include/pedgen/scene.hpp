#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "pedgen/geometry.hpp"
#include "pedgen/motion.hpp"

namespace pedgen {

// CityScapes-style semantic palette, ids 0..18.
enum class SemClass : std::uint8_t {
    road = 0,
    sidewalk = 1,
    building = 2,
    wall = 3,
    fence = 4,
    pole = 5,
    traffic_light = 6,
    traffic_sign = 7,
    vegetation = 8,
    terrain = 9,
    sky = 10,
    person = 11,
    rider = 12,
    car = 13,
    truck = 14,
    bus = 15,
    train = 16,
    motorcycle = 17,
    bicycle = 18,
};

constexpr int kNumSemClasses = 19;

// Reserved id tagging points of the ego pedestrian in generated clouds; such
// points are dropped before voxelization and never appear in a grid.
constexpr std::uint8_t kEgoClassId = 200;

constexpr std::uint8_t kVoxelEmpty = 255;

// Classes a pedestrian may legitimately occupy; everything else counts as an
// obstacle for the collision metric.
inline bool is_walkable_class(std::uint8_t cls) {
    return cls == static_cast<std::uint8_t>(SemClass::road) ||
           cls == static_cast<std::uint8_t>(SemClass::sidewalk) ||
           cls == static_cast<std::uint8_t>(SemClass::terrain);
}

struct DepthMap {
    int width = 0, height = 0;
    std::vector<double> depth;  // meters; <= 0 or non-finite means missing

    DepthMap() = default;
    DepthMap(int w, int h) : width(w), height(h), depth(static_cast<std::size_t>(w) * h, -1.0) {
        require(w >= 1 && h >= 1, "DepthMap: dimensions must be >= 1");
    }

    double at(int u, int v) const { return depth[static_cast<std::size_t>(v) * width + u]; }
    void set(int u, int v, double d) { depth[static_cast<std::size_t>(v) * width + u] = d; }
    bool present(int u, int v) const {
        const double d = at(u, v);
        return std::isfinite(d) && d > 0;
    }
};

struct SemanticMap {
    int width = 0, height = 0;
    std::vector<std::uint8_t> cls;

    SemanticMap() = default;
    SemanticMap(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), cls(static_cast<std::size_t>(w) * h, fill) {
        require(w >= 1 && h >= 1, "SemanticMap: dimensions must be >= 1");
    }

    std::uint8_t at(int u, int v) const { return cls[static_cast<std::size_t>(v) * width + u]; }
    void set(int u, int v, std::uint8_t c) { cls[static_cast<std::size_t>(v) * width + u] = c; }
};

struct Intrinsics {
    double f = 1.0;
    double cx = 0.0, cy = 0.0;

    void validate(int width, int height) const {
        require(f > 0, "Intrinsics: focal length must be positive");
        require(cx >= 0 && cx <= width && cy >= 0 && cy <= height,
                "Intrinsics: principal point outside image");
    }
};

// Focal length = diagonal pixel length, principal point = image center.
inline Intrinsics estimate_intrinsics(int width, int height) {
    require(width >= 1 && height >= 1, "estimate_intrinsics: dimensions must be >= 1");
    Intrinsics k;
    k.f = std::sqrt(static_cast<double>(width) * width + static_cast<double>(height) * height);
    k.cx = width / 2.0;
    k.cy = height / 2.0;
    return k;
}

struct SemPoint {
    Vec3 p;
    std::uint8_t cls = 0;
};

struct SemanticPointCloud {
    std::vector<SemPoint> points;

    std::size_t size() const { return points.size(); }
};

// gamma = depth of the root from the motion label over the depth-map value at
// the root's projection; multiplying the map by gamma aligns scene and motion.
inline double depth_alignment_factor(double root_depth, double label_depth_at_root) {
    require(root_depth > 0, "depth_alignment_factor: root depth must be positive");
    require(label_depth_at_root > 0, "depth_alignment_factor: degenerate depth label");
    return root_depth / label_depth_at_root;
}

// Pinhole unprojection of every valid pixel, depths scaled by gamma. Missing
// depth pixels are skipped. Output is in the camera frame; the caller owns
// any axis conversion (this project stores scenes y-up and flips the camera
// y-down axis at load time).
inline SemanticPointCloud unproject_depth(const DepthMap& d, const SemanticMap& s,
                                          const Intrinsics& k, double gamma) {
    require(d.width == s.width && d.height == s.height,
            "unproject_depth: depth and semantic maps must be paired");
    require(gamma > 0, "unproject_depth: gamma must be positive");
    k.validate(d.width, d.height);
    SemanticPointCloud pc;
    pc.points.reserve(d.depth.size());
    for (int v = 0; v < d.height; ++v) {
        for (int u = 0; u < d.width; ++u) {
            if (!d.present(u, v)) continue;
            const double z = gamma * d.at(u, v);
            pc.points.push_back(
                SemPoint{Vec3{(u - k.cx) * z / k.f, (v - k.cy) * z / k.f, z}, s.at(u, v)});
        }
    }
    return pc;
}

// Local-neighborhood extents around the start position, meters.
struct LocalExtents {
    double dx = 4.0;
    double dy = 2.0;
    double dz = 4.0;
};

// Keeps exactly the points with |p - t1| strictly inside the extents.
inline SemanticPointCloud crop_local(const SemanticPointCloud& pc, const Vec3& t1,
                                     const LocalExtents& ext = {}) {
    SemanticPointCloud out;
    for (const SemPoint& pt : pc.points) {
        if (std::abs(pt.p.x - t1.x) < ext.dx && std::abs(pt.p.y - t1.y) < ext.dy &&
            std::abs(pt.p.z - t1.z) < ext.dz)
            out.points.push_back(pt);
    }
    return out;
}

struct VoxelGeometry {
    std::array<int, 3> dims{40, 40, 40};
    std::array<double, 3> cell{0.2, 0.1, 0.2};  // x, y (vertical), z

    double extent(int axis) const { return dims[static_cast<std::size_t>(axis)] * cell[static_cast<std::size_t>(axis)]; }
};

// Semantic occupancy grid of the local scene. The start position sits at the
// grid center; cells are half-open [low, high) along each axis.
struct VoxelGrid {
    std::array<int, 3> dims{40, 40, 40};
    std::array<double, 3> cell{0.2, 0.1, 0.2};
    Vec3 origin;  // minimum corner, scene frame
    std::vector<std::uint8_t> classes;

    static VoxelGrid empty(const VoxelGeometry& g, const Vec3& center) {
        VoxelGrid v;
        v.dims = g.dims;
        v.cell = g.cell;
        v.origin = Vec3{center.x - g.extent(0) / 2.0, center.y - g.extent(1) / 2.0,
                        center.z - g.extent(2) / 2.0};
        v.classes.assign(static_cast<std::size_t>(g.dims[0]) * g.dims[1] * g.dims[2], kVoxelEmpty);
        return v;
    }

    std::size_t cell_count() const {
        return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
    }

    std::size_t index(int ix, int iy, int iz) const {
        return (static_cast<std::size_t>(ix) * dims[1] + iy) * dims[2] + iz;
    }

    std::uint8_t at(int ix, int iy, int iz) const { return classes[index(ix, iy, iz)]; }
    void set(int ix, int iy, int iz, std::uint8_t c) { classes[index(ix, iy, iz)] = c; }

    Vec3 center() const {
        return origin + Vec3{dims[0] * cell[0] / 2.0, dims[1] * cell[1] / 2.0, dims[2] * cell[2] / 2.0};
    }

    Vec3 cell_center(int ix, int iy, int iz) const {
        return origin + Vec3{(ix + 0.5) * cell[0], (iy + 0.5) * cell[1], (iz + 0.5) * cell[2]};
    }

    // Half-open cell lookup; false when p is outside the grid.
    bool locate(const Vec3& p, int& ix, int& iy, int& iz) const {
        const double fx = std::floor((p.x - origin.x) / cell[0]);
        const double fy = std::floor((p.y - origin.y) / cell[1]);
        const double fz = std::floor((p.z - origin.z) / cell[2]);
        if (fx < 0 || fy < 0 || fz < 0 || fx >= dims[0] || fy >= dims[1] || fz >= dims[2])
            return false;
        ix = static_cast<int>(fx);
        iy = static_cast<int>(fy);
        iz = static_cast<int>(fz);
        return true;
    }

    bool contains(const Vec3& p) const {
        int ix, iy, iz;
        return locate(p, ix, iy, iz);
    }
};

// Majority vote per cell, ties broken by the smallest class id; ego points
// are discarded. The result is independent of point order.
inline VoxelGrid voxelize(const SemanticPointCloud& pc_local, const Vec3& t1,
                          const VoxelGeometry& geom = {}) {
    VoxelGrid grid = VoxelGrid::empty(geom, t1);
    std::vector<std::pair<std::uint32_t, std::uint8_t>> hits;  // (cell, class)
    hits.reserve(pc_local.points.size());
    for (const SemPoint& pt : pc_local.points) {
        if (pt.cls == kEgoClassId) continue;
        int ix, iy, iz;
        require(grid.locate(pt.p, ix, iy, iz),
                "voxelize: point outside the local extents around t1");
        hits.emplace_back(static_cast<std::uint32_t>(grid.index(ix, iy, iz)), pt.cls);
    }
    std::sort(hits.begin(), hits.end());
    std::size_t i = 0;
    while (i < hits.size()) {
        const std::uint32_t cell = hits[i].first;
        std::size_t j = i;
        std::uint8_t best_cls = 0;
        int best_count = 0;
        while (j < hits.size() && hits[j].first == cell) {
            const std::uint8_t cls = hits[j].second;
            int count = 0;
            while (j < hits.size() && hits[j].first == cell && hits[j].second == cls) {
                ++count;
                ++j;
            }
            // Strict > keeps the smallest id on ties (classes ascend in the
            // sorted run).
            if (count > best_count) {
                best_count = count;
                best_cls = cls;
            }
        }
        grid.classes[cell] = best_cls;
        i = j;
    }
    return grid;
}

// Rotates the motion and the point cloud together about the vertical axis
// through the first-frame translation.
inline std::pair<Motion, SemanticPointCloud> rotate_augment(const Motion& m,
                                                            const SemanticPointCloud& pc,
                                                            double angle) {
    require(m.frames() >= 1, "rotate_augment: empty motion");
    const Mat3 r = rotation_about_y(angle);
    const Vec3 pivot = m.trans.front();
    Motion mo = m;
    for (int t = 0; t < m.frames(); ++t) {
        mo.trans[static_cast<std::size_t>(t)] = pivot + r * (m.trans[static_cast<std::size_t>(t)] - pivot);
        mo.root_orient[static_cast<std::size_t>(t)] = r * m.root_orient[static_cast<std::size_t>(t)];
    }
    SemanticPointCloud po = pc;
    for (SemPoint& pt : po.points) pt.p = pivot + r * (pt.p - pivot);
    return {std::move(mo), std::move(po)};
}

// Nearest-cell rotation of a voxel grid about the vertical axis through its
// center. Used for training augmentation when only the grid (not the source
// cloud) is stored; exact for multiples of 90 degrees.
inline VoxelGrid rotate_voxel_grid(const VoxelGrid& g, double angle) {
    VoxelGrid out = g;
    std::fill(out.classes.begin(), out.classes.end(), kVoxelEmpty);
    const Mat3 inv = rotation_about_y(-angle);
    const Vec3 c = g.center();
    for (int ix = 0; ix < g.dims[0]; ++ix) {
        for (int iy = 0; iy < g.dims[1]; ++iy) {
            for (int iz = 0; iz < g.dims[2]; ++iz) {
                const Vec3 src = c + inv * (g.cell_center(ix, iy, iz) - c);
                int sx, sy, sz;
                if (g.locate(src, sx, sy, sz)) out.set(ix, iy, iz, g.at(sx, sy, sz));
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Voxel binary format: little-endian header {magic "PGVX", 3 x u32 dims,
// 3 x f32 cell sizes, 3 x f32 origin}, then dims-product class bytes
// (255 = empty), z fastest, then y, then x.

inline void write_voxel_grid(const VoxelGrid& g, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write("PGVX", 4);
    for (int a = 0; a < 3; ++a) {
        const std::uint32_t d = static_cast<std::uint32_t>(g.dims[static_cast<std::size_t>(a)]);
        f.write(reinterpret_cast<const char*>(&d), 4);
    }
    for (int a = 0; a < 3; ++a) {
        const float c = static_cast<float>(g.cell[static_cast<std::size_t>(a)]);
        f.write(reinterpret_cast<const char*>(&c), 4);
    }
    const float org[3] = {static_cast<float>(g.origin.x), static_cast<float>(g.origin.y),
                          static_cast<float>(g.origin.z)};
    f.write(reinterpret_cast<const char*>(org), 12);
    f.write(reinterpret_cast<const char*>(g.classes.data()),
            static_cast<std::streamsize>(g.classes.size()));
    if (!f) throw IoError("failed writing voxel grid: " + path);
}

inline VoxelGrid read_voxel_grid(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open voxel grid: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "PGVX", 4) != 0)
        throw IoError("bad voxel grid magic in " + path);
    VoxelGrid g;
    for (int a = 0; a < 3; ++a) {
        std::uint32_t d = 0;
        f.read(reinterpret_cast<char*>(&d), 4);
        g.dims[static_cast<std::size_t>(a)] = static_cast<int>(d);
    }
    for (int a = 0; a < 3; ++a) {
        float c = 0;
        f.read(reinterpret_cast<char*>(&c), 4);
        g.cell[static_cast<std::size_t>(a)] = c;
    }
    float org[3];
    f.read(reinterpret_cast<char*>(org), 12);
    g.origin = Vec3{org[0], org[1], org[2]};
    if (!f) throw IoError("truncated voxel grid header: " + path);
    g.classes.resize(g.cell_count());
    f.read(reinterpret_cast<char*>(g.classes.data()), static_cast<std::streamsize>(g.classes.size()));
    if (!f) throw IoError("truncated voxel grid payload: " + path);
    return g;
}

}  // namespace pedgen
