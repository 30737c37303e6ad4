#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "pedgen/labels.hpp"
#include "pedgen/metrics.hpp"

namespace pedgen {

// Procedural desk-scale urban scene: a flat ground plane, a walkway strip
// through the origin, and box obstacles placed beside the walkway. The scene
// is sampled into a semantic point cloud; trajectories walk along the strip.
struct SceneSpec {
    double ground_y = 0.0;

    struct Strip {
        Vec3 center;        // on the ground
        double yaw = 0;     // walk direction, rotation about +y (0 = +z)
        double half_width = 1.0;
        double half_length = 8.0;
        std::uint8_t cls = static_cast<std::uint8_t>(SemClass::sidewalk);
    };
    std::vector<Strip> walkways;

    struct Box {
        Vec3 center;
        Vec3 half;  // half extents
        std::uint8_t cls = static_cast<std::uint8_t>(SemClass::building);
    };
    std::vector<Box> obstacles;

    double point_spacing = 0.15;  // meters between sampled surface points
    std::uint64_t stream_lane = 0;

    Vec3 walk_dir() const {
        require(!walkways.empty(), "SceneSpec: needs at least one walkway");
        const double yaw = walkways.front().yaw;
        return {std::sin(yaw), 0.0, std::cos(yaw)};
    }

    void validate() const {
        require(!walkways.empty(), "SceneSpec: needs at least one walkable strip");
        require(point_spacing > 0.01, "SceneSpec: point spacing too fine");
    }
};

struct Scene {
    SceneSpec spec;
    SemanticPointCloud cloud;

    double ground_height(double, double) const { return spec.ground_y; }

    GroundHeightFn ground_fn() const {
        const double y = spec.ground_y;
        return [y](double, double) { return y; };
    }

    // Local semantic voxel grid centered on t1 (the spec's VoxelGrid factory).
    VoxelGrid voxelize_at(const Vec3& t1, const VoxelGeometry& geom = {}) const {
        LocalExtents ext;
        ext.dx = geom.extent(0) / 2.0;
        ext.dy = geom.extent(1) / 2.0;
        ext.dz = geom.extent(2) / 2.0;
        return voxelize(crop_local(cloud, t1, ext), t1, geom);
    }
};

// Random scene in the canonical layout: one walkway at a random heading,
// buildings on the pedestrian's left (a fixed chirality the context encoder
// can pick up), occasionally vegetation on the right.
inline SceneSpec random_scene_spec(RngStream rng) {
    SceneSpec spec;
    spec.ground_y = 0.0;
    spec.stream_lane = rng.split("lane").next_u64();

    SceneSpec::Strip strip;
    strip.center = {0, 0, 0};
    strip.yaw = rng.uniform(0.0, 2.0 * kPi);
    strip.half_width = rng.uniform(0.9, 1.4);
    strip.half_length = 8.0;
    spec.walkways.push_back(strip);

    const Vec3 dir{std::sin(strip.yaw), 0, std::cos(strip.yaw)};
    const Vec3 left{dir.z, 0, -dir.x};  // 90 degrees to the left of travel

    const int buildings = 2 + static_cast<int>(rng.below(3));
    for (int b = 0; b < buildings; ++b) {
        SceneSpec::Box box;
        const double along = rng.uniform(-6.0, 6.0);
        const double lateral = strip.half_width + rng.uniform(0.7, 1.8);
        box.half = {rng.uniform(0.5, 1.1), rng.uniform(0.8, 1.6), rng.uniform(0.5, 1.1)};
        box.center = dir * along + left * (lateral + box.half.x);
        box.center.y = spec.ground_y + box.half.y;
        box.cls = static_cast<std::uint8_t>(SemClass::building);
        spec.obstacles.push_back(box);
    }
    if (rng.uniform() < 0.4) {
        SceneSpec::Box bush;
        const double along = rng.uniform(-5.0, 5.0);
        const double lateral = strip.half_width + rng.uniform(1.4, 2.6);
        bush.half = {0.4, 0.5, 0.4};
        bush.center = dir * along - left * (lateral + bush.half.x);
        bush.center.y = spec.ground_y + bush.half.y;
        bush.cls = static_cast<std::uint8_t>(SemClass::vegetation);
        spec.obstacles.push_back(bush);
    }
    return spec;
}

namespace synth_detail {

inline bool point_in_strip(const SceneSpec::Strip& s, double x, double z) {
    const double dx = x - s.center.x, dz = z - s.center.z;
    const double along = dx * std::sin(s.yaw) + dz * std::cos(s.yaw);
    const double across = dx * std::cos(s.yaw) - dz * std::sin(s.yaw);
    return std::abs(along) <= s.half_length && std::abs(across) <= s.half_width;
}

}  // namespace synth_detail

// Deterministic surface sampling: ground + walkway on a jittered lattice,
// obstacle boxes on their side and top faces.
inline Scene generate_scene(const SceneSpec& spec) {
    spec.validate();
    Scene scene;
    scene.spec = spec;
    RngStream rng = RngStream(spec.stream_lane).split("scene-points");

    const double extent = 10.0;  // ground coverage around the origin, meters
    const double step = spec.point_spacing;
    for (double x = -extent; x <= extent; x += step) {
        for (double z = -extent; z <= extent; z += step) {
            const double jx = x + rng.uniform(-0.3, 0.3) * step;
            const double jz = z + rng.uniform(-0.3, 0.3) * step;
            std::uint8_t cls = static_cast<std::uint8_t>(SemClass::terrain);
            for (const auto& strip : spec.walkways) {
                if (synth_detail::point_in_strip(strip, jx, jz)) {
                    cls = strip.cls;
                    break;
                }
            }
            bool inside_box = false;
            for (const auto& box : spec.obstacles) {
                if (std::abs(jx - box.center.x) <= box.half.x &&
                    std::abs(jz - box.center.z) <= box.half.z) {
                    inside_box = true;
                    break;
                }
            }
            if (!inside_box)
                scene.cloud.points.push_back({{jx, spec.ground_y, jz}, cls});
        }
    }

    for (const auto& box : spec.obstacles) {
        // Vertical faces.
        for (double y = spec.ground_y; y <= box.center.y + box.half.y; y += step) {
            for (double u = -1.0; u <= 1.0; u += step / std::max(box.half.x, box.half.z)) {
                scene.cloud.points.push_back(
                    {{box.center.x + u * box.half.x, y, box.center.z - box.half.z}, box.cls});
                scene.cloud.points.push_back(
                    {{box.center.x + u * box.half.x, y, box.center.z + box.half.z}, box.cls});
                scene.cloud.points.push_back(
                    {{box.center.x - box.half.x, y, box.center.z + u * box.half.z}, box.cls});
                scene.cloud.points.push_back(
                    {{box.center.x + box.half.x, y, box.center.z + u * box.half.z}, box.cls});
            }
        }
        // Top face.
        for (double x = -box.half.x; x <= box.half.x; x += step) {
            for (double z = -box.half.z; z <= box.half.z; z += step) {
                scene.cloud.points.push_back(
                    {{box.center.x + x, box.center.y + box.half.y, box.center.z + z}, box.cls});
            }
        }
    }
    return scene;
}

// How one pedestrian walks: speed is coupled to the first shape component
// (taller strides move faster), which gives the human condition real signal.
struct TrajectorySpec {
    double speed = 1.25;  // m/s
    ShapeParams beta;
    Vec3 start;
    Vec3 goal;
    double gait_frequency = 0.95;  // full cycles per second
    std::uint64_t stream_lane = 0;

    void validate() const {
        require(speed > 0, "TrajectorySpec: speed must be positive");
        require((goal - start).norm() > 1e-9, "TrajectorySpec: start and goal must differ");
    }
};

inline TrajectorySpec sample_trajectory_spec(const Scene& scene, int frames, double fps,
                                             RngStream rng) {
    TrajectorySpec ts;
    ts.stream_lane = rng.split("lane").next_u64();
    for (int i = 0; i < kShapeDim; ++i)
        ts.beta.beta[static_cast<std::size_t>(i)] = rng.uniform(-1.5, 1.5);
    ts.speed = std::clamp(1.25 + 0.45 * ts.beta.beta[0] + rng.uniform(-0.05, 0.05), 0.5, 2.0);
    ts.gait_frequency = std::clamp(0.75 + 0.25 * ts.speed + rng.uniform(-0.05, 0.05), 0.6, 1.4);

    const auto& strip = scene.spec.walkways.front();
    const Vec3 dir = scene.spec.walk_dir();
    const Vec3 left{dir.z, 0, -dir.x};
    const double path_len = ts.speed * (frames - 1) / fps;
    const double u0 = rng.uniform(-0.45 * strip.half_length, 0.45 * strip.half_length - path_len);
    const double lateral = rng.uniform(-0.55, 0.55) * strip.half_width;
    const double drift = rng.uniform(-0.15, 0.15);
    const double root_h = rest_root_height(skeleton_from_shape(ts.beta));
    ts.start = dir * u0 + left * lateral + Vec3{0, scene.spec.ground_y + root_h, 0};
    ts.goal = ts.start + dir * path_len + left * drift;
    ts.goal.y = ts.start.y;
    return ts;
}

namespace synth_detail {

inline bool segment_blocked(const SceneSpec& spec, const Vec3& a, const Vec3& b, double clearance) {
    for (const auto& box : spec.obstacles) {
        const double hx = box.half.x + clearance, hz = box.half.z + clearance;
        // Sampled segment-rectangle overlap test in the ground plane.
        const int steps = 64;
        for (int i = 0; i <= steps; ++i) {
            const double t = static_cast<double>(i) / steps;
            const double x = a.x + t * (b.x - a.x), z = a.z + t * (b.z - a.z);
            if (std::abs(x - box.center.x) <= hx && std::abs(z - box.center.z) <= hz) return true;
        }
    }
    return false;
}

}  // namespace synth_detail

// Collision-free ground path from start to goal: straight when possible,
// otherwise one waypoint around the blocking obstacle.
inline std::vector<Vec3> plan_path(const Scene& scene, const Vec3& start, const Vec3& goal,
                                   double clearance = 0.4) {
    if (!synth_detail::segment_blocked(scene.spec, start, goal, clearance)) return {start, goal};
    const Vec3 fwd = (goal - start).normalized();
    const Vec3 side{fwd.z, 0, -fwd.x};
    for (const auto& box : scene.spec.obstacles) {
        const double base = std::max(box.half.x, box.half.z) + clearance;
        for (double extra : {0.5, 1.0, 1.6, 2.4}) {
            for (double sgn : {1.0, -1.0}) {
                Vec3 wp = box.center + side * (sgn * (base + extra));
                wp.y = start.y;
                if (!synth_detail::segment_blocked(scene.spec, start, wp, clearance) &&
                    !synth_detail::segment_blocked(scene.spec, wp, goal, clearance))
                    return {start, wp, goal};
            }
        }
    }
    throw DataError("plan_path: no collision-free path");
}

// Context-consistent walking motion along the planned path: the root follows
// the path at the sampled speed facing the velocity, legs and arms follow a
// phase-locked gait scaled by stature, and the root height is solved so the
// stance foot stays on the ground.
inline LabelRecord generate_trajectory(const Scene& scene, const TrajectorySpec& ts, int frames,
                                       double fps, const std::string& id,
                                       const VoxelGeometry& voxels = {}) {
    ts.validate();
    require(frames >= 2, "generate_trajectory: needs at least 2 frames");
    RngStream rng(ts.stream_lane);
    const Skeleton skel = skeleton_from_shape(ts.beta);
    const double leg_len = rest_root_height(skel);

    const std::vector<Vec3> path = plan_path(scene, ts.start, ts.goal);
    std::vector<double> seg_len;
    double total_len = 0;
    for (std::size_t i = 1; i < path.size(); ++i) {
        seg_len.push_back((path[i] - path[i - 1]).norm());
        total_len += seg_len.back();
    }
    require(total_len > 1e-9, "generate_trajectory: zero-length path");
    const double speed = total_len * fps / (frames - 1);  // arrive exactly at T

    auto point_at = [&](double s) {
        double rem = std::clamp(s, 0.0, total_len);
        for (std::size_t i = 0; i < seg_len.size(); ++i) {
            if (rem <= seg_len[i] || i + 1 == seg_len.size()) {
                const double t = seg_len[i] > 0 ? rem / seg_len[i] : 0.0;
                return path[i] + (path[i + 1] - path[i]) * t;
            }
            rem -= seg_len[i];
        }
        return path.back();
    };
    auto dir_at = [&](double s) {
        double rem = std::clamp(s, 0.0, total_len);
        for (std::size_t i = 0; i < seg_len.size(); ++i) {
            if (rem <= seg_len[i] || i + 1 == seg_len.size())
                return (path[i + 1] - path[i]).normalized();
            rem -= seg_len[i];
        }
        return (path.back() - path[path.size() - 2]).normalized();
    };

    // Gait amplitudes from stride geometry.
    const double step_len = speed / (2.0 * ts.gait_frequency);
    const double hip_amp = std::asin(std::clamp(step_len / (2.0 * leg_len), 0.0, 0.75));
    const double knee_amp = std::clamp(0.9 * hip_amp + 0.15, 0.1, 0.7);
    const double arm_amp = 0.6 * hip_amp;
    const double phase0 = rng.uniform(0.0, 2.0 * kPi);

    Motion m = Motion::rest(frames);
    for (int f = 0; f < frames; ++f) {
        const double s = speed * f / fps;
        const double phase = phase0 + 2.0 * kPi * ts.gait_frequency * f / fps;
        const Vec3 ground_pos = point_at(s);
        const Vec3 dir = dir_at(s);
        const double yaw = std::atan2(dir.x, dir.z);

        auto& pose = m.body_pose[static_cast<std::size_t>(f)];
        const double swing = std::sin(phase);
        // Joint slots are 1-based in the skeleton; body_pose[j] drives joint
        // j+1. Hips are joints 1/2, knees 4/5, ankles 7/8, shoulders 16/17.
        pose[0] = rotation_about_x(hip_amp * swing);                    // hip L
        pose[1] = rotation_about_x(-hip_amp * swing);                   // hip R
        pose[3] = rotation_about_x(knee_amp * std::max(0.0, -swing));   // knee L
        pose[4] = rotation_about_x(knee_amp * std::max(0.0, swing));    // knee R
        pose[6] = rotation_about_x(-0.5 * hip_amp * swing);             // ankle L
        pose[7] = rotation_about_x(0.5 * hip_amp * swing);              // ankle R
        pose[15] = rotation_about_x(-arm_amp * swing);                  // shoulder L
        pose[16] = rotation_about_x(arm_amp * swing);                   // shoulder R
        pose[17] = rotation_about_x(-0.3);                              // elbows slightly bent
        pose[18] = rotation_about_x(-0.3);
        pose[2] = rotation_about_z(0.03 * swing);                       // spine sway

        m.root_orient[static_cast<std::size_t>(f)] =
            rotation_about_y(yaw) * rotation_about_z(0.02 * swing);

        // Solve the root height so the lower foot touches the ground.
        Vec3 root = ground_pos;
        root.y = 0.0;
        const auto joints = forward_kinematics(pose, m.root_orient[static_cast<std::size_t>(f)], root, skel);
        const double min_foot = std::min(joints[kFootJointLeft].y, joints[kFootJointRight].y);
        const double lift = 0.004 + 0.008 * std::abs(swing);
        root.y = scene.spec.ground_y - min_foot + lift;
        m.trans[static_cast<std::size_t>(f)] = root;
    }
    m.validate();

    LabelRecord rec;
    rec.id = id;
    rec.motion = std::move(m);
    rec.ground_y = scene.spec.ground_y;
    rec.context.shape = ts.beta;
    rec.context.start = rec.motion.trans.front();
    rec.context.goal = rec.motion.trans.back();

    // Scene context around the start, with a handful of ego points that the
    // voxelizer must discard.
    LocalExtents ext{voxels.extent(0) / 2.0, voxels.extent(1) / 2.0, voxels.extent(2) / 2.0};
    SemanticPointCloud local = crop_local(scene.cloud, rec.context.start, ext);
    RngStream ego = rng.split("ego");
    for (int i = 0; i < 24; ++i) {
        Vec3 p = rec.context.start +
                 Vec3{ego.uniform(-0.2, 0.2), ego.uniform(-0.8, 0.6), ego.uniform(-0.2, 0.2)};
        local.points.push_back({p, kEgoClassId});
    }
    rec.context.scene = voxelize(local, rec.context.start, voxels);
    return rec;
}

enum class AnomalyMode : std::uint8_t { scramble_pose = 0, teleport_root = 1, freeze = 2 };

inline AnomalyMode anomaly_mode_from_string(const std::string& s) {
    if (s == "scramble-pose") return AnomalyMode::scramble_pose;
    if (s == "teleport-root") return AnomalyMode::teleport_root;
    if (s == "freeze") return AnomalyMode::freeze;
    throw ConfigError("unknown anomaly mode: " + s);
}

// Corrupts a deterministic subset of the records; returns the injected ids so
// filtering tests can compute recall and clean-drop rates.
inline std::pair<std::vector<LabelRecord>, std::set<std::string>> inject_anomalies(
    std::vector<LabelRecord> records, double fraction, AnomalyMode mode, RngStream stream) {
    require(fraction > 0 && fraction < 1, "inject_anomalies: fraction must be in (0,1)");
    const int count = static_cast<int>(std::llround(fraction * static_cast<double>(records.size())));
    std::vector<std::size_t> order(records.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[stream.below(i)]);

    std::set<std::string> injected;
    for (int c = 0; c < count; ++c) {
        LabelRecord& rec = records[order[static_cast<std::size_t>(c)]];
        RngStream r = stream.split(rec.stream_lane());
        Motion& m = rec.motion;
        switch (mode) {
            case AnomalyMode::scramble_pose:
                for (int f = 0; f < m.frames(); ++f) {
                    m.root_orient[static_cast<std::size_t>(f)] = matrix_from_axis_angle(
                        Vec3{r.normal(), r.normal(), r.normal()}.normalized() * r.uniform(0, kPi));
                    for (auto& rot : m.body_pose[static_cast<std::size_t>(f)])
                        rot = matrix_from_axis_angle(
                            Vec3{r.normal(), r.normal(), r.normal()}.normalized() *
                            r.uniform(0, kPi));
                }
                break;
            case AnomalyMode::teleport_root: {
                const int at = 1 + static_cast<int>(r.below(static_cast<std::uint64_t>(m.frames() - 1)));
                const double ang = r.uniform(0, 2 * kPi);
                const Vec3 jump = Vec3{std::sin(ang), 0, std::cos(ang)} * r.uniform(2.0, 4.0);
                for (int f = at; f < m.frames(); ++f) m.trans[static_cast<std::size_t>(f)] += jump;
                break;
            }
            case AnomalyMode::freeze:
                for (int f = 1; f < m.frames(); ++f) {
                    m.trans[static_cast<std::size_t>(f)] = m.trans[0];
                    m.root_orient[static_cast<std::size_t>(f)] = m.root_orient[0];
                    m.body_pose[static_cast<std::size_t>(f)] = m.body_pose[0];
                }
                break;
        }
        injected.insert(rec.id);
    }
    return {std::move(records), std::move(injected)};
}

}  // namespace pedgen
