#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <vector>

#include "pedgen/motion.hpp"
#include "pedgen/scene.hpp"

namespace pedgen {

// Displacement and physical-plausibility metrics over a set of generated
// movements. m-prefixed values take the minimum over predictions, a-prefixed
// the mean. CR/FFR are reported both per sequence (primary) and per frame.
struct MetricReport {
    double made = 0, aade = 0, mfde = 0, afde = 0;  // meters
    double cr = 0, ffr = 0;                         // per-sequence ratios
    double cr_frames = 0, ffr_frames = 0;           // per-frame ratios
    double goal_endpoint_error = std::numeric_limits<double>::quiet_NaN();
    int samples_per_datum = 0;
    int data_count = 0;

    void validate() const {
        require(made <= aade + 1e-9 && mfde <= afde + 1e-9,
                "MetricReport: min metrics cannot exceed averages");
        require(cr >= 0 && cr <= 1 && ffr >= 0 && ffr <= 1, "MetricReport: ratios must be in [0,1]");
    }
};

struct DisplacementErrors {
    double made = 0, aade = 0, mfde = 0, afde = 0;
};

// Per prediction, ADE = mean over frames of the mean per-joint distance to
// the ground truth (joints via forward kinematics in the global frame); FDE
// is the same quantity at the final frame.
inline DisplacementErrors displacement_errors(const Motion& gt, const std::vector<Motion>& preds,
                                              const Skeleton& skel) {
    require(!preds.empty(), "displacement_errors: empty prediction list");
    const int frames = gt.frames();
    for (const Motion& p : preds)
        require(p.frames() == frames, "displacement_errors: frame count mismatch");

    std::vector<std::array<Vec3, kNumJoints>> gt_joints(static_cast<std::size_t>(frames));
    for (int f = 0; f < frames; ++f) gt_joints[static_cast<std::size_t>(f)] = forward_kinematics(gt, f, skel);

    DisplacementErrors out;
    out.made = out.mfde = std::numeric_limits<double>::infinity();
    for (const Motion& p : preds) {
        double ade = 0, fde = 0;
        for (int f = 0; f < frames; ++f) {
            const auto joints = forward_kinematics(p, f, skel);
            double mean_dist = 0;
            for (int j = 0; j < kNumJoints; ++j)
                mean_dist += (joints[static_cast<std::size_t>(j)] -
                              gt_joints[static_cast<std::size_t>(f)][static_cast<std::size_t>(j)])
                                 .norm();
            mean_dist /= kNumJoints;
            ade += mean_dist;
            if (f == frames - 1) fde = mean_dist;
        }
        ade /= frames;
        out.made = std::min(out.made, ade);
        out.mfde = std::min(out.mfde, fde);
        out.aade += ade;
        out.afde += fde;
    }
    out.aade /= static_cast<double>(preds.size());
    out.afde /= static_cast<double>(preds.size());
    return out;
}

struct CollisionStats {
    double per_sequence = 0;
    double per_frame = 0;
};

// A prediction collides if any joint of any frame falls inside a non-empty,
// non-walkable voxel. Joints outside the grid never collide.
inline CollisionStats collision_rate(const std::vector<Motion>& preds, const VoxelGrid& grid,
                                     const Skeleton& skel) {
    require(!preds.empty(), "collision_rate: empty prediction list");
    CollisionStats out;
    long frame_hits = 0, frame_total = 0;
    int seq_hits = 0;
    for (const Motion& p : preds) {
        bool seq_hit = false;
        for (int f = 0; f < p.frames(); ++f) {
            const auto joints = forward_kinematics(p, f, skel);
            bool frame_hit = false;
            for (int j = 0; j < kNumJoints && !frame_hit; ++j) {
                int ix, iy, iz;
                if (!grid.locate(joints[static_cast<std::size_t>(j)], ix, iy, iz)) continue;
                const std::uint8_t cls = grid.at(ix, iy, iz);
                if (cls != kVoxelEmpty && !is_walkable_class(cls)) frame_hit = true;
            }
            frame_hits += frame_hit ? 1 : 0;
            ++frame_total;
            seq_hit = seq_hit || frame_hit;
        }
        seq_hits += seq_hit ? 1 : 0;
    }
    out.per_sequence = static_cast<double>(seq_hits) / static_cast<double>(preds.size());
    out.per_frame = frame_total ? static_cast<double>(frame_hits) / static_cast<double>(frame_total) : 0.0;
    return out;
}

using GroundHeightFn = std::function<double(double x, double z)>;

struct FootFloatStats {
    double per_sequence = 0;
    double per_frame = 0;
};

// Per frame, a violation means both foot joints are farther than `threshold`
// from the ground (floating or penetrating). A prediction violates when more
// than half of its frames do.
inline FootFloatStats foot_floating_rate(const std::vector<Motion>& preds,
                                         const GroundHeightFn& ground, const Skeleton& skel,
                                         double threshold = 0.2, double frame_fraction = 0.5) {
    require(!preds.empty(), "foot_floating_rate: empty prediction list");
    FootFloatStats out;
    long frame_hits = 0, frame_total = 0;
    int seq_hits = 0;
    for (const Motion& p : preds) {
        int violations = 0;
        for (int f = 0; f < p.frames(); ++f) {
            const auto joints = forward_kinematics(p, f, skel);
            double best = std::numeric_limits<double>::infinity();
            for (int j : {kFootJointLeft, kFootJointRight}) {
                const Vec3& foot = joints[static_cast<std::size_t>(j)];
                best = std::min(best, std::abs(foot.y - ground(foot.x, foot.z)));
            }
            if (best > threshold) ++violations;
        }
        frame_hits += violations;
        frame_total += p.frames();
        if (violations > frame_fraction * p.frames()) ++seq_hits;
    }
    out.per_sequence = static_cast<double>(seq_hits) / static_cast<double>(preds.size());
    out.per_frame = frame_total ? static_cast<double>(frame_hits) / static_cast<double>(frame_total) : 0.0;
    return out;
}

}  // namespace pedgen
