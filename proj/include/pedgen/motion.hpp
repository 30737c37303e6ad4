#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pedgen/geometry.hpp"
#include "pedgen/tensor.hpp"

namespace pedgen {

constexpr int kBodyJoints = 23;   // articulated joints beyond the root
constexpr int kNumJoints = 24;    // root + body
constexpr int kShapeDim = 10;

// Foot joints of the tree (ankle-equivalents), used by the foot-floating
// metric and the gait generator.
constexpr int kFootJointLeft = 10;
constexpr int kFootJointRight = 11;

// World-space motion: per-frame root translation/orientation and 23 body
// rotations, plus a per-frame availability mask (partial labels).
struct Motion {
    std::vector<Vec3> trans;
    std::vector<Mat3> root_orient;
    std::vector<std::array<Mat3, kBodyJoints>> body_pose;
    std::vector<std::uint8_t> mask;

    int frames() const { return static_cast<int>(trans.size()); }

    static Motion rest(int t) {
        Motion m;
        m.trans.resize(static_cast<std::size_t>(t));
        m.root_orient.resize(static_cast<std::size_t>(t));
        m.body_pose.resize(static_cast<std::size_t>(t));
        m.mask.assign(static_cast<std::size_t>(t), 1);
        return m;
    }

    void validate() const {
        require(frames() >= 2, "Motion: needs at least 2 frames");
        require(root_orient.size() == trans.size() && body_pose.size() == trans.size() &&
                    mask.size() == trans.size(),
                "Motion: per-frame arrays disagree in length");
        bool any = false;
        for (std::size_t t = 0; t < trans.size(); ++t) {
            require(trans[t].finite(), "Motion: non-finite translation");
            require(is_rotation(root_orient[t], 1e-4), "Motion: root orientation not a rotation");
            for (const Mat3& r : body_pose[t])
                require(is_rotation(r, 1e-4), "Motion: body rotation not a rotation");
            any = any || mask[t];
        }
        require(any, "Motion: mask must be true on at least one frame");
    }
};

// Model-space motion: per-frame root velocity plus all 24 rotations in 6-d
// form. This is the diffusion state.
struct ModelMotion {
    static constexpr int kVelDim = 3;
    static constexpr int kRotDim = kNumJoints * 6;  // 144
    static constexpr int kFeatDim = kVelDim + kRotDim;

    int frames = 0;
    std::vector<double> feat;  // frames x kFeatDim, row-major
    std::vector<std::uint8_t> mask;

    static ModelMotion zeros(int t) {
        ModelMotion m;
        m.frames = t;
        m.feat.assign(static_cast<std::size_t>(t) * kFeatDim, 0.0);
        m.mask.assign(static_cast<std::size_t>(t), 1);
        return m;
    }

    // Zero velocities, identity rotations.
    static ModelMotion rest(int t) {
        ModelMotion m = zeros(t);
        for (int f = 0; f < t; ++f)
            for (int slot = 0; slot < kNumJoints; ++slot) m.set_rotation(f, slot, Rot6d{});
        return m;
    }

    double* frame(int t) { return feat.data() + static_cast<std::size_t>(t) * kFeatDim; }
    const double* frame(int t) const { return feat.data() + static_cast<std::size_t>(t) * kFeatDim; }

    Vec3 velocity(int t) const {
        const double* f = frame(t);
        return {f[0], f[1], f[2]};
    }

    void set_velocity(int t, const Vec3& v) {
        double* f = frame(t);
        f[0] = v.x;
        f[1] = v.y;
        f[2] = v.z;
    }

    // Rotation slot 0 is the root orientation; slots 1..23 the body pose.
    Rot6d rotation(int t, int slot) const {
        Rot6d r;
        const double* f = frame(t) + kVelDim + slot * 6;
        for (int i = 0; i < 6; ++i) r.v[static_cast<std::size_t>(i)] = f[i];
        return r;
    }

    void set_rotation(int t, int slot, const Rot6d& r) {
        double* f = frame(t) + kVelDim + slot * 6;
        for (int i = 0; i < 6; ++i) f[i] = r.v[static_cast<std::size_t>(i)];
    }

    template <typename Real>
    Tensor<Real> to_tensor() const {
        Tensor<Real> t({frames, kFeatDim});
        for (std::size_t i = 0; i < feat.size(); ++i) t[i] = static_cast<Real>(feat[i]);
        return t;
    }

    template <typename Real>
    static ModelMotion from_tensor(const Tensor<Real>& t, std::vector<std::uint8_t> mask) {
        require_shape(t.ndim() == 2 && t.extent(1) == kFeatDim,
                      "ModelMotion::from_tensor: expects [T," + std::to_string(kFeatDim) + "]");
        ModelMotion m;
        m.frames = t.extent(0);
        m.feat.resize(t.numel());
        for (std::size_t i = 0; i < t.numel(); ++i) m.feat[i] = static_cast<double>(t[i]);
        if (mask.empty()) mask.assign(static_cast<std::size_t>(m.frames), 1);
        require_shape(static_cast<int>(mask.size()) == m.frames,
                      "ModelMotion::from_tensor: mask length mismatch");
        m.mask = std::move(mask);
        return m;
    }
};

// v_t = t_t - t_{t-1} for t >= 2 and v_1 = 0; rotations go to 6-d form.
inline ModelMotion encode_model_space(const Motion& m) {
    const int t_count = m.frames();
    ModelMotion out = ModelMotion::zeros(t_count);
    out.mask = m.mask;
    for (int t = 0; t < t_count; ++t) {
        if (t > 0) out.set_velocity(t, m.trans[static_cast<std::size_t>(t)] - m.trans[static_cast<std::size_t>(t) - 1]);
        out.set_rotation(t, 0, rot6d_from_matrix(m.root_orient[static_cast<std::size_t>(t)]));
        for (int j = 0; j < kBodyJoints; ++j)
            out.set_rotation(t, 1 + j, rot6d_from_matrix(m.body_pose[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)]));
    }
    return out;
}

// t_t = t1 + sum of velocities up to t; 6-d rotations back to matrices.
inline Motion decode_model_space(const ModelMotion& mm, const Vec3& t1) {
    Motion out = Motion::rest(mm.frames);
    out.mask = mm.mask;
    Vec3 acc{0, 0, 0};
    for (int t = 0; t < mm.frames; ++t) {
        acc += mm.velocity(t);
        out.trans[static_cast<std::size_t>(t)] = t1 + acc;
        out.root_orient[static_cast<std::size_t>(t)] = matrix_from_rot6d(mm.rotation(t, 0));
        for (int j = 0; j < kBodyJoints; ++j)
            out.body_pose[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)] =
                matrix_from_rot6d(mm.rotation(t, 1 + j));
    }
    return out;
}

struct ShapeParams {
    std::array<double, kShapeDim> beta{};

    static ShapeParams zero() { return {}; }

    void validate() const {
        for (double b : beta) require_finite(b, "ShapeParams::beta");
    }
};

// License-free stand-in for the SMPL kinematic tree: 24 joints, the SMPL
// parent hierarchy, fixed rest offsets and a linear shape basis. No mesh.
struct Skeleton {
    std::array<int, kNumJoints> parent;
    std::array<Vec3, kNumJoints> offsets;  // meters, relative to parent

    void validate() const {
        require(parent[0] == -1, "Skeleton: joint 0 must be the root");
        for (int j = 1; j < kNumJoints; ++j)
            require(parent[static_cast<std::size_t>(j)] >= 0 && parent[static_cast<std::size_t>(j)] < j,
                    "Skeleton: parents must form a tree in topological order");
        for (const Vec3& o : offsets) require(o.finite(), "Skeleton: non-finite offset");
    }
};

namespace skeleton_detail {

inline const std::array<int, kNumJoints>& parents() {
    // SMPL joint order: pelvis, L/R hip, spine1, L/R knee, spine2, L/R ankle,
    // spine3, L/R foot, neck, L/R collar, head, L/R shoulder, L/R elbow,
    // L/R wrist, L/R hand.
    static const std::array<int, kNumJoints> p = {-1, 0, 0, 0, 1, 2, 3, 4,  5,  6,  7, 8,
                                                  9,  9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21};
    return p;
}

inline const std::array<Vec3, kNumJoints>& canonical_offsets() {
    // Y up, Z forward, X to the character's left. Standing root height is
    // 0.91 m: hip(-0.07) + knee(-0.38) + ankle(-0.40) + foot(-0.06) = -0.91.
    static const std::array<Vec3, kNumJoints> off = {{
        {0.00, 0.00, 0.00},    // 0  pelvis
        {0.09, -0.07, 0.00},   // 1  hip.L
        {-0.09, -0.07, 0.00},  // 2  hip.R
        {0.00, 0.12, 0.00},    // 3  spine1
        {0.00, -0.38, 0.00},   // 4  knee.L
        {0.00, -0.38, 0.00},   // 5  knee.R
        {0.00, 0.14, 0.00},    // 6  spine2
        {0.00, -0.40, 0.00},   // 7  ankle.L
        {0.00, -0.40, 0.00},   // 8  ankle.R
        {0.00, 0.06, 0.00},    // 9  spine3
        {0.00, -0.06, 0.12},   // 10 foot.L
        {0.00, -0.06, 0.12},   // 11 foot.R
        {0.00, 0.22, 0.00},    // 12 neck
        {0.08, 0.11, 0.00},    // 13 collar.L
        {-0.08, 0.11, 0.00},   // 14 collar.R
        {0.00, 0.12, 0.00},    // 15 head
        {0.09, 0.02, 0.00},    // 16 shoulder.L
        {-0.09, 0.02, 0.00},   // 17 shoulder.R
        {0.26, 0.00, 0.00},    // 18 elbow.L
        {-0.26, 0.00, 0.00},   // 19 elbow.R
        {0.25, 0.00, 0.00},    // 20 wrist.L
        {-0.25, 0.00, 0.00},   // 21 wrist.R
        {0.08, 0.00, 0.00},    // 22 hand.L
        {-0.08, 0.00, 0.00},   // 23 hand.R
    }};
    return off;
}

// Linear shape basis B: offsets(beta) = canonical + B * beta. Column 0 is
// the stature direction (proportional scaling of every offset); the other
// columns perturb specific parts.
inline Vec3 basis_column(int joint, int comp) {
    const Vec3 canon = canonical_offsets()[static_cast<std::size_t>(joint)];
    const double sx = canon.x >= 0 ? 1.0 : -1.0;
    switch (comp) {
        case 0:  // stature: +5% of every offset per unit beta
            return canon * 0.05;
        case 1:  // shoulder/hip width
            if (joint == 1 || joint == 2 || joint == 13 || joint == 14 || joint == 16 || joint == 17)
                return {0.03 * sx, 0.0, 0.0};
            return {};
        case 2:  // leg length
            if (joint == 4 || joint == 5 || joint == 7 || joint == 8) return {0.0, -0.03, 0.0};
            return {};
        case 3:  // arm length
            if (joint == 18 || joint == 19 || joint == 20 || joint == 21) return {0.02 * sx, 0.0, 0.0};
            return {};
        case 4:  // foot length
            if (joint == kFootJointLeft || joint == kFootJointRight) return {0.0, 0.0, 0.01};
            return {};
        case 5:  // neck/head height
            if (joint == 12 || joint == 15) return {0.0, 0.01, 0.0};
            return {};
        case 6:  // torso height
            if (joint == 3 || joint == 6 || joint == 9) return {0.0, 0.01, 0.0};
            return {};
        case 7:  // pelvis drop
            if (joint == 1 || joint == 2) return {0.0, -0.01, 0.0};
            return {};
        case 8:  // collar width
            if (joint == 13 || joint == 14) return {0.01 * sx, 0.0, 0.0};
            return {};
        case 9:  // hand size
            if (joint == 22 || joint == 23) return {0.01 * sx, 0.0, 0.0};
            return {};
        default:
            return {};
    }
}

}  // namespace skeleton_detail

inline Skeleton skeleton_from_shape(const ShapeParams& shape) {
    shape.validate();
    Skeleton s;
    s.parent = skeleton_detail::parents();
    for (int j = 0; j < kNumJoints; ++j) {
        Vec3 o = skeleton_detail::canonical_offsets()[static_cast<std::size_t>(j)];
        for (int c = 0; c < kShapeDim; ++c)
            o += skeleton_detail::basis_column(j, c) * shape.beta[static_cast<std::size_t>(c)];
        s.offsets[static_cast<std::size_t>(j)] = o;
    }
    s.validate();
    return s;
}

// Standing pelvis height for a shape (identity pose, feet on the ground).
inline double rest_root_height(const Skeleton& s) {
    double h = 0;
    int j = kFootJointLeft;
    while (j != 0) {
        h -= s.offsets[static_cast<std::size_t>(j)].y;
        j = s.parent[static_cast<std::size_t>(j)];
    }
    return h;
}

// World joint positions. Joint 0 sits at t; every child is placed at its
// parent plus the parent's accumulated world rotation applied to the child
// offset; world rotations compose root-to-leaf.
inline std::array<Vec3, kNumJoints> forward_kinematics(const std::array<Mat3, kBodyJoints>& body,
                                                       const Mat3& root, const Vec3& t,
                                                       const Skeleton& s) {
    std::array<Mat3, kNumJoints> world_rot;
    std::array<Vec3, kNumJoints> pos;
    world_rot[0] = root;
    pos[0] = t;
    for (int j = 1; j < kNumJoints; ++j) {
        const int p = s.parent[static_cast<std::size_t>(j)];
        pos[static_cast<std::size_t>(j)] =
            pos[static_cast<std::size_t>(p)] +
            world_rot[static_cast<std::size_t>(p)] * s.offsets[static_cast<std::size_t>(j)];
        world_rot[static_cast<std::size_t>(j)] =
            world_rot[static_cast<std::size_t>(p)] * body[static_cast<std::size_t>(j) - 1];
    }
    return pos;
}

inline std::array<Vec3, kNumJoints> forward_kinematics(const Motion& m, int frame,
                                                       const Skeleton& s) {
    return forward_kinematics(m.body_pose[static_cast<std::size_t>(frame)],
                              m.root_orient[static_cast<std::size_t>(frame)],
                              m.trans[static_cast<std::size_t>(frame)], s);
}

}  // namespace pedgen
