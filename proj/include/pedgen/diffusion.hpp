#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "pedgen/denoiser.hpp"
#include "pedgen/motion.hpp"
#include "pedgen/rng.hpp"
#include "pedgen/tape.hpp"

namespace pedgen {

// Cosine noise schedule. alpha_bar[k] is the cumulative signal fraction at
// step k, alpha_bar[0] = 1. Per-step noise fractions are clamped to 0.999 so
// alpha_bar stays strictly positive at k = K.
struct DiffusionSchedule {
    int steps = 0;
    std::vector<double> alpha_bar;  // size steps + 1

    static DiffusionSchedule cosine(int k_steps, double offset = 0.008, double max_beta = 0.999) {
        require(k_steps >= 1, "DiffusionSchedule: needs at least one step");
        auto f = [&](double k) {
            const double u = ((k / k_steps + offset) / (1.0 + offset)) * kPi / 2.0;
            const double c = std::cos(u);
            return c * c;
        };
        DiffusionSchedule s;
        s.steps = k_steps;
        s.alpha_bar.resize(static_cast<std::size_t>(k_steps) + 1);
        s.alpha_bar[0] = 1.0;
        const double f0 = f(0.0);
        double prev_raw = 1.0;
        for (int k = 1; k <= k_steps; ++k) {
            const double raw = f(static_cast<double>(k)) / f0;
            double beta = 1.0 - raw / prev_raw;
            beta = std::clamp(beta, 0.0, max_beta);
            s.alpha_bar[static_cast<std::size_t>(k)] =
                s.alpha_bar[static_cast<std::size_t>(k) - 1] * (1.0 - beta);
            prev_raw = raw;
        }
        s.validate();
        return s;
    }

    double at(int k) const {
        require(k >= 0 && k <= steps, "DiffusionSchedule: step out of range");
        return alpha_bar[static_cast<std::size_t>(k)];
    }

    void validate() const {
        require(alpha_bar.size() == static_cast<std::size_t>(steps) + 1,
                "DiffusionSchedule: bad table size");
        require(alpha_bar[0] == 1.0, "DiffusionSchedule: alpha_bar[0] must be 1");
        for (int k = 1; k <= steps; ++k) {
            const double a = alpha_bar[static_cast<std::size_t>(k)];
            require(a > 0.0 && a <= 1.0 && a < alpha_bar[static_cast<std::size_t>(k) - 1],
                    "DiffusionSchedule: alpha_bar must strictly decrease within (0,1]");
        }
    }
};

struct LossWeights {
    double rec = 1.0;
    double traj = 1.0;
    double geo = 1.0;

    void validate() const {
        require(rec >= 0 && traj >= 0 && geo >= 0, "LossWeights: must be non-negative");
    }
};

struct SampleSpec {
    int ddim_steps = 100;
    double guidance_scale = 1.0;
    std::uint64_t stream_lane = 0;

    void validate(int k_steps) const {
        require(ddim_steps >= 1 && ddim_steps <= k_steps,
                "SampleSpec: ddim step count must lie in [1, K]");
        require(guidance_scale >= 0, "SampleSpec: guidance scale must be >= 0");
    }
};

// x^k = sqrt(alpha_bar_k) x + sqrt(1 - alpha_bar_k) noise, on the flattened
// motion features. The mask is untouched.
template <typename Real>
Tensor<Real> q_sample(const Tensor<Real>& x, int k, const Tensor<Real>& noise,
                      const DiffusionSchedule& sched) {
    require_shape(x.same_shape(noise), "q_sample: noise must be shaped like x");
    const double ab = sched.at(k);
    const Real sa = static_cast<Real>(std::sqrt(ab));
    const Real sn = static_cast<Real>(std::sqrt(1.0 - ab));
    Tensor<Real> out = x;
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sa * x[i] + sn * noise[i];
    return out;
}

inline ModelMotion q_sample(const ModelMotion& x, int k, RngStream& stream,
                            const DiffusionSchedule& sched) {
    const double ab = sched.at(k);
    const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
    ModelMotion out = x;
    for (double& v : out.feat) v = sa * v + sn * stream.normal();
    return out;
}

// ---------------------------------------------------------------------------
// Training objective. Reconstruction, trajectory and geometric terms, every
// per-frame contribution restricted to unmasked frames. Masked frames are
// excluded structurally (never written into the graph), which keeps their
// gradients exactly zero.

namespace loss_detail {

// Differentiable Gram-Schmidt on row pairs: [n,6] -> [n,9] rotation matrices
// (row-major per row). Normalizations carry a small epsilon so the loss stays
// finite if the model wanders near a degenerate 6-d prediction mid-training;
// for well-formed rotations the effect is below 1e-8.
template <typename Real>
TapeNode<Real> rot6d_to_mat_rows(GradientTape<Real>& t, TapeNode<Real> r6) {
    require_shape(r6.cols() == 6, "rot6d_to_mat_rows: expects [n,6]");
    constexpr Real eps = static_cast<Real>(1e-8);
    auto a = t.slice_cols(r6, 0, 3);
    auto b = t.slice_cols(r6, 3, 6);
    auto an = t.sqrt_val(t.add_scalar(t.sum_cols(t.mul(a, a)), eps));  // [n]
    auto c1 = t.div_colvec(a, an);
    auto dot = t.sum_cols(t.mul(c1, b));            // [n]
    // residual = b - (c1 . b) c1
    auto res = t.sub(b, t.mul_colvec(c1, dot));
    auto rn = t.sqrt_val(t.add_scalar(t.sum_cols(t.mul(res, res)), eps));
    auto c2 = t.div_colvec(res, rn);
    auto c3 = t.cross_rows(c1, c2);
    // Assemble row-major matrices from the three column vectors: entries
    // m = [c1x c2x c3x c1y c2y c3y c1z c2z c3z].
    std::vector<TapeNode<Real>> cols;
    for (int r = 0; r < 3; ++r) {
        cols.push_back(t.slice_cols(c1, r, r + 1));
        cols.push_back(t.slice_cols(c2, r, r + 1));
        cols.push_back(t.slice_cols(c3, r, r + 1));
    }
    return t.concat_cols(cols);
}

}  // namespace loss_detail

struct LossTerms {
    double total = 0;
    double rec = 0;
    double traj = 0;
    double geo = 0;
};

// Builds the loss on the tape. `target` is a constant; `pred` is typically
// the denoiser output (or a leaf in tests). Returns the scalar node plus the
// component nodes for logging.
template <typename Real>
TapeNode<Real> training_loss_node(GradientTape<Real>& t, const Tensor<Real>& target,
                                  TapeNode<Real> pred, const std::vector<std::uint8_t>& mask,
                                  const Skeleton& skel, const LossWeights& weights,
                                  TapeNode<Real>* rec_out = nullptr,
                                  TapeNode<Real>* traj_out = nullptr,
                                  TapeNode<Real>* geo_out = nullptr) {
    weights.validate();
    const int frames = pred.rows();
    require_shape(target.rows() == frames && target.cols() == ModelMotion::kFeatDim &&
                      pred.cols() == ModelMotion::kFeatDim,
                  "training_loss: prediction and target shapes disagree");
    require(static_cast<int>(mask.size()) == frames, "training_loss: mask length mismatch");

    std::vector<int> live;
    for (int f = 0; f < frames; ++f)
        if (mask[static_cast<std::size_t>(f)]) live.push_back(f);
    require(!live.empty(), "training_loss: mask excludes every frame");
    const int n = static_cast<int>(live.size());

    auto pred_sel = t.select_rows(pred, live);
    Tensor<Real> target_sel({n, ModelMotion::kFeatDim});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < ModelMotion::kFeatDim; ++j)
            target_sel.at(i, j) = target.at(live[static_cast<std::size_t>(i)], j);
    auto target_node = t.constant(std::move(target_sel));
    auto diff = t.sub(target_node, pred_sel);

    // Reconstruction: squared L2 over all features of unmasked frames.
    auto rec = t.sum_all(t.mul(diff, diff));

    // Trajectory: L1 of the reconstructed-translation error. With both sides
    // anchored at t1 the error is the running sum of velocity differences,
    // restricted to unmasked frames.
    auto vel_diff = t.slice_cols(diff, 0, ModelMotion::kVelDim);  // [n,3]
    Tensor<Real> lower({n, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) lower.at(i, j) = Real(1);
    auto cum = t.matmul(t.constant(std::move(lower)), vel_diff);
    auto traj = t.sum_all(t.abs_val(cum));

    // Geometric: per-frame L2 norm of the stacked joint-position differences;
    // forward kinematics over the body pose only, root at the origin. Both
    // sides run through the same tape routine so identical poses cancel
    // exactly.
    TapeNode<Real> geo;
    if (weights.geo > 0) {
        auto fk_positions = [&](TapeNode<Real> feats) {
            // feats: [n, kFeatDim]; rotations per joint slot j at columns
            // 3 + 6j .. 3 + 6j + 6. Slot 0 (root orientation) is excluded:
            // the geometric term covers the body pose.
            std::vector<TapeNode<Real>> mats(kNumJoints);
            for (int j = 1; j < kNumJoints; ++j) {
                auto r6 = t.slice_cols(feats, ModelMotion::kVelDim + 6 * j,
                                       ModelMotion::kVelDim + 6 * (j + 1));
                mats[static_cast<std::size_t>(j)] = loss_detail::rot6d_to_mat_rows(t, r6);
            }
            // World rotations down the tree with an identity root.
            std::vector<TapeNode<Real>> world(kNumJoints);
            Tensor<Real> ident({n, 9});
            for (int i = 0; i < n; ++i) {
                ident.at(i, 0) = 1;
                ident.at(i, 4) = 1;
                ident.at(i, 8) = 1;
            }
            world[0] = t.constant(std::move(ident));
            std::vector<TapeNode<Real>> pos(kNumJoints);
            pos[0] = t.constant(Tensor<Real>::zeros({n, 3}));
            for (int j = 1; j < kNumJoints; ++j) {
                const int par = skel.parent[static_cast<std::size_t>(j)];
                const Vec3 off = skel.offsets[static_cast<std::size_t>(j)];
                auto step = t.mat3_apply_const(world[static_cast<std::size_t>(par)],
                                               {static_cast<Real>(off.x), static_cast<Real>(off.y),
                                                static_cast<Real>(off.z)});
                pos[static_cast<std::size_t>(j)] = t.add(pos[static_cast<std::size_t>(par)], step);
                world[static_cast<std::size_t>(j)] =
                    t.mat3_mul_rows(world[static_cast<std::size_t>(par)],
                                    mats[static_cast<std::size_t>(j)]);
            }
            return pos;
        };
        auto pos_pred = fk_positions(pred_sel);
        auto pos_target = fk_positions(target_node);
        TapeNode<Real> sq_sum;
        for (int j = 1; j < kNumJoints; ++j) {
            auto d = t.sub(pos_target[static_cast<std::size_t>(j)], pos_pred[static_cast<std::size_t>(j)]);
            auto s = t.sum_cols(t.mul(d, d));  // [n]
            sq_sum = j == 1 ? s : t.add(sq_sum, s);
        }
        geo = t.sum_all(t.sqrt_val(sq_sum));
    } else {
        geo = t.scalar(Real(0));
    }

    if (rec_out) *rec_out = rec;
    if (traj_out) *traj_out = traj;
    if (geo_out) *geo_out = geo;
    auto total = t.mul_scalar(rec, static_cast<Real>(weights.rec));
    total = t.add(total, t.mul_scalar(traj, static_cast<Real>(weights.traj)));
    total = t.add(total, t.mul_scalar(geo, static_cast<Real>(weights.geo)));
    return total;
}

// Value-level loss between a target motion and a prediction.
inline LossTerms training_loss(const ModelMotion& x, const ModelMotion& x_hat, const Vec3& t1,
                               const Skeleton& skel, const LossWeights& weights) {
    (void)t1;  // cancels: both translations are anchored at the same t1
    require(x.frames == x_hat.frames, "training_loss: frame count mismatch");
    require(x.mask == x_hat.mask, "training_loss: the two motions must share a mask");
    GradientTape<double> t;
    auto pred = t.constant(x_hat.to_tensor<double>());
    TapeNode<double> rec, traj, geo;
    auto total = training_loss_node(t, x.to_tensor<double>(), pred, x.mask, skel, weights, &rec,
                                    &traj, &geo);
    return LossTerms{total.value()[0], rec.value()[0], traj.value()[0], geo.value()[0]};
}

// ---------------------------------------------------------------------------
// Sampling.

// Classifier-free guidance combination. The callable runs the denoiser with
// (true) or without (false) the condition. Scales 1 and 0 short-circuit to a
// single branch so they are exactly the conditional / unconditional outputs.
template <typename Real, typename DenoiseFn>
Tensor<Real> guided_predict(DenoiseFn&& f, double scale) {
    require(scale >= 0, "guided_predict: scale must be >= 0");
    if (scale == 1.0) return f(true);
    if (scale == 0.0) return f(false);
    Tensor<Real> cond = f(true);
    Tensor<Real> uncond = f(false);
    Tensor<Real> out = uncond;
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = uncond[i] + static_cast<Real>(scale) * (cond[i] - uncond[i]);
    return out;
}

// Evenly spaced descending DDIM step subsequence; for n steps of K this is
// {K, K - K/n, ..., K/n} with a final hop to 0.
inline std::vector<int> ddim_step_sequence(int k_steps, int ddim_steps) {
    std::vector<int> ks;
    ks.reserve(static_cast<std::size_t>(ddim_steps));
    for (int i = ddim_steps; i >= 1; --i) {
        const int k = static_cast<int>(std::llround(
            static_cast<double>(i) * static_cast<double>(k_steps) / ddim_steps));
        if (ks.empty() || ks.back() != k) ks.push_back(k);
    }
    return ks;
}

// One deterministic (eta = 0) DDIM hop from step k to step k_prev given the
// clean prediction x0.
template <typename Real>
void ddim_update(Tensor<Real>& x, const Tensor<Real>& x0, int k, int k_prev,
                 const DiffusionSchedule& sched) {
    const double ab = sched.at(k);
    const double ab_prev = sched.at(k_prev);
    const Real sa = static_cast<Real>(std::sqrt(ab));
    const Real sn = static_cast<Real>(std::sqrt(1.0 - ab));
    const Real sa_p = static_cast<Real>(std::sqrt(ab_prev));
    const Real sn_p = static_cast<Real>(std::sqrt(1.0 - ab_prev));
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const Real eps = (x[i] - sa * x0[i]) / sn;
        x[i] = sa_p * x0[i] + sn_p * eps;
    }
}

// Hook applied to each clean prediction inside the sampling loop (goal
// inpainting, overlap fixing). May mutate the prediction in place.
template <typename Real>
using InpaintHook = std::function<void(Tensor<Real>&)>;

// Denoiser interface for the sampler: (x_k, k, conditional?) -> x0 prediction.
template <typename Real>
using DenoiseFn = std::function<Tensor<Real>(const Tensor<Real>&, int, bool)>;

// Runs the DDIM loop from the given state at step k_start down to 0 and
// returns the final clean prediction. The step sequence is the configured
// subsequence restricted to steps <= k_start.
template <typename Real>
Tensor<Real> ddim_denoise_from(Tensor<Real> x, int k_start, const DenoiseFn<Real>& denoise,
                               const SampleSpec& spec, const DiffusionSchedule& sched,
                               const InpaintHook<Real>& hook = {}) {
    spec.validate(sched.steps);
    std::vector<int> ks = ddim_step_sequence(sched.steps, spec.ddim_steps);
    std::erase_if(ks, [&](int k) { return k > k_start; });
    require(!ks.empty(), "ddim_denoise_from: no steps at or below k_start");
    Tensor<Real> x0 = x;  // overwritten on the first iteration
    for (std::size_t i = 0; i < ks.size(); ++i) {
        const int k = ks[i];
        const int k_prev = (i + 1 < ks.size()) ? ks[i + 1] : 0;
        x0 = guided_predict<Real>([&](bool cond) { return denoise(x, k, cond); },
                                  spec.guidance_scale);
        if (hook) hook(x0);
        ddim_update(x, x0, k, k_prev, sched);
    }
    return x0;
}

// Full generation: unit Gaussian start at k = K, then the DDIM loop.
template <typename Real>
Tensor<Real> ddim_sample(int frames, const DenoiseFn<Real>& denoise, const SampleSpec& spec,
                         const DiffusionSchedule& sched, RngStream stream,
                         const InpaintHook<Real>& hook = {}) {
    Tensor<Real> x = Tensor<Real>::random_normal({frames, ModelMotion::kFeatDim}, stream);
    return ddim_denoise_from(std::move(x), sched.steps, denoise, spec, sched, hook);
}

// ---------------------------------------------------------------------------
// Goal inpainting: force v1 = 0 and rescale each velocity component so the
// decoded endpoint lands exactly on the goal. Components whose predicted
// displacement is near zero fall back to spreading the required offset
// uniformly over frames 2..T.

inline void goal_inpaint(ModelMotion& x, const Vec3& t1, const Vec3& goal) {
    require(goal.finite(), "goal_inpaint: goal must be finite");
    require(x.frames >= 2, "goal_inpaint: needs at least 2 frames");
    x.set_velocity(0, {0, 0, 0});
    double disp[3] = {0, 0, 0};
    for (int f = 1; f < x.frames; ++f) {
        const Vec3 v = x.velocity(f);
        disp[0] += v.x;
        disp[1] += v.y;
        disp[2] += v.z;
    }
    const double need[3] = {goal.x - t1.x, goal.y - t1.y, goal.z - t1.z};
    for (int c = 0; c < 3; ++c) {
        if (std::abs(disp[c]) < 1e-6) {
            const double per = need[c] / (x.frames - 1);
            for (int f = 1; f < x.frames; ++f)
                x.feat[static_cast<std::size_t>(f) * ModelMotion::kFeatDim + static_cast<std::size_t>(c)] = per;
        } else {
            const double lambda = need[c] / disp[c];
            for (int f = 1; f < x.frames; ++f)
                x.feat[static_cast<std::size_t>(f) * ModelMotion::kFeatDim + static_cast<std::size_t>(c)] *= lambda;
        }
    }
}

// Same arithmetic on a Real tensor, for per-step use inside the sampler.
template <typename Real>
void goal_inpaint_tensor(Tensor<Real>& x, const Vec3& t1, const Vec3& goal) {
    const int frames = x.rows();
    const int w = x.cols();
    for (int c = 0; c < 3; ++c) x.at(0, c) = Real(0);
    for (int c = 0; c < 3; ++c) {
        double disp = 0;
        for (int f = 1; f < frames; ++f) disp += static_cast<double>(x.at(f, c));
        const double need = (c == 0 ? goal.x - t1.x : c == 1 ? goal.y - t1.y : goal.z - t1.z);
        if (std::abs(disp) < 1e-6) {
            const Real per = static_cast<Real>(need / (frames - 1));
            for (int f = 1; f < frames; ++f) x.at(f, c) = per;
        } else {
            const Real lambda = static_cast<Real>(need / disp);
            for (int f = 1; f < frames; ++f) x.at(f, c) *= lambda;
        }
    }
    (void)w;
}

}  // namespace pedgen
