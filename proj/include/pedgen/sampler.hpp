#pragma once

#include <utility>
#include <vector>

#include "pedgen/diffusion.hpp"

namespace pedgen {

// Generation front end: wires the trained denoiser into the DDIM loop,
// applies goal inpainting inside the loop, and handles long-horizon
// stitching.
template <typename Real>
class Sampler {
public:
    Sampler(const DenoiserModel<Real>& model, const ParamMap<Real>& params,
            const DiffusionSchedule& sched)
        : model_(model), params_(params), sched_(sched) {}

    const DiffusionSchedule& schedule() const { return sched_; }

    DenoiseFn<Real> make_denoise_fn(const ConditionEmbedding<Real>& cond,
                                    std::vector<std::uint8_t> mask) const {
        const ConditionEmbedding<Real> null_c = model_.null_condition(params_);
        return [this, cond, null_c, mask = std::move(mask)](const Tensor<Real>& x, int k,
                                                            bool conditional) {
            return model_.denoise(params_, x, k, conditional ? cond : null_c, mask);
        };
    }

    // One generated movement. Goal inpainting is applied to every clean
    // prediction inside the loop and once more on the final motion in double
    // precision, so the decoded endpoint matches the goal exactly.
    ModelMotion sample(const GenerationContext& ctx, int frames, const SampleSpec& spec,
                       RngStream stream) const {
        ctx.validate();
        const ConditionEmbedding<Real> cond = model_.encode_context(params_, ctx);
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(frames), 1);
        DenoiseFn<Real> fn = make_denoise_fn(cond, mask);
        InpaintHook<Real> hook;
        if (ctx.goal) {
            const Vec3 t1 = ctx.start, goal = *ctx.goal;
            hook = [t1, goal](Tensor<Real>& x0) { goal_inpaint_tensor(x0, t1, goal); };
        }
        Tensor<Real> x0 = ddim_sample<Real>(frames, fn, spec, sched_, stream.split("noise"), hook);
        ModelMotion mm = ModelMotion::from_tensor(x0, {});
        if (ctx.goal) goal_inpaint(mm, ctx.start, *ctx.goal);
        return mm;
    }

    // Long-horizon generation. Intervals are generated sequentially; each
    // interval's first `overlap` frames are pinned to the previous interval's
    // tail during sampling, then the interior of the shared window is
    // re-noised to a fraction of K and denoised again with everything else
    // held fixed. goal_offsets, when given, set each interval's goal relative
    // to that interval's (chained) start; contexts' own absolute goals are
    // only meaningful for the first interval and are ignored otherwise.
    Motion stitch_long_horizon(const std::vector<GenerationContext>& ctxs, int frames,
                               int overlap, const SampleSpec& spec, RngStream stream,
                               double renoise_frac = 0.25,
                               const std::vector<std::optional<Vec3>>& goal_offsets = {}) const {
        require(!ctxs.empty(), "stitch_long_horizon: needs at least one interval");
        require(overlap >= 0 && overlap < frames,
                "stitch_long_horizon: overlap must be smaller than the interval length");
        require(goal_offsets.empty() || goal_offsets.size() == ctxs.size(),
                "stitch_long_horizon: one goal offset per interval");

        std::vector<ModelMotion> parts;
        std::vector<Vec3> starts;
        for (std::size_t i = 0; i < ctxs.size(); ++i) {
            RngStream is = stream.split(i);
            if (i == 0) {
                GenerationContext first = ctxs[0];
                if (!goal_offsets.empty() && goal_offsets[0])
                    first.goal = first.start + *goal_offsets[0];
                parts.push_back(sample(first, frames, spec, is));
                starts.push_back(first.start);
                continue;
            }
            const ModelMotion& prev = parts.back();
            const Motion prev_decoded = decode_model_space(prev, starts.back());
            const int base = frames - overlap;  // first shared frame in prev
            const Vec3 t1 = overlap > 0
                                ? prev_decoded.trans[static_cast<std::size_t>(base)]
                                : prev_decoded.trans.back();

            // Shared-window content in this interval's model space.
            Tensor<Real> fixed({std::max(overlap, 1), ModelMotion::kFeatDim});
            if (overlap > 0) {
                for (int f = 0; f < overlap; ++f) {
                    const double* src = prev.frame(base + f);
                    for (int j = 0; j < ModelMotion::kFeatDim; ++j)
                        fixed.at(f, j) = static_cast<Real>(src[j]);
                    if (f == 0)
                        for (int c = 0; c < 3; ++c) fixed.at(0, c) = Real(0);  // v1 = 0
                }
            }

            GenerationContext ctx = ctxs[i];
            ctx.start = t1;
            ctx.goal.reset();
            if (!goal_offsets.empty() && goal_offsets[i]) ctx.goal = t1 + *goal_offsets[i];
            ctx.validate();
            const ConditionEmbedding<Real> cond = model_.encode_context(params_, ctx);
            std::vector<std::uint8_t> mask(static_cast<std::size_t>(frames), 1);
            DenoiseFn<Real> fn = make_denoise_fn(cond, mask);

            const std::optional<Vec3> goal = ctx.goal;
            InpaintHook<Real> hook = [&, t1](Tensor<Real>& x0) {
                if (goal) goal_inpaint_tensor(x0, t1, *goal);
                for (int f = 0; f < overlap; ++f)
                    for (int j = 0; j < ModelMotion::kFeatDim; ++j) x0.at(f, j) = fixed.at(f, j);
            };
            Tensor<Real> x0 = ddim_sample<Real>(frames, fn, spec, sched_, is.split("noise"), hook);

            // Transition smoothing: re-noise the interior of the shared
            // window and denoise with the surrounding frames pinned.
            if (overlap >= 2 && renoise_frac > 0) {
                const int k_mid = std::max(
                    1, static_cast<int>(std::llround(sched_.steps * renoise_frac)));
                RngStream ns = is.split("transition");
                Tensor<Real> noisy = x0;
                const Real sa = static_cast<Real>(std::sqrt(sched_.at(k_mid)));
                const Real sn = static_cast<Real>(std::sqrt(1.0 - sched_.at(k_mid)));
                for (int f = 1; f < overlap; ++f)
                    for (int j = 0; j < ModelMotion::kFeatDim; ++j)
                        noisy.at(f, j) = sa * x0.at(f, j) + sn * static_cast<Real>(ns.normal());
                const Tensor<Real> frozen = x0;
                InpaintHook<Real> freeze = [&](Tensor<Real>& pred) {
                    for (int f = 0; f < frames; ++f) {
                        if (f >= 1 && f < overlap) continue;
                        for (int j = 0; j < ModelMotion::kFeatDim; ++j)
                            pred.at(f, j) = frozen.at(f, j);
                    }
                };
                x0 = ddim_denoise_from(std::move(noisy), k_mid, fn, spec, sched_, freeze);
            }

            ModelMotion mm = ModelMotion::from_tensor(x0, {});
            parts.push_back(std::move(mm));
            starts.push_back(t1);
        }

        // Concatenate with the shared windows deduplicated: every interval
        // after the first replaces the previous interval's last `overlap`
        // frames with its own (smoothed) copy.
        Motion out;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const Motion m = decode_model_space(parts[i], starts[i]);
            // The shared window belongs to the later (smoothed) interval, so
            // every interval but the last stops `overlap` frames early.
            const int keep_to = (i + 1 < parts.size()) ? frames - overlap : frames;
            for (int f = 0; f < keep_to; ++f) {
                out.trans.push_back(m.trans[static_cast<std::size_t>(f)]);
                out.root_orient.push_back(m.root_orient[static_cast<std::size_t>(f)]);
                out.body_pose.push_back(m.body_pose[static_cast<std::size_t>(f)]);
                out.mask.push_back(1);
            }
        }
        return out;
    }

    // Baseline for comparisons: independent intervals chained end to start,
    // no overlap constraint, no smoothing.
    Motion naive_concat(const std::vector<GenerationContext>& ctxs, int frames,
                        const SampleSpec& spec, RngStream stream) const {
        require(!ctxs.empty(), "naive_concat: needs at least one interval");
        Motion out;
        Vec3 t1 = ctxs[0].start;
        for (std::size_t i = 0; i < ctxs.size(); ++i) {
            GenerationContext ctx = ctxs[i];
            ctx.start = t1;
            const ModelMotion mm = sample(ctx, frames, spec, stream.split(i));
            const Motion m = decode_model_space(mm, t1);
            for (int f = 0; f < frames; ++f) {
                out.trans.push_back(m.trans[static_cast<std::size_t>(f)]);
                out.root_orient.push_back(m.root_orient[static_cast<std::size_t>(f)]);
                out.body_pose.push_back(m.body_pose[static_cast<std::size_t>(f)]);
                out.mask.push_back(1);
            }
            t1 = m.trans.back();
        }
        return out;
    }

private:
    const DenoiserModel<Real>& model_;
    const ParamMap<Real>& params_;
    DiffusionSchedule sched_;
};

}  // namespace pedgen
