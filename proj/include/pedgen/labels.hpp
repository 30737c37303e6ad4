#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pedgen/denoiser.hpp"
#include "pedgen/diffusion.hpp"
#include "pedgen/threads.hpp"

namespace pedgen {

// Rigid transform aligning a global-frame motion with the camera frame at a
// reference timestep.
struct CameraAlignment {
    Mat3 rotation;
    Vec3 translation;
};

// R = phi_cam (phi_global)^-1, t = t_cam - R t_global. Applying the result to
// the global pose at the reference timestep reproduces the camera-frame pose.
inline CameraAlignment camera_alignment(const Mat3& phi_global, const Vec3& t_global,
                                        const Mat3& phi_camera, const Vec3& t_camera) {
    require(is_rotation(phi_global, 1e-5) && is_rotation(phi_camera, 1e-5),
            "camera_alignment: inputs must be rotations");
    CameraAlignment a;
    a.rotation = phi_camera * phi_global.transposed();
    a.translation = t_camera - a.rotation * t_global;
    return a;
}

// Every translation goes through R t + t0, every root orientation is
// left-composed with R; body poses are local rotations and stay untouched.
inline Motion apply_alignment(const CameraAlignment& a, const Motion& m) {
    require(is_rotation(a.rotation, 1e-5), "apply_alignment: rotation must be orthonormal");
    Motion out = m;
    for (int t = 0; t < m.frames(); ++t) {
        out.trans[static_cast<std::size_t>(t)] = a.rotation * m.trans[static_cast<std::size_t>(t)] + a.translation;
        out.root_orient[static_cast<std::size_t>(t)] = a.rotation * m.root_orient[static_cast<std::size_t>(t)];
    }
    return out;
}

// Boolean availability mask from a set of 1-based present frame indices.
inline std::vector<std::uint8_t> make_partial_mask(const std::set<int>& present_frames, int frames) {
    require(!present_frames.empty(), "make_partial_mask: empty frame set");
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(frames), 0);
    for (int idx : present_frames) {
        require(idx >= 1 && idx <= frames, "make_partial_mask: index outside [1, T]");
        mask[static_cast<std::size_t>(idx) - 1] = 1;
    }
    return mask;
}

inline int mask_true_count(const std::vector<std::uint8_t>& mask) {
    int n = 0;
    for (std::uint8_t b : mask) n += b ? 1 : 0;
    return n;
}

// Training policy: partial labels need a minimum number of annotated frames.
inline bool meets_min_frames(const std::vector<std::uint8_t>& mask, int min_frames = 30) {
    return mask_true_count(mask) >= min_frames;
}

enum class FilterVerdict : std::uint8_t { kept = 0, dropped = 1 };

// One dataset sample: motion plus its condition bundle and filter metadata.
struct LabelRecord {
    std::string id;
    Motion motion;
    GenerationContext context;
    std::optional<double> anomaly_score;
    FilterVerdict verdict = FilterVerdict::kept;
    int dropped_at_iteration = 0;  // 0 = never dropped
    double ground_y = 0.0;         // synthetic scenes: ground plane height

    std::uint64_t stream_lane() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : id) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }
};

enum class ThresholdMode : std::uint8_t { absolute = 0, quantile = 1 };

struct FilterPolicy {
    int noising_depth = 500;  // K/2 for the paper's K = 1000
    double threshold = 10.0;
    int iterations = 2;
    ThresholdMode mode = ThresholdMode::absolute;
    double quantile = 0.95;  // threshold calibration in quantile mode
    int ddim_steps = 100;    // sampler subsequence the reverse path reuses

    void validate(int k_steps) const {
        require(noising_depth >= 1 && noising_depth <= k_steps,
                "FilterPolicy: noising depth must lie in [1, K]");
        require(threshold > 0, "FilterPolicy: threshold must be positive");
        require(iterations >= 1, "FilterPolicy: needs at least one iteration");
        require(quantile > 0 && quantile < 1, "FilterPolicy: quantile must be in (0,1)");
    }
};

// Reconstruction-based anomaly score: noise the record's model-space motion
// to the policy depth with a per-record stream, denoise it back through the
// DDIM subsequence restricted to steps below the depth (no context, matching
// a context-free filter model), and sum the squared feature error over the
// unmasked frames.
template <typename Real>
double anomaly_score(const LabelRecord& rec, const DenoiserModel<Real>& model,
                     const ParamMap<Real>& params, const DiffusionSchedule& sched,
                     const FilterPolicy& policy, const RngStream& base_stream) {
    policy.validate(sched.steps);
    const ModelMotion original = encode_model_space(rec.motion);
    RngStream stream = base_stream.split("anomaly").split(rec.stream_lane());
    ModelMotion noisy = original;
    {
        const double ab = sched.at(policy.noising_depth);
        const double sa = std::sqrt(ab), sn = std::sqrt(1.0 - ab);
        for (double& v : noisy.feat) v = sa * v + sn * stream.normal();
    }
    const ConditionEmbedding<Real> null_c = model.null_condition(params);
    DenoiseFn<Real> fn = [&](const Tensor<Real>& x, int k, bool) {
        return model.denoise(params, x, k, null_c, original.mask);
    };
    SampleSpec spec;
    spec.ddim_steps = policy.ddim_steps;
    spec.guidance_scale = 1.0;
    const Tensor<Real> rebuilt_t =
        ddim_denoise_from(noisy.to_tensor<Real>(), policy.noising_depth, fn, spec, sched);
    double score = 0;
    for (int f = 0; f < original.frames; ++f) {
        if (!original.mask[static_cast<std::size_t>(f)]) continue;
        const double* a = original.frame(f);
        for (int j = 0; j < ModelMotion::kFeatDim; ++j) {
            const double d = a[j] - static_cast<double>(rebuilt_t.at(f, j));
            score += d * d;
        }
    }
    require_finite(score, "anomaly_score");
    return score;
}

struct FilterIterationReport {
    int iteration = 0;
    double threshold = 0;
    int dropped = 0;
};

template <typename Real>
struct FilterResult {
    std::vector<LabelRecord> kept;
    std::vector<LabelRecord> dropped;
    std::vector<FilterIterationReport> iterations;
    ParamMap<Real> final_params;  // model trained on the final kept set
};

// Optional per-iteration threshold calibration: receives the fresh scores
// (parallel to the kept records) and returns the drop threshold. When absent
// the policy's absolute or quantile rule applies.
using ThresholdFn = std::function<double(const std::vector<double>& scores,
                                         const std::vector<LabelRecord>& kept, int iteration)>;

// Iterative anomaly filtering: train on the kept set, score every kept
// record, drop those above the threshold, repeat. The kept set never grows.
// train_fn(records, iteration) returns model parameters trained (or
// fine-tuned) on those records.
template <typename Real>
FilterResult<Real> filter_iterate(
    std::vector<LabelRecord> records, const DenoiserModel<Real>& model,
    const DiffusionSchedule& sched, const FilterPolicy& policy, const RngStream& stream,
    const std::function<ParamMap<Real>(const std::vector<LabelRecord>&, int)>& train_fn,
    int threads = -1, const ThresholdFn& threshold_fn = {}) {
    require(!records.empty(), "filter_iterate: no records");
    policy.validate(sched.steps);

    FilterResult<Real> result;
    result.kept = std::move(records);
    for (int iter = 1; iter <= policy.iterations; ++iter) {
        result.final_params = train_fn(result.kept, iter);

        std::vector<double> scores(result.kept.size());
        parallel_for(
            static_cast<int>(result.kept.size()),
            [&](int i) {
                scores[static_cast<std::size_t>(i)] =
                    anomaly_score(result.kept[static_cast<std::size_t>(i)], model,
                                  result.final_params, sched, policy, stream);
            },
            threads);

        double threshold = policy.threshold;
        if (threshold_fn) {
            threshold = threshold_fn(scores, result.kept, iter);
        } else if (policy.mode == ThresholdMode::quantile) {
            std::vector<double> sorted = scores;
            std::sort(sorted.begin(), sorted.end());
            const std::size_t idx = std::min(
                sorted.size() - 1,
                static_cast<std::size_t>(policy.quantile * static_cast<double>(sorted.size())));
            threshold = sorted[idx];
        }

        std::vector<LabelRecord> next;
        int dropped_now = 0;
        for (std::size_t i = 0; i < result.kept.size(); ++i) {
            LabelRecord& rec = result.kept[i];
            rec.anomaly_score = scores[i];
            if (scores[i] > threshold) {
                rec.verdict = FilterVerdict::dropped;
                rec.dropped_at_iteration = iter;
                result.dropped.push_back(std::move(rec));
                ++dropped_now;
            } else {
                next.push_back(std::move(rec));
            }
        }
        result.kept = std::move(next);
        result.iterations.push_back({iter, threshold, dropped_now});
        if (result.kept.empty())
            throw DataError("filter_iterate: every record dropped; threshold too aggressive");
    }
    return result;
}

}  // namespace pedgen
