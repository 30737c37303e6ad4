#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "pedgen/labels.hpp"
#include "pedgen/optim.hpp"
#include "pedgen/sampler.hpp"
#include "pedgen/threads.hpp"

namespace pedgen {

struct TrainOptions {
    int epochs = 500;
    int batch = 256;
    double lr = 4e-4;
    double lr_decay = 0.9;
    int lr_decay_epochs = 75;
    double weight_decay = 1e-7;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    double cond_drop = 0.2;  // whole-condition drop (classifier-free guidance)
    double goal_drop = 0.25;
    double scene_drop = 0.25;
    double human_drop = 0.25;
    LossWeights weights;
    bool augment_rotation = true;
    bool use_context = true;  // false trains the context-free filter model
    int threads = -1;
    std::string loss_csv;  // per-epoch loss curve, empty = off

    void validate() const {
        require(epochs >= 1 && batch >= 1, "TrainOptions: epochs and batch must be positive");
        require(grad_clip > 0, "TrainOptions: grad clip must be positive");
        for (double p : {cond_drop, goal_drop, scene_drop, human_drop})
            require(p >= 0 && p <= 1, "TrainOptions: drop probabilities must be in [0,1]");
        weights.validate();
    }
};

struct EpochStats {
    int epoch = 0;
    double loss = 0, rec = 0, traj = 0, geo = 0;
    double lr = 0;
};

struct TrainStats {
    std::vector<EpochStats> epochs;
};

// Trains the denoiser on the given records. Per-sample graphs run in
// parallel; gradients are reduced in sample order, so the result does not
// depend on the thread count. Resuming from existing parameters fine-tunes.
template <typename Real>
ParamMap<Real> train_denoiser(const DenoiserModel<Real>& model, const DiffusionSchedule& sched,
                              const std::vector<LabelRecord>& records, const TrainOptions& opt,
                              RngStream stream, ParamMap<Real> params = {},
                              TrainStats* stats = nullptr) {
    opt.validate();
    require(!records.empty(), "train_denoiser: no training records");
    if (params.empty()) params = model.init_params(stream.split("init"));

    struct Prepared {
        const LabelRecord* rec;
        Skeleton skeleton;
    };
    std::vector<Prepared> prep;
    prep.reserve(records.size());
    for (const LabelRecord& r : records) {
        require(mask_true_count(r.motion.mask) >= 1, "train_denoiser: record with empty mask");
        prep.push_back({&r, skeleton_from_shape(r.context.shape)});
    }

    AdamState<Real> adam;
    adam.lr = opt.lr;
    adam.weight_decay = opt.weight_decay;
    adam.beta1 = opt.adam_beta1;
    adam.beta2 = opt.adam_beta2;
    adam.eps = opt.adam_eps;
    adam.decay_factor = opt.lr_decay;
    adam.decay_interval_epochs = opt.lr_decay_epochs;

    std::ofstream csv;
    if (!opt.loss_csv.empty()) {
        csv.open(opt.loss_csv);
        if (!csv) throw IoError("cannot open loss csv for writing: " + opt.loss_csv);
        csv << "epoch,loss,rec,traj,geo,lr\n";
    }

    const int n = static_cast<int>(records.size());
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        adam.epoch = epoch;
        RngStream eshuffle = stream.split("shuffle").split(static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[eshuffle.below(i)]);

        EpochStats es;
        es.epoch = epoch;
        es.lr = adam.current_lr();
        int samples_seen = 0;

        for (int b0 = 0; b0 < n; b0 += opt.batch) {
            const int bsz = std::min(opt.batch, n - b0);
            std::vector<ParamMap<Real>> grads(static_cast<std::size_t>(bsz));
            std::vector<LossTerms> losses(static_cast<std::size_t>(bsz));

            parallel_for(
                bsz,
                [&](int bi) {
                    const int idx = order[static_cast<std::size_t>(b0 + bi)];
                    const Prepared& pr = prep[static_cast<std::size_t>(idx)];
                    RngStream rs = stream.split("sample")
                                       .split(static_cast<std::uint64_t>(epoch))
                                       .split(static_cast<std::uint64_t>(b0 + bi));

                    // Rotation augmentation about the start position; the
                    // voxel grid turns with the movement.
                    Motion motion = pr.rec->motion;
                    GenerationContext ctx = pr.rec->context;
                    if (opt.augment_rotation) {
                        const double angle = rs.split("angle").uniform(0.0, 2.0 * kPi);
                        motion = rotate_augment(motion, {}, angle).first;
                        if (opt.use_context) ctx.scene = rotate_voxel_grid(ctx.scene, angle);
                        ctx.start = motion.trans.front();
                        if (ctx.goal) ctx.goal = motion.trans.back();
                    }

                    const ModelMotion mm = encode_model_space(motion);
                    const Tensor<Real> target = mm.to_tensor<Real>();
                    const int k = 1 + static_cast<int>(rs.split("k").below(
                                          static_cast<std::uint64_t>(sched.steps)));
                    RngStream noise_stream = rs.split("noise");
                    const Tensor<Real> noise =
                        Tensor<Real>::random_normal(target.shape(), noise_stream);
                    const Tensor<Real> x_noisy = q_sample(target, k, noise, sched);

                    // Condition dropout: whole-condition null for CFG, then
                    // independent per-factor drops.
                    RngStream ds = rs.split("drop");
                    const bool drop_all = !opt.use_context || ds.uniform() < opt.cond_drop;
                    bool use_goal = ctx.goal.has_value(), use_scene = true, use_human = true;
                    if (!drop_all) {
                        use_goal = use_goal && ds.uniform() >= opt.goal_drop;
                        use_scene = ds.uniform() >= opt.scene_drop;
                        use_human = ds.uniform() >= opt.human_drop;
                    }

                    GradientTape<Real> tape;
                    ParamLeaves<Real> leaves = make_param_leaves(tape, params);
                    TapeNode<Real> cond;
                    if (drop_all || (!use_goal && !use_scene && !use_human)) {
                        cond = model.null_condition_node(tape, leaves);
                    } else {
                        ctx.use_scene = use_scene;
                        ctx.use_human = use_human;
                        if (!use_goal) ctx.goal.reset();
                        cond = model.encode_context_node(tape, leaves, ctx);
                    }
                    auto pred = model.denoise_node(tape, leaves, tape.constant(x_noisy), k, cond,
                                                   mm.mask);
                    TapeNode<Real> rec_n, traj_n, geo_n;
                    auto loss = training_loss_node(tape, target, pred, mm.mask, pr.skeleton,
                                                   opt.weights, &rec_n, &traj_n, &geo_n);
                    // Per-frame normalization keeps the step size independent
                    // of the clip length.
                    const Real inv_frames = Real(1) / static_cast<Real>(mask_true_count(mm.mask));
                    loss = tape.mul_scalar(loss, inv_frames);
                    require_finite(static_cast<double>(loss.value()[0]), "training loss");
                    tape.backward(loss);

                    ParamMap<Real> g;
                    for (const auto& [name, leaf] : leaves) g.emplace(name, tape.grad(leaf));
                    grads[static_cast<std::size_t>(bi)] = std::move(g);
                    losses[static_cast<std::size_t>(bi)] =
                        LossTerms{static_cast<double>(loss.value()[0]),
                                  static_cast<double>(rec_n.value()[0]),
                                  static_cast<double>(traj_n.value()[0]),
                                  static_cast<double>(geo_n.value()[0])};
                },
                opt.threads);

            // Deterministic reduction in sample order.
            ParamMap<Real> batch_grads = std::move(grads[0]);
            for (int bi = 1; bi < bsz; ++bi) {
                for (auto& [name, acc] : batch_grads) {
                    const Tensor<Real>& g = grads[static_cast<std::size_t>(bi)].at(name);
                    for (std::size_t j = 0; j < acc.numel(); ++j) acc[j] += g[j];
                }
            }
            const Real inv_b = Real(1) / static_cast<Real>(bsz);
            for (auto& [name, acc] : batch_grads)
                for (std::size_t j = 0; j < acc.numel(); ++j) acc[j] *= inv_b;

            params = adam_step(params, clip_gradients(batch_grads, opt.grad_clip), adam);

            for (int bi = 0; bi < bsz; ++bi) {
                es.loss += losses[static_cast<std::size_t>(bi)].total;
                es.rec += losses[static_cast<std::size_t>(bi)].rec;
                es.traj += losses[static_cast<std::size_t>(bi)].traj;
                es.geo += losses[static_cast<std::size_t>(bi)].geo;
            }
            samples_seen += bsz;
        }

        es.loss /= samples_seen;
        es.rec /= samples_seen;
        es.traj /= samples_seen;
        es.geo /= samples_seen;
        if (stats) stats->epochs.push_back(es);
        if (csv.is_open()) {
            csv << es.epoch << ',' << es.loss << ',' << es.rec << ',' << es.traj << ',' << es.geo
                << ',' << es.lr << '\n';
        }
    }
    return params;
}

}  // namespace pedgen
