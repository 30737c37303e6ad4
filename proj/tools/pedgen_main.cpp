// pedgen: context-aware pedestrian movement generation on synthetic scenes.
// Subcommands: synth, train, filter, sample, stitch, eval, export.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "pedgen/config.hpp"
#include "pedgen/io.hpp"
#include "pedgen/metrics.hpp"
#include "pedgen/sampler.hpp"
#include "pedgen/synth.hpp"
#include "pedgen/threads.hpp"
#include "pedgen/train.hpp"

namespace fs = std::filesystem;
using namespace pedgen;

namespace {

using Real = float;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> sets;
    std::string out_dir = ".";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key = value config file");
    cmd->add_option("--set", args.sets, "override a config key (key=value, repeatable)");
    cmd->add_option("--out", args.out_dir, "output directory")->required();
}

RunConfig resolve_config(const CommonArgs& args,
                         std::vector<std::pair<std::string, std::string>> extra = {}) {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const std::string& s : args.sets) {
        const std::size_t eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
        overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    for (auto& kv : extra) overrides.push_back(std::move(kv));
    return RunConfig::load(args.config_path, overrides);
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_text_file((fs::path(out_dir) / "config.txt").string(), cfg.echo());
}

VoxelGeometry voxel_geometry(const RunConfig& cfg) {
    VoxelGeometry g;
    g.dims = {cfg.voxel_nx, cfg.voxel_ny, cfg.voxel_nz};
    g.cell = {cfg.voxel_cx, cfg.voxel_cy, cfg.voxel_cz};
    return g;
}

DenoiserConfig model_config(const RunConfig& cfg) {
    DenoiserConfig m;
    m.blocks = cfg.model_blocks;
    m.latent_dim = cfg.model_dim;
    m.heads = cfg.model_heads;
    m.max_frames = cfg.frames;
    m.voxel = voxel_geometry(cfg);
    m.validate();
    return m;
}

TrainOptions train_options(const RunConfig& cfg) {
    TrainOptions opt;
    opt.epochs = cfg.epochs;
    opt.batch = cfg.batch;
    opt.lr = cfg.lr;
    opt.lr_decay = cfg.lr_decay;
    opt.lr_decay_epochs = cfg.lr_decay_epochs;
    opt.weight_decay = cfg.weight_decay;
    opt.adam_beta1 = cfg.adam_beta1;
    opt.adam_beta2 = cfg.adam_beta2;
    opt.adam_eps = cfg.adam_eps;
    opt.grad_clip = cfg.grad_clip;
    opt.cond_drop = cfg.cond_drop;
    opt.goal_drop = cfg.goal_drop;
    opt.scene_drop = cfg.scene_drop;
    opt.human_drop = cfg.human_drop;
    opt.weights = LossWeights{cfg.w_rec, cfg.w_traj, cfg.w_geo};
    opt.augment_rotation = cfg.augment_rotation;
    return opt;
}

// ----------------------------------------------------------------- commands

int cmd_synth(const CommonArgs& common) {
    const RunConfig cfg = resolve_config(common);
    echo_config(cfg, common.out_dir);
    RngStream root(cfg.seed);
    const VoxelGeometry geom = voxel_geometry(cfg);

    std::vector<Scene> scenes;
    scenes.reserve(static_cast<std::size_t>(cfg.scenes));
    for (int s = 0; s < cfg.scenes; ++s)
        scenes.push_back(generate_scene(random_scene_spec(root.split("scene").split(static_cast<std::uint64_t>(s)))));

    std::vector<LabelRecord> records(static_cast<std::size_t>(cfg.records));
    parallel_for(cfg.records, [&](int i) {
        const Scene& scene = scenes[static_cast<std::size_t>(i % cfg.scenes)];
        char id[32];
        std::snprintf(id, sizeof(id), "rec_%06d", i);
        RngStream rs = root.split("traj").split(static_cast<std::uint64_t>(i));
        const TrajectorySpec ts = sample_trajectory_spec(scene, cfg.frames, cfg.fps, rs);
        records[static_cast<std::size_t>(i)] =
            generate_trajectory(scene, ts, cfg.frames, cfg.fps, id, geom);
    });

    // Validation split comes first so it stays fixed while the training set
    // is perturbed (partial masks, anomaly injection).
    const int val_count = static_cast<int>(std::llround(cfg.val_fraction * cfg.records));
    std::vector<LabelRecord> val(records.end() - val_count, records.end());
    std::vector<LabelRecord> train(records.begin(), records.end() - val_count);

    if (cfg.partial_fraction > 0) {
        RngStream ps = root.split("partial");
        const int n_partial = static_cast<int>(std::llround(cfg.partial_fraction *
                                                            static_cast<double>(train.size())));
        for (int i = 0; i < n_partial; ++i) {
            LabelRecord& rec = train[static_cast<std::size_t>(ps.below(train.size()))];
            const int len = cfg.min_mask_frames +
                            static_cast<int>(ps.below(static_cast<std::uint64_t>(
                                std::max(1, cfg.frames - cfg.min_mask_frames))));
            const int start = static_cast<int>(ps.below(static_cast<std::uint64_t>(
                std::max(1, cfg.frames - len + 1))));
            std::set<int> present;
            for (int f = start; f < start + len && f < cfg.frames; ++f) present.insert(f + 1);
            rec.motion.mask = make_partial_mask(present, cfg.frames);
        }
    }

    json injected = json::array();
    if (cfg.inject_fraction > 0) {
        auto [corrupted, ids] = inject_anomalies(std::move(train), cfg.inject_fraction,
                                                 anomaly_mode_from_string(cfg.inject_mode),
                                                 root.split("inject"));
        train = std::move(corrupted);
        for (const std::string& id : ids) injected.push_back(id);
    }

    write_records(train, (fs::path(common.out_dir) / "train.jsonl").string(), cfg.fps);
    write_records(val, (fs::path(common.out_dir) / "val.jsonl").string(), cfg.fps);
    write_text_file((fs::path(common.out_dir) / "injected.json").string(), injected.dump());
    std::cout << "synth: wrote " << train.size() << " training and " << val.size()
              << " validation records to " << common.out_dir << "\n";
    return 0;
}

int cmd_train(const CommonArgs& common, const std::string& data_path, const std::string& init_ckpt,
              bool no_context) {
    const RunConfig cfg = resolve_config(common);
    echo_config(cfg, common.out_dir);
    DatasetMeta meta;
    std::vector<LabelRecord> records = read_records(data_path, &meta);
    std::erase_if(records, [&](const LabelRecord& r) {
        return !meets_min_frames(r.motion.mask, cfg.min_mask_frames);
    });
    if (records.empty()) throw DataError("train: no records meet the minimum-frame policy");

    const DenoiserConfig mc = model_config(cfg);
    DenoiserModel<Real> model(mc);
    const DiffusionSchedule sched = DiffusionSchedule::cosine(cfg.k_steps);

    TrainOptions opt = train_options(cfg);
    opt.use_context = !no_context;
    opt.loss_csv = (fs::path(common.out_dir) / "loss.csv").string();

    ParamMap<Real> params;
    if (!init_ckpt.empty()) {
        auto [header, loaded] = load_checkpoint<Real>(init_ckpt);
        if (header.model.latent_dim != mc.latent_dim || header.model.blocks != mc.blocks)
            throw CheckpointError("train: checkpoint model does not match the configured model");
        params = std::move(loaded);
    }
    params = train_denoiser(model, sched, records, opt, RngStream(cfg.seed).split("train"),
                            std::move(params));

    CheckpointHeader header;
    header.model = mc;
    header.k_steps = cfg.k_steps;
    header.fps = meta.fps;
    header.frames = cfg.frames;
    save_checkpoint((fs::path(common.out_dir) / "checkpoint.pgck").string(), header, params);
    std::cout << "train: checkpoint written to " << common.out_dir << "\n";
    return 0;
}

int cmd_filter(const CommonArgs& common, const std::string& data_path) {
    const RunConfig cfg = resolve_config(common);
    echo_config(cfg, common.out_dir);
    DatasetMeta meta;
    std::vector<LabelRecord> records = read_records(data_path, &meta);

    const DenoiserConfig mc = model_config(cfg);
    DenoiserModel<Real> model(mc);
    const DiffusionSchedule sched = DiffusionSchedule::cosine(cfg.k_steps);

    FilterPolicy policy;
    policy.noising_depth = std::max(1, static_cast<int>(std::llround(cfg.filter_depth_frac * cfg.k_steps)));
    policy.threshold = cfg.filter_threshold;
    policy.iterations = cfg.filter_iterations;
    policy.mode = cfg.filter_threshold_mode == "quantile" ? ThresholdMode::quantile
                                                          : ThresholdMode::absolute;
    policy.quantile = cfg.filter_quantile;
    policy.ddim_steps = cfg.ddim_steps;

    TrainOptions opt = train_options(cfg);
    opt.use_context = false;  // the filter model is trained without context
    opt.epochs = cfg.filter_epochs;

    ParamMap<Real> carried;
    auto train_fn = [&](const std::vector<LabelRecord>& kept, int iteration) {
        RngStream ts = RngStream(cfg.seed).split("filter-train").split(static_cast<std::uint64_t>(
            cfg.filter_from_scratch ? iteration : 0));
        ParamMap<Real> start_from =
            (cfg.filter_from_scratch || iteration == 1) ? ParamMap<Real>{} : carried;
        carried = train_denoiser(model, sched, kept, opt, ts, std::move(start_from));
        return carried;
    };

    FilterResult<Real> result = filter_iterate<Real>(std::move(records), model, sched, policy,
                                                     RngStream(cfg.seed).split("filter"), train_fn);

    write_records(result.kept, (fs::path(common.out_dir) / "kept.jsonl").string(), meta.fps);
    write_verdicts(result.kept, result.dropped,
                   (fs::path(common.out_dir) / "verdicts.jsonl").string());
    json summary;
    summary["kept"] = result.kept.size();
    summary["dropped"] = result.dropped.size();
    for (const auto& it : result.iterations)
        summary["iterations"].push_back(
            {{"iteration", it.iteration}, {"threshold", it.threshold}, {"dropped", it.dropped}});
    write_text_file((fs::path(common.out_dir) / "filter_summary.json").string(), summary.dump(2));
    std::cout << "filter: kept " << result.kept.size() << ", dropped " << result.dropped.size()
              << "\n";
    return 0;
}

int cmd_sample(const CommonArgs& common, const std::string& data_path, const std::string& ckpt) {
    const RunConfig cfg = resolve_config(common);
    echo_config(cfg, common.out_dir);
    auto [header, params] = load_checkpoint<Real>(ckpt);
    DenoiserModel<Real> model(header.model);
    const DiffusionSchedule sched = DiffusionSchedule::cosine(header.k_steps);
    const Sampler<Real> sampler(model, params, sched);

    DatasetMeta meta;
    const std::vector<LabelRecord> records = read_records(data_path, &meta);
    if (records.empty()) throw DataError("sample: empty dataset");

    SampleSpec spec;
    spec.ddim_steps = cfg.ddim_steps;
    spec.guidance_scale = cfg.guidance_scale;

    const int per = cfg.samples_per_record;
    std::vector<PredictionRecord> preds(records.size() * static_cast<std::size_t>(per));
    RngStream root(cfg.seed);
    parallel_for(static_cast<int>(preds.size()), [&](int task) {
        const int ri = task / per;
        const int si = task % per;
        const LabelRecord& rec = records[static_cast<std::size_t>(ri)];
        GenerationContext ctx = rec.context;
        ctx.use_scene = cfg.use_scene;
        ctx.use_human = cfg.use_human;
        if (!cfg.use_goal) ctx.goal.reset();
        RngStream rs = root.split("sample").split(rec.stream_lane()).split(static_cast<std::uint64_t>(si));
        const ModelMotion mm = sampler.sample(ctx, rec.motion.frames(), spec, rs);
        PredictionRecord& out = preds[static_cast<std::size_t>(task)];
        out.record_id = rec.id;
        out.sample = si;
        out.motion = decode_model_space(mm, ctx.start);
    });
    write_predictions(preds, (fs::path(common.out_dir) / "predictions.jsonl").string(), meta.fps);
    std::cout << "sample: wrote " << preds.size() << " movements\n";
    return 0;
}

int cmd_stitch(const CommonArgs& common, const std::string& data_path, const std::string& ckpt,
               bool also_naive) {
    const RunConfig cfg = resolve_config(common);
    echo_config(cfg, common.out_dir);
    auto [header, params] = load_checkpoint<Real>(ckpt);
    DenoiserModel<Real> model(header.model);
    const DiffusionSchedule sched = DiffusionSchedule::cosine(header.k_steps);
    const Sampler<Real> sampler(model, params, sched);

    DatasetMeta meta;
    const std::vector<LabelRecord> records = read_records(data_path, &meta);
    if (records.empty()) throw DataError("stitch: empty dataset");
    const LabelRecord& rec = records.front();

    GenerationContext ctx = rec.context;
    // The local grid is anchored at the original start and does not follow
    // the walker across intervals; stitching runs on goal/human conditioning.
    ctx.use_scene = false;
    ctx.use_human = cfg.use_human;
    ctx.goal.reset();

    std::vector<GenerationContext> ctxs(static_cast<std::size_t>(cfg.stitch_intervals), ctx);
    std::vector<std::optional<Vec3>> goal_offsets;
    if (cfg.use_goal && rec.context.goal) {
        const Vec3 offset = *rec.context.goal - rec.context.start;
        goal_offsets.assign(static_cast<std::size_t>(cfg.stitch_intervals), offset);
    }

    SampleSpec spec;
    spec.ddim_steps = cfg.ddim_steps;
    spec.guidance_scale = cfg.guidance_scale;

    RngStream root(cfg.seed);
    const Motion stitched =
        sampler.stitch_long_horizon(ctxs, rec.motion.frames(), cfg.stitch_overlap, spec,
                                    root.split("stitch"), cfg.stitch_renoise_frac, goal_offsets);
    std::vector<PredictionRecord> out;
    out.push_back({rec.id + "_stitched", 0, stitched});
    if (also_naive) {
        const Motion naive =
            sampler.naive_concat(ctxs, rec.motion.frames(), spec, root.split("naive"));
        out.push_back({rec.id + "_naive", 0, naive});
    }
    write_predictions(out, (fs::path(common.out_dir) / "stitched.jsonl").string(), meta.fps);
    std::cout << "stitch: wrote " << out.size() << " long-horizon movements ("
              << stitched.frames() << " frames)\n";
    return 0;
}

int cmd_eval(const CommonArgs& common, const std::string& gt_path, const std::string& pred_path) {
    const RunConfig cfg = resolve_config(common);
    echo_config(cfg, common.out_dir);
    DatasetMeta meta;
    const std::vector<LabelRecord> records = read_records(gt_path, &meta);
    const std::vector<PredictionRecord> preds = read_predictions(pred_path);
    if (records.empty()) throw DataError("eval: empty ground-truth dataset");
    if (preds.empty()) throw DataError("eval: empty prediction set");

    std::map<std::string, std::vector<const PredictionRecord*>> by_record;
    for (const PredictionRecord& p : preds) by_record[p.record_id].push_back(&p);

    MetricReport rep;
    double goal_err_max = 0;
    bool any_goal = false;
    long cr_seq_hits = 0, cr_frame_hits = 0, cr_frames_total = 0;
    long ffr_seq_hits = 0, ffr_frame_hits = 0, ffr_frames_total = 0;
    long total_preds = 0;
    int evaluated = 0;

    for (const LabelRecord& rec : records) {
        auto it = by_record.find(rec.id);
        if (it == by_record.end()) continue;
        const Skeleton skel = skeleton_from_shape(rec.context.shape);
        std::vector<Motion> motions;
        motions.reserve(it->second.size());
        for (const PredictionRecord* p : it->second) motions.push_back(p->motion);

        const auto d = displacement_errors(rec.motion, motions, skel);
        rep.made += d.made;
        rep.aade += d.aade;
        rep.mfde += d.mfde;
        rep.afde += d.afde;

        const auto c = collision_rate(motions, rec.context.scene, skel);
        const auto f = foot_floating_rate(
            motions, [&](double, double) { return rec.ground_y; }, skel, cfg.ffr_threshold);
        cr_seq_hits += static_cast<long>(std::llround(c.per_sequence * static_cast<double>(motions.size())));
        ffr_seq_hits += static_cast<long>(std::llround(f.per_sequence * static_cast<double>(motions.size())));
        const long frames_here = static_cast<long>(motions.size()) * rec.motion.frames();
        cr_frame_hits += static_cast<long>(std::llround(c.per_frame * static_cast<double>(frames_here)));
        ffr_frame_hits += static_cast<long>(std::llround(f.per_frame * static_cast<double>(frames_here)));
        cr_frames_total += frames_here;
        ffr_frames_total += frames_here;
        total_preds += static_cast<long>(motions.size());

        if (rec.context.goal && cfg.use_goal) {
            any_goal = true;
            for (const Motion& m : motions)
                goal_err_max = std::max(goal_err_max, (m.trans.back() - *rec.context.goal).norm());
        }
        rep.samples_per_datum = static_cast<int>(motions.size());
        ++evaluated;
    }
    if (evaluated == 0) throw DataError("eval: no prediction matches any ground-truth record id");
    rep.made /= evaluated;
    rep.aade /= evaluated;
    rep.mfde /= evaluated;
    rep.afde /= evaluated;
    rep.cr = total_preds ? static_cast<double>(cr_seq_hits) / static_cast<double>(total_preds) : 0;
    rep.ffr = total_preds ? static_cast<double>(ffr_seq_hits) / static_cast<double>(total_preds) : 0;
    rep.cr_frames = cr_frames_total ? static_cast<double>(cr_frame_hits) / static_cast<double>(cr_frames_total) : 0;
    rep.ffr_frames = ffr_frames_total ? static_cast<double>(ffr_frame_hits) / static_cast<double>(ffr_frames_total) : 0;
    if (any_goal) rep.goal_endpoint_error = goal_err_max;
    rep.data_count = evaluated;
    rep.validate();

    write_text_file((fs::path(common.out_dir) / "report.json").string(),
                    metric_report_to_json(rep).dump(2) + "\n");
    write_text_file((fs::path(common.out_dir) / "report.txt").string(), metric_report_to_text(rep));
    std::cout << metric_report_to_text(rep);
    return 0;
}

int cmd_export(const CommonArgs& common, const std::string& data_path, const std::string& pred_path) {
    const RunConfig cfg = resolve_config(common);
    (void)cfg;
    fs::create_directories(common.out_dir);
    int written = 0;
    if (!data_path.empty()) {
        for (const LabelRecord& rec : read_records(data_path)) {
            export_motion_obj(rec.motion, skeleton_from_shape(rec.context.shape),
                              (fs::path(common.out_dir) / (rec.id + ".obj")).string());
            ++written;
        }
    }
    if (!pred_path.empty()) {
        const Skeleton canon = skeleton_from_shape(ShapeParams::zero());
        for (const PredictionRecord& p : read_predictions(pred_path)) {
            char name[128];
            std::snprintf(name, sizeof(name), "%s_s%03d.obj", p.record_id.c_str(), p.sample);
            export_motion_obj(p.motion, canon, (fs::path(common.out_dir) / name).string());
            ++written;
        }
    }
    if (written == 0) throw DataError("export: nothing to export (pass --data and/or --pred)");
    std::cout << "export: wrote " << written << " OBJ sequences\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pedgen: context-aware pedestrian movement generation"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, filter_args, sample_args, stitch_args, eval_args,
        export_args;
    std::string train_data, train_init, filter_data, sample_data, sample_ckpt, stitch_data,
        stitch_ckpt, eval_gt, eval_pred, export_data, export_pred;
    bool train_no_context = false, stitch_naive = false;

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    add_common(synth, synth_args);

    CLI::App* train = app.add_subcommand("train", "train the denoiser");
    add_common(train, train_args);
    train->add_option("--data", train_data, "training dataset (JSONL)")->required();
    train->add_option("--init", train_init, "checkpoint to fine-tune from");
    train->add_flag("--no-context", train_no_context, "train without any conditioning");

    CLI::App* filter = app.add_subcommand("filter", "iterative anomaly label filtering");
    add_common(filter, filter_args);
    filter->add_option("--data", filter_data, "dataset to filter (JSONL)")->required();

    CLI::App* sample = app.add_subcommand("sample", "generate movements for dataset contexts");
    add_common(sample, sample_args);
    sample->add_option("--data", sample_data, "context source dataset (JSONL)")->required();
    sample->add_option("--ckpt", sample_ckpt, "trained checkpoint")->required();

    CLI::App* stitch = app.add_subcommand("stitch", "long-horizon generation by stitching");
    add_common(stitch, stitch_args);
    stitch->add_option("--data", stitch_data, "context source dataset (JSONL)")->required();
    stitch->add_option("--ckpt", stitch_ckpt, "trained checkpoint")->required();
    stitch->add_flag("--naive", stitch_naive, "also write a naive concatenation baseline");

    CLI::App* eval = app.add_subcommand("eval", "evaluate predictions against ground truth");
    add_common(eval, eval_args);
    eval->add_option("--gt", eval_gt, "ground-truth dataset (JSONL)")->required();
    eval->add_option("--pred", eval_pred, "predictions (JSONL)")->required();

    CLI::App* exp = app.add_subcommand("export", "export motions as OBJ point sequences");
    add_common(exp, export_args);
    exp->add_option("--data", export_data, "dataset to export (JSONL)");
    exp->add_option("--pred", export_pred, "predictions to export (JSONL)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(synth_args);
        if (train->parsed()) return cmd_train(train_args, train_data, train_init, train_no_context);
        if (filter->parsed()) return cmd_filter(filter_args, filter_data);
        if (sample->parsed()) return cmd_sample(sample_args, sample_data, sample_ckpt);
        if (stitch->parsed()) return cmd_stitch(stitch_args, stitch_data, stitch_ckpt, stitch_naive);
        if (eval->parsed()) return cmd_eval(eval_args, eval_gt, eval_pred);
        if (exp->parsed()) return cmd_export(export_args, export_data, export_pred);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 3;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return 4;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    }
    return 1;
}
