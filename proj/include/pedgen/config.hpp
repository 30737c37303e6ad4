#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pedgen/common.hpp"

namespace pedgen {

// Every tunable of the pipeline as a key=value config. Defaults mirror the
// reference training recipe; desk-scale runs override model size, epochs and
// sampling counts through a config file or CLI flags. Precedence: defaults,
// then file, then flags.
struct RunConfig {
    std::uint64_t seed = 0;

    // diffusion
    int k_steps = 1000;
    int ddim_steps = 100;
    double guidance_scale = 1.0;

    // conditioning dropout
    double cond_drop = 0.2;
    double goal_drop = 0.25;
    double scene_drop = 0.25;
    double human_drop = 0.25;

    // loss
    double w_rec = 1.0;
    double w_traj = 1.0;
    double w_geo = 1.0;

    // optimizer
    double lr = 4e-4;
    double lr_decay = 0.9;
    int lr_decay_epochs = 75;
    double weight_decay = 1e-7;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double grad_clip = 1.0;
    int epochs = 500;
    int batch = 256;
    bool augment_rotation = true;

    // motion/data
    int frames = 60;
    double fps = 30.0;
    int min_mask_frames = 30;

    // model
    int model_blocks = 8;
    int model_dim = 512;
    int model_heads = 4;

    // voxel geometry
    int voxel_nx = 40, voxel_ny = 40, voxel_nz = 40;
    double voxel_cx = 0.2, voxel_cy = 0.1, voxel_cz = 0.2;

    // anomaly filter
    double filter_depth_frac = 0.5;  // noising depth as a fraction of K
    double filter_threshold = 10.0;
    int filter_iterations = 2;
    std::string filter_threshold_mode = "absolute";  // absolute | quantile
    double filter_quantile = 0.95;
    int filter_epochs = 40;  // training budget per filter iteration
    bool filter_from_scratch = false;

    // sampling / evaluation
    int samples_per_record = 50;
    bool use_goal = true;
    bool use_scene = true;
    bool use_human = true;
    double ffr_threshold = 0.2;

    // long-horizon stitching
    int stitch_overlap = 10;
    double stitch_renoise_frac = 0.25;
    int stitch_intervals = 3;

    // synthesis
    int scenes = 50;
    int records = 2000;
    double val_fraction = 0.2;
    double partial_fraction = 0.0;
    double inject_fraction = 0.0;
    std::string inject_mode = "scramble-pose";

    void apply(const std::string& key, const std::string& value);
    void validate() const;
    std::string echo() const;

    static RunConfig load(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides);
    static RunConfig from_overrides(
        const std::vector<std::pair<std::string, std::string>>& overrides);
};

namespace config_detail {

inline long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long r = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double r = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected boolean, got '" + v + "'");
}

template <typename T>
void check_range(const std::string& key, T v, T lo, T hi) {
    if (v < lo || v > hi) {
        std::ostringstream os;
        os << "config key '" << key << "': value " << v << " outside [" << lo << ", " << hi << "]";
        throw ConfigError(os.str());
    }
}

}  // namespace config_detail

inline void RunConfig::apply(const std::string& key, const std::string& value) {
    using namespace config_detail;
    auto as_int = [&](int lo, int hi) {
        const long long v = parse_int(key, value);
        check_range<long long>(key, v, lo, hi);
        return static_cast<int>(v);
    };
    auto as_real = [&](double lo, double hi) {
        const double v = parse_real(key, value);
        check_range(key, v, lo, hi);
        return v;
    };

    if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "k_steps") k_steps = as_int(1, 100000);
    else if (key == "ddim_steps") ddim_steps = as_int(1, 100000);
    else if (key == "guidance_scale") guidance_scale = as_real(0.0, 100.0);
    else if (key == "cond_drop") cond_drop = as_real(0.0, 1.0);
    else if (key == "goal_drop") goal_drop = as_real(0.0, 1.0);
    else if (key == "scene_drop") scene_drop = as_real(0.0, 1.0);
    else if (key == "human_drop") human_drop = as_real(0.0, 1.0);
    else if (key == "w_rec") w_rec = as_real(0.0, 1e6);
    else if (key == "w_traj") w_traj = as_real(0.0, 1e6);
    else if (key == "w_geo") w_geo = as_real(0.0, 1e6);
    else if (key == "lr") lr = as_real(1e-12, 1.0);
    else if (key == "lr_decay") lr_decay = as_real(1e-6, 1.0);
    else if (key == "lr_decay_epochs") lr_decay_epochs = as_int(1, 1000000);
    else if (key == "weight_decay") weight_decay = as_real(0.0, 1.0);
    else if (key == "adam_beta1") adam_beta1 = as_real(0.0, 0.9999999);
    else if (key == "adam_beta2") adam_beta2 = as_real(0.0, 0.9999999);
    else if (key == "adam_eps") adam_eps = as_real(1e-16, 1.0);
    else if (key == "grad_clip") grad_clip = as_real(1e-9, 1e9);
    else if (key == "epochs") epochs = as_int(1, 1000000);
    else if (key == "batch") batch = as_int(1, 65536);
    else if (key == "augment_rotation") augment_rotation = parse_bool(key, value);
    else if (key == "frames") frames = as_int(2, 10000);
    else if (key == "fps") fps = as_real(0.1, 240.0);
    else if (key == "min_mask_frames") min_mask_frames = as_int(1, 10000);
    else if (key == "model_blocks") model_blocks = as_int(1, 64);
    else if (key == "model_dim") model_dim = as_int(2, 8192);
    else if (key == "model_heads") model_heads = as_int(1, 64);
    else if (key == "voxel_nx") voxel_nx = as_int(2, 512);
    else if (key == "voxel_ny") voxel_ny = as_int(2, 512);
    else if (key == "voxel_nz") voxel_nz = as_int(2, 512);
    else if (key == "voxel_cx") voxel_cx = as_real(1e-3, 10.0);
    else if (key == "voxel_cy") voxel_cy = as_real(1e-3, 10.0);
    else if (key == "voxel_cz") voxel_cz = as_real(1e-3, 10.0);
    else if (key == "filter_depth_frac") filter_depth_frac = as_real(1e-6, 1.0);
    else if (key == "filter_threshold") filter_threshold = as_real(1e-9, 1e12);
    else if (key == "filter_iterations") filter_iterations = as_int(1, 100);
    else if (key == "filter_threshold_mode") {
        if (value != "absolute" && value != "quantile")
            throw ConfigError("filter_threshold_mode must be 'absolute' or 'quantile'");
        filter_threshold_mode = value;
    } else if (key == "filter_quantile") filter_quantile = as_real(1e-6, 0.999999);
    else if (key == "filter_epochs") filter_epochs = as_int(1, 1000000);
    else if (key == "filter_from_scratch") filter_from_scratch = parse_bool(key, value);
    else if (key == "samples_per_record") samples_per_record = as_int(1, 100000);
    else if (key == "use_goal") use_goal = parse_bool(key, value);
    else if (key == "use_scene") use_scene = parse_bool(key, value);
    else if (key == "use_human") use_human = parse_bool(key, value);
    else if (key == "ffr_threshold") ffr_threshold = as_real(1e-6, 10.0);
    else if (key == "stitch_overlap") stitch_overlap = as_int(0, 10000);
    else if (key == "stitch_renoise_frac") stitch_renoise_frac = as_real(0.0, 1.0);
    else if (key == "stitch_intervals") stitch_intervals = as_int(1, 1000);
    else if (key == "scenes") scenes = as_int(1, 1000000);
    else if (key == "records") records = as_int(1, 10000000);
    else if (key == "val_fraction") val_fraction = as_real(0.0, 0.95);
    else if (key == "partial_fraction") partial_fraction = as_real(0.0, 0.99);
    else if (key == "inject_fraction") inject_fraction = as_real(0.0, 0.99);
    else if (key == "inject_mode") {
        if (value != "scramble-pose" && value != "teleport-root" && value != "freeze")
            throw ConfigError("inject_mode must be scramble-pose, teleport-root or freeze");
        inject_mode = value;
    } else {
        throw ConfigError("unknown config key: '" + key + "'");
    }
}

inline void RunConfig::validate() const {
    if (ddim_steps > k_steps) throw ConfigError("ddim_steps cannot exceed k_steps");
    if (model_dim % model_heads != 0) throw ConfigError("model_dim must divide by model_heads");
    if (stitch_overlap >= frames) throw ConfigError("stitch_overlap must be below frames");
    if (min_mask_frames > frames) throw ConfigError("min_mask_frames cannot exceed frames");
}

inline std::string RunConfig::echo() const {
    std::ostringstream os;
    os.precision(17);
    os << "adam_beta1 = " << adam_beta1 << "\n";
    os << "adam_beta2 = " << adam_beta2 << "\n";
    os << "adam_eps = " << adam_eps << "\n";
    os << "augment_rotation = " << (augment_rotation ? "true" : "false") << "\n";
    os << "batch = " << batch << "\n";
    os << "cond_drop = " << cond_drop << "\n";
    os << "ddim_steps = " << ddim_steps << "\n";
    os << "epochs = " << epochs << "\n";
    os << "ffr_threshold = " << ffr_threshold << "\n";
    os << "filter_depth_frac = " << filter_depth_frac << "\n";
    os << "filter_epochs = " << filter_epochs << "\n";
    os << "filter_from_scratch = " << (filter_from_scratch ? "true" : "false") << "\n";
    os << "filter_iterations = " << filter_iterations << "\n";
    os << "filter_quantile = " << filter_quantile << "\n";
    os << "filter_threshold = " << filter_threshold << "\n";
    os << "filter_threshold_mode = " << filter_threshold_mode << "\n";
    os << "fps = " << fps << "\n";
    os << "frames = " << frames << "\n";
    os << "goal_drop = " << goal_drop << "\n";
    os << "grad_clip = " << grad_clip << "\n";
    os << "guidance_scale = " << guidance_scale << "\n";
    os << "human_drop = " << human_drop << "\n";
    os << "inject_fraction = " << inject_fraction << "\n";
    os << "inject_mode = " << inject_mode << "\n";
    os << "k_steps = " << k_steps << "\n";
    os << "lr = " << lr << "\n";
    os << "lr_decay = " << lr_decay << "\n";
    os << "lr_decay_epochs = " << lr_decay_epochs << "\n";
    os << "min_mask_frames = " << min_mask_frames << "\n";
    os << "model_blocks = " << model_blocks << "\n";
    os << "model_dim = " << model_dim << "\n";
    os << "model_heads = " << model_heads << "\n";
    os << "partial_fraction = " << partial_fraction << "\n";
    os << "records = " << records << "\n";
    os << "samples_per_record = " << samples_per_record << "\n";
    os << "scenes = " << scenes << "\n";
    os << "seed = " << seed << "\n";
    os << "stitch_intervals = " << stitch_intervals << "\n";
    os << "stitch_overlap = " << stitch_overlap << "\n";
    os << "stitch_renoise_frac = " << stitch_renoise_frac << "\n";
    os << "use_goal = " << (use_goal ? "true" : "false") << "\n";
    os << "use_human = " << (use_human ? "true" : "false") << "\n";
    os << "use_scene = " << (use_scene ? "true" : "false") << "\n";
    os << "val_fraction = " << val_fraction << "\n";
    os << "voxel_cx = " << voxel_cx << "\n";
    os << "voxel_cy = " << voxel_cy << "\n";
    os << "voxel_cz = " << voxel_cz << "\n";
    os << "voxel_nx = " << voxel_nx << "\n";
    os << "voxel_ny = " << voxel_ny << "\n";
    os << "voxel_nz = " << voxel_nz << "\n";
    os << "w_geo = " << w_geo << "\n";
    os << "w_rec = " << w_rec << "\n";
    os << "w_traj = " << w_traj << "\n";
    os << "weight_decay = " << weight_decay << "\n";
    return os.str();
}

inline RunConfig RunConfig::load(
    const std::string& path, const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg;
    if (!path.empty()) {
        std::ifstream f(path);
        if (!f) throw IoError("cannot open config file: " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            const std::size_t hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config file " + path + ":" + std::to_string(lineno) +
                                  ": expected key = value");
            cfg.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }
    for (const auto& [k, v] : overrides) cfg.apply(k, v);
    cfg.validate();
    return cfg;
}

inline RunConfig RunConfig::from_overrides(
    const std::vector<std::pair<std::string, std::string>>& overrides) {
    return load("", overrides);
}

}  // namespace pedgen
