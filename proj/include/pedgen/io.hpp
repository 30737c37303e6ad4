#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pedgen/config.hpp"
#include "pedgen/denoiser.hpp"
#include "pedgen/labels.hpp"
#include "pedgen/metrics.hpp"

namespace pedgen {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Dataset JSONL. One record per line:
//   {id, fps, frames, start[3], goal[3]|null, beta[10], trans[T][3],
//    root_orient_aa[T][3], body_pose_aa[T][23][3], mask[T], voxel_path,
//    ground_y}
// Rotations are stored as axis-angle; voxel grids live in sibling binary
// files referenced by voxel_path (relative to the JSONL file).

inline json vec3_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

inline Vec3 vec3_from_json(const json& j) {
    require(j.is_array() && j.size() == 3, "dataset: expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

struct DatasetMeta {
    double fps = 30.0;
};

inline void write_records(const std::vector<LabelRecord>& records, const std::string& jsonl_path,
                          double fps) {
    const fs::path base = fs::path(jsonl_path).parent_path();
    const fs::path voxel_dir = base / "voxels";
    fs::create_directories(voxel_dir);
    std::ofstream out(jsonl_path);
    if (!out) throw IoError("cannot open for writing: " + jsonl_path);
    for (const LabelRecord& rec : records) {
        const int frames = rec.motion.frames();
        json j;
        j["id"] = rec.id;
        j["fps"] = fps;
        j["frames"] = frames;
        j["start"] = vec3_to_json(rec.context.start);
        j["goal"] = rec.context.goal ? vec3_to_json(*rec.context.goal) : json(nullptr);
        j["beta"] = rec.context.shape.beta;
        json trans = json::array(), root = json::array(), body = json::array(), mask = json::array();
        for (int f = 0; f < frames; ++f) {
            trans.push_back(vec3_to_json(rec.motion.trans[static_cast<std::size_t>(f)]));
            root.push_back(vec3_to_json(
                axis_angle_from_matrix(rec.motion.root_orient[static_cast<std::size_t>(f)])));
            json frame_pose = json::array();
            for (int b = 0; b < kBodyJoints; ++b)
                frame_pose.push_back(vec3_to_json(axis_angle_from_matrix(
                    rec.motion.body_pose[static_cast<std::size_t>(f)][static_cast<std::size_t>(b)])));
            body.push_back(std::move(frame_pose));
            mask.push_back(rec.motion.mask[static_cast<std::size_t>(f)] != 0);
        }
        j["trans"] = std::move(trans);
        j["root_orient_aa"] = std::move(root);
        j["body_pose_aa"] = std::move(body);
        j["mask"] = std::move(mask);
        j["ground_y"] = rec.ground_y;
        const std::string voxel_rel = "voxels/" + rec.id + ".pgvx";
        j["voxel_path"] = voxel_rel;
        write_voxel_grid(rec.context.scene, (base / voxel_rel).string());
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("failed writing dataset: " + jsonl_path);
}

inline std::vector<LabelRecord> read_records(const std::string& jsonl_path,
                                             DatasetMeta* meta = nullptr) {
    std::ifstream in(jsonl_path);
    if (!in) throw IoError("cannot open dataset: " + jsonl_path);
    const fs::path base = fs::path(jsonl_path).parent_path();
    std::vector<LabelRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("dataset " + jsonl_path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        LabelRecord rec;
        rec.id = j.at("id").get<std::string>();
        const int frames = j.at("frames").get<int>();
        rec.motion = Motion::rest(frames);
        const json& trans = j.at("trans");
        const json& root = j.at("root_orient_aa");
        const json& body = j.at("body_pose_aa");
        const json& mask = j.at("mask");
        require(static_cast<int>(trans.size()) == frames && static_cast<int>(root.size()) == frames &&
                    static_cast<int>(body.size()) == frames && static_cast<int>(mask.size()) == frames,
                "dataset record " + rec.id + ": per-frame arrays disagree with frame count");
        for (int f = 0; f < frames; ++f) {
            rec.motion.trans[static_cast<std::size_t>(f)] = vec3_from_json(trans[static_cast<std::size_t>(f)]);
            rec.motion.root_orient[static_cast<std::size_t>(f)] =
                matrix_from_axis_angle(vec3_from_json(root[static_cast<std::size_t>(f)]));
            const json& fp = body[static_cast<std::size_t>(f)];
            require(static_cast<int>(fp.size()) == kBodyJoints,
                    "dataset record " + rec.id + ": body pose joint count");
            for (int b = 0; b < kBodyJoints; ++b)
                rec.motion.body_pose[static_cast<std::size_t>(f)][static_cast<std::size_t>(b)] =
                    matrix_from_axis_angle(vec3_from_json(fp[static_cast<std::size_t>(b)]));
            rec.motion.mask[static_cast<std::size_t>(f)] = mask[static_cast<std::size_t>(f)].get<bool>() ? 1 : 0;
        }
        rec.context.start = vec3_from_json(j.at("start"));
        if (!j.at("goal").is_null()) rec.context.goal = vec3_from_json(j.at("goal"));
        const auto beta = j.at("beta");
        require(beta.size() == kShapeDim, "dataset record " + rec.id + ": beta length");
        for (int i = 0; i < kShapeDim; ++i)
            rec.context.shape.beta[static_cast<std::size_t>(i)] = beta[static_cast<std::size_t>(i)].get<double>();
        rec.ground_y = j.value("ground_y", 0.0);
        const std::string voxel_rel = j.at("voxel_path").get<std::string>();
        rec.context.scene = read_voxel_grid((base / voxel_rel).string());
        if (meta) meta->fps = j.at("fps").get<double>();
        records.push_back(std::move(rec));
    }
    return records;
}

// Generated movements: the record schema minus the scene, plus the source
// record id and sample index.
struct PredictionRecord {
    std::string record_id;
    int sample = 0;
    Motion motion;
};

inline void write_predictions(const std::vector<PredictionRecord>& preds,
                              const std::string& jsonl_path, double fps) {
    std::ofstream out(jsonl_path);
    if (!out) throw IoError("cannot open for writing: " + jsonl_path);
    for (const PredictionRecord& p : preds) {
        json j;
        j["record_id"] = p.record_id;
        j["sample"] = p.sample;
        j["fps"] = fps;
        j["frames"] = p.motion.frames();
        json trans = json::array(), root = json::array(), body = json::array();
        for (int f = 0; f < p.motion.frames(); ++f) {
            trans.push_back(vec3_to_json(p.motion.trans[static_cast<std::size_t>(f)]));
            root.push_back(vec3_to_json(
                axis_angle_from_matrix(p.motion.root_orient[static_cast<std::size_t>(f)])));
            json fp = json::array();
            for (int b = 0; b < kBodyJoints; ++b)
                fp.push_back(vec3_to_json(axis_angle_from_matrix(
                    p.motion.body_pose[static_cast<std::size_t>(f)][static_cast<std::size_t>(b)])));
            body.push_back(std::move(fp));
        }
        j["trans"] = std::move(trans);
        j["root_orient_aa"] = std::move(root);
        j["body_pose_aa"] = std::move(body);
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("failed writing predictions: " + jsonl_path);
}

inline std::vector<PredictionRecord> read_predictions(const std::string& jsonl_path) {
    std::ifstream in(jsonl_path);
    if (!in) throw IoError("cannot open predictions: " + jsonl_path);
    std::vector<PredictionRecord> preds;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        PredictionRecord p;
        p.record_id = j.at("record_id").get<std::string>();
        p.sample = j.at("sample").get<int>();
        const int frames = j.at("frames").get<int>();
        p.motion = Motion::rest(frames);
        for (int f = 0; f < frames; ++f) {
            p.motion.trans[static_cast<std::size_t>(f)] =
                vec3_from_json(j.at("trans")[static_cast<std::size_t>(f)]);
            p.motion.root_orient[static_cast<std::size_t>(f)] = matrix_from_axis_angle(
                vec3_from_json(j.at("root_orient_aa")[static_cast<std::size_t>(f)]));
            for (int b = 0; b < kBodyJoints; ++b)
                p.motion.body_pose[static_cast<std::size_t>(f)][static_cast<std::size_t>(b)] =
                    matrix_from_axis_angle(vec3_from_json(
                        j.at("body_pose_aa")[static_cast<std::size_t>(f)][static_cast<std::size_t>(b)]));
        }
        preds.push_back(std::move(p));
    }
    return preds;
}

// Filter verdict sidecar: one line per record.
inline void write_verdicts(const std::vector<LabelRecord>& kept,
                           const std::vector<LabelRecord>& dropped, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    auto emit = [&](const LabelRecord& rec) {
        json j;
        j["id"] = rec.id;
        j["score"] = rec.anomaly_score ? json(*rec.anomaly_score) : json(nullptr);
        j["verdict"] = rec.verdict == FilterVerdict::kept ? "kept" : "dropped";
        j["iteration"] = rec.dropped_at_iteration;
        out << j.dump() << "\n";
    };
    for (const auto& r : kept) emit(r);
    for (const auto& r : dropped) emit(r);
    if (!out) throw IoError("failed writing verdicts: " + path);
}

// ---------------------------------------------------------------------------
// Checkpoints: "PGCK" magic, format version, a JSON header with the model
// configuration, then named tensors as raw little-endian f32 payloads.

constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
    DenoiserConfig model;
    int k_steps = 1000;
    double fps = 30.0;
    int frames = 60;
};

template <typename Real>
void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const ParamMap<Real>& params) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    json meta;
    meta["format_version"] = kCheckpointVersion;
    meta["model"] = {{"blocks", header.model.blocks},
                     {"latent_dim", header.model.latent_dim},
                     {"heads", header.model.heads},
                     {"max_frames", header.model.max_frames}};
    meta["voxel"] = {{"nx", header.model.voxel.dims[0]}, {"ny", header.model.voxel.dims[1]},
                     {"nz", header.model.voxel.dims[2]}, {"cx", header.model.voxel.cell[0]},
                     {"cy", header.model.voxel.cell[1]}, {"cz", header.model.voxel.cell[2]}};
    meta["k_steps"] = header.k_steps;
    meta["fps"] = header.fps;
    meta["frames"] = header.frames;
    const std::string blob = meta.dump();

    f.write("PGCK", 4);
    const std::uint32_t version = kCheckpointVersion;
    f.write(reinterpret_cast<const char*>(&version), 4);
    const std::uint32_t blob_len = static_cast<std::uint32_t>(blob.size());
    f.write(reinterpret_cast<const char*>(&blob_len), 4);
    f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    const std::uint32_t count = static_cast<std::uint32_t>(params.size());
    f.write(reinterpret_cast<const char*>(&count), 4);
    for (const auto& [name, tensor] : params) {
        const std::uint16_t name_len = static_cast<std::uint16_t>(name.size());
        f.write(reinterpret_cast<const char*>(&name_len), 2);
        f.write(name.data(), name_len);
        const std::uint8_t ndim = static_cast<std::uint8_t>(tensor.ndim());
        f.write(reinterpret_cast<const char*>(&ndim), 1);
        for (int d = 0; d < tensor.ndim(); ++d) {
            const std::uint32_t e = static_cast<std::uint32_t>(tensor.extent(d));
            f.write(reinterpret_cast<const char*>(&e), 4);
        }
        for (std::size_t i = 0; i < tensor.numel(); ++i) {
            const float v = static_cast<float>(tensor[i]);
            f.write(reinterpret_cast<const char*>(&v), 4);
        }
    }
    if (!f) throw IoError("failed writing checkpoint: " + path);
}

template <typename Real>
std::pair<CheckpointHeader, ParamMap<Real>> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "PGCK", 4) != 0)
        throw CheckpointError("not a checkpoint file: " + path);
    std::uint32_t version = 0;
    f.read(reinterpret_cast<char*>(&version), 4);
    if (version != kCheckpointVersion)
        throw CheckpointError("incompatible checkpoint version " + std::to_string(version) +
                              " in " + path);
    std::uint32_t blob_len = 0;
    f.read(reinterpret_cast<char*>(&blob_len), 4);
    std::string blob(blob_len, '\0');
    f.read(blob.data(), blob_len);
    if (!f) throw CheckpointError("truncated checkpoint header: " + path);
    json meta;
    try {
        meta = json::parse(blob);
    } catch (const json::exception&) {
        throw CheckpointError("corrupt checkpoint header: " + path);
    }
    CheckpointHeader header;
    header.model.blocks = meta.at("model").at("blocks").get<int>();
    header.model.latent_dim = meta.at("model").at("latent_dim").get<int>();
    header.model.heads = meta.at("model").at("heads").get<int>();
    header.model.max_frames = meta.at("model").at("max_frames").get<int>();
    header.model.voxel.dims = {meta.at("voxel").at("nx").get<int>(),
                               meta.at("voxel").at("ny").get<int>(),
                               meta.at("voxel").at("nz").get<int>()};
    header.model.voxel.cell = {meta.at("voxel").at("cx").get<double>(),
                               meta.at("voxel").at("cy").get<double>(),
                               meta.at("voxel").at("cz").get<double>()};
    header.k_steps = meta.at("k_steps").get<int>();
    header.fps = meta.at("fps").get<double>();
    header.frames = meta.at("frames").get<int>();

    std::uint32_t count = 0;
    f.read(reinterpret_cast<char*>(&count), 4);
    ParamMap<Real> params;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint16_t name_len = 0;
        f.read(reinterpret_cast<char*>(&name_len), 2);
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        std::uint8_t ndim = 0;
        f.read(reinterpret_cast<char*>(&ndim), 1);
        std::vector<int> shape(ndim);
        for (int d = 0; d < ndim; ++d) {
            std::uint32_t e = 0;
            f.read(reinterpret_cast<char*>(&e), 4);
            shape[static_cast<std::size_t>(d)] = static_cast<int>(e);
        }
        Tensor<Real> tensor(shape);
        for (std::size_t v = 0; v < tensor.numel(); ++v) {
            float x = 0;
            f.read(reinterpret_cast<char*>(&x), 4);
            tensor[v] = static_cast<Real>(x);
        }
        if (!f) throw CheckpointError("truncated checkpoint payload: " + path);
        params.emplace(std::move(name), std::move(tensor));
    }
    return {header, std::move(params)};
}

// ---------------------------------------------------------------------------
// Reports and exports.

inline json metric_report_to_json(const MetricReport& rep) {
    json j;
    j["mADE"] = rep.made;
    j["aADE"] = rep.aade;
    j["mFDE"] = rep.mfde;
    j["aFDE"] = rep.afde;
    j["CR"] = rep.cr;
    j["FFR"] = rep.ffr;
    j["CR_per_frame"] = rep.cr_frames;
    j["FFR_per_frame"] = rep.ffr_frames;
    if (std::isfinite(rep.goal_endpoint_error)) j["goal_endpoint_error"] = rep.goal_endpoint_error;
    j["samples_per_datum"] = rep.samples_per_datum;
    j["data_count"] = rep.data_count;
    return j;
}

inline std::string metric_report_to_text(const MetricReport& rep) {
    std::ostringstream os;
    os.precision(4);
    os << std::fixed;
    os << "metric          value\n";
    os << "------          -----\n";
    os << "mADE  (m)       " << rep.made << "\n";
    os << "aADE  (m)       " << rep.aade << "\n";
    os << "mFDE  (m)       " << rep.mfde << "\n";
    os << "aFDE  (m)       " << rep.afde << "\n";
    os << "CR              " << rep.cr << "\n";
    os << "FFR             " << rep.ffr << "\n";
    os << "CR  (frames)    " << rep.cr_frames << "\n";
    os << "FFR (frames)    " << rep.ffr_frames << "\n";
    if (std::isfinite(rep.goal_endpoint_error))
        os << "goal endpoint   " << rep.goal_endpoint_error << "\n";
    os << "samples/datum   " << rep.samples_per_datum << "\n";
    os << "data count      " << rep.data_count << "\n";
    return os.str();
}

// Per-frame joint positions as OBJ point sequences, one object per frame.
inline void export_motion_obj(const Motion& motion, const Skeleton& skel,
                              const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "# pedgen motion export: 24 joint positions per frame\n";
    out.precision(9);
    for (int f = 0; f < motion.frames(); ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04d", f);
        out << "o " << name << "\n";
        const auto joints = forward_kinematics(motion, f, skel);
        for (const Vec3& p : joints) out << "v " << p.x << " " << p.y << " " << p.z << "\n";
    }
    if (!out) throw IoError("failed writing OBJ: " + path);
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << content;
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace pedgen
