#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "pedgen/motion.hpp"
#include "pedgen/scene.hpp"
#include "pedgen/tape.hpp"

namespace pedgen {

// Transformer denoiser configuration. Paper-scale defaults; desk-scale runs
// override blocks/latent_dim through the run config.
struct DenoiserConfig {
    int blocks = 8;
    int latent_dim = 512;
    int heads = 4;
    int max_frames = 60;
    VoxelGeometry voxel;

    static constexpr int kTokensPerFrame = 2;  // velocity token + rotation token

    int scene_tokens() const { return voxel.dims[0] * voxel.dims[2]; }
    int scene_embed_rows() const { return voxel.dims[1] * kNumSemClasses; }
    int mlp_dim() const { return latent_dim * 4; }
    int head_dim() const { return latent_dim / heads; }

    void validate() const {
        require(blocks >= 1 && latent_dim >= 2 && heads >= 1 && max_frames >= 2,
                "DenoiserConfig: sizes must be positive");
        require(latent_dim % heads == 0, "DenoiserConfig: latent dim must divide by head count");
    }
};

// The condition bundle: local scene voxel grid, body shape, start position
// and optional goal. The use_* flags let individual factors be withheld, so
// one trained model covers every conditioning subset.
struct GenerationContext {
    VoxelGrid scene;
    ShapeParams shape;
    Vec3 start;
    std::optional<Vec3> goal;
    bool use_scene = true;
    bool use_human = true;

    void validate() const {
        require(start.finite(), "GenerationContext: start must be finite");
        if (use_scene) {
            require(!scene.classes.empty(), "GenerationContext: scene grid is empty");
            require(scene.contains(start), "GenerationContext: start outside voxel extents");
        }
        if (goal) require(goal->finite(), "GenerationContext: goal must be finite");
        shape.validate();
    }
};

template <typename Real>
struct ConditionEmbedding {
    Tensor<Real> vec;  // [1, latent_dim]
    bool is_null = false;
};

inline std::vector<double> sinusoidal_embedding(double pos, int dim) {
    std::vector<double> v(static_cast<std::size_t>(dim), 0.0);
    for (int i = 0; i * 2 < dim; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / dim);
        v[static_cast<std::size_t>(2 * i)] = std::sin(pos * freq);
        if (2 * i + 1 < dim) v[static_cast<std::size_t>(2 * i + 1)] = std::cos(pos * freq);
    }
    return v;
}

template <typename Real>
class DenoiserModel {
public:
    explicit DenoiserModel(DenoiserConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    const DenoiserConfig& config() const { return cfg_; }

    // ------------------------------------------------------------------ init

    ParamMap<Real> init_params(RngStream rng) const {
        ParamMap<Real> p;
        const int d = cfg_.latent_dim;
        auto fan_in = [&](const std::string& name, int in, int out) {
            RngStream r = rng.split(name);
            const double s = 1.0 / std::sqrt(static_cast<double>(in));
            p.emplace(name, Tensor<Real>::random_uniform({in, out}, static_cast<Real>(-s),
                                                         static_cast<Real>(s), r));
        };
        auto vec_init = [&](const std::string& name, int n) {
            RngStream r = rng.split(name);
            const double s = 1.0 / std::sqrt(static_cast<double>(n));
            p.emplace(name, Tensor<Real>::random_uniform({1, n}, static_cast<Real>(-s),
                                                         static_cast<Real>(s), r));
        };
        auto zeros = [&](const std::string& name, std::vector<int> shape) {
            p.emplace(name, Tensor<Real>::zeros(std::move(shape)));
        };

        fan_in("tok_vel_w", ModelMotion::kVelDim, d);
        zeros("tok_vel_b", {1, d});
        fan_in("tok_rot_w", ModelMotion::kRotDim, d);
        zeros("tok_rot_b", {1, d});
        vec_init("mask_embed", d);
        vec_init("type_vel", d);
        vec_init("type_rot", d);

        fan_in("step_w1", d, d);
        zeros("step_b1", {1, d});
        fan_in("step_w2", d, d);
        zeros("step_b2", {1, d});

        fan_in("scene_embed", cfg_.scene_embed_rows(), d);
        vec_init("scene_query", d);
        fan_in("scene_out_w", d, d);
        zeros("scene_out_b", {1, d});
        fan_in("beta_w", kShapeDim, d);
        zeros("beta_b", {1, d});
        fan_in("goal_w", 3, d);
        zeros("goal_b", {1, d});
        vec_init("no_goal", d);
        vec_init("no_scene", d);
        vec_init("no_human", d);
        vec_init("null_cond", d);

        for (int b = 0; b < cfg_.blocks; ++b) {
            const std::string pre = "blk" + std::to_string(b) + "_";
            p.emplace(pre + "ln1_g", Tensor<Real>::full({1, d}, Real(1)));
            zeros(pre + "ln1_b", {1, d});
            for (const char* nm : {"wq", "wk", "wv", "wo"}) fan_in(pre + "attn_" + nm, d, d);
            for (const char* nm : {"bq", "bk", "bv", "bo"}) zeros(pre + "attn_" + nm, {1, d});
            p.emplace(pre + "ln2_g", Tensor<Real>::full({1, d}, Real(1)));
            zeros(pre + "ln2_b", {1, d});
            fan_in(pre + "mlp_w1", d, cfg_.mlp_dim());
            zeros(pre + "mlp_b1", {1, cfg_.mlp_dim()});
            fan_in(pre + "mlp_w2", cfg_.mlp_dim(), d);
            zeros(pre + "mlp_b2", {1, d});
            // FiLM heads start at zero: scale 1, shift 0, so a fresh model is
            // condition-free and every block reduces to its plain form.
            for (const char* nm : {"film1_sw", "film1_bw", "film2_sw", "film2_bw"})
                zeros(pre + nm, {d, d});
            for (const char* nm : {"film1_sb", "film1_bb", "film2_sb", "film2_bb"})
                zeros(pre + nm, {1, d});
        }

        // Zero-initialized output heads: the untrained denoiser predicts zero
        // motion. The rotation bias starts at the identity 6-d pattern so the
        // prediction is a stationary rest pose rather than degenerate zeros.
        zeros("out_vel_w", {d, ModelMotion::kVelDim});
        zeros("out_vel_b", {1, ModelMotion::kVelDim});
        zeros("out_rot_w", {d, ModelMotion::kRotDim});
        Tensor<Real> rot_bias({1, ModelMotion::kRotDim});
        for (int j = 0; j < kNumJoints; ++j) {
            rot_bias[static_cast<std::size_t>(j * 6)] = Real(1);      // col1 = (1,0,0)
            rot_bias[static_cast<std::size_t>(j * 6 + 4)] = Real(1);  // col2 = (0,1,0)
        }
        p.emplace("out_rot_b", std::move(rot_bias));
        return p;
    }

    // --------------------------------------------------------------- context

    TapeNode<Real> null_condition_node(GradientTape<Real>& t, const ParamLeaves<Real>& p) const {
        return p.at("null_cond");
    }

    TapeNode<Real> encode_context_node(GradientTape<Real>& t, const ParamLeaves<Real>& p,
                                       const GenerationContext& ctx) const {
        ctx.validate();
        TapeNode<Real> scene_part;
        if (ctx.use_scene) {
            require(ctx.scene.dims == cfg_.voxel.dims,
                    "encode_context: voxel grid dims do not match the model");
            std::vector<int> offsets, indices;
            scene_gather(ctx.scene, offsets, indices);
            auto feats = t.gather_sum_rows(p.at("scene_embed"), std::move(offsets), std::move(indices));
            feats = t.add(feats, t.constant(scene_positional_encoding()));
            auto scores = t.mul_scalar(t.matmul(p.at("scene_query"), feats, false, true),
                                       static_cast<Real>(1.0 / std::sqrt(cfg_.latent_dim)));
            auto attn = t.softmax_rows(scores);           // [1, tokens]
            auto pooled = t.matmul(attn, feats);          // [1, d]
            scene_part = t.linear(pooled, p.at("scene_out_w"), p.at("scene_out_b"));
        } else {
            scene_part = p.at("no_scene");
        }

        TapeNode<Real> human_part;
        if (ctx.use_human) {
            Tensor<Real> beta({1, kShapeDim});
            for (int i = 0; i < kShapeDim; ++i)
                beta[static_cast<std::size_t>(i)] = static_cast<Real>(ctx.shape.beta[static_cast<std::size_t>(i)]);
            human_part = t.linear(t.constant(std::move(beta)), p.at("beta_w"), p.at("beta_b"));
        } else {
            human_part = p.at("no_human");
        }

        TapeNode<Real> goal_part;
        if (ctx.goal) {
            const Vec3 off = *ctx.goal - ctx.start;
            Tensor<Real> g({1, 3}, {static_cast<Real>(off.x), static_cast<Real>(off.y),
                                    static_cast<Real>(off.z)});
            goal_part = t.linear(t.constant(std::move(g)), p.at("goal_w"), p.at("goal_b"));
        } else {
            goal_part = p.at("no_goal");
        }

        return t.add(t.add(scene_part, human_part), goal_part);
    }

    // ---------------------------------------------------------------- denoise

    // Clean-motion prediction x_hat = F(x_noisy, k, c). Frames with mask
    // false contribute the learned mask embedding instead of their content.
    TapeNode<Real> denoise_node(GradientTape<Real>& t, const ParamLeaves<Real>& p,
                                TapeNode<Real> x, int k, TapeNode<Real> cond,
                                const std::vector<std::uint8_t>& mask) const {
        const int frames = x.rows();
        require(frames >= 1 && frames <= cfg_.max_frames,
                "denoise: frame count exceeds the configured maximum");
        require_shape(x.cols() == ModelMotion::kFeatDim, "denoise: bad motion feature width");
        require(static_cast<int>(mask.size()) == frames, "denoise: mask length mismatch");
        const int d = cfg_.latent_dim;

        auto tokens = build_tokens(t, p, x, mask);  // [2T, d]

        // Conditioning vector: sinusoidal step embedding through a 2-layer
        // projection, plus the context embedding.
        Tensor<Real> kfeat({1, d});
        const auto kemb = sinusoidal_embedding(static_cast<double>(k), d);
        for (int i = 0; i < d; ++i) kfeat[static_cast<std::size_t>(i)] = static_cast<Real>(kemb[static_cast<std::size_t>(i)]);
        auto ke = t.gelu(t.linear(t.constant(std::move(kfeat)), p.at("step_w1"), p.at("step_b1")));
        ke = t.linear(ke, p.at("step_w2"), p.at("step_b2"));
        auto e = t.add(ke, cond);  // [1, d]

        auto h = tokens;
        for (int b = 0; b < cfg_.blocks; ++b) {
            const std::string pre = "blk" + std::to_string(b) + "_";
            auto attn_in = t.layer_norm_rows(h, p.at(pre + "ln1_g"), p.at(pre + "ln1_b"));
            auto attn_out = self_attention(t, p, pre, attn_in);
            h = t.add(h, film(t, p, pre + "film1", attn_out, e));
            auto mlp_in = t.layer_norm_rows(h, p.at(pre + "ln2_g"), p.at(pre + "ln2_b"));
            auto mlp_out = t.linear(t.gelu(t.linear(mlp_in, p.at(pre + "mlp_w1"), p.at(pre + "mlp_b1"))),
                                    p.at(pre + "mlp_w2"), p.at(pre + "mlp_b2"));
            h = t.add(h, film(t, p, pre + "film2", mlp_out, e));
        }

        auto vel_tok = t.slice_rows(h, 0, frames);
        auto rot_tok = t.slice_rows(h, frames, 2 * frames);
        auto vel = t.linear(vel_tok, p.at("out_vel_w"), p.at("out_vel_b"));
        auto rot = t.linear(rot_tok, p.at("out_rot_w"), p.at("out_rot_b"));
        return t.concat_cols({vel, rot});
    }

    // ------------------------------------------------------- value-level API

    ConditionEmbedding<Real> encode_context(const ParamMap<Real>& params,
                                            const GenerationContext& ctx) const {
        GradientTape<Real> t;
        ParamLeaves<Real> leaves;  // constants: no gradients needed here
        for (const auto& [name, v] : params) leaves.emplace(name, t.constant(v));
        return ConditionEmbedding<Real>{encode_context_node(t, leaves, ctx).value(), false};
    }

    ConditionEmbedding<Real> null_condition(const ParamMap<Real>& params) const {
        return ConditionEmbedding<Real>{params.at("null_cond"), true};
    }

    Tensor<Real> denoise(const ParamMap<Real>& params, const Tensor<Real>& x, int k,
                         const ConditionEmbedding<Real>& cond,
                         const std::vector<std::uint8_t>& mask) const {
        GradientTape<Real> t;
        ParamLeaves<Real> leaves;
        for (const auto& [name, v] : params) leaves.emplace(name, t.constant(v));
        auto c = t.constant(cond.vec);
        return denoise_node(t, leaves, t.constant(x), k, c, mask).value();
    }

    // Token stream after mask substitution and positional encodings; exposed
    // so tests can assert token-level equality for masked frames.
    Tensor<Real> token_stream(const ParamMap<Real>& params, const Tensor<Real>& x,
                              const std::vector<std::uint8_t>& mask) const {
        GradientTape<Real> t;
        ParamLeaves<Real> leaves;
        for (const auto& [name, v] : params) leaves.emplace(name, t.constant(v));
        return build_tokens(t, leaves, t.constant(x), mask).value();
    }

private:
    TapeNode<Real> build_tokens(GradientTape<Real>& t, const ParamLeaves<Real>& p,
                                TapeNode<Real> x, const std::vector<std::uint8_t>& mask) const {
        const int frames = x.rows();
        auto xv = t.slice_cols(x, 0, ModelMotion::kVelDim);
        auto xr = t.slice_cols(x, ModelMotion::kVelDim, ModelMotion::kFeatDim);
        auto tv = t.linear(xv, p.at("tok_vel_w"), p.at("tok_vel_b"));
        auto tr = t.linear(xr, p.at("tok_rot_w"), p.at("tok_rot_b"));

        std::vector<Real> keep(static_cast<std::size_t>(frames)), repl(static_cast<std::size_t>(frames));
        bool any_masked = false;
        for (int f = 0; f < frames; ++f) {
            keep[static_cast<std::size_t>(f)] = mask[static_cast<std::size_t>(f)] ? Real(1) : Real(0);
            repl[static_cast<std::size_t>(f)] = mask[static_cast<std::size_t>(f)] ? Real(0) : Real(1);
            any_masked = any_masked || !mask[static_cast<std::size_t>(f)];
        }
        if (any_masked) {
            auto fill = t.outer_const(repl, p.at("mask_embed"));
            tv = t.add(t.scale_rows(tv, keep), fill);
            tr = t.add(t.scale_rows(tr, keep), fill);
        }

        tv = t.add_rowvec(tv, p.at("type_vel"));
        tr = t.add_rowvec(tr, p.at("type_rot"));
        auto pe = t.constant(frame_positional_encoding(frames));
        tv = t.add(tv, pe);
        tr = t.add(tr, pe);
        return t.concat_rows({tv, tr});
    }

    TapeNode<Real> self_attention(GradientTape<Real>& t, const ParamLeaves<Real>& p,
                                  const std::string& pre, TapeNode<Real> h) const {
        auto q = t.linear(h, p.at(pre + "attn_wq"), p.at(pre + "attn_bq"));
        auto k = t.linear(h, p.at(pre + "attn_wk"), p.at(pre + "attn_bk"));
        auto v = t.linear(h, p.at(pre + "attn_wv"), p.at(pre + "attn_bv"));
        const int dh = cfg_.head_dim();
        std::vector<TapeNode<Real>> heads;
        heads.reserve(static_cast<std::size_t>(cfg_.heads));
        for (int hh = 0; hh < cfg_.heads; ++hh) {
            auto qs = t.slice_cols(q, hh * dh, (hh + 1) * dh);
            auto ks = t.slice_cols(k, hh * dh, (hh + 1) * dh);
            auto vs = t.slice_cols(v, hh * dh, (hh + 1) * dh);
            auto scores = t.mul_scalar(t.matmul(qs, ks, false, true),
                                       static_cast<Real>(1.0 / std::sqrt(static_cast<double>(dh))));
            heads.push_back(t.matmul(t.softmax_rows(scores), vs));
        }
        auto merged = cfg_.heads == 1 ? heads[0] : t.concat_cols(heads);
        return t.linear(merged, p.at(pre + "attn_wo"), p.at(pre + "attn_bo"));
    }

    // y = h * (1 + W_s e + b_s) + (W_b e + b_b); zero parameters give the
    // identity.
    TapeNode<Real> film(GradientTape<Real>& t, const ParamLeaves<Real>& p, const std::string& pre,
                        TapeNode<Real> h, TapeNode<Real> e) const {
        auto scale = t.add_scalar(t.linear(e, p.at(pre + "_sw"), p.at(pre + "_sb")), Real(1));
        auto shift = t.linear(e, p.at(pre + "_bw"), p.at(pre + "_bb"));
        return t.add_rowvec(t.mul_rowvec(h, scale), shift);
    }

    Tensor<Real> frame_positional_encoding(int frames) const {
        Tensor<Real> pe({frames, cfg_.latent_dim});
        for (int f = 0; f < frames; ++f) {
            const auto v = sinusoidal_embedding(static_cast<double>(f), cfg_.latent_dim);
            for (int i = 0; i < cfg_.latent_dim; ++i)
                pe.at(f, i) = static_cast<Real>(v[static_cast<std::size_t>(i)]);
        }
        return pe;
    }

    Tensor<Real> scene_positional_encoding() const {
        const int nx = cfg_.voxel.dims[0], nz = cfg_.voxel.dims[2];
        const int half = cfg_.latent_dim / 2;
        Tensor<Real> pe({nx * nz, cfg_.latent_dim});
        for (int ix = 0; ix < nx; ++ix) {
            const auto vx = sinusoidal_embedding(static_cast<double>(ix), half);
            for (int iz = 0; iz < nz; ++iz) {
                const auto vz = sinusoidal_embedding(static_cast<double>(iz), cfg_.latent_dim - half);
                Real* row = pe.data() + static_cast<std::size_t>(ix * nz + iz) * cfg_.latent_dim;
                for (int i = 0; i < half; ++i) row[i] = static_cast<Real>(vx[static_cast<std::size_t>(i)]);
                for (int i = half; i < cfg_.latent_dim; ++i)
                    row[i] = static_cast<Real>(vz[static_cast<std::size_t>(i - half)]);
            }
        }
        return pe;
    }

    // Token (ix, iz) sums the class embeddings of its occupied vertical
    // cells; embedding row = iy * classes + class id.
    void scene_gather(const VoxelGrid& g, std::vector<int>& offsets,
                      std::vector<int>& indices) const {
        const int nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
        offsets.clear();
        indices.clear();
        offsets.reserve(static_cast<std::size_t>(nx * nz) + 1);
        offsets.push_back(0);
        for (int ix = 0; ix < nx; ++ix) {
            for (int iz = 0; iz < nz; ++iz) {
                for (int iy = 0; iy < ny; ++iy) {
                    const std::uint8_t cls = g.at(ix, iy, iz);
                    if (cls == kVoxelEmpty) continue;
                    require(cls < kNumSemClasses, "encode_context: class id outside palette");
                    indices.push_back(iy * kNumSemClasses + cls);
                }
                offsets.push_back(static_cast<int>(indices.size()));
            }
        }
    }

    DenoiserConfig cfg_;
};

}  // namespace pedgen
