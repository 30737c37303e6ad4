#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "pedgen/denoiser.hpp"
#include "pedgen/diffusion.hpp"
#include "pedgen/rng.hpp"
#include "test_util.hpp"

using namespace pedgen;
using Catch::Approx;

namespace {

// Small geometry so unit tests stay fast: 8x8x8 cells covering the same
// +-4 m / +-2 m local box as the full-size grid.
VoxelGeometry tiny_voxels() {
    VoxelGeometry g;
    g.dims = {8, 8, 8};
    g.cell = {1.0, 0.5, 1.0};
    return g;
}

DenoiserConfig tiny_config() {
    DenoiserConfig c;
    c.blocks = 2;
    c.latent_dim = 16;
    c.heads = 4;
    c.max_frames = 8;
    c.voxel = tiny_voxels();
    return c;
}

GenerationContext make_context(const VoxelGeometry& g, bool with_goal) {
    GenerationContext ctx;
    SemanticPointCloud pc;
    pc.points.push_back({{0.5, -1.4, 0.5}, static_cast<std::uint8_t>(SemClass::sidewalk)});
    pc.points.push_back({{-1.5, 0.4, 2.5}, static_cast<std::uint8_t>(SemClass::building)});
    pc.points.push_back({{1.5, -1.4, -2.5}, static_cast<std::uint8_t>(SemClass::road)});
    ctx.scene = voxelize(pc, {0, 0, 0}, g);
    ctx.start = {0, 0, 0};
    if (with_goal) ctx.goal = Vec3{1.5, 0, 2.0};
    return ctx;
}

// Fully random parameters (output heads and FiLM included) for tests that
// need active conditioning.
template <typename Real>
ParamMap<Real> randomize(const ParamMap<Real>& init, RngStream rng, double scale = 0.2) {
    ParamMap<Real> out;
    for (const auto& [name, t] : init) {
        RngStream r = rng.split(name);
        out.emplace(name, Tensor<Real>::random_uniform(t.shape(), static_cast<Real>(-scale),
                                                       static_cast<Real>(scale), r));
    }
    return out;
}

template <typename Real>
Tensor<Real> random_motion_tensor(int frames, RngStream rng) {
    return Tensor<Real>::random_uniform({frames, ModelMotion::kFeatDim}, Real(-1), Real(1), rng);
}

}  // namespace

TEST_CASE("denoise output shape equals input shape and is deterministic") {
    const DenoiserConfig cfg = tiny_config();
    DenoiserModel<float> model(cfg);
    const ParamMap<float> params = randomize(model.init_params(RngStream(1)), RngStream(2));
    const GenerationContext ctx = make_context(cfg.voxel, true);
    const auto cond = model.encode_context(params, ctx);

    for (int frames : {2, 5, 8}) {
        const Tensor<float> x = random_motion_tensor<float>(frames, RngStream(3).split(frames));
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(frames), 1);
        const Tensor<float> a = model.denoise(params, x, 7, cond, mask);
        REQUIRE(a.shape() == x.shape());
        const Tensor<float> b = model.denoise(params, x, 7, cond, mask);
        REQUIRE(std::memcmp(a.data(), b.data(), a.numel() * sizeof(float)) == 0);
    }

    // Frame counts beyond the configured maximum are rejected.
    const Tensor<float> too_long = random_motion_tensor<float>(cfg.max_frames + 1, RngStream(9));
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(cfg.max_frames + 1), 1);
    REQUIRE_THROWS(model.denoise(params, too_long, 1, cond, mask));
}

TEST_CASE("each frame contributes two tokens") {
    DenoiserConfig cfg = tiny_config();
    cfg.max_frames = 60;
    DenoiserModel<float> model(cfg);
    const ParamMap<float> params = model.init_params(RngStream(1));
    const Tensor<float> x = random_motion_tensor<float>(60, RngStream(5));
    std::vector<std::uint8_t> mask(60, 1);
    const Tensor<float> tokens = model.token_stream(params, x, mask);
    REQUIRE(tokens.rows() == 120);  // 2 tokens per frame
    REQUIRE(tokens.cols() == cfg.latent_dim);
    REQUIRE(DenoiserConfig::kTokensPerFrame * 60 == 120);
}

TEST_CASE("masked frames are replaced by the mask embedding at token level") {
    const DenoiserConfig cfg = tiny_config();
    DenoiserModel<float> model(cfg);
    const ParamMap<float> params = randomize(model.init_params(RngStream(4)), RngStream(5));
    const int frames = 6;
    std::vector<std::uint8_t> mask = {1, 0, 1, 0, 0, 1};

    Tensor<float> x1 = random_motion_tensor<float>(frames, RngStream(6));
    Tensor<float> x2 = x1;
    // Arbitrary garbage on the masked frames only.
    for (int f = 0; f < frames; ++f) {
        if (mask[static_cast<std::size_t>(f)]) continue;
        for (int j = 0; j < ModelMotion::kFeatDim; ++j) x2.at(f, j) = 1e6f * (f + 1) + j;
    }
    const Tensor<float> t1 = model.token_stream(params, x1, mask);
    const Tensor<float> t2 = model.token_stream(params, x2, mask);
    REQUIRE(std::memcmp(t1.data(), t2.data(), t1.numel() * sizeof(float)) == 0);

    // And therefore the denoiser output is identical too.
    const GenerationContext ctx = make_context(cfg.voxel, false);
    const auto cond = model.encode_context(params, ctx);
    const Tensor<float> y1 = model.denoise(params, x1, 3, cond, mask);
    const Tensor<float> y2 = model.denoise(params, x2, 3, cond, mask);
    REQUIRE(std::memcmp(y1.data(), y2.data(), y1.numel() * sizeof(float)) == 0);
}

TEST_CASE("zero FiLM parameters make every block condition-free") {
    const DenoiserConfig cfg = tiny_config();
    DenoiserModel<float> model(cfg);
    // init_params creates zero FiLM heads; randomize everything else except
    // the FiLM tensors so the forward is interesting but unconditioned.
    ParamMap<float> params = randomize(model.init_params(RngStream(7)), RngStream(8));
    for (auto& [name, t] : params) {
        if (name.find("film") != std::string::npos) t = Tensor<float>::zeros(t.shape());
    }
    const GenerationContext ca = make_context(cfg.voxel, true);
    const GenerationContext cb = make_context(cfg.voxel, false);
    const auto cond_a = model.encode_context(params, ca);
    const auto cond_b = model.encode_context(params, cb);
    const auto cond_null = model.null_condition(params);

    const Tensor<float> x = random_motion_tensor<float>(5, RngStream(9));
    std::vector<std::uint8_t> mask(5, 1);
    const Tensor<float> ya = model.denoise(params, x, 3, cond_a, mask);
    const Tensor<float> yb = model.denoise(params, x, 900, cond_b, mask);
    const Tensor<float> yn = model.denoise(params, x, 41, cond_null, mask);
    REQUIRE(std::memcmp(ya.data(), yb.data(), ya.numel() * sizeof(float)) == 0);
    REQUIRE(std::memcmp(ya.data(), yn.data(), ya.numel() * sizeof(float)) == 0);
}

TEST_CASE("untrained model predicts a stationary rest pose") {
    const DenoiserConfig cfg = tiny_config();
    DenoiserModel<double> model(cfg);
    const ParamMap<double> params = model.init_params(RngStream(3));
    const auto cond = model.null_condition(params);
    const Tensor<double> x = random_motion_tensor<double>(4, RngStream(10));
    std::vector<std::uint8_t> mask(4, 1);
    const Tensor<double> y = model.denoise(params, x, 500, cond, mask);
    const ModelMotion mm = ModelMotion::from_tensor(y, {});
    for (int f = 0; f < 4; ++f) {
        REQUIRE(mm.velocity(f).norm() == 0.0);
        for (int s = 0; s < kNumJoints; ++s) {
            const Mat3 r = matrix_from_rot6d(mm.rotation(f, s));
            REQUIRE(max_abs_diff(r, Mat3::identity()) < 1e-12);
        }
    }
}

TEST_CASE("encode_context behavior") {
    const DenoiserConfig cfg = tiny_config();
    DenoiserModel<float> model(cfg);
    const ParamMap<float> params = randomize(model.init_params(RngStream(11)), RngStream(12));

    SECTION("empty grid, zero shape, no goal still yields a finite embedding") {
        GenerationContext ctx;
        ctx.scene = VoxelGrid::empty(cfg.voxel, {0, 0, 0});
        ctx.start = {0, 0, 0};
        const auto a = model.encode_context(params, ctx);
        REQUIRE(a.vec.all_finite());
        const auto b = model.encode_context(params, ctx);
        REQUIRE(std::memcmp(a.vec.data(), b.vec.data(), a.vec.numel() * sizeof(float)) == 0);
    }
    SECTION("goal changes the embedding") {
        const GenerationContext with_goal = make_context(cfg.voxel, true);
        GenerationContext no_goal = with_goal;
        no_goal.goal.reset();
        const auto a = model.encode_context(params, with_goal);
        const auto b = model.encode_context(params, no_goal);
        REQUIRE(std::memcmp(a.vec.data(), b.vec.data(), a.vec.numel() * sizeof(float)) != 0);

        GenerationContext other_goal = with_goal;
        other_goal.goal = Vec3{-2.0, 0, 1.0};
        const auto c = model.encode_context(params, other_goal);
        REQUIRE(std::memcmp(a.vec.data(), c.vec.data(), a.vec.numel() * sizeof(float)) != 0);
    }
    SECTION("scene content changes the embedding") {
        const GenerationContext base = make_context(cfg.voxel, false);
        GenerationContext empty = base;
        empty.scene = VoxelGrid::empty(cfg.voxel, {0, 0, 0});
        const auto a = model.encode_context(params, base);
        const auto b = model.encode_context(params, empty);
        REQUIRE(std::memcmp(a.vec.data(), b.vec.data(), a.vec.numel() * sizeof(float)) != 0);
    }
    SECTION("dropped condition is the learned null embedding, independent of ctx") {
        const auto n = model.null_condition(params);
        REQUIRE(n.is_null);
        REQUIRE(std::memcmp(n.vec.data(), params.at("null_cond").data(),
                            n.vec.numel() * sizeof(float)) == 0);
    }
    SECTION("start outside the grid is rejected") {
        GenerationContext ctx = make_context(cfg.voxel, false);
        ctx.start = {100, 0, 0};
        REQUIRE_THROWS(model.encode_context(params, ctx));
    }
}

TEST_CASE("masked frame inputs do not reach the masked-loss gradient") {
    // Full pipeline probe: loss(denoise(x)) with the loss masked downstream.
    const DenoiserConfig cfg = tiny_config();
    DenoiserModel<double> model(cfg);
    const ParamMap<double> params = randomize(model.init_params(RngStream(20)), RngStream(21));
    const Skeleton skel = skeleton_from_shape(ShapeParams::zero());
    const int frames = 5;
    const std::vector<std::uint8_t> mask = {1, 1, 0, 1, 0};
    const Tensor<double> target = random_motion_tensor<double>(frames, RngStream(22));
    const GenerationContext ctx = make_context(cfg.voxel, false);

    auto loss_of = [&](const Tensor<double>& x) {
        GradientTape<double> t;
        ParamLeaves<double> leaves;
        for (const auto& [name, v] : params) leaves.emplace(name, t.constant(v));
        auto cond = model.encode_context_node(t, leaves, ctx);
        auto pred = model.denoise_node(t, leaves, t.constant(x), 13, cond, mask);
        return training_loss_node(t, target, pred, mask, skel, LossWeights{}).value()[0];
    };

    Tensor<double> x = random_motion_tensor<double>(frames, RngStream(23));
    const double base = loss_of(x);
    Tensor<double> x2 = x;
    for (int f : {2, 4})
        for (int j = 0; j < ModelMotion::kFeatDim; ++j) x2.at(f, j) = -77.0 + j;
    REQUIRE(loss_of(x2) == base);  // bitwise: masked content never enters

    // Direct gradient of the loss w.r.t. the noisy input at masked frames.
    GradientTape<double> t;
    ParamLeaves<double> leaves;
    for (const auto& [name, v] : params) leaves.emplace(name, t.constant(v));
    auto xin = t.leaf(x, true);
    auto cond = model.encode_context_node(t, leaves, ctx);
    auto pred = model.denoise_node(t, leaves, xin, 13, cond, mask);
    auto loss = training_loss_node(t, target, pred, mask, skel, LossWeights{});
    t.backward(loss);
    const Tensor<double> gx = t.grad(xin);
    for (int f : {2, 4})
        for (int j = 0; j < ModelMotion::kFeatDim; ++j) REQUIRE(gx.at(f, j) == 0.0);
}

TEST_CASE("denoiser gradients match finite differences end to end") {
    DenoiserConfig cfg = tiny_config();
    cfg.blocks = 1;
    cfg.latent_dim = 8;
    cfg.heads = 2;
    DenoiserModel<double> model(cfg);
    ParamMap<double> params = randomize(model.init_params(RngStream(30)), RngStream(31), 0.3);
    const Skeleton skel = skeleton_from_shape(ShapeParams::zero());
    const int frames = 3;
    const std::vector<std::uint8_t> mask = {1, 0, 1};
    const Tensor<double> target =
        ModelMotion::rest(frames).to_tensor<double>();  // well-formed rotations
    const Tensor<double> x = random_motion_tensor<double>(frames, RngStream(32));
    const GenerationContext ctx = make_context(cfg.voxel, true);

    auto graph = [&](GradientTape<double>& t, const ParamLeaves<double>& l) {
        auto cond = model.encode_context_node(t, l, ctx);
        auto pred = model.denoise_node(t, l, t.constant(x), 5, cond, mask);
        return training_loss_node(t, target, pred, mask, skel, LossWeights{});
    };
    auto res = testutil::check_gradients(graph, params, RngStream(33), 4, 1e-5);
    INFO("worst " << res.worst_name << "[" << res.worst_index << "] analytic=" << res.analytic
                  << " numeric=" << res.numeric << " rel=" << res.worst_rel);
    REQUIRE(res.worst_rel < 1e-4);
    REQUIRE(res.checked > 200);
}
