#include <catch2/catch_amalgamated.hpp>

#include "pedgen/optim.hpp"
#include "pedgen/rng.hpp"
#include "pedgen/tape.hpp"
#include "pedgen/tensor.hpp"
#include "test_util.hpp"

using namespace pedgen;
using Catch::Approx;

TEST_CASE("rng streams are deterministic and splittable") {
    RngStream a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    RngStream root(7);
    RngStream c1 = root.split(1), c2 = root.split(2);
    REQUIRE(c1.next_u64() != c2.next_u64());
    // Splitting does not disturb the parent.
    RngStream root2(7);
    (void)root2.split(1);
    RngStream r3(7);
    REQUIRE(root2.next_u64() == r3.next_u64());

    RngStream u(3);
    double mean = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) mean += u.uniform();
    mean /= n;
    REQUIRE(mean == Approx(0.5).margin(0.02));

    RngStream g(4);
    double m1 = 0, m2 = 0;
    for (int i = 0; i < n; ++i) {
        const double z = g.normal();
        m1 += z;
        m2 += z * z;
    }
    REQUIRE(m1 / n == Approx(0.0).margin(0.03));
    REQUIRE(m2 / n == Approx(1.0).margin(0.05));
}

TEST_CASE("loss = sum(p) has unit gradients") {
    ParamMap<double> params;
    params.emplace("p", Tensor<double>({3}, {1.0, -2.0, 0.5}));
    auto graph = [](GradientTape<double>& t, const ParamLeaves<double>& l) {
        return t.sum_all(l.at("p"));
    };
    auto [loss, grads] = evaluate_with_gradients(graph, params);
    REQUIRE(loss == Approx(-0.5));
    for (int i = 0; i < 3; ++i) REQUIRE(grads.at("p")[i] == Approx(1.0));
}

TEST_CASE("loss = p^T p has gradient 2p") {
    ParamMap<double> params;
    params.emplace("p", Tensor<double>({3}, {2.0, 0.0, -1.0}));
    auto graph = [](GradientTape<double>& t, const ParamLeaves<double>& l) {
        auto p = l.at("p");
        return t.sum_all(t.mul(p, p));
    };
    auto [loss, grads] = evaluate_with_gradients(graph, params);
    REQUIRE(loss == Approx(5.0));
    REQUIRE(grads.at("p")[0] == Approx(4.0));
    REQUIRE(grads.at("p")[1] == Approx(0.0));
    REQUIRE(grads.at("p")[2] == Approx(-2.0));
}

TEST_CASE("two-layer network gradients match finite differences") {
    RngStream rng(11);
    ParamMap<double> params;
    RngStream r1 = rng.split("w1"), r2 = rng.split("w2"), r3 = rng.split("b1"),
              r4 = rng.split("x");
    params.emplace("w1", Tensor<double>::random_uniform({4, 8}, -1, 1, r1));
    params.emplace("b1", Tensor<double>::random_uniform({8}, -1, 1, r3));
    params.emplace("w2", Tensor<double>::random_uniform({8, 2}, -1, 1, r2));
    params.emplace("x", Tensor<double>::random_uniform({5, 4}, -1, 1, r4));
    auto graph = [](GradientTape<double>& t, const ParamLeaves<double>& l) {
        auto h = t.gelu(t.linear(l.at("x"), l.at("w1"), l.at("b1")));
        auto y = t.matmul(h, l.at("w2"));
        return t.sum_all(t.mul(y, y));
    };
    auto res = testutil::check_gradients(graph, params, rng.split("check"), 10, 1e-4);
    INFO("worst " << res.worst_name << "[" << res.worst_index << "] analytic=" << res.analytic
                  << " numeric=" << res.numeric);
    REQUIRE(res.worst_rel < 1e-4);
}

TEST_CASE("every tape op family passes a finite-difference check") {
    RngStream rng(23);
    ParamMap<double> params;
    auto mk = [&](const char* name, std::vector<int> shape, double lo = -1, double hi = 1) {
        RngStream r = rng.split(name);
        params.emplace(name, Tensor<double>::random_uniform(std::move(shape), lo, hi, r));
    };
    mk("a", {3, 4});
    mk("b", {3, 4});
    mk("w_nn", {4, 5});
    mk("w_nt", {5, 4});
    mk("w_tn", {3, 5});
    mk("gain", {4}, 0.5, 1.5);
    mk("bias", {4});
    mk("rows3", {6, 3});
    mk("rows3b", {6, 3});
    mk("m9a", {6, 9});
    mk("m9b", {6, 9});
    mk("pos", {3, 4}, 0.5, 2.0);   // stays positive for sqrt
    mk("kink", {3, 4}, 0.2, 1.0);  // away from relu/abs kinks
    mk("vrow", {5});
    mk("emb", {7, 4});

    auto graph = [](GradientTape<double>& t, const ParamLeaves<double>& l) {
        auto a = l.at("a"), b = l.at("b");
        auto s1 = t.sum_all(t.mul(t.add(a, b), t.sub(a, b)));
        auto mm1 = t.matmul(a, l.at("w_nn"));                     // [3,5]
        auto mm2 = t.matmul(a, l.at("w_nt"), false, true);        // [3,5]
        auto mm3 = t.matmul(l.at("w_tn"), mm1, true, false);      // [3,5]^T[3,5] -> [5,5]... no:
        // w_tn [3,5], mm1 [3,5]: w_tn^T mm1 -> [5,5]
        auto s2 = t.sum_all(t.mul(mm2, mm2));
        auto s3 = t.sum_all(mm3);
        auto sm = t.softmax_rows(a);
        auto ln = t.layer_norm_rows(b, l.at("gain"), l.at("bias"));
        auto s4 = t.sum_all(t.mul(sm, ln));
        auto cr = t.cross_rows(l.at("rows3"), l.at("rows3b"));
        auto s5 = t.sum_all(t.mul(cr, cr));
        auto m3 = t.mat3_mul_rows(l.at("m9a"), l.at("m9b"));
        auto ap = t.mat3_apply_const(m3, {0.3, -0.2, 0.9});
        auto s6 = t.sum_all(t.abs_val(ap));
        auto s7 = t.sum_all(t.sqrt_val(l.at("pos")));
        auto s8 = t.sum_all(t.relu(l.at("kink")));
        auto s9 = t.sum_all(t.gelu(l.at("kink")));
        auto sel = t.select_rows(a, {2, 0, 2});
        auto slc = t.slice_cols(sel, 1, 3);
        auto cat = t.concat_rows({slc, t.slice_rows(slc, 0, 1)});
        auto s10 = t.sum_all(t.mul(cat, cat));
        auto rv = t.add_rowvec(mm1, l.at("vrow"));
        auto rv2 = t.mul_rowvec(rv, l.at("vrow"));
        auto s11 = t.sum_all(t.abs_val(rv2));
        auto gs = t.gather_sum_rows(l.at("emb"), {0, 2, 3, 6}, {0, 3, 6, 1, 1, 5});
        auto s12 = t.sum_all(t.mul(gs, gs));
        auto sc = t.sum_cols(t.mul(a, a));  // [3]
        auto s13 = t.sum_all(t.sqrt_val(sc));
        auto dv = t.div_colvec(a, t.add_scalar(sc, 3.0));
        auto s14 = t.sum_all(t.mul(dv, t.mul_colvec(a, sc)));
        auto oc = t.outer_const({0.5, -1.5, 2.0}, l.at("vrow"));
        auto s15 = t.sum_all(t.mul(oc, oc));
        auto cc = t.concat_cols({a, b});
        auto s16 = t.sum_all(t.mul(cc, cc));
        auto sr = t.scale_rows(a, {0.5, -2.0, 1.5});
        auto s17 = t.sum_all(t.mul(sr, b));
        auto mm4 = t.matmul(l.at("w_tn"), l.at("rows3"), true, true);  // [5,3]x[3,6]
        auto s18 = t.sum_all(t.mul(mm4, mm4));
        auto total = t.add(s1, s2);
        for (auto n : {s3, s4, s5, s6, s7, s8, s9, s10, s11, s12, s13, s14, s15, s16, s17, s18})
            total = t.add(total, n);
        return total;
    };
    auto res = testutil::check_gradients(graph, params, rng.split("check"), 12, 1e-5);
    INFO("worst " << res.worst_name << "[" << res.worst_index << "] analytic=" << res.analytic
                  << " numeric=" << res.numeric << " rel=" << res.worst_rel);
    REQUIRE(res.worst_rel < 1e-4);
    REQUIRE(res.checked > 100);
}

TEST_CASE("identical seeds produce bit-identical losses and gradients") {
    auto run = [] {
        RngStream rng(5);
        ParamMap<double> params;
        RngStream r1 = rng.split("w"), r2 = rng.split("x");
        params.emplace("w", Tensor<double>::random_uniform({6, 6}, -1, 1, r1));
        params.emplace("x", Tensor<double>::random_uniform({4, 6}, -1, 1, r2));
        auto graph = [](GradientTape<double>& t, const ParamLeaves<double>& l) {
            auto h = t.softmax_rows(t.matmul(l.at("x"), l.at("w")));
            return t.sum_all(t.mul(h, h));
        };
        return evaluate_with_gradients(graph, params);
    };
    auto [l1, g1] = run();
    auto [l2, g2] = run();
    REQUIRE(std::memcmp(&l1, &l2, sizeof(double)) == 0);
    for (const auto& [name, g] : g1) {
        const auto& h = g2.at(name);
        REQUIRE(std::memcmp(g.data(), h.data(), g.numel() * sizeof(double)) == 0);
    }
}

TEST_CASE("backward accumulates when replayed twice") {
    GradientTape<double> t;
    auto p = t.leaf(Tensor<double>({2}, {1.0, 2.0}), true);
    auto loss = t.sum_all(t.mul(p, p));
    t.backward(loss);
    REQUIRE(t.grad(p)[0] == Approx(2.0));
    t.backward(loss);
    REQUIRE(t.grad(p)[0] == Approx(4.0));  // second replay adds on top
}

TEST_CASE("non-finite intermediates are rejected") {
    ParamMap<double> params;
    params.emplace("p", Tensor<double>({1}, {-1.0}));
    auto graph = [](GradientTape<double>& t, const ParamLeaves<double>& l) {
        return t.sum_all(t.sqrt_val(l.at("p")));  // sqrt of negative
    };
    REQUIRE_THROWS(evaluate_with_gradients(graph, params));
}

TEST_CASE("clip_gradients") {
    SECTION("already within norm: unchanged") {
        ParamMap<float> g;
        g.emplace("a", Tensor<float>({2}, {0.3f, 0.4f}));  // norm 0.5
        auto c = clip_gradients(g, 1.0);
        REQUIRE(c.at("a")[0] == 0.3f);
        REQUIRE(c.at("a")[1] == 0.4f);
    }
    SECTION("norm 5 clipped to 1 preserves direction") {
        ParamMap<float> g;
        g.emplace("a", Tensor<float>({2}, {3.0f, 4.0f}));
        auto c = clip_gradients(g, 1.0);
        REQUIRE(c.at("a")[0] == Approx(0.6).epsilon(1e-6));
        REQUIRE(c.at("a")[1] == Approx(0.8).epsilon(1e-6));
    }
    SECTION("zero grads stay zero") {
        ParamMap<float> g;
        g.emplace("a", Tensor<float>::zeros({3}));
        auto c = clip_gradients(g, 1.0);
        for (int i = 0; i < 3; ++i) REQUIRE(c.at("a")[i] == 0.0f);
    }
    SECTION("idempotent") {
        ParamMap<double> g;
        g.emplace("a", Tensor<double>({3}, {3.0, -4.0, 12.0}));  // norm 13
        g.emplace("b", Tensor<double>({1}, {0.0}));
        auto once = clip_gradients(g, 1.0);
        auto twice = clip_gradients(once, 1.0);
        for (const auto& [name, t] : once) {
            for (std::size_t i = 0; i < t.numel(); ++i)
                REQUIRE(twice.at(name)[i] == Approx(t[i]).margin(1e-12));
        }
        REQUIRE(global_l2_norm(once) <= 1.0 + 1e-9);
    }
    SECTION("non-finite input raises") {
        ParamMap<double> g;
        g.emplace("a", Tensor<double>({1}, {std::numeric_limits<double>::infinity()}));
        REQUIRE_THROWS(clip_gradients(g, 1.0));
    }
}

TEST_CASE("adam_step") {
    SECTION("zero gradient, zero weight decay leaves params unchanged") {
        ParamMap<double> p, g;
        p.emplace("a", Tensor<double>({2}, {1.5, -2.5}));
        g.emplace("a", Tensor<double>::zeros({2}));
        AdamState<double> st;
        st.lr = 0.1;
        st.weight_decay = 0.0;
        auto q = adam_step(p, g, st);
        REQUIRE(q.at("a")[0] == Approx(1.5));
        REQUIRE(q.at("a")[1] == Approx(-2.5));
    }
    SECTION("hand-evaluated single step on a scalar") {
        // p=1, g=1, lr=0.1: mhat=1, vhat=1 -> p' = 1 - 0.1/(1+eps) ~= 0.9
        ParamMap<double> p, g;
        p.emplace("a", Tensor<double>({1}, {1.0}));
        g.emplace("a", Tensor<double>({1}, {1.0}));
        AdamState<double> st;
        st.lr = 0.1;
        st.weight_decay = 0.0;
        auto q = adam_step(p, g, st);
        REQUIRE(q.at("a")[0] == Approx(0.9).margin(1e-6));
    }
    SECTION("stepwise learning-rate decay") {
        AdamState<double> st;
        st.lr = 4e-4;
        st.decay_factor = 0.9;
        st.decay_interval_epochs = 75;
        st.epoch = 150;
        REQUIRE(st.current_lr() == Approx(4e-4 * 0.81));
        st.epoch = 0;
        REQUIRE(st.current_lr() == Approx(4e-4));
        st.epoch = 74;
        REQUIRE(st.current_lr() == Approx(4e-4));
    }
    SECTION("shape mismatch raises") {
        ParamMap<double> p, g;
        p.emplace("a", Tensor<double>::zeros({2}));
        g.emplace("a", Tensor<double>::zeros({3}));
        AdamState<double> st;
        REQUIRE_THROWS(adam_step(p, g, st));
    }
    SECTION("decoupled weight decay pulls params toward zero") {
        ParamMap<double> p, g;
        p.emplace("a", Tensor<double>({1}, {2.0}));
        g.emplace("a", Tensor<double>::zeros({1}));
        AdamState<double> st;
        st.lr = 0.1;
        st.weight_decay = 0.5;
        auto q = adam_step(p, g, st);
        REQUIRE(q.at("a")[0] == Approx(2.0 - 0.1 * 0.5 * 2.0));
    }
}
