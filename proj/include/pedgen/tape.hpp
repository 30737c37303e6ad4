#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pedgen/common.hpp"
#include "pedgen/tensor.hpp"

namespace pedgen {

template <typename Real>
class GradientTape;

// Lightweight handle into a tape. Ops return these; the tensor behind a
// handle is immutable once recorded.
template <typename Real>
struct TapeNode {
    GradientTape<Real>* tape = nullptr;
    int idx = -1;

    bool valid() const { return tape != nullptr && idx >= 0; }
    const Tensor<Real>& value() const { return tape->value(idx); }
    const std::vector<int>& shape() const { return value().shape(); }
    int rows() const { return value().rows(); }
    int cols() const { return value().cols(); }
};

// Define-by-run reverse-mode tape. The graph is rebuilt for every forward
// pass; backward() walks the recorded entries once in reverse order and
// accumulates gradients, so replaying backward twice accumulates twice.
template <typename Real>
class GradientTape {
public:
    using Node = TapeNode<Real>;

    GradientTape() { entries_.reserve(256); }

    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    // ------------------------------------------------------------------ leaves

    Node leaf(Tensor<Real> v, bool requires_grad) {
        return push(std::move(v), requires_grad, {}, nullptr);
    }

    Node constant(Tensor<Real> v) { return leaf(std::move(v), false); }

    Node scalar(Real v) { return constant(Tensor<Real>::scalar(v)); }

    // -------------------------------------------------------------- elementwise

    Node add(Node a, Node b) {
        check_same_shape(a, b, "add");
        Tensor<Real> out = value(a.idx);
        const Tensor<Real>& bv = value(b.idx);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += bv[i];
        return push(std::move(out), needs(a) || needs(b), {a.idx, b.idx},
                    [](GradientTape& t, const BackCtx& c) {
                        t.acc_same(c.parents[0], t.grad_ref(c.self));
                        t.acc_same(c.parents[1], t.grad_ref(c.self));
                    });
    }

    Node sub(Node a, Node b) {
        check_same_shape(a, b, "sub");
        Tensor<Real> out = value(a.idx);
        const Tensor<Real>& bv = value(b.idx);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= bv[i];
        return push(std::move(out), needs(a) || needs(b), {a.idx, b.idx},
                    [](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        t.acc_same(c.parents[0], g);
                        t.acc_scaled(c.parents[1], g, Real(-1));
                    });
    }

    Node mul(Node a, Node b) {
        check_same_shape(a, b, "mul");
        Tensor<Real> out = value(a.idx);
        const Tensor<Real>& bv = value(b.idx);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= bv[i];
        return push(std::move(out), needs(a) || needs(b), {a.idx, b.idx},
                    [](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& av = t.value(c.parents[0]);
                        const Tensor<Real>& bv2 = t.value(c.parents[1]);
                        if (t.needs_idx(c.parents[0])) {
                            Tensor<Real>& ga = t.grad_buffer(c.parents[0]);
                            for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv2[i];
                        }
                        if (t.needs_idx(c.parents[1])) {
                            Tensor<Real>& gb = t.grad_buffer(c.parents[1]);
                            for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
                        }
                    });
    }

    Node add_scalar(Node a, Real s) {
        Tensor<Real> out = value(a.idx);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] += s;
        return push(std::move(out), needs(a), {a.idx},
                    [](GradientTape& t, const BackCtx& c) {
                        t.acc_same(c.parents[0], t.grad_ref(c.self));
                    });
    }

    Node mul_scalar(Node a, Real s) {
        Tensor<Real> out = value(a.idx);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
        return push(std::move(out), needs(a), {a.idx},
                    [s](GradientTape& t, const BackCtx& c) {
                        t.acc_scaled(c.parents[0], t.grad_ref(c.self), s);
                    });
    }

    Node neg(Node a) { return mul_scalar(a, Real(-1)); }

    // --------------------------------------------------------------- nonlinear

    Node relu(Node a) {
        Tensor<Real> out = value(a.idx);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = out[i] > Real(0) ? out[i] : Real(0);
        return push(std::move(out), needs(a), {a.idx},
                    [](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& x = t.value(c.parents[0]);
                        Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                        for (std::size_t i = 0; i < g.numel(); ++i) {
                            if (x[i] > Real(0)) gx[i] += g[i];
                        }
                    });
    }

    Node gelu(Node a) {
        const Tensor<Real>& x = value(a.idx);
        Tensor<Real> out(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) {
            const double xv = static_cast<double>(x[i]);
            out[i] = static_cast<Real>(0.5 * xv * (1.0 + std::erf(xv / std::sqrt(2.0))));
        }
        return push(std::move(out), needs(a), {a.idx},
                    [](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& x2 = t.value(c.parents[0]);
                        Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                        constexpr double inv_sqrt2pi = 0.3989422804014327;
                        for (std::size_t i = 0; i < g.numel(); ++i) {
                            const double xv = static_cast<double>(x2[i]);
                            const double d = 0.5 * (1.0 + std::erf(xv / std::sqrt(2.0))) +
                                             xv * inv_sqrt2pi * std::exp(-0.5 * xv * xv);
                            gx[i] += g[i] * static_cast<Real>(d);
                        }
                    });
    }

    Node abs_val(Node a) {
        Tensor<Real> out = value(a.idx);
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::abs(out[i]);
        return push(std::move(out), needs(a), {a.idx},
                    [](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& x = t.value(c.parents[0]);
                        Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                        for (std::size_t i = 0; i < g.numel(); ++i) {
                            if (x[i] > Real(0)) gx[i] += g[i];
                            else if (x[i] < Real(0)) gx[i] -= g[i];
                        }
                    });
    }

    // Square root; subgradient 0 at x = 0 keeps exact-zero losses clean.
    Node sqrt_val(Node a) {
        const Tensor<Real>& x = value(a.idx);
        Tensor<Real> out(x.shape());
        for (std::size_t i = 0; i < x.numel(); ++i) {
            require(x[i] >= Real(0), "sqrt_val: negative input");
            out[i] = std::sqrt(x[i]);
        }
        return push(std::move(out), needs(a), {a.idx},
                    [](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& y = t.value(c.self);
                        Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                        for (std::size_t i = 0; i < g.numel(); ++i) {
                            if (y[i] > Real(0)) gx[i] += g[i] / (Real(2) * y[i]);
                        }
                    });
    }

    // ----------------------------------------------------------------- matmul

    Node matmul(Node a, Node b, bool trans_a = false, bool trans_b = false) {
        const Tensor<Real>& av = value(a.idx);
        const Tensor<Real>& bv = value(b.idx);
        require_shape(av.ndim() == 2 && bv.ndim() == 2, "matmul: expects 2-d tensors");
        const int m = trans_a ? av.extent(1) : av.extent(0);
        const int k = trans_a ? av.extent(0) : av.extent(1);
        const int kb = trans_b ? bv.extent(1) : bv.extent(0);
        const int n = trans_b ? bv.extent(0) : bv.extent(1);
        require_shape(k == kb, "matmul: inner extents disagree " + av.shape_str() + " x " + bv.shape_str());
        Tensor<Real> out({m, n});
        gemm_acc(av.data(), bv.data(), out.data(), m, k, n, trans_a, trans_b);
        return push(std::move(out), needs(a) || needs(b), {a.idx, b.idx},
                    [trans_a, trans_b, m, k, n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& av2 = t.value(c.parents[0]);
                        const Tensor<Real>& bv2 = t.value(c.parents[1]);
                        if (t.needs_idx(c.parents[0])) {
                            Tensor<Real>& ga = t.grad_buffer(c.parents[0]);
                            if (!trans_a && !trans_b) {
                                gemm_acc(g.data(), bv2.data(), ga.data(), m, n, k, false, true);
                            } else if (!trans_a && trans_b) {
                                gemm_acc(g.data(), bv2.data(), ga.data(), m, n, k, false, false);
                            } else if (trans_a && !trans_b) {
                                // dA (k x m) = B g^T
                                gemm_acc(bv2.data(), g.data(), ga.data(), k, n, m, false, true);
                            } else {
                                // dA (k x m) = (g B)^T
                                Tensor<Real> tmp({m, k});
                                gemm_acc(g.data(), bv2.data(), tmp.data(), m, n, k, false, false);
                                for (int i = 0; i < m; ++i)
                                    for (int p = 0; p < k; ++p) ga.at(p, i) += tmp.at(i, p);
                            }
                        }
                        if (t.needs_idx(c.parents[1])) {
                            Tensor<Real>& gb = t.grad_buffer(c.parents[1]);
                            if (!trans_a && !trans_b) {
                                gemm_acc(av2.data(), g.data(), gb.data(), k, m, n, true, false);
                            } else if (!trans_a && trans_b) {
                                // dB (n x k) = g^T A
                                gemm_acc(g.data(), av2.data(), gb.data(), n, m, k, true, false);
                            } else if (trans_a && !trans_b) {
                                gemm_acc(av2.data(), g.data(), gb.data(), k, m, n, false, false);
                            } else {
                                // dB (n x k) = (A g)^T
                                Tensor<Real> tmp({k, n});
                                gemm_acc(av2.data(), g.data(), tmp.data(), k, m, n, false, false);
                                for (int p = 0; p < k; ++p)
                                    for (int j = 0; j < n; ++j) gb.at(j, p) += tmp.at(p, j);
                            }
                        }
                    });
    }

    // --------------------------------------------------------------- broadcast

    // X (m x n) + v (n). v may be shaped [n] or [1, n].
    Node add_rowvec(Node x, Node v) {
        const Tensor<Real>& xv = value(x.idx);
        const Tensor<Real>& vv = value(v.idx);
        const int m = xv.rows(), n = xv.cols();
        require_shape(static_cast<int>(vv.numel()) == n, "add_rowvec: width mismatch");
        Tensor<Real> out = xv;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] += vv[j];
        return push(std::move(out), needs(x) || needs(v), {x.idx, v.idx},
                    [m, n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        if (t.needs_idx(c.parents[0])) t.acc_same(c.parents[0], g);
                        if (t.needs_idx(c.parents[1])) {
                            Tensor<Real>& gv = t.grad_buffer(c.parents[1]);
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < n; ++j) gv[j] += g[static_cast<std::size_t>(i) * n + j];
                        }
                    });
    }

    Node mul_rowvec(Node x, Node v) {
        const Tensor<Real>& xv = value(x.idx);
        const Tensor<Real>& vv = value(v.idx);
        const int m = xv.rows(), n = xv.cols();
        require_shape(static_cast<int>(vv.numel()) == n, "mul_rowvec: width mismatch");
        Tensor<Real> out = xv;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] *= vv[j];
        return push(std::move(out), needs(x) || needs(v), {x.idx, v.idx},
                    [m, n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& xv2 = t.value(c.parents[0]);
                        const Tensor<Real>& vv2 = t.value(c.parents[1]);
                        if (t.needs_idx(c.parents[0])) {
                            Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < n; ++j) {
                                    const std::size_t o = static_cast<std::size_t>(i) * n + j;
                                    gx[o] += g[o] * vv2[j];
                                }
                        }
                        if (t.needs_idx(c.parents[1])) {
                            Tensor<Real>& gv = t.grad_buffer(c.parents[1]);
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < n; ++j) {
                                    const std::size_t o = static_cast<std::size_t>(i) * n + j;
                                    gv[j] += g[o] * xv2[o];
                                }
                        }
                    });
    }

    // Per-row constant scale (weights are not differentiated).
    Node scale_rows(Node x, std::vector<Real> w) {
        const Tensor<Real>& xv = value(x.idx);
        const int m = xv.rows(), n = xv.cols();
        require_shape(static_cast<int>(w.size()) == m, "scale_rows: weight count mismatch");
        Tensor<Real> out = xv;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] *= w[i];
        return push(std::move(out), needs(x), {x.idx},
                    [w = std::move(w), m, n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                        for (int i = 0; i < m; ++i)
                            for (int j = 0; j < n; ++j) {
                                const std::size_t o = static_cast<std::size_t>(i) * n + j;
                                gx[o] += g[o] * w[i];
                            }
                    });
    }

    // a (constant, length m) ⊗ v (node, length n) -> [m, n].
    Node outer_const(std::vector<Real> a, Node v) {
        const Tensor<Real>& vv = value(v.idx);
        const int m = static_cast<int>(a.size());
        const int n = static_cast<int>(vv.numel());
        Tensor<Real> out({m, n});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = a[i] * vv[j];
        return push(std::move(out), needs(v), {v.idx},
                    [a = std::move(a), m, n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        Tensor<Real>& gv = t.grad_buffer(c.parents[0]);
                        for (int i = 0; i < m; ++i)
                            for (int j = 0; j < n; ++j) gv[j] += a[i] * g[static_cast<std::size_t>(i) * n + j];
                    });
    }

    // -------------------------------------------------------- slicing/stacking

    Node select_rows(Node x, std::vector<int> rows) {
        const Tensor<Real>& xv = value(x.idx);
        const int n = xv.cols();
        const int m = static_cast<int>(rows.size());
        Tensor<Real> out({m, n});
        for (int i = 0; i < m; ++i) {
            require_shape(rows[i] >= 0 && rows[i] < xv.rows(), "select_rows: index out of range");
            const Real* src = xv.data() + static_cast<std::size_t>(rows[i]) * n;
            Real* dst = out.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) dst[j] = src[j];
        }
        return push(std::move(out), needs(x), {x.idx},
                    [rows = std::move(rows), n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                        for (std::size_t i = 0; i < rows.size(); ++i) {
                            const Real* src = g.data() + i * n;
                            Real* dst = gx.data() + static_cast<std::size_t>(rows[i]) * n;
                            for (int j = 0; j < n; ++j) dst[j] += src[j];
                        }
                    });
    }

    Node slice_rows(Node x, int r0, int r1) {
        const Tensor<Real>& xv = value(x.idx);
        require_shape(0 <= r0 && r0 < r1 && r1 <= xv.rows(), "slice_rows: bad range");
        const int n = xv.cols();
        Tensor<Real> out({r1 - r0, n});
        std::copy(xv.data() + static_cast<std::size_t>(r0) * n,
                  xv.data() + static_cast<std::size_t>(r1) * n, out.data());
        return push(std::move(out), needs(x), {x.idx},
                    [r0, n, m = r1 - r0](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                        Real* dst = gx.data() + static_cast<std::size_t>(r0) * n;
                        for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i) dst[i] += g[i];
                    });
    }

    Node slice_cols(Node x, int c0, int c1) {
        const Tensor<Real>& xv = value(x.idx);
        require_shape(0 <= c0 && c0 < c1 && c1 <= xv.cols(), "slice_cols: bad range");
        const int m = xv.rows(), n = xv.cols(), w = c1 - c0;
        Tensor<Real> out({m, w});
        for (int i = 0; i < m; ++i) {
            const Real* src = xv.data() + static_cast<std::size_t>(i) * n + c0;
            Real* dst = out.data() + static_cast<std::size_t>(i) * w;
            for (int j = 0; j < w; ++j) dst[j] = src[j];
        }
        return push(std::move(out), needs(x), {x.idx},
                    [c0, m, n, w](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                        for (int i = 0; i < m; ++i) {
                            const Real* src = g.data() + static_cast<std::size_t>(i) * w;
                            Real* dst = gx.data() + static_cast<std::size_t>(i) * n + c0;
                            for (int j = 0; j < w; ++j) dst[j] += src[j];
                        }
                    });
    }

    Node concat_rows(const std::vector<Node>& parts) {
        require_shape(!parts.empty(), "concat_rows: empty");
        const int n = value(parts[0].idx).cols();
        int m = 0;
        bool any_grad = false;
        std::vector<int> parents;
        parents.reserve(parts.size());
        for (const Node& p : parts) {
            require_shape(value(p.idx).cols() == n, "concat_rows: width mismatch");
            m += value(p.idx).rows();
            any_grad = any_grad || needs(p);
            parents.push_back(p.idx);
        }
        Tensor<Real> out({m, n});
        Real* dst = out.data();
        for (const Node& p : parts) {
            const Tensor<Real>& pv = value(p.idx);
            std::copy(pv.data(), pv.data() + pv.numel(), dst);
            dst += pv.numel();
        }
        return push(std::move(out), any_grad, std::move(parents),
                    [n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        std::size_t off = 0;
                        for (int pi : c.parents) {
                            const std::size_t cnt = t.value(pi).numel();
                            if (t.needs_idx(pi)) {
                                Tensor<Real>& gp = t.grad_buffer(pi);
                                for (std::size_t i = 0; i < cnt; ++i) gp[i] += g[off + i];
                            }
                            off += cnt;
                        }
                        (void)n;
                    });
    }

    Node concat_cols(const std::vector<Node>& parts) {
        require_shape(!parts.empty(), "concat_cols: empty");
        const int m = value(parts[0].idx).rows();
        int n = 0;
        bool any_grad = false;
        std::vector<int> parents;
        std::vector<int> widths;
        for (const Node& p : parts) {
            require_shape(value(p.idx).rows() == m, "concat_cols: height mismatch");
            widths.push_back(value(p.idx).cols());
            n += widths.back();
            any_grad = any_grad || needs(p);
            parents.push_back(p.idx);
        }
        Tensor<Real> out({m, n});
        int c0 = 0;
        for (std::size_t pi = 0; pi < parts.size(); ++pi) {
            const Tensor<Real>& pv = value(parts[pi].idx);
            const int w = widths[pi];
            for (int i = 0; i < m; ++i) {
                const Real* src = pv.data() + static_cast<std::size_t>(i) * w;
                Real* dst = out.data() + static_cast<std::size_t>(i) * n + c0;
                for (int j = 0; j < w; ++j) dst[j] = src[j];
            }
            c0 += w;
        }
        return push(std::move(out), any_grad, std::move(parents),
                    [m, n, widths = std::move(widths)](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        int c0b = 0;
                        for (std::size_t pi = 0; pi < c.parents.size(); ++pi) {
                            const int w = widths[pi];
                            if (t.needs_idx(c.parents[pi])) {
                                Tensor<Real>& gp = t.grad_buffer(c.parents[pi]);
                                for (int i = 0; i < m; ++i) {
                                    const Real* src = g.data() + static_cast<std::size_t>(i) * n + c0b;
                                    Real* dst = gp.data() + static_cast<std::size_t>(i) * w;
                                    for (int j = 0; j < w; ++j) dst[j] += src[j];
                                }
                            }
                            c0b += w;
                        }
                    });
    }

    // out[i, :] = sum over j in [offsets[i], offsets[i+1]) of W[indices[j], :].
    // Used for bag-of-rows embeddings (e.g. voxel columns as sums of one-hot
    // class embeddings).
    Node gather_sum_rows(Node w, std::vector<int> offsets, std::vector<int> indices) {
        const Tensor<Real>& wv = value(w.idx);
        const int d = wv.cols();
        const int m = static_cast<int>(offsets.size()) - 1;
        require_shape(m >= 0 && offsets.front() == 0 &&
                          offsets.back() == static_cast<int>(indices.size()),
                      "gather_sum_rows: bad offsets");
        Tensor<Real> out({m, d});
        for (int i = 0; i < m; ++i) {
            Real* dst = out.data() + static_cast<std::size_t>(i) * d;
            for (int j = offsets[i]; j < offsets[i + 1]; ++j) {
                require_shape(indices[j] >= 0 && indices[j] < wv.rows(),
                              "gather_sum_rows: index out of range");
                const Real* src = wv.data() + static_cast<std::size_t>(indices[j]) * d;
                for (int q = 0; q < d; ++q) dst[q] += src[q];
            }
        }
        return push(std::move(out), needs(w), {w.idx},
                    [offsets = std::move(offsets), indices = std::move(indices), d](
                        GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        Tensor<Real>& gw = t.grad_buffer(c.parents[0]);
                        const int m2 = static_cast<int>(offsets.size()) - 1;
                        for (int i = 0; i < m2; ++i) {
                            const Real* src = g.data() + static_cast<std::size_t>(i) * d;
                            for (int j = offsets[i]; j < offsets[i + 1]; ++j) {
                                Real* dst = gw.data() + static_cast<std::size_t>(indices[j]) * d;
                                for (int q = 0; q < d; ++q) dst[q] += src[q];
                            }
                        }
                    });
    }

    // ------------------------------------------------------------- reductions

    Node sum_all(Node x) {
        const Tensor<Real>& xv = value(x.idx);
        Real acc = 0;
        for (std::size_t i = 0; i < xv.numel(); ++i) acc += xv[i];
        return push(Tensor<Real>::scalar(acc), needs(x), {x.idx},
                    [](GradientTape& t, const BackCtx& c) {
                        const Real g = t.grad_ref(c.self)[0];
                        Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                        for (std::size_t i = 0; i < gx.numel(); ++i) gx[i] += g;
                    });
    }

    Node mean_all(Node x) {
        const std::size_t n = value(x.idx).numel();
        return mul_scalar(sum_all(x), Real(1) / static_cast<Real>(n));
    }

    // Reduce over columns: [m, n] -> [m].
    Node sum_cols(Node x) {
        const Tensor<Real>& xv = value(x.idx);
        const int m = xv.rows(), n = xv.cols();
        Tensor<Real> out({m});
        for (int i = 0; i < m; ++i) {
            Real acc = 0;
            const Real* src = xv.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) acc += src[j];
            out[i] = acc;
        }
        return push(std::move(out), needs(x), {x.idx},
                    [m, n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                        for (int i = 0; i < m; ++i) {
                            Real* dst = gx.data() + static_cast<std::size_t>(i) * n;
                            for (int j = 0; j < n; ++j) dst[j] += g[i];
                        }
                    });
    }

    // X[i, :] * c[i]; c shaped [m].
    Node mul_colvec(Node x, Node cvec) {
        const Tensor<Real>& xv = value(x.idx);
        const Tensor<Real>& cv = value(cvec.idx);
        const int m = xv.rows(), n = xv.cols();
        require_shape(static_cast<int>(cv.numel()) == m, "mul_colvec: height mismatch");
        Tensor<Real> out = xv;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] *= cv[i];
        return push(std::move(out), needs(x) || needs(cvec), {x.idx, cvec.idx},
                    [m, n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& xv2 = t.value(c.parents[0]);
                        const Tensor<Real>& cv2 = t.value(c.parents[1]);
                        if (t.needs_idx(c.parents[0])) {
                            Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < n; ++j) {
                                    const std::size_t o = static_cast<std::size_t>(i) * n + j;
                                    gx[o] += g[o] * cv2[i];
                                }
                        }
                        if (t.needs_idx(c.parents[1])) {
                            Tensor<Real>& gc = t.grad_buffer(c.parents[1]);
                            for (int i = 0; i < m; ++i) {
                                Real acc = 0;
                                for (int j = 0; j < n; ++j) {
                                    const std::size_t o = static_cast<std::size_t>(i) * n + j;
                                    acc += g[o] * xv2[o];
                                }
                                gc[i] += acc;
                            }
                        }
                    });
    }

    // X[i, :] / c[i]; c shaped [m].
    Node div_colvec(Node x, Node cvec) {
        const Tensor<Real>& xv = value(x.idx);
        const Tensor<Real>& cv = value(cvec.idx);
        const int m = xv.rows(), n = xv.cols();
        require_shape(static_cast<int>(cv.numel()) == m, "div_colvec: height mismatch");
        Tensor<Real> out = xv;
        for (int i = 0; i < m; ++i) {
            require(cv[i] != Real(0), "div_colvec: division by zero");
            const Real inv = Real(1) / cv[i];
            for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] *= inv;
        }
        return push(std::move(out), needs(x) || needs(cvec), {x.idx, cvec.idx},
                    [m, n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& y = t.value(c.self);
                        const Tensor<Real>& cv2 = t.value(c.parents[1]);
                        if (t.needs_idx(c.parents[0])) {
                            Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                            for (int i = 0; i < m; ++i) {
                                const Real inv = Real(1) / cv2[i];
                                for (int j = 0; j < n; ++j) {
                                    const std::size_t o = static_cast<std::size_t>(i) * n + j;
                                    gx[o] += g[o] * inv;
                                }
                            }
                        }
                        if (t.needs_idx(c.parents[1])) {
                            Tensor<Real>& gc = t.grad_buffer(c.parents[1]);
                            for (int i = 0; i < m; ++i) {
                                Real acc = 0;
                                for (int j = 0; j < n; ++j) {
                                    const std::size_t o = static_cast<std::size_t>(i) * n + j;
                                    acc += g[o] * y[o];
                                }
                                gc[i] -= acc / cv2[i];
                            }
                        }
                    });
    }

    // ----------------------------------------------------------- fused layers

    Node softmax_rows(Node x) {
        const Tensor<Real>& xv = value(x.idx);
        const int m = xv.rows(), n = xv.cols();
        Tensor<Real> out(xv.shape());
        for (int i = 0; i < m; ++i) {
            const Real* src = xv.data() + static_cast<std::size_t>(i) * n;
            Real* dst = out.data() + static_cast<std::size_t>(i) * n;
            Real mx = src[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, src[j]);
            Real z = 0;
            for (int j = 0; j < n; ++j) {
                dst[j] = std::exp(src[j] - mx);
                z += dst[j];
            }
            const Real inv = Real(1) / z;
            for (int j = 0; j < n; ++j) dst[j] *= inv;
        }
        return push(std::move(out), needs(x), {x.idx},
                    [m, n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& y = t.value(c.self);
                        Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                        for (int i = 0; i < m; ++i) {
                            const std::size_t o = static_cast<std::size_t>(i) * n;
                            Real dot = 0;
                            for (int j = 0; j < n; ++j) dot += g[o + j] * y[o + j];
                            for (int j = 0; j < n; ++j) gx[o + j] += y[o + j] * (g[o + j] - dot);
                        }
                    });
    }

    Node layer_norm_rows(Node x, Node gain, Node bias, Real eps = Real(1e-5)) {
        const Tensor<Real>& xv = value(x.idx);
        const Tensor<Real>& gv = value(gain.idx);
        const Tensor<Real>& bv = value(bias.idx);
        const int m = xv.rows(), n = xv.cols();
        require_shape(static_cast<int>(gv.numel()) == n && static_cast<int>(bv.numel()) == n,
                      "layer_norm_rows: gain/bias width mismatch");
        Tensor<Real> out(xv.shape());
        std::vector<Real> xhat(static_cast<std::size_t>(m) * n);
        std::vector<Real> inv_std(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) {
            const Real* src = xv.data() + static_cast<std::size_t>(i) * n;
            Real mu = 0;
            for (int j = 0; j < n; ++j) mu += src[j];
            mu /= static_cast<Real>(n);
            Real var = 0;
            for (int j = 0; j < n; ++j) var += (src[j] - mu) * (src[j] - mu);
            var /= static_cast<Real>(n);
            const Real istd = Real(1) / std::sqrt(var + eps);
            inv_std[static_cast<std::size_t>(i)] = istd;
            Real* dst = out.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const Real xh = (src[j] - mu) * istd;
                xhat[static_cast<std::size_t>(i) * n + j] = xh;
                dst[j] = gv[j] * xh + bv[j];
            }
        }
        return push(std::move(out), needs(x) || needs(gain) || needs(bias),
                    {x.idx, gain.idx, bias.idx},
                    [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                        GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& gv2 = t.value(c.parents[1]);
                        if (t.needs_idx(c.parents[1])) {
                            Tensor<Real>& gg = t.grad_buffer(c.parents[1]);
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < n; ++j) {
                                    const std::size_t o = static_cast<std::size_t>(i) * n + j;
                                    gg[j] += g[o] * xhat[o];
                                }
                        }
                        if (t.needs_idx(c.parents[2])) {
                            Tensor<Real>& gb = t.grad_buffer(c.parents[2]);
                            for (int i = 0; i < m; ++i)
                                for (int j = 0; j < n; ++j) gb[j] += g[static_cast<std::size_t>(i) * n + j];
                        }
                        if (t.needs_idx(c.parents[0])) {
                            Tensor<Real>& gx = t.grad_buffer(c.parents[0]);
                            for (int i = 0; i < m; ++i) {
                                const std::size_t o = static_cast<std::size_t>(i) * n;
                                Real sum_dxhat = 0, sum_dxhat_xhat = 0;
                                for (int j = 0; j < n; ++j) {
                                    const Real dxh = g[o + j] * gv2[j];
                                    sum_dxhat += dxh;
                                    sum_dxhat_xhat += dxh * xhat[o + j];
                                }
                                const Real istd = inv_std[static_cast<std::size_t>(i)];
                                const Real invn = Real(1) / static_cast<Real>(n);
                                for (int j = 0; j < n; ++j) {
                                    const Real dxh = g[o + j] * gv2[j];
                                    gx[o + j] += istd * (dxh - invn * sum_dxhat -
                                                         xhat[o + j] * invn * sum_dxhat_xhat);
                                }
                            }
                        }
                    });
    }

    // ------------------------------------------------------------ 3-d helpers

    // Row-wise cross product of [n,3] x [n,3].
    Node cross_rows(Node a, Node b) {
        const Tensor<Real>& av = value(a.idx);
        const Tensor<Real>& bv = value(b.idx);
        require_shape(av.cols() == 3 && bv.cols() == 3 && av.rows() == bv.rows(),
                      "cross_rows: expects matching [n,3]");
        const int n = av.rows();
        Tensor<Real> out({n, 3});
        for (int i = 0; i < n; ++i) {
            const Real* x = av.data() + static_cast<std::size_t>(i) * 3;
            const Real* y = bv.data() + static_cast<std::size_t>(i) * 3;
            Real* o = out.data() + static_cast<std::size_t>(i) * 3;
            o[0] = x[1] * y[2] - x[2] * y[1];
            o[1] = x[2] * y[0] - x[0] * y[2];
            o[2] = x[0] * y[1] - x[1] * y[0];
        }
        return push(std::move(out), needs(a) || needs(b), {a.idx, b.idx},
                    [n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& av2 = t.value(c.parents[0]);
                        const Tensor<Real>& bv2 = t.value(c.parents[1]);
                        auto cross_into = [](const Real* u, const Real* v, Real* dst) {
                            dst[0] += u[1] * v[2] - u[2] * v[1];
                            dst[1] += u[2] * v[0] - u[0] * v[2];
                            dst[2] += u[0] * v[1] - u[1] * v[0];
                        };
                        if (t.needs_idx(c.parents[0])) {
                            Tensor<Real>& ga = t.grad_buffer(c.parents[0]);
                            for (int i = 0; i < n; ++i) {
                                const std::size_t o = static_cast<std::size_t>(i) * 3;
                                cross_into(bv2.data() + o, g.data() + o, ga.data() + o);
                            }
                        }
                        if (t.needs_idx(c.parents[1])) {
                            Tensor<Real>& gb = t.grad_buffer(c.parents[1]);
                            for (int i = 0; i < n; ++i) {
                                const std::size_t o = static_cast<std::size_t>(i) * 3;
                                cross_into(g.data() + o, av2.data() + o, gb.data() + o);
                            }
                        }
                    });
    }

    // Batched 3x3 matrix product on rows of [n,9] (row-major 3x3 per row).
    Node mat3_mul_rows(Node a, Node b) {
        const Tensor<Real>& av = value(a.idx);
        const Tensor<Real>& bv = value(b.idx);
        require_shape(av.cols() == 9 && bv.cols() == 9 && av.rows() == bv.rows(),
                      "mat3_mul_rows: expects matching [n,9]");
        const int n = av.rows();
        Tensor<Real> out({n, 9});
        for (int i = 0; i < n; ++i) {
            const Real* A = av.data() + static_cast<std::size_t>(i) * 9;
            const Real* B = bv.data() + static_cast<std::size_t>(i) * 9;
            Real* C = out.data() + static_cast<std::size_t>(i) * 9;
            for (int r = 0; r < 3; ++r)
                for (int s = 0; s < 3; ++s)
                    C[r * 3 + s] = A[r * 3] * B[s] + A[r * 3 + 1] * B[3 + s] + A[r * 3 + 2] * B[6 + s];
        }
        return push(std::move(out), needs(a) || needs(b), {a.idx, b.idx},
                    [n](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        const Tensor<Real>& av2 = t.value(c.parents[0]);
                        const Tensor<Real>& bv2 = t.value(c.parents[1]);
                        for (int i = 0; i < n; ++i) {
                            const std::size_t o = static_cast<std::size_t>(i) * 9;
                            const Real* G = g.data() + o;
                            const Real* A = av2.data() + o;
                            const Real* B = bv2.data() + o;
                            if (t.needs_idx(c.parents[0])) {
                                Real* dA = t.grad_buffer(c.parents[0]).data() + o;
                                // dA = G B^T
                                for (int r = 0; r < 3; ++r)
                                    for (int s = 0; s < 3; ++s)
                                        dA[r * 3 + s] += G[r * 3] * B[s * 3] + G[r * 3 + 1] * B[s * 3 + 1] +
                                                         G[r * 3 + 2] * B[s * 3 + 2];
                            }
                            if (t.needs_idx(c.parents[1])) {
                                Real* dB = t.grad_buffer(c.parents[1]).data() + o;
                                // dB = A^T G
                                for (int r = 0; r < 3; ++r)
                                    for (int s = 0; s < 3; ++s)
                                        dB[r * 3 + s] += A[r] * G[s] + A[3 + r] * G[3 + s] + A[6 + r] * G[6 + s];
                            }
                        }
                    });
    }

    // Apply each row's 3x3 matrix to one fixed vector: [n,9] -> [n,3].
    Node mat3_apply_const(Node r, std::array<Real, 3> v) {
        const Tensor<Real>& rv = value(r.idx);
        require_shape(rv.cols() == 9, "mat3_apply_const: expects [n,9]");
        const int n = rv.rows();
        Tensor<Real> out({n, 3});
        for (int i = 0; i < n; ++i) {
            const Real* R = rv.data() + static_cast<std::size_t>(i) * 9;
            Real* o = out.data() + static_cast<std::size_t>(i) * 3;
            for (int rr = 0; rr < 3; ++rr)
                o[rr] = R[rr * 3] * v[0] + R[rr * 3 + 1] * v[1] + R[rr * 3 + 2] * v[2];
        }
        return push(std::move(out), needs(r), {r.idx},
                    [n, v](GradientTape& t, const BackCtx& c) {
                        const Tensor<Real>& g = t.grad_ref(c.self);
                        Tensor<Real>& gr = t.grad_buffer(c.parents[0]);
                        for (int i = 0; i < n; ++i) {
                            const Real* G = g.data() + static_cast<std::size_t>(i) * 3;
                            Real* dR = gr.data() + static_cast<std::size_t>(i) * 9;
                            for (int rr = 0; rr < 3; ++rr)
                                for (int s = 0; s < 3; ++s) dR[rr * 3 + s] += G[rr] * v[s];
                        }
                    });
    }

    // ------------------------------------------------------------ conveniences

    Node linear(Node x, Node w, Node b) { return add_rowvec(matmul(x, w), b); }

    // ---------------------------------------------------------------- backward

    // Runs one reverse pass from `loss`. Intermediate gradients are per-pass;
    // gradients of differentiable leaves (the parameters) accumulate across
    // passes, so replaying the tape twice accumulates twice.
    void backward(Node loss) {
        require_shape(loss.tape == this, "backward: node from another tape");
        require_shape(value(loss.idx).numel() == 1, "backward: loss must be scalar");
        grads_.resize(entries_.size());
        grad_present_.assign(entries_.size(), 0);
        grad_buffer(loss.idx)[0] = Real(1);
        for (int i = loss.idx; i >= 0; --i) {
            if (!grad_present_[static_cast<std::size_t>(i)]) continue;
            const Entry& e = entries_[static_cast<std::size_t>(i)];
            if (!e.backward) continue;
            BackCtx ctx{i, e.parents};
            e.backward(*this, ctx);
        }
        // Fold this pass into the persistent per-leaf accumulators.
        acc_grads_.resize(entries_.size());
        acc_present_.resize(entries_.size(), 0);
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (!grad_present_[i] || entries_[i].backward) continue;
            if (!acc_present_[i]) {
                acc_grads_[i] = grads_[i];
                acc_present_[i] = 1;
            } else {
                Tensor<Real>& acc = acc_grads_[i];
                const Tensor<Real>& g = grads_[i];
                for (std::size_t j = 0; j < g.numel(); ++j) acc[j] += g[j];
            }
        }
    }

    bool has_grad(Node n) const {
        const std::size_t i = static_cast<std::size_t>(n.idx);
        return (i < acc_present_.size() && acc_present_[i]) ||
               (i < grad_present_.size() && grad_present_[i]);
    }

    // Gradient w.r.t. node n: accumulated over passes for leaves, last-pass
    // value for intermediates; zeros if never touched.
    Tensor<Real> grad(Node n) const {
        const std::size_t i = static_cast<std::size_t>(n.idx);
        if (i < acc_present_.size() && acc_present_[i]) return acc_grads_[i];
        if (i < grad_present_.size() && grad_present_[i]) return grads_[i];
        return Tensor<Real>::zeros(value(n.idx).shape());
    }

    const Tensor<Real>& value(int idx) const { return entries_[static_cast<std::size_t>(idx)].value; }

    std::size_t size() const { return entries_.size(); }

    // ------------------------------------------------------ backward plumbing

    struct BackCtx {
        int self;
        const std::vector<int>& parents;
    };

    bool needs_idx(int idx) const { return entries_[static_cast<std::size_t>(idx)].needs_grad; }

    Tensor<Real>& grad_buffer(int idx) {
        auto& slot = grads_[static_cast<std::size_t>(idx)];
        if (!grad_present_[static_cast<std::size_t>(idx)]) {
            slot = Tensor<Real>::zeros(value(idx).shape());
            grad_present_[static_cast<std::size_t>(idx)] = 1;
        }
        return slot;
    }

    const Tensor<Real>& grad_ref(int idx) { return grad_buffer(idx); }

private:
    struct Entry {
        Tensor<Real> value;
        bool needs_grad = false;
        std::vector<int> parents;
        std::function<void(GradientTape&, const BackCtx&)> backward;
    };

    bool needs(Node n) const {
        require_shape(n.tape == this, "op: node from another tape");
        return needs_idx(n.idx);
    }

    void check_same_shape(Node a, Node b, const char* op) const {
        require_shape(value(a.idx).same_shape(value(b.idx)),
                      std::string(op) + ": shape mismatch " + value(a.idx).shape_str() + " vs " +
                          value(b.idx).shape_str());
    }

    void acc_same(int idx, const Tensor<Real>& g) {
        if (!needs_idx(idx)) return;
        Tensor<Real>& dst = grad_buffer(idx);
        for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
    }

    void acc_scaled(int idx, const Tensor<Real>& g, Real s) {
        if (!needs_idx(idx)) return;
        Tensor<Real>& dst = grad_buffer(idx);
        for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += s * g[i];
    }

    Node push(Tensor<Real> v, bool needs_grad, std::vector<int> parents,
              std::function<void(GradientTape&, const BackCtx&)> back) {
        Entry e;
        e.value = std::move(v);
        e.needs_grad = needs_grad;
        e.parents = std::move(parents);
        if (needs_grad) e.backward = std::move(back);
        entries_.push_back(std::move(e));
        return Node{this, static_cast<int>(entries_.size()) - 1};
    }

    std::vector<Entry> entries_;
    std::vector<Tensor<Real>> grads_;
    std::vector<std::uint8_t> grad_present_;
    std::vector<Tensor<Real>> acc_grads_;
    std::vector<std::uint8_t> acc_present_;
};

template <typename Real>
using ParamMap = std::map<std::string, Tensor<Real>>;

template <typename Real>
using ParamLeaves = std::map<std::string, TapeNode<Real>>;

template <typename Real>
ParamLeaves<Real> make_param_leaves(GradientTape<Real>& tape, const ParamMap<Real>& params) {
    ParamLeaves<Real> leaves;
    for (const auto& [name, tensor] : params) leaves.emplace(name, tape.leaf(tensor, true));
    return leaves;
}

}  // namespace pedgen
