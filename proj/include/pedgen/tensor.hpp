#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "pedgen/common.hpp"
#include "pedgen/rng.hpp"

namespace pedgen {

// Dense row-major tensor with plain value semantics. Treated as immutable
// once an operation has produced it; mutation happens only while a fresh
// tensor is being filled.
template <typename Real>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        data_.assign(checked_numel(shape_), Real(0));
    }

    Tensor(std::vector<int> shape, std::vector<Real> values)
        : shape_(std::move(shape)), data_(std::move(values)) {
        require_shape(data_.size() == checked_numel(shape_),
                      "Tensor: value count does not match shape");
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, Real v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    static Tensor scalar(Real v) { return Tensor({1}, {v}); }

    static Tensor random_uniform(std::vector<int> shape, Real lo, Real hi, RngStream& rng) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<Real>(rng.uniform(lo, hi));
        return t;
    }

    static Tensor random_normal(std::vector<int> shape, RngStream& rng) {
        Tensor t(std::move(shape));
        for (auto& v : t.data_) v = static_cast<Real>(rng.normal());
        return t;
    }

    const std::vector<int>& shape() const { return shape_; }
    int ndim() const { return static_cast<int>(shape_.size()); }
    int extent(int d) const { return shape_[static_cast<std::size_t>(d)]; }
    std::size_t numel() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    Real* data() { return data_.data(); }
    const Real* data() const { return data_.data(); }
    std::vector<Real>& values() { return data_; }
    const std::vector<Real>& values() const { return data_; }

    Real& operator[](std::size_t i) { return data_[i]; }
    Real operator[](std::size_t i) const { return data_[i]; }

    Real& at(int i, int j) {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    Real at(int i, int j) const {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }

    int rows() const { return shape_.empty() ? 0 : shape_[0]; }
    int cols() const {
        return shape_.size() < 2 ? (shape_.empty() ? 0 : 1) : shape_[1];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (Real v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    template <typename Other>
    Tensor<Other> cast() const {
        std::vector<Other> out(data_.size());
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<Other>(data_[i]);
        return Tensor<Other>(shape_, std::move(out));
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

private:
    static std::size_t checked_numel(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int e : shape) {
            require_shape(e >= 0, "Tensor: negative extent");
            n *= static_cast<std::size_t>(e);
        }
        return n;
    }

    std::vector<int> shape_;
    std::vector<Real> data_;
};

// ---------------------------------------------------------------------------
// Raw kernels. These run on contiguous row-major buffers; the tape wraps them.

// C (m x n) += A op B with optional transposes: A is (m x k) or (k x m),
// B is (k x n) or (n x k).
template <typename Real>
void gemm_acc(const Real* a, const Real* b, Real* c, int m, int k, int n,
              bool trans_a, bool trans_b) {
    if (!trans_a && !trans_b) {
        for (int i = 0; i < m; ++i) {
            Real* ci = c + static_cast<std::size_t>(i) * n;
            const Real* ai = a + static_cast<std::size_t>(i) * k;
            for (int p = 0; p < k; ++p) {
                const Real av = ai[p];
                if (av == Real(0)) continue;
                const Real* bp = b + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        }
    } else if (!trans_a && trans_b) {
        for (int i = 0; i < m; ++i) {
            const Real* ai = a + static_cast<std::size_t>(i) * k;
            Real* ci = c + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) {
                const Real* bj = b + static_cast<std::size_t>(j) * k;
                Real acc = 0;
                for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
                ci[j] += acc;
            }
        }
    } else if (trans_a && !trans_b) {
        for (int p = 0; p < k; ++p) {
            const Real* ap = a + static_cast<std::size_t>(p) * m;
            const Real* bp = b + static_cast<std::size_t>(p) * n;
            for (int i = 0; i < m; ++i) {
                const Real av = ap[i];
                if (av == Real(0)) continue;
                Real* ci = c + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
            }
        }
    } else {
        // A^T B^T: rare, keep the simple loop.
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                Real acc = 0;
                for (int p = 0; p < k; ++p) {
                    acc += a[static_cast<std::size_t>(p) * m + i] *
                           b[static_cast<std::size_t>(j) * k + p];
                }
                c[static_cast<std::size_t>(i) * n + j] += acc;
            }
        }
    }
}

}  // namespace pedgen
