#pragma once

#include <array>
#include <cmath>

#include "pedgen/common.hpp"

namespace pedgen {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3() = default;
    Vec3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    Vec3& operator+=(const Vec3& o) {
        x += o.x;
        y += o.y;
        z += o.z;
        return *this;
    }

    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const {
        return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
    }
    double norm() const { return std::sqrt(dot(*this)); }
    Vec3 normalized() const {
        const double n = norm();
        require(n > 0, "Vec3::normalized: zero vector");
        return *this / n;
    }
    bool finite() const {
        return std::isfinite(x) && std::isfinite(y) && std::isfinite(z);
    }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }

    static Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
        Mat3 r;
        r.m = {r0.x, r0.y, r0.z, r1.x, r1.y, r1.z, r2.x, r2.y, r2.z};
        return r;
    }

    static Mat3 from_cols(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
        Mat3 r;
        r.m = {c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z};
        return r;
    }

    double operator()(int r, int c) const { return m[static_cast<std::size_t>(r) * 3 + c]; }
    double& operator()(int r, int c) { return m[static_cast<std::size_t>(r) * 3 + c]; }

    Vec3 col(int c) const { return {(*this)(0, c), (*this)(1, c), (*this)(2, c)}; }
    Vec3 row(int r) const { return {(*this)(r, 0), (*this)(r, 1), (*this)(r, 2)}; }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                r(i, j) = (*this)(i, 0) * o(0, j) + (*this)(i, 1) * o(1, j) + (*this)(i, 2) * o(2, j);
        return r;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }

    double trace() const { return m[0] + m[4] + m[8]; }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }

    bool finite() const {
        for (double v : m)
            if (!std::isfinite(v)) return false;
        return true;
    }
};

inline double max_abs_diff(const Mat3& a, const Mat3& b) {
    double d = 0;
    for (int i = 0; i < 9; ++i) d = std::max(d, std::abs(a.m[static_cast<std::size_t>(i)] - b.m[static_cast<std::size_t>(i)]));
    return d;
}

inline bool is_rotation(const Mat3& r, double tol = 1e-5) {
    const Mat3 should_be_i = r.transposed() * r;
    if (max_abs_diff(should_be_i, Mat3::identity()) > tol) return false;
    return std::abs(r.det() - 1.0) <= tol;
}

inline Mat3 rotation_about_y(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return Mat3::from_rows({c, 0, s}, {0, 1, 0}, {-s, 0, c});
}

inline Mat3 rotation_about_z(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return Mat3::from_rows({c, -s, 0}, {s, c, 0}, {0, 0, 1});
}

inline Mat3 rotation_about_x(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return Mat3::from_rows({1, 0, 0}, {0, c, -s}, {0, s, c});
}

// Rodrigues exponential map; the zero vector maps to the identity.
inline Mat3 matrix_from_axis_angle(const Vec3& a) {
    const double theta = a.norm();
    if (theta < 1e-12) return Mat3::identity();
    const Vec3 k = a / theta;
    const double c = std::cos(theta), s = std::sin(theta), t = 1.0 - c;
    Mat3 r;
    r.m = {c + k.x * k.x * t,        k.x * k.y * t - k.z * s,  k.x * k.z * t + k.y * s,
           k.y * k.x * t + k.z * s,  c + k.y * k.y * t,        k.y * k.z * t - k.x * s,
           k.z * k.x * t - k.y * s,  k.z * k.y * t + k.x * s,  c + k.z * k.z * t};
    return r;
}

// Log map, inverse of matrix_from_axis_angle.
inline Vec3 axis_angle_from_matrix(const Mat3& r) {
    require(is_rotation(r, 1e-4), "axis_angle_from_matrix: input is not a rotation");
    const double cos_theta = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
    const double theta = std::acos(cos_theta);
    if (theta < 1e-8) return {0, 0, 0};
    if (theta > kPi - 1e-5) {
        // Near pi the skew part degenerates; recover the axis from the
        // symmetric part R = 2 k k^T - I + small skew.
        const double kx = std::sqrt(std::max(0.0, (r(0, 0) + 1.0) / 2.0));
        const double ky = std::sqrt(std::max(0.0, (r(1, 1) + 1.0) / 2.0));
        const double kz = std::sqrt(std::max(0.0, (r(2, 2) + 1.0) / 2.0));
        Vec3 k{kx, ky, kz};
        // Fix signs from the off-diagonal sums.
        if (k.x >= k.y && k.x >= k.z) {
            k.y = (r(0, 1) + r(1, 0)) / (4.0 * k.x);
            k.z = (r(0, 2) + r(2, 0)) / (4.0 * k.x);
        } else if (k.y >= k.z) {
            k.x = (r(0, 1) + r(1, 0)) / (4.0 * k.y);
            k.z = (r(1, 2) + r(2, 1)) / (4.0 * k.y);
        } else {
            k.x = (r(0, 2) + r(2, 0)) / (4.0 * k.z);
            k.y = (r(1, 2) + r(2, 1)) / (4.0 * k.z);
        }
        return k.normalized() * theta;
    }
    const double scale = theta / (2.0 * std::sin(theta));
    return Vec3{r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)} * scale;
}

// 6-d rotation representation: the first two matrix columns, decoded by
// Gram-Schmidt. Continuous and regression-friendly.
struct Rot6d {
    std::array<double, 6> v{1, 0, 0, 0, 1, 0};
};

constexpr double kRot6dDegenerateTol = 1e-8;

inline Mat3 matrix_from_rot6d(const Rot6d& r) {
    const Vec3 a{r.v[0], r.v[1], r.v[2]};
    const Vec3 b{r.v[3], r.v[4], r.v[5]};
    const double an = a.norm();
    if (an < kRot6dDegenerateTol) throw NumericError("matrix_from_rot6d: first vector near zero");
    const Vec3 c1 = a / an;
    const Vec3 res = b - c1 * c1.dot(b);
    const double rn = res.norm();
    if (rn < kRot6dDegenerateTol) throw NumericError("matrix_from_rot6d: degenerate second vector");
    const Vec3 c2 = res / rn;
    const Vec3 c3 = c1.cross(c2);
    return Mat3::from_cols(c1, c2, c3);
}

inline Rot6d rot6d_from_matrix(const Mat3& m) {
    require(is_rotation(m, 1e-5), "rot6d_from_matrix: input is not orthonormal");
    Rot6d r;
    r.v = {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
    return r;
}

}  // namespace pedgen
