#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "ribosphere/rng.hpp"

namespace ribosphere {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>; // row-major

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

inline Vec3 normalized(const Vec3& a) {
    double n = norm(a);
    if (n == 0.0) return {0.0, 0.0, 0.0};
    return a * (1.0 / n);
}

inline Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

inline Vec3 mat3_apply(const Mat3& m, const Vec3& v) {
    return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
            m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
            m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            double s = 0.0;
            for (int k = 0; k < 3; ++k) s += a[3 * i + k] * b[3 * k + j];
            c[3 * i + j] = s;
        }
    return c;
}

inline Mat3 mat3_transpose(const Mat3& m) {
    return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
}

inline double mat3_det(const Mat3& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

// Rotation matrix from a unit quaternion (w, x, y, z).
inline Mat3 rotation_from_quaternion(double w, double x, double y, double z) {
    return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
            2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

// Uniform rotation on SO(3): normalize a 4-vector of i.i.d. normals.
inline Mat3 random_rotation_matrix(Rng& rng) {
    double q[4];
    double n2 = 0.0;
    do {
        n2 = 0.0;
        for (double& qi : q) {
            qi = rng.normal();
            n2 += qi * qi;
        }
    } while (n2 < 1e-12);
    double inv = 1.0 / std::sqrt(n2);
    return rotation_from_quaternion(q[0] * inv, q[1] * inv, q[2] * inv, q[3] * inv);
}

// Cyclic Jacobi eigensolver for small symmetric matrices (N <= 4 here).
// Returns eigenvalues ascending in `evals`; eigenvectors are the columns of
// `evecs` (row-major N x N), matching the eigenvalue order.
template <int N>
inline void jacobi_eigen_sym(const std::array<double, N * N>& a_in,
                             std::array<double, N>& evals,
                             std::array<double, N * N>& evecs) {
    std::array<double, N * N> a = a_in;
    std::array<double, N * N> v{};
    for (int i = 0; i < N; ++i) v[N * i + i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < N; ++p)
            for (int q = p + 1; q < N; ++q) off += a[N * p + q] * a[N * p + q];
        if (off < 1e-30) break;
        for (int p = 0; p < N; ++p) {
            for (int q = p + 1; q < N; ++q) {
                double apq = a[N * p + q];
                if (std::fabs(apq) < 1e-300) continue;
                double theta = (a[N * q + q] - a[N * p + p]) / (2.0 * apq);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                for (int k = 0; k < N; ++k) {
                    double akp = a[N * k + p], akq = a[N * k + q];
                    a[N * k + p] = c * akp - s * akq;
                    a[N * k + q] = s * akp + c * akq;
                }
                for (int k = 0; k < N; ++k) {
                    double apk = a[N * p + k], aqk = a[N * q + k];
                    a[N * p + k] = c * apk - s * aqk;
                    a[N * q + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < N; ++k) {
                    double vkp = v[N * k + p], vkq = v[N * k + q];
                    v[N * k + p] = c * vkp - s * vkq;
                    v[N * k + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::array<int, N> order;
    for (int i = 0; i < N; ++i) order[i] = i;
    for (int i = 0; i < N; ++i)
        for (int j = i + 1; j < N; ++j)
            if (a[N * order[j] + order[j]] < a[N * order[i] + order[i]]) std::swap(order[i], order[j]);
    for (int i = 0; i < N; ++i) {
        evals[i] = a[N * order[i] + order[i]];
        for (int k = 0; k < N; ++k) evecs[N * k + i] = v[N * k + order[i]];
    }
}

} // namespace ribosphere
