#pragma once

// Symmetric eigensolver and PSD matrix square root, sized for the 64x64
// covariance matrices the Frechet metric needs.

#include "shimforge/core.hpp"

namespace shimforge::linalg {

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
/// Returns eigenvalues (unsorted) and the matching orthonormal columns of V.
inline void jacobi_eigen_sym(const Mat& a, std::vector<double>& eigvals, Mat& eigvecs) {
    const int n = a.rows;
    if (a.cols != n) throw ShapeError("jacobi_eigen_sym: matrix must be square");
    Mat m = a;
    eigvecs = Mat(n, n);
    for (int i = 0; i < n; ++i) eigvecs.at(i, i) = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) off += m.at(p, q) * m.at(p, q);
        if (off < 1e-24) break;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                const double apq = m.at(p, q);
                if (std::abs(apq) < 1e-300) continue;
                const double theta = (m.at(q, q) - m.at(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                for (int k = 0; k < n; ++k) {
                    const double mkp = m.at(k, p), mkq = m.at(k, q);
                    m.at(k, p) = c * mkp - s * mkq;
                    m.at(k, q) = s * mkp + c * mkq;
                }
                for (int k = 0; k < n; ++k) {
                    const double mpk = m.at(p, k), mqk = m.at(q, k);
                    m.at(p, k) = c * mpk - s * mqk;
                    m.at(q, k) = s * mpk + c * mqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = eigvecs.at(k, p), vkq = eigvecs.at(k, q);
                    eigvecs.at(k, p) = c * vkp - s * vkq;
                    eigvecs.at(k, q) = s * vkp + c * vkq;
                }
            }
    }
    eigvals.resize(n);
    for (int i = 0; i < n; ++i) eigvals[i] = m.at(i, i);
}

/// Square root of a PSD matrix; tiny negative eigenvalues (roundoff) clip to 0.
inline Mat sqrtm_psd(const Mat& a) {
    std::vector<double> w;
    Mat v;
    jacobi_eigen_sym(a, w, v);
    const int n = a.rows;
    Mat out(n, n);
    for (int k = 0; k < n; ++k) {
        const double lam = w[k] > 0.0 ? std::sqrt(w[k]) : 0.0;
        if (lam == 0.0) continue;
        for (int i = 0; i < n; ++i) {
            const double vl = v.at(i, k) * lam;
            for (int j = 0; j < n; ++j) out.at(i, j) += vl * v.at(j, k);
        }
    }
    return out;
}

inline double trace(const Mat& a) {
    double t = 0.0;
    for (int i = 0; i < a.rows; ++i) t += a.at(i, i);
    return t;
}

}  // namespace shimforge::linalg
