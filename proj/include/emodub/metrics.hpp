#pragma once

// Quantitative metrics: MCD with DTW alignment, and edit distance for the
// CTC phoneme error rate.

#include <vector>

#include "emodub/core_types.hpp"

namespace emodub {

namespace detail {

// Directional DTW: map every frame of X to a non-decreasing frame of Y
// (open ends), minimizing the summed Euclidean distance. Returns the mean
// per-aligned-pair distance. O(n*m) via running prefix minima.
inline double dtw_directional_mean(const Mat& X, const Mat& Y) {
    const long n = X.rows();
    const long m = Y.rows();
    Eigen::VectorXd prev(m), cur(m);
    for (long j = 0; j < m; ++j) prev[j] = (X.row(0) - Y.row(j)).norm();
    for (long j = 1; j < m; ++j) prev[j] = std::min(prev[j], prev[j - 1]);  // prefix minima
    for (long i = 1; i < n; ++i) {
        for (long j = 0; j < m; ++j) cur[j] = (X.row(i) - Y.row(j)).norm() + prev[j];
        for (long j = 1; j < m; ++j) cur[j] = std::min(cur[j], cur[j - 1]);
        prev = cur;
    }
    return prev[m - 1] / static_cast<double>(n);
}

}  // namespace detail

// Mel cepstral distortion under DTW: the symmetrized mean per-aligned-pair
// Euclidean distance, scaled by the conventional constant 10*sqrt(2)/ln 10.
// Uniform time stretches of either input are absorbed exactly.
inline double mcd_dtw(const Mat& mel_a, const Mat& mel_b) {
    if (mel_a.rows() == 0 || mel_b.rows() == 0) throw ShapeError("mcd_dtw: empty input");
    if (mel_a.cols() != mel_b.cols()) throw ShapeError("mcd_dtw: mel bin counts differ");
    constexpr double kMcdConstant = 6.141851463713754;  // 10 * sqrt(2) / ln(10)
    double ab = detail::dtw_directional_mean(mel_a, mel_b);
    double ba = detail::dtw_directional_mean(mel_b, mel_a);
    return kMcdConstant * 0.5 * (ab + ba);
}

inline double mcd_dtw(const MelSpectrogram& a, const MelSpectrogram& b) {
    return mcd_dtw(a.frames, b.frames);
}

inline int edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int> prev(m + 1), cur(m + 1);
    for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (size_t i = 1; i <= n; ++i) {
        cur[0] = static_cast<int>(i);
        for (size_t j = 1; j <= m; ++j) {
            int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

}  // namespace emodub
