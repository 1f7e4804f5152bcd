#pragma once

// Shared test helpers: seeded random tensors, finite differences, and a
// scratch directory wiped per use.

#include <filesystem>
#include <functional>
#include <string>

#include "emodub/core_types.hpp"
#include "emodub/rng.hpp"

namespace test_support {

using emodub::Mat;

inline Mat random_matrix(emodub::Pcg32& rng, int rows, int cols, double scale = 1.0) {
    Mat m(rows, cols);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.gaussian();
    return m;
}

inline Mat random_stochastic_rows(emodub::Pcg32& rng, int rows, int cols) {
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        double sum = 0;
        for (int c = 0; c < cols; ++c) {
            m(r, c) = rng.uniform() + 1e-3;
            sum += m(r, c);
        }
        m.row(r) /= sum;
    }
    return m;
}

inline emodub::DurationVector random_durations(emodub::Pcg32& rng, int max_p = 8, int max_d = 6) {
    emodub::DurationVector d;
    int P = rng.range_int(1, max_p);
    d.d.resize(P);
    for (int i = 0; i < P; ++i) d.d[i] = rng.range_int(1, max_d);
    return d;
}

// Central finite difference of a scalar function at one matrix entry.
inline double central_diff(const std::function<double(const Mat&)>& f, Mat x, int r, int c,
                           double h = 1e-6) {
    double orig = x(r, c);
    x(r, c) = orig + h;
    double fp = f(x);
    x(r, c) = orig - h;
    double fm = f(x);
    return (fp - fm) / (2.0 * h);
}

// Relative error with an absolute floor so near-zero gradients don't blow up.
inline double rel_err(double got, double want, double floor_ = 1e-9) {
    return std::abs(got - want) / std::max({std::abs(got), std::abs(want), floor_});
}

inline std::string scratch_dir(const std::string& name) {
    std::string dir = (std::filesystem::temp_directory_path() / ("emodub_test_" + name)).string();
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace test_support
