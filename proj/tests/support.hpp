#pragma once

#include "dnd/model.hpp"

#include <cmath>
#include <random>

namespace testing_support {

using dnd::Matrix;
using dnd::Vector;

/// Central-difference Jacobian of f at x, step 1e-6 (error ~1e-10 for smooth f).
template <class F>
Matrix fd_jacobian(F&& f, const Vector& x, double h = 1e-6) {
    const auto d = x.size();
    Matrix j(d, d);
    for (Eigen::Index c = 0; c < d; ++c) {
        Vector xp = x;
        Vector xm = x;
        xp(c) += h;
        xm(c) -= h;
        j.col(c) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return j;
}

inline Vector random_unit(std::mt19937_64& rng, int d) {
    std::normal_distribution<double> n;
    Vector z(d);
    do {
        for (int i = 0; i < d; ++i) z(i) = n(rng);
    } while (z.norm() < 1e-3);
    return z / z.norm();
}

inline Matrix random_matrix(std::mt19937_64& rng, int d, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) m(i, j) = n(rng);
    }
    return m;
}

inline double rel_diff(const Vector& a, const Vector& b) {
    return (a - b).norm() / std::max(1.0, b.norm());
}

}  // namespace testing_support
