#pragma once

#include "oaareg.hpp"

#include <random>
#include <vector>

namespace testutil {

using namespace oaareg;

inline std::vector<Vec3> random_points(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<Vec3> out;
    for (std::size_t i = 0; i < n; ++i) out.emplace_back(u(rng), u(rng), u(rng));
    return out;
}

inline Mat3 random_rotation(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

inline RigidTransform random_transform(Rng& rng) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    return {random_rotation(rng), Vec3(u(rng), u(rng), u(rng))};
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

inline double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

} // namespace testutil
