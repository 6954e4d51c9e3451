#pragma once

// Uniform hash grid over 3D points for nearest, radius and k-nearest queries.
// Ties are always resolved toward the lowest point index.

#include "oaareg/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <unordered_map>
#include <utility>
#include <vector>

namespace oaareg {

class GridIndex {
  public:
    GridIndex(const std::vector<Vec3>& points, double cell_size = 0.0) : points_(&points) {
        if (points.empty()) {
            cell_ = 1.0;
            return;
        }
        lo_ = points.front();
        Vec3 hi = points.front();
        for (const auto& p : points) {
            lo_ = lo_.cwiseMin(p);
            hi = hi.cwiseMax(p);
        }
        if (cell_size <= 0.0) {
            // Aim for a handful of points per cell.
            const Vec3 extent = (hi - lo_).cwiseMax(1e-9);
            const double volume = extent.prod();
            const double target = 4.0;
            cell_size = std::cbrt(volume * target / static_cast<double>(points.size()));
            cell_size = std::max(cell_size, extent.maxCoeff() / 256.0);
        }
        cell_ = std::max(cell_size, 1e-12);
        for (std::size_t i = 0; i < points.size(); ++i) cells_[key(cell_of(points[i]))].push_back(i);
        span_ = cell_of(hi) - cell_of(lo_);
    }

    /// Nearest point index and squared distance.
    std::pair<std::size_t, double> nearest(const Vec3& q) const {
        auto r = knn(q, 1);
        return r.front();
    }

    /// k nearest (index, squared distance), sorted by distance then index.
    std::vector<std::pair<std::size_t, double>> knn(const Vec3& q, std::size_t k) const {
        const auto& pts = *points_;
        k = std::min(k, pts.size());
        std::vector<std::pair<std::size_t, double>> best;
        if (k == 0) return best;
        auto less = [](const std::pair<std::size_t, double>& a, const std::pair<std::size_t, double>& b) {
            return a.second < b.second || (a.second == b.second && a.first < b.first);
        };
        const Eigen::Vector3i c = cell_of(q);
        const int max_ring = c.cwiseAbs().cwiseMax((c - span_).cwiseAbs()).maxCoeff() + 1;
        if (max_ring > kMaxRings) {
            for (std::size_t i = 0; i < pts.size(); ++i) {
                std::pair<std::size_t, double> cand{i, (pts[i] - q).squaredNorm()};
                if (best.size() < k) {
                    best.insert(std::upper_bound(best.begin(), best.end(), cand, less), cand);
                } else if (less(cand, best.back())) {
                    best.pop_back();
                    best.insert(std::upper_bound(best.begin(), best.end(), cand, less), cand);
                }
            }
            return best;
        }
        for (int ring = 0; ring <= max_ring; ++ring) {
            visit_ring(c, ring, [&](std::size_t i) {
                const double d2 = (pts[i] - q).squaredNorm();
                std::pair<std::size_t, double> cand{i, d2};
                if (best.size() < k) {
                    best.insert(std::upper_bound(best.begin(), best.end(), cand, less), cand);
                } else if (less(cand, best.back())) {
                    best.pop_back();
                    best.insert(std::upper_bound(best.begin(), best.end(), cand, less), cand);
                }
            });
            // Everything outside the visited cube is at least ring * cell away.
            if (best.size() == k) {
                const double reach = static_cast<double>(ring) * cell_;
                if (best.back().second < reach * reach) break;
            }
        }
        return best;
    }

    /// Indices within `radius` (inclusive), ascending.
    std::vector<std::size_t> radius(const Vec3& q, double radius) const {
        const auto& pts = *points_;
        std::vector<std::size_t> out;
        const double r2 = radius * radius;
        const double reach_cells = std::ceil(radius / cell_);
        if (reach_cells > kMaxRings) {
            for (std::size_t i = 0; i < pts.size(); ++i)
                if ((pts[i] - q).squaredNorm() <= r2) out.push_back(i);
            return out;
        }
        const int reach = static_cast<int>(reach_cells);
        const Eigen::Vector3i c = cell_of(q);
        for (int dx = -reach; dx <= reach; ++dx)
            for (int dy = -reach; dy <= reach; ++dy)
                for (int dz = -reach; dz <= reach; ++dz) {
                    auto it = cells_.find(key(c + Eigen::Vector3i(dx, dy, dz)));
                    if (it == cells_.end()) continue;
                    for (std::size_t i : it->second)
                        if ((pts[i] - q).squaredNorm() <= r2) out.push_back(i);
                }
        std::sort(out.begin(), out.end());
        return out;
    }

  private:
    static constexpr int kMaxRings = 48;

    Eigen::Vector3i cell_of(const Vec3& p) const {
        return ((p - lo_) / cell_).array().floor().cast<int>();
    }

    static std::uint64_t key(const Eigen::Vector3i& c) {
        const auto u = [](int v) { return static_cast<std::uint64_t>(static_cast<std::uint32_t>(v) & 0x1FFFFF); };
        return (u(c.x()) << 42) | (u(c.y()) << 21) | u(c.z());
    }

    template <typename Fn>
    void visit_ring(const Eigen::Vector3i& c, int ring, Fn&& fn) const {
        auto visit_cell = [&](int dx, int dy, int dz) {
            auto it = cells_.find(key(c + Eigen::Vector3i(dx, dy, dz)));
            if (it == cells_.end()) return;
            for (std::size_t i : it->second) fn(i);
        };
        if (ring == 0) {
            visit_cell(0, 0, 0);
            return;
        }
        for (int dx = -ring; dx <= ring; ++dx)
            for (int dy = -ring; dy <= ring; ++dy) {
                const bool edge = std::abs(dx) == ring || std::abs(dy) == ring;
                if (edge) {
                    for (int dz = -ring; dz <= ring; ++dz) visit_cell(dx, dy, dz);
                } else {
                    visit_cell(dx, dy, -ring);
                    visit_cell(dx, dy, ring);
                }
            }
    }

    const std::vector<Vec3>* points_;
    Vec3 lo_ = Vec3::Zero();
    double cell_ = 1.0;
    Eigen::Vector3i span_ = Eigen::Vector3i::Zero();
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

} // namespace oaareg
