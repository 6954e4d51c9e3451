#pragma once

// Synthetic registration scenes with exact ground truth: two overlapping views of
// a box/sphere surface, simulated descriptors whose noise level sets the
// achievable inlier ratio, geometric overlap labels and voxel superpoints.

#include "oaareg/core.hpp"
#include "oaareg/fine_match.hpp"
#include "oaareg/parallel.hpp"
#include "oaareg/spatial.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace oaareg {

struct SceneSpec {
    std::size_t point_count = 4000;  // base surface samples shared by both views
    double overlap_fraction = 1.0;   // shared points / points per view
    double noise_sigma = 0.0;        // per-axis Gaussian noise on the target (m), truncated at 3 sigma
    double rotation_magnitude = 180; // max rotation angle (degrees)
    double translation_magnitude = 0.5; // max translation norm (m)
    std::size_t descriptor_dim = 32;
    std::size_t coarse_descriptor_dim = 256; // descriptors pooled into superpoint features
    double descriptor_noise = 0.0;
    double outlier_fraction = 0.0;   // fraction of clutter points in each view
    std::uint64_t rng_seed = 0;
    double voxel_size = 0.1;         // superpoint grid

    void validate() const {
        detail::require(point_count >= 3, ErrorCode::InvalidArgument, "point_count must be at least 3");
        detail::require(overlap_fraction > 0.0 && overlap_fraction <= 1.0, ErrorCode::InvalidArgument,
                        "overlap_fraction must be in (0, 1]");
        detail::require(noise_sigma >= 0.0 && std::isfinite(noise_sigma), ErrorCode::InvalidArgument,
                        "noise_sigma must be >= 0");
        detail::require(rotation_magnitude >= 0.0 && rotation_magnitude <= 180.0, ErrorCode::InvalidArgument,
                        "rotation_magnitude must be in [0, 180] degrees");
        detail::require(translation_magnitude >= 0.0, ErrorCode::InvalidArgument,
                        "translation_magnitude must be >= 0");
        detail::require(descriptor_dim >= 1, ErrorCode::InvalidArgument, "descriptor_dim must be positive");
        detail::require(coarse_descriptor_dim >= 1, ErrorCode::InvalidArgument,
                        "coarse_descriptor_dim must be positive");
        detail::require(descriptor_noise >= 0.0, ErrorCode::InvalidArgument, "descriptor_noise must be >= 0");
        detail::require(outlier_fraction >= 0.0 && outlier_fraction < 1.0, ErrorCode::InvalidArgument,
                        "outlier_fraction must be in [0, 1)");
        detail::require(voxel_size > 0.0, ErrorCode::InvalidArgument, "voxel_size must be positive");
    }
};

struct GroundTruth {
    RigidTransform transform; // maps source coordinates onto target coordinates
    CorrespondenceSet true_correspondences;
    std::vector<std::uint8_t> source_overlap; // dense labels: point has a true partner
    std::vector<std::uint8_t> target_overlap;
};

struct ScenePair {
    PointCloud source;
    PointCloud target;
    GroundTruth truth;
};

namespace detail {

inline Vec3 random_unit(Rng& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    Vec3 v;
    do {
        v = Vec3(n(rng), n(rng), n(rng));
    } while (v.norm() < 1e-12);
    return v.normalized();
}

struct Box {
    Vec3 center;
    Vec3 half;
    double area() const { return 8.0 * (half.x() * half.y() + half.y() * half.z() + half.x() * half.z()); }
};

struct Sphere {
    Vec3 center;
    double radius;
    double area() const { return 4.0 * std::numbers::pi * radius * radius; }
};

inline Vec3 sample_box(const Box& b, Rng& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const std::array<double, 3> face_area = {b.half.y() * b.half.z(), b.half.x() * b.half.z(),
                                             b.half.x() * b.half.y()};
    std::discrete_distribution<int> axis_pick(face_area.begin(), face_area.end());
    const int axis = axis_pick(rng);
    Vec3 local(u(rng), u(rng), u(rng));
    local(axis) = u(rng) < 0.0 ? -1.0 : 1.0;
    return b.center + local.cwiseProduct(b.half);
}

/// Surface samples from a random mix of two boxes and two spheres inside the unit cube.
inline std::vector<Vec3> sample_base_surface(std::size_t count, Rng& rng) {
    std::uniform_real_distribution<double> center(-0.3, 0.3), extent(0.1, 0.3), radius(0.1, 0.25);
    std::vector<Box> boxes;
    std::vector<Sphere> spheres;
    for (int i = 0; i < 2; ++i) boxes.push_back({Vec3(center(rng), center(rng), center(rng)),
                                                 Vec3(extent(rng), extent(rng), extent(rng))});
    for (int i = 0; i < 2; ++i) spheres.push_back({Vec3(center(rng), center(rng), center(rng)), radius(rng)});
    std::vector<double> areas;
    for (const auto& b : boxes) areas.push_back(b.area());
    for (const auto& s : spheres) areas.push_back(s.area());
    std::discrete_distribution<std::size_t> shape(areas.begin(), areas.end());
    std::vector<Vec3> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t k = shape(rng);
        if (k < boxes.size())
            out.push_back(sample_box(boxes[k], rng));
        else {
            const auto& s = spheres[k - boxes.size()];
            out.push_back(s.center + s.radius * random_unit(rng));
        }
    }
    return out;
}

inline Vec3 truncated_noise(double sigma, Rng& rng) {
    if (sigma == 0.0) return Vec3::Zero();
    std::normal_distribution<double> n(0.0, sigma);
    Vec3 v;
    do {
        v = Vec3(n(rng), n(rng), n(rng));
    } while (v.norm() > 3.0 * sigma);
    return v;
}

inline RigidTransform random_transform(double max_angle_deg, double max_translation, Rng& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Vec3 axis = random_unit(rng);
    const double angle = u(rng) * max_angle_deg * std::numbers::pi / 180.0;
    const Vec3 shift = random_unit(rng) * (u(rng) * max_translation);
    return RigidTransform::from_polar(axis_angle(axis, angle), shift);
}

} // namespace detail

/// Two views of one sampled surface. Base points are ordered along a random
/// direction; the source takes the first m, the target the last m, so the middle
/// slab of round(overlap_fraction * m) points is seen by both. Shared points are the
/// true correspondences. The target is moved by a random transform and perturbed.
inline ScenePair generate_pair(const SceneSpec& spec) {
    spec.validate();
    Rng rng(spec.rng_seed);
    const std::vector<Vec3> base = detail::sample_base_surface(spec.point_count, rng);
    const Vec3 dir = detail::random_unit(rng);

    std::vector<std::size_t> order(base.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> proj(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) proj[i] = base[i].dot(dir);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return proj[a] < proj[b]; });

    const auto m = static_cast<std::size_t>(std::floor(static_cast<double>(base.size()) / (2.0 - spec.overlap_fraction)));
    const auto shared = static_cast<std::size_t>(std::llround(spec.overlap_fraction * static_cast<double>(m)));
    detail::require(m >= 3 && shared >= 3 && shared <= m, ErrorCode::Infeasible,
                    "overlap " + std::to_string(spec.overlap_fraction) + " with " + std::to_string(base.size()) +
                        " points leaves " + std::to_string(shared) + " shared points");
    const std::size_t target_begin = m - shared;

    const RigidTransform gt = detail::random_transform(spec.rotation_magnitude, spec.translation_magnitude, rng);

    // Clutter so that it makes up outlier_fraction of each view.
    const auto clutter = static_cast<std::size_t>(
        std::llround(spec.outlier_fraction * static_cast<double>(m) / (1.0 - spec.outlier_fraction)));
    auto bounds = [&](std::size_t begin, std::size_t end) {
        Vec3 lo = base[order[begin]], hi = lo;
        for (std::size_t i = begin; i < end; ++i) {
            lo = lo.cwiseMin(base[order[i]]);
            hi = hi.cwiseMax(base[order[i]]);
        }
        return std::make_pair(lo, hi);
    };
    auto clutter_points = [&](const std::pair<Vec3, Vec3>& box) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        std::vector<Vec3> pts;
        for (std::size_t i = 0; i < clutter; ++i)
            pts.push_back(box.first + (box.second - box.first).cwiseProduct(Vec3(u(rng), u(rng), u(rng))));
        return pts;
    };

    // Slots: base positions first, clutter after; then a random permutation per view.
    std::vector<Vec3> src_pts, tgt_pts;
    for (std::size_t i = 0; i < m; ++i) src_pts.push_back(base[order[i]]);
    for (const auto& p : clutter_points(bounds(0, m))) src_pts.push_back(p);
    for (std::size_t i = 0; i < m; ++i) tgt_pts.push_back(base[order[target_begin + i]]);
    for (const auto& p : clutter_points(bounds(target_begin, target_begin + m))) tgt_pts.push_back(p);
    for (auto& p : tgt_pts) p = gt(p) + detail::truncated_noise(spec.noise_sigma, rng);

    std::vector<std::size_t> src_perm(src_pts.size()), tgt_perm(tgt_pts.size());
    std::iota(src_perm.begin(), src_perm.end(), std::size_t{0});
    std::iota(tgt_perm.begin(), tgt_perm.end(), std::size_t{0});
    std::shuffle(src_perm.begin(), src_perm.end(), rng);
    std::shuffle(tgt_perm.begin(), tgt_perm.end(), rng);
    // perm[new] = old slot; invert to find where a slot lands.
    std::vector<std::size_t> src_where(src_perm.size()), tgt_where(tgt_perm.size());
    for (std::size_t i = 0; i < src_perm.size(); ++i) src_where[src_perm[i]] = i;
    for (std::size_t i = 0; i < tgt_perm.size(); ++i) tgt_where[tgt_perm[i]] = i;

    std::vector<Vec3> src_final(src_pts.size()), tgt_final(tgt_pts.size());
    for (std::size_t i = 0; i < src_pts.size(); ++i) src_final[src_where[i]] = src_pts[i];
    for (std::size_t i = 0; i < tgt_pts.size(); ++i) tgt_final[tgt_where[i]] = tgt_pts[i];

    ScenePair out;
    out.truth.transform = gt;
    out.truth.source_overlap.assign(src_final.size(), 0);
    out.truth.target_overlap.assign(tgt_final.size(), 0);
    std::vector<Correspondence> pairs;
    for (std::size_t k = 0; k < shared; ++k) {
        const std::size_t s = src_where[target_begin + k];
        const std::size_t t = tgt_where[k];
        pairs.push_back({s, t, 1.0});
        out.truth.source_overlap[s] = 1;
        out.truth.target_overlap[t] = 1;
    }
    std::sort(pairs.begin(), pairs.end(),
              [](const Correspondence& a, const Correspondence& b) { return a.key() < b.key(); });
    out.truth.true_correspondences = CorrespondenceSet(src_final.size(), tgt_final.size(), pairs);
    out.source = PointCloud(std::move(src_final));
    out.target = PointCloud(std::move(tgt_final));
    return out;
}

struct DescriptorPair {
    Matrix source;
    Matrix target;
};

/// Unit descriptors: both ends of a true correspondence start from one shared random
/// direction, each perturbed by descriptor_noise times an independent Gaussian of unit
/// expected norm and renormalized. Every other point gets an independent direction.
inline DescriptorPair simulate_descriptors(std::size_t source_size, std::size_t target_size,
                                           const CorrespondenceSet& truth, std::size_t dim, double noise,
                                           std::uint64_t seed) {
    detail::require(dim >= 1, ErrorCode::InvalidArgument, "descriptor_dim must be positive");
    detail::require(noise >= 0.0, ErrorCode::InvalidArgument, "descriptor_noise must be >= 0");
    detail::require(truth.source_size() == source_size && truth.target_size() == target_size,
                    ErrorCode::ShapeMismatch, "ground truth does not match cloud sizes");
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const auto d = static_cast<Eigen::Index>(dim);
    const double noise_scale = noise / std::sqrt(static_cast<double>(dim));
    auto random_dir = [&] {
        Eigen::RowVectorXd v(d);
        do {
            for (Eigen::Index i = 0; i < d; ++i) v(i) = gauss(rng);
        } while (v.norm() < 1e-12);
        return Eigen::RowVectorXd(v.normalized());
    };
    auto perturbed = [&](const Eigen::RowVectorXd& base) {
        Eigen::RowVectorXd v = base;
        if (noise > 0.0)
            for (Eigen::Index i = 0; i < d; ++i) v(i) += noise_scale * gauss(rng);
        const double n = v.norm();
        return n > 1e-12 ? Eigen::RowVectorXd(v / n) : base;
    };

    DescriptorPair out{Matrix(static_cast<Eigen::Index>(source_size), d),
                       Matrix(static_cast<Eigen::Index>(target_size), d)};
    std::vector<char> src_done(source_size, 0), tgt_done(target_size, 0);
    std::map<std::size_t, Eigen::RowVectorXd> shared_src, shared_tgt;
    for (const auto& c : truth) {
        Eigen::RowVectorXd base;
        if (auto it = shared_src.find(c.source_index); it != shared_src.end())
            base = it->second;
        else if (auto jt = shared_tgt.find(c.target_index); jt != shared_tgt.end())
            base = jt->second;
        else
            base = random_dir();
        shared_src.emplace(c.source_index, base);
        shared_tgt.emplace(c.target_index, base);
    }
    for (std::size_t i = 0; i < source_size; ++i) {
        auto it = shared_src.find(i);
        out.source.row(static_cast<Eigen::Index>(i)) = it != shared_src.end() ? perturbed(it->second) : random_dir();
    }
    for (std::size_t j = 0; j < target_size; ++j) {
        auto it = shared_tgt.find(j);
        out.target.row(static_cast<Eigen::Index>(j)) = it != shared_tgt.end() ? perturbed(it->second) : random_dir();
    }
    return out;
}

struct OverlapLabels {
    std::vector<std::uint8_t> source;
    std::vector<std::uint8_t> target;

    static double fraction(const std::vector<std::uint8_t>& labels) {
        if (labels.empty()) return 0.0;
        return static_cast<double>(std::count(labels.begin(), labels.end(), std::uint8_t{1})) /
               static_cast<double>(labels.size());
    }
};

/// Label 1 where a point has a counterpart within `tau` once the source is moved by `t`.
inline OverlapLabels overlap_oracle(const PointCloud& source, const PointCloud& target, const RigidTransform& t,
                                    double tau) {
    OverlapLabels out;
    out.source.assign(source.size(), 0);
    out.target.assign(target.size(), 0);
    if (source.empty() || target.empty()) return out;
    const PointCloud moved = apply_transform(t, source);
    const GridIndex tgt_index(target.points(), std::max(tau, 1e-6));
    const GridIndex src_index(moved.points(), std::max(tau, 1e-6));
    const double tau2 = tau * tau;
    for (std::size_t i = 0; i < moved.size(); ++i)
        out.source[i] = tgt_index.nearest(moved[i]).second <= tau2 ? 1 : 0;
    for (std::size_t j = 0; j < target.size(); ++j)
        out.target[j] = src_index.nearest(target[j]).second <= tau2 ? 1 : 0;
    return out;
}

/// Centroid of each occupied voxel, ordered by voxel coordinate.
inline PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
    detail::require(voxel > 0.0, ErrorCode::InvalidArgument, "voxel size must be positive");
    std::map<std::array<long long, 3>, std::pair<Vec3, std::size_t>> cells;
    for (const auto& p : cloud.points()) {
        const std::array<long long, 3> key = {static_cast<long long>(std::floor(p.x() / voxel)),
                                              static_cast<long long>(std::floor(p.y() / voxel)),
                                              static_cast<long long>(std::floor(p.z() / voxel))};
        auto [it, fresh] = cells.try_emplace(key, Vec3::Zero(), 0);
        auto& cell = it->second;
        cell.first += p;
        cell.second += 1;
    }
    std::vector<Vec3> out;
    out.reserve(cells.size());
    for (const auto& [key, cell] : cells) out.push_back(cell.first / static_cast<double>(cell.second));
    return PointCloud(std::move(out));
}

/// Superpoint descriptors: normalized mean of the member descriptors of each patch.
/// A patch without members borrows the descriptor of the dense point nearest to it.
inline Matrix pool_descriptors(const Matrix& dense, const PatchAssignment& patches, const PointCloud& dense_cloud,
                               const PointCloud& superpoints) {
    detail::require(static_cast<std::size_t>(dense.rows()) == patches.patch_of.size(), ErrorCode::ShapeMismatch,
                    "descriptor rows must match the assignment");
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(patches.patch_count()), dense.cols());
    std::optional<GridIndex> index;
    for (std::size_t p = 0; p < patches.patch_count(); ++p) {
        auto row = out.row(static_cast<Eigen::Index>(p));
        for (std::size_t i : patches.members[p]) row += dense.row(static_cast<Eigen::Index>(i));
        if (patches.members[p].empty() || row.norm() < 1e-12) {
            if (!index) index.emplace(dense_cloud.points());
            row = dense.row(static_cast<Eigen::Index>(index->nearest(superpoints[p]).first));
        }
        row /= row.norm();
    }
    return out;
}

/// Patch-level ground truth: (i, j) overlap when some true dense correspondence
/// joins patch i to patch j; a superpoint is in the overlap when it is in such a pair.
struct PatchOverlapTruth {
    std::set<std::pair<std::size_t, std::size_t>> pairs;
    std::vector<std::uint8_t> source_labels;
    std::vector<std::uint8_t> target_labels;

    bool overlaps(std::size_t i, std::size_t j) const { return pairs.count({i, j}) != 0; }
};

inline PatchOverlapTruth patch_overlap_truth(const PatchAssignment& source_patches,
                                             const PatchAssignment& target_patches, const CorrespondenceSet& truth) {
    PatchOverlapTruth out;
    out.source_labels.assign(source_patches.patch_count(), 0);
    out.target_labels.assign(target_patches.patch_count(), 0);
    for (const auto& c : truth) {
        const std::size_t i = source_patches.patch_of.at(c.source_index);
        const std::size_t j = target_patches.patch_of.at(c.target_index);
        out.pairs.emplace(i, j);
        out.source_labels[i] = out.target_labels[j] = 1;
    }
    return out;
}

/// Planted putative set: round(count * inlier_ratio) true correspondences plus random
/// false pairs, confidences uniform in (0, 1).
inline CorrespondenceSet sample_correspondences(const GroundTruth& truth, std::size_t count, double inlier_ratio,
                                                std::uint64_t seed) {
    detail::require(inlier_ratio >= 0.0 && inlier_ratio <= 1.0, ErrorCode::InvalidArgument,
                    "inlier_ratio must be in [0, 1]");
    const auto& gt = truth.true_correspondences;
    const auto inliers = static_cast<std::size_t>(std::llround(static_cast<double>(count) * inlier_ratio));
    detail::require(inliers <= gt.size(), ErrorCode::Infeasible,
                    "scene has only " + std::to_string(gt.size()) + " true correspondences");
    detail::require(count - inliers <= gt.source_size() * gt.target_size() - gt.size(), ErrorCode::Infeasible,
                    "not enough distinct false pairs");
    Rng rng(seed);
    std::uniform_real_distribution<double> conf(0.0, 1.0);
    std::vector<std::size_t> idx(gt.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    CorrespondenceSet out(gt.source_size(), gt.target_size());
    for (std::size_t k = 0; k < inliers; ++k) {
        Correspondence c = gt[idx[k]];
        c.confidence = conf(rng);
        out.add(c);
    }
    std::uniform_int_distribution<std::size_t> ps(0, gt.source_size() - 1), pt(0, gt.target_size() - 1);
    while (out.size() < count) {
        const std::size_t s = ps(rng), t = pt(rng);
        if (gt.contains(s, t) || out.contains(s, t)) continue;
        out.add({s, t, conf(rng)});
    }
    return out;
}

} // namespace oaareg
