#pragma once

// Dense matching inside matched patch pairs: nearest-superpoint patch grouping,
// log-domain Sinkhorn with a dustbin row/column, and mutual-top extraction merged
// into a globally one-to-one correspondence set.

#include "oaareg/coarse_match.hpp"
#include "oaareg/core.hpp"
#include "oaareg/parallel.hpp"
#include "oaareg/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace oaareg {

struct PatchAssignment {
    std::vector<std::size_t> patch_of;             // dense point -> superpoint
    std::vector<std::vector<std::size_t>> members; // superpoint -> dense points, ascending

    std::size_t patch_count() const noexcept { return members.size(); }
};

/// Assigns every dense point to its nearest superpoint (ties to the lower index).
inline PatchAssignment assign_patches(const PointCloud& dense, const PointCloud& superpoints) {
    detail::require(!dense.empty() && !superpoints.empty(), ErrorCode::TooFewElements,
                    "patch assignment needs nonempty dense and superpoint clouds");
    PatchAssignment out;
    out.patch_of.resize(dense.size());
    out.members.resize(superpoints.size());
    const GridIndex index(superpoints.points());
    for (std::size_t i = 0; i < dense.size(); ++i) {
        const std::size_t p = index.nearest(dense[i]).first;
        out.patch_of[i] = p;
        out.members[p].push_back(i);
    }
    return out;
}

/// (m+1) x (n+1) plan when a dustbin is used, otherwise m x n.
struct TransportPlan {
    Matrix values;
    bool has_dustbin = false;
    /// KL divergence of the row marginals from their targets after each iteration
    /// (column marginals are exact after each column update). Empty when not tracked.
    std::vector<double> marginal_error;

    Eigen::Index interior_rows() const { return has_dustbin ? values.rows() - 1 : values.rows(); }
    Eigen::Index interior_cols() const { return has_dustbin ? values.cols() - 1 : values.cols(); }
    auto interior() const { return values.topLeftCorner(interior_rows(), interior_cols()); }
};

namespace detail {

inline double log_sum_exp(const double* begin, std::size_t count, std::size_t stride, const double* offset,
                          std::size_t offset_stride) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < count; ++i) mx = std::max(mx, begin[i * stride] + offset[i * offset_stride]);
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) acc += std::exp(begin[i * stride] + offset[i * offset_stride] - mx);
    return mx + std::log(acc);
}

} // namespace detail

/// Sinkhorn normalization in the log domain on scores = -cost.
///
/// Without a dustbin every row has mass 1 and every column mass m/n. With a dustbin
/// the interior rows and columns have mass 1, the dustbin row has mass n and the
/// dustbin column mass m; dustbin entries carry log-score `dustbin_score`.
inline TransportPlan sinkhorn(const Matrix& cost, int iterations, bool with_dustbin, double dustbin_score = 1.0,
                              bool track_error = true) {
    detail::require(iterations >= 1, ErrorCode::InvalidArgument, "sinkhorn needs at least one iteration");
    detail::require(cost.rows() >= 1 && cost.cols() >= 1, ErrorCode::TooFewElements, "cost matrix is empty");
    detail::require(cost.allFinite(), ErrorCode::NonFinite, "sinkhorn cost has non-finite entries");
    detail::require(std::isfinite(dustbin_score), ErrorCode::NonFinite, "dustbin score must be finite");

    const Eigen::Index m = cost.rows(), n = cost.cols();
    const Eigen::Index rows = with_dustbin ? m + 1 : m;
    const Eigen::Index cols = with_dustbin ? n + 1 : n;
    Matrix scores(rows, cols);
    scores.topLeftCorner(m, n) = -cost;
    if (with_dustbin) {
        scores.col(n).setConstant(dustbin_score);
        scores.row(m).setConstant(dustbin_score);
    }

    Eigen::VectorXd log_mu(rows), log_nu(cols);
    if (with_dustbin) {
        log_mu.head(m).setZero();
        log_mu(m) = std::log(static_cast<double>(n));
        log_nu.head(n).setZero();
        log_nu(n) = std::log(static_cast<double>(m));
    } else {
        log_mu.setZero();
        log_nu.setConstant(std::log(static_cast<double>(m) / static_cast<double>(n)));
    }

    Eigen::VectorXd u = Eigen::VectorXd::Zero(rows), v = Eigen::VectorXd::Zero(cols);
    TransportPlan plan;
    plan.has_dustbin = with_dustbin;
    plan.marginal_error.reserve(static_cast<std::size_t>(iterations));
    const auto stride_r = static_cast<std::size_t>(cols);
    for (int it = 0; it < iterations; ++it) {
        for (Eigen::Index i = 0; i < rows; ++i)
            u(i) = log_mu(i) - detail::log_sum_exp(&scores(i, 0), static_cast<std::size_t>(cols), 1, v.data(), 1);
        for (Eigen::Index j = 0; j < cols; ++j)
            v(j) = log_nu(j) - detail::log_sum_exp(&scores(0, j), static_cast<std::size_t>(rows), stride_r, u.data(), 1);
        if (!track_error) continue;
        // Row marginal error after the column update.
        double kl = 0.0;
        for (Eigen::Index i = 0; i < rows; ++i) {
            double row_mass = 0.0;
            for (Eigen::Index j = 0; j < cols; ++j) row_mass += std::exp(scores(i, j) + u(i) + v(j));
            const double target = std::exp(log_mu(i));
            if (row_mass > 0.0) kl += target * std::log(target / row_mass) - target + row_mass;
        }
        plan.marginal_error.push_back(kl);
    }
    plan.values.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) plan.values(i, j) = std::exp(scores(i, j) + u(i) + v(j));
    return plan;
}

struct FineMatchConfig {
    int sinkhorn_iterations = 100;
    double temperature = 0.1;    // cost = -cosine / temperature
    double dustbin_score = 1.0;
    std::size_t patch_cap = 0;   // 0 keeps every point of a patch

    void validate() const {
        detail::require(sinkhorn_iterations >= 1, ErrorCode::InvalidArgument, "sinkhorn_iterations must be >= 1");
        detail::require(temperature > 0.0, ErrorCode::InvalidArgument, "temperature must be positive");
        detail::require(std::isfinite(dustbin_score), ErrorCode::NonFinite, "dustbin_score must be finite");
    }
};

namespace detail {

inline std::vector<std::size_t> capped(const std::vector<std::size_t>& members, std::size_t cap) {
    if (cap == 0 || members.size() <= cap) return members;
    // Evenly strided subset, deterministic.
    std::vector<std::size_t> out;
    out.reserve(cap);
    for (std::size_t i = 0; i < cap; ++i) out.push_back(members[i * members.size() / cap]);
    return out;
}

} // namespace detail

/// Dense one-to-one correspondences from matched patch pairs.
///
/// Each patch pair gets a Sinkhorn plan over cost = -cos(f_a, f_b) / temperature
/// with a dustbin; (a, b) is proposed when it is the maximum of both its row and
/// its column (dustbin included) with confidence = plan value. Proposals are merged
/// by descending confidence (ties to the lower index pair), skipping any whose
/// source or target point is already taken.
inline CorrespondenceSet extract_dense(const PatchCorrespondenceSet& patch_pairs, const PatchAssignment& source_patches,
                                       const PatchAssignment& target_patches, const FeatureMatrix& source_features,
                                       const FeatureMatrix& target_features, const FineMatchConfig& cfg) {
    cfg.validate();
    detail::require(source_features.cols() == target_features.cols(), ErrorCode::ShapeMismatch,
                    "dense feature widths differ");
    detail::require(static_cast<std::size_t>(source_features.rows()) == source_patches.patch_of.size() &&
                        static_cast<std::size_t>(target_features.rows()) == target_patches.patch_of.size(),
                    ErrorCode::ShapeMismatch, "dense features must cover every assigned point");
    for (const auto& pp : patch_pairs) {
        detail::require(pp.source < source_patches.patch_count() && pp.target < target_patches.patch_count(),
                        ErrorCode::OutOfRange, "patch pair outside patch range");
        detail::require(!source_patches.members[pp.source].empty() && !target_patches.members[pp.target].empty(),
                        ErrorCode::DegenerateInput,
                        "patch pair (" + std::to_string(pp.source) + ", " + std::to_string(pp.target) +
                            ") references an empty patch");
    }

    auto unit_rows = [](const FeatureMatrix& f) {
        FeatureMatrix out = f;
        for (Eigen::Index i = 0; i < f.rows(); ++i) {
            const double n = f.row(i).norm();
            if (n > 0.0) out.row(i) /= n;
        }
        return out;
    };
    const FeatureMatrix fs = unit_rows(source_features);
    const FeatureMatrix ft = unit_rows(target_features);

    std::vector<std::vector<Correspondence>> proposals(patch_pairs.size());
    parallel_for(patch_pairs.size(), [&](std::size_t k) {
        const auto& pp = patch_pairs.pairs[k];
        const auto src = detail::capped(source_patches.members[pp.source], cfg.patch_cap);
        const auto tgt = detail::capped(target_patches.members[pp.target], cfg.patch_cap);
        Matrix cost(static_cast<Eigen::Index>(src.size()), static_cast<Eigen::Index>(tgt.size()));
        for (std::size_t a = 0; a < src.size(); ++a)
            for (std::size_t b = 0; b < tgt.size(); ++b)
                cost(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
                    -fs.row(static_cast<Eigen::Index>(src[a])).dot(ft.row(static_cast<Eigen::Index>(tgt[b]))) /
                    cfg.temperature;
        const TransportPlan plan = sinkhorn(cost, cfg.sinkhorn_iterations, true, cfg.dustbin_score, false);
        const Matrix& p = plan.values;
        for (Eigen::Index a = 0; a < cost.rows(); ++a) {
            const std::size_t b = detail::argmax(p.row(a));
            if (static_cast<Eigen::Index>(b) == cost.cols()) continue; // dustbin wins the row
            if (detail::argmax(p.col(static_cast<Eigen::Index>(b))) != static_cast<std::size_t>(a)) continue;
            proposals[k].push_back(
                {src[static_cast<std::size_t>(a)], tgt[b], std::min(1.0, p(a, static_cast<Eigen::Index>(b)))});
        }
    });

    std::vector<Correspondence> all;
    for (auto& p : proposals) all.insert(all.end(), p.begin(), p.end());
    std::sort(all.begin(), all.end(), [](const Correspondence& a, const Correspondence& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.key() < b.key();
    });
    std::vector<char> src_used(source_patches.patch_of.size(), 0), tgt_used(target_patches.patch_of.size(), 0);
    std::vector<Correspondence> accepted;
    for (const auto& c : all) {
        if (src_used[c.source_index] || tgt_used[c.target_index]) continue;
        src_used[c.source_index] = tgt_used[c.target_index] = 1;
        accepted.push_back(c);
    }
    std::sort(accepted.begin(), accepted.end(),
              [](const Correspondence& a, const Correspondence& b) { return a.key() < b.key(); });
    return CorrespondenceSet(source_patches.patch_of.size(), target_patches.patch_of.size(), accepted);
}

} // namespace oaareg
