#pragma once

// Superpoint matching: one-to-many soft matches from a dual softmax over the
// feature similarity matrix, pruned around each best match and gated by the
// predicted overlap region.

#include "oaareg/attention.hpp"
#include "oaareg/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace oaareg {

/// s(i, j) = exp(-|h_i - h_j|^2) over L2-normalized features; values in [e^-4, 1].
class SimilarityMatrix {
  public:
    SimilarityMatrix() = default;
    explicit SimilarityMatrix(Matrix values) : values_(std::move(values)) {
        detail::require(values_.allFinite(), ErrorCode::NonFinite, "similarity values must be finite");
        detail::require(values_.size() == 0 || (values_.minCoeff() > 0.0 && values_.maxCoeff() <= 1.0),
                        ErrorCode::OutOfRange, "similarity values must lie in (0, 1]");
    }

    const Matrix& values() const noexcept { return values_; }
    Eigen::Index rows() const noexcept { return values_.rows(); }
    Eigen::Index cols() const noexcept { return values_.cols(); }
    double operator()(Eigen::Index i, Eigen::Index j) const { return values_(i, j); }

  private:
    Matrix values_;
};

enum class NeighborSpace { Feature, Spatial };

struct MatchConfig {
    double theta_m = 0.05; // soft-match probability threshold
    double theta_o = 0.5;  // overlap confidence threshold
    int knn = 3;
    /// Softmax temperature; 1 evaluates the dual softmax on the raw similarities.
    double softmax_temperature = 1.0;
    NeighborSpace neighborhood = NeighborSpace::Feature;

    void validate() const {
        detail::require(theta_m > 0.0 && theta_m < 1.0, ErrorCode::InvalidArgument, "theta_m must be in (0, 1)");
        detail::require(theta_o > 0.0 && theta_o < 1.0, ErrorCode::InvalidArgument, "theta_o must be in (0, 1)");
        detail::require(knn >= 1, ErrorCode::InvalidArgument, "knn must be at least 1");
        detail::require(softmax_temperature > 0.0 && std::isfinite(softmax_temperature), ErrorCode::InvalidArgument,
                        "softmax_temperature must be positive");
    }
};

struct PatchCorrespondence {
    std::size_t source = 0;
    std::size_t target = 0;
    double probability = 0.0;

    std::pair<std::size_t, std::size_t> key() const noexcept { return {source, target}; }
    friend bool operator==(const PatchCorrespondence& a, const PatchCorrespondence& b) {
        return a.source == b.source && a.target == b.target && a.probability == b.probability;
    }
};

/// Superpoint index pairs, kept sorted by (source, target).
struct PatchCorrespondenceSet {
    std::vector<PatchCorrespondence> pairs;

    std::size_t size() const noexcept { return pairs.size(); }
    bool empty() const noexcept { return pairs.empty(); }
    auto begin() const noexcept { return pairs.begin(); }
    auto end() const noexcept { return pairs.end(); }

    bool contains(std::size_t source, std::size_t target) const {
        auto it = std::lower_bound(pairs.begin(), pairs.end(), std::make_pair(source, target),
                                   [](const PatchCorrespondence& c, const std::pair<std::size_t, std::size_t>& k) {
                                       return c.key() < k;
                                   });
        return it != pairs.end() && it->key() == std::make_pair(source, target);
    }

    void sort() {
        std::sort(pairs.begin(), pairs.end(),
                  [](const PatchCorrespondence& a, const PatchCorrespondence& b) { return a.key() < b.key(); });
    }
};

inline SimilarityMatrix similarity(const FeatureMatrix& source, const FeatureMatrix& target) {
    detail::require(source.cols() == target.cols(), ErrorCode::ShapeMismatch, "feature widths differ");
    detail::require(source.allFinite() && target.allFinite(), ErrorCode::NonFinite, "features must be finite");
    auto normalized = [](const FeatureMatrix& f, const char* side) {
        FeatureMatrix out = f;
        for (Eigen::Index i = 0; i < f.rows(); ++i) {
            const double n = f.row(i).norm();
            detail::require(n > 0.0, ErrorCode::DegenerateInput,
                            std::string(side) + " feature row " + std::to_string(i) + " has zero norm");
            out.row(i) /= n;
        }
        return out;
    };
    const FeatureMatrix a = normalized(source, "source");
    const FeatureMatrix b = normalized(target, "target");
    // |a - b|^2 = 2 - 2 a.b for unit rows.
    Matrix d2 = (2.0 - 2.0 * (a * b.transpose()).array()).cwiseMax(0.0).cwiseMin(4.0).matrix();
    return SimilarityMatrix((-d2.array()).exp().matrix());
}

/// Row-wise (first) and column-wise (second) softmax of s / temperature.
inline std::pair<Matrix, Matrix> dual_softmax(const SimilarityMatrix& s, double temperature = 1.0) {
    const Matrix logits = s.values() / temperature;
    Matrix rows = logits, cols = logits;
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        auto r = rows.row(i);
        r.array() = (r.array() - r.maxCoeff()).exp();
        r /= r.sum();
    }
    for (Eigen::Index j = 0; j < cols.cols(); ++j) {
        auto c = cols.col(j);
        c.array() = (c.array() - c.maxCoeff()).exp();
        c /= c.sum();
    }
    return {rows, cols};
}

struct SoftMatches {
    PatchCorrespondenceSet row_matches;    // pairs with row-softmax probability >= theta_m
    PatchCorrespondenceSet column_matches; // pairs with column-softmax probability >= theta_m
    Matrix row_probabilities;
    Matrix column_probabilities;

    /// Whether (i, j) passed the threshold in either direction.
    bool passes(std::size_t i, std::size_t j, double theta_m) const {
        const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(j);
        return row_probabilities(r, c) >= theta_m || column_probabilities(r, c) >= theta_m;
    }
    double probability(std::size_t i, std::size_t j) const {
        const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(j);
        return std::max(row_probabilities(r, c), column_probabilities(r, c));
    }
};

/// Thresholded dual softmax. Every pair above theta_m is kept, so one superpoint
/// may match several and the count follows the overlap rather than a fixed top-k.
inline SoftMatches soft_match(const SimilarityMatrix& s, const MatchConfig& cfg) {
    cfg.validate();
    detail::require(s.rows() > 0 && s.cols() > 0, ErrorCode::TooFewElements, "similarity matrix is empty");
    SoftMatches out;
    std::tie(out.row_probabilities, out.column_probabilities) = dual_softmax(s, cfg.softmax_temperature);
    for (Eigen::Index i = 0; i < s.rows(); ++i)
        for (Eigen::Index j = 0; j < s.cols(); ++j) {
            const auto si = static_cast<std::size_t>(i), sj = static_cast<std::size_t>(j);
            if (out.row_probabilities(i, j) >= cfg.theta_m)
                out.row_matches.pairs.push_back({si, sj, out.row_probabilities(i, j)});
            if (out.column_probabilities(i, j) >= cfg.theta_m)
                out.column_matches.pairs.push_back({si, sj, out.column_probabilities(i, j)});
        }
    return out;
}

namespace detail {

/// k nearest rows to `anchor` (excluding it) by Euclidean distance; ties to lower index.
inline std::vector<std::size_t> nearest_rows(const Matrix& rows, std::size_t anchor, int k) {
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(static_cast<std::size_t>(rows.rows()));
    const auto a = static_cast<Eigen::Index>(anchor);
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
        if (i != a) dist.emplace_back((rows.row(i) - rows.row(a)).squaredNorm(), static_cast<std::size_t>(i));
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), dist.size());
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take), dist.end());
    std::vector<std::size_t> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back(dist[i].second);
    return out;
}

/// Index of the row maximum; ties to lower index.
template <typename Row>
std::size_t argmax(const Row& row) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < row.size(); ++j)
        if (row(j) > row(best)) best = j;
    return static_cast<std::size_t>(best);
}

} // namespace detail

/// For each source superpoint take its best target and that target's k nearest
/// neighbors (rows of `target_embedding`), keep candidates that passed the soft
/// threshold, repeat from the target side, and return the deduplicated union.
///
/// The embeddings define the neighborhoods: superpoint features for
/// NeighborSpace::Feature or superpoint coordinates for NeighborSpace::Spatial.
inline PatchCorrespondenceSet knn_expand_prune(const SimilarityMatrix& s, const SoftMatches& soft,
                                               const Matrix& source_embedding, const Matrix& target_embedding,
                                               const MatchConfig& cfg) {
    cfg.validate();
    const auto n_src = static_cast<std::size_t>(s.rows());
    const auto n_tgt = static_cast<std::size_t>(s.cols());
    detail::require(static_cast<std::size_t>(cfg.knn) < std::min(n_src, n_tgt), ErrorCode::InvalidArgument,
                    "knn must be smaller than both superpoint counts");
    detail::require(static_cast<std::size_t>(source_embedding.rows()) == n_src &&
                        static_cast<std::size_t>(target_embedding.rows()) == n_tgt,
                    ErrorCode::ShapeMismatch, "embedding rows must match superpoint counts");
    detail::require(soft.row_probabilities.rows() == s.rows() && soft.row_probabilities.cols() == s.cols(),
                    ErrorCode::ShapeMismatch, "soft matches do not belong to this similarity matrix");

    std::set<std::pair<std::size_t, std::size_t>> kept;
    for (std::size_t i = 0; i < n_src; ++i) {
        const std::size_t best = detail::argmax(s.values().row(static_cast<Eigen::Index>(i)));
        std::vector<std::size_t> candidates{best};
        for (std::size_t j : detail::nearest_rows(target_embedding, best, cfg.knn)) candidates.push_back(j);
        for (std::size_t j : candidates)
            if (soft.passes(i, j, cfg.theta_m)) kept.emplace(i, j);
    }
    for (std::size_t j = 0; j < n_tgt; ++j) {
        const std::size_t best = detail::argmax(s.values().col(static_cast<Eigen::Index>(j)));
        std::vector<std::size_t> candidates{best};
        for (std::size_t i : detail::nearest_rows(source_embedding, best, cfg.knn)) candidates.push_back(i);
        for (std::size_t i : candidates)
            if (soft.passes(i, j, cfg.theta_m)) kept.emplace(i, j);
    }

    PatchCorrespondenceSet out;
    out.pairs.reserve(kept.size());
    for (const auto& [i, j] : kept) out.pairs.push_back({i, j, soft.probability(i, j)});
    return out;
}

/// Keeps (i, j) iff source score i > theta_o and target score j > theta_o.
inline PatchCorrespondenceSet overlap_filter(const PatchCorrespondenceSet& matches, const OverlapScores& source_scores,
                                             const OverlapScores& target_scores, const MatchConfig& cfg,
                                             std::size_t source_count, std::size_t target_count) {
    cfg.validate();
    detail::require(source_scores.size() == source_count && target_scores.size() == target_count,
                    ErrorCode::ShapeMismatch, "overlap score lengths must match superpoint counts");
    PatchCorrespondenceSet out;
    for (const auto& m : matches) {
        detail::require(m.source < source_count && m.target < target_count, ErrorCode::OutOfRange,
                        "patch correspondence outside superpoint range");
        if (source_scores.scores[m.source] > cfg.theta_o && target_scores.scores[m.target] > cfg.theta_o)
            out.pairs.push_back(m);
    }
    return out;
}

} // namespace oaareg
