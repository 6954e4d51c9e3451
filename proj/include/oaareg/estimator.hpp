#pragma once

// Pose estimation from putative correspondences.
//
// fsr_estimate is the feature-similarity estimator: spectral seeds spread over the
// source cloud, one consensus set per seed, feature-similarity compatibility inside
// each set, leading-eigenvector weights, weighted SVD per seed, and a final pick of
// the hypothesis with the most inliers over the whole set. ransac_estimate is the
// 3-point RANSAC baseline; weighted_svd is the closed-form solver both rely on.

#include "oaareg/core.hpp"
#include "oaareg/parallel.hpp"
#include "oaareg/spatial.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace oaareg {

enum class ConsensusMetric {
    Spatial,    // nearest source points, confidence as secondary key
    Confidence, // nearest confidence values, source distance as secondary key
};

struct EstimatorConfig {
    double seed_radius = 0.1;   // R: non-maximum suppression radius for seeds (m)
    double seed_fraction = 0.3; // N_s as a fraction of |C|
    int consensus_k = 20;
    double sigma_s = 10.0;      // feature-difference sensitivity
    double tau_a = 0.1;         // acceptance radius (m)
    int ransac_iterations = 50000;
    std::uint64_t rng_seed = 0;
    std::size_t spectral_cap = 3000; // rows of the spectral matrix before subsampling
    int power_iterations = 1000;
    /// Compare |R p + t - q|^2 against tau_a as printed instead of |R p + t - q| < tau_a.
    bool squared_acceptance = false;
    ConsensusMetric consensus_metric = ConsensusMetric::Spatial;

    void validate() const {
        detail::require(seed_radius > 0.0, ErrorCode::InvalidArgument, "seed_radius must be positive");
        detail::require(seed_fraction > 0.0 && seed_fraction <= 1.0, ErrorCode::InvalidArgument,
                        "seed_fraction must be in (0, 1]");
        detail::require(consensus_k >= 3, ErrorCode::InvalidArgument, "consensus_k must be at least 3");
        detail::require(sigma_s > 0.0, ErrorCode::InvalidArgument, "sigma_s must be positive");
        detail::require(tau_a > 0.0, ErrorCode::InvalidArgument, "tau_a must be positive");
        detail::require(ransac_iterations > 0, ErrorCode::InvalidArgument, "ransac_iterations must be positive");
        detail::require(spectral_cap >= 1, ErrorCode::InvalidArgument, "spectral_cap must be positive");
        detail::require(power_iterations >= 1, ErrorCode::InvalidArgument, "power_iterations must be positive");
    }
};

struct ConsensusSet {
    std::size_t seed = 0;
    std::vector<std::size_t> members; // seed first
    std::vector<double> weights;      // per member, uniform until weighted
};

struct CompatibilityMatrix {
    Matrix values;                 // k x k, symmetric, entries in [0, 1]
    Eigen::VectorXd scores;        // per-member feature similarity score (the diagonal)
};

struct LeadingWeights {
    Eigen::VectorXd weights; // unit L2 norm, nonnegative
    double eigenvalue = 0.0;
    int iterations = 0;
    bool degenerate = false;  // zero matrix: uniform weights returned
};

struct Estimate {
    RigidTransform transform;
    std::size_t inlier_count = 0;
    std::size_t hypotheses = 0; // candidate models evaluated
};

/// Source and target coordinates of each correspondence, in set order.
struct CorrespondencePoints {
    std::vector<Vec3> source;
    std::vector<Vec3> target;

    CorrespondencePoints(const CorrespondenceSet& c, const PointCloud& src, const PointCloud& tgt) {
        c.check_against(src, tgt);
        source.reserve(c.size());
        target.reserve(c.size());
        for (const auto& p : c) {
            source.push_back(src[p.source_index]);
            target.push_back(tgt[p.target_index]);
        }
    }
};

// ---------------------------------------------------------------------------
// Closed-form weighted Procrustes

namespace detail {

inline std::optional<RigidTransform> try_weighted_svd(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                                                      const std::vector<double>& weights) {
    double total = 0.0;
    Vec3 src_mean = Vec3::Zero(), tgt_mean = Vec3::Zero();
    std::size_t support = 0;
    for (std::size_t i = 0; i < source.size(); ++i) {
        total += weights[i];
        src_mean += weights[i] * source[i];
        tgt_mean += weights[i] * target[i];
        if (weights[i] > 0.0) ++support;
    }
    if (support < 3 || !(total > 0.0)) return std::nullopt;
    src_mean /= total;
    tgt_mean /= total;
    Mat3 cross = Mat3::Zero();
    Mat3 scatter = Mat3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) {
        const Vec3 a = source[i] - src_mean;
        cross += weights[i] * a * (target[i] - tgt_mean).transpose();
        scatter += weights[i] * a * a.transpose();
    }
    // Rank-2 weighted source spread is required for a unique rotation.
    Eigen::JacobiSVD<Mat3> spread(scatter);
    const Eigen::Vector3d sv = spread.singularValues();
    if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) return std::nullopt;

    Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    const Mat3 rotation = svd.matrixV() * d * svd.matrixU().transpose();
    if (!rotation.allFinite()) return std::nullopt;
    return RigidTransform::from_polar(rotation, tgt_mean - rotation * src_mean);
}

} // namespace detail

/// Weighted least-squares rigid fit: argmin sum w_i |R p_i + t - q_i|^2.
inline RigidTransform weighted_svd(const std::vector<Vec3>& source, const std::vector<Vec3>& target,
                                   const std::vector<double>& weights) {
    detail::require(source.size() == target.size() && source.size() == weights.size(), ErrorCode::ShapeMismatch,
                    "weighted_svd needs equally long point and weight sequences");
    for (double w : weights)
        detail::require(std::isfinite(w) && w >= 0.0, ErrorCode::InvalidArgument, "weights must be finite and >= 0");
    auto fit = detail::try_weighted_svd(source, target, weights);
    detail::require(fit.has_value(), ErrorCode::DegenerateInput,
                    "weighted support is collinear, coincident or has fewer than 3 pairs");
    return *fit;
}

// ---------------------------------------------------------------------------
// Power iteration

namespace detail {

// Power iteration from the uniform vector with `mul` as the matrix-vector product.
template <class MatVec>
LeadingWeights power_iterate(Eigen::Index n, MatVec&& mul, int iterations) {
    LeadingWeights out;
    Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
    for (int it = 1; it <= iterations; ++it) {
        Eigen::VectorXd y = mul(x);
        const double norm = y.norm();
        out.iterations = it;
        if (norm == 0.0) {
            // x fell into the null space; nothing left to amplify.
            out.weights = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
            out.degenerate = true;
            return out;
        }
        y /= norm;
        const double step = (y - x).norm();
        x = std::move(y);
        if (step < 1e-9) break;
    }
    out.eigenvalue = x.dot(mul(x));
    out.weights = std::move(x);
    return out;
}

inline bool symmetric_within(const Matrix& m, double tol) {
    constexpr Eigen::Index tile = 64;
    const Eigen::Index n = m.rows();
    for (Eigen::Index bi = 0; bi < n; bi += tile)
        for (Eigen::Index bj = bi; bj < n; bj += tile)
            for (Eigen::Index i = bi; i < std::min(bi + tile, n); ++i)
                for (Eigen::Index j = std::max(bj, i + 1); j < std::min(bj + tile, n); ++j)
                    if (std::abs(m(i, j) - m(j, i)) > tol) return false;
    return true;
}

inline LeadingWeights uniform_degenerate(Eigen::Index n) {
    LeadingWeights out;
    out.weights = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
    out.degenerate = true;
    return out;
}

} // namespace detail

/// Leading eigenvector of a symmetric nonnegative matrix by power iteration from the
/// uniform vector; stops when successive iterates differ by less than 1e-9.
inline LeadingWeights leading_weights(const Matrix& m, int iterations) {
    detail::require(iterations >= 1, ErrorCode::InvalidArgument, "power iteration needs at least one step");
    detail::require(m.rows() == m.cols() && m.rows() >= 1, ErrorCode::ShapeMismatch, "matrix must be square");
    bool finite = true;
    double lo = std::numeric_limits<double>::infinity(), scale = 0.0;
    for (const double* v = m.data(); v != m.data() + m.size(); ++v) {
        finite = finite && std::isfinite(*v);
        lo = std::min(lo, *v);
        scale = std::max(scale, *v);
    }
    detail::require(finite, ErrorCode::NonFinite, "matrix must be finite");
    detail::require(lo >= 0.0, ErrorCode::InvalidArgument, "matrix must be nonnegative");
    detail::require(detail::symmetric_within(m, 1e-12 * std::max(1.0, scale)), ErrorCode::InvalidArgument,
                    "matrix must be symmetric");
    if (scale == 0.0) return detail::uniform_degenerate(m.rows());
    return detail::power_iterate(m.rows(), [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return m * x; },
                                 iterations);
}

// ---------------------------------------------------------------------------
// Seeds

/// Spectral-matching reliability per correspondence: leading eigenvector of the
/// pairwise length-consistency matrix M(a, b) = max(0, 1 - d_ab^2 / tau_a^2) with
/// d_ab = | |p_a - p_b| - |q_a - q_b| | and zero diagonal. Beyond `spectral_cap`
/// correspondences the eigenvector is computed on a uniform subsample and every
/// correspondence is scored by one multiplication against it.
inline Eigen::VectorXd spectral_scores(const CorrespondencePoints& pts, const EstimatorConfig& cfg) {
    const std::size_t n = pts.source.size();
    std::vector<std::size_t> anchors(n);
    std::iota(anchors.begin(), anchors.end(), std::size_t{0});
    if (n > cfg.spectral_cap) {
        Rng rng(derive_seed(cfg.rng_seed, 0, 0x5eed));
        std::shuffle(anchors.begin(), anchors.end(), rng);
        anchors.resize(cfg.spectral_cap);
        std::sort(anchors.begin(), anchors.end());
    }
    const std::size_t s = anchors.size();
    const double inv_sigma2 = 1.0 / (cfg.tau_a * cfg.tau_a);

    // Anchor coordinates one axis per row so the inner loop runs over contiguous memory.
    Eigen::Matrix<double, 6, Eigen::Dynamic, Eigen::RowMajor> xyz(6, static_cast<Eigen::Index>(s));
    for (std::size_t j = 0; j < s; ++j) {
        xyz.block<3, 1>(0, static_cast<Eigen::Index>(j)) = pts.source[anchors[j]];
        xyz.block<3, 1>(3, static_cast<Eigen::Index>(j)) = pts.target[anchors[j]];
    }
    // Affinities of correspondence a against anchors from .. s-1, written to out;
    // |u| - |v| squared as |u|^2 + |v|^2 - 2 |u| |v| needs one root per pair.
    auto affinity_row = [&](std::size_t a, std::size_t from, double* out) {
        const auto len = static_cast<Eigen::Index>(s - from);
        const auto at = static_cast<Eigen::Index>(from);
        const Vec3& p = pts.source[a];
        const Vec3& q = pts.target[a];
        auto axis = [&](int r) { return xyz.row(r).segment(at, len).array(); };
        const Eigen::ArrayXd uu = (p.x() - axis(0)).square() + (p.y() - axis(1)).square() + (p.z() - axis(2)).square();
        const Eigen::ArrayXd vv = (q.x() - axis(3)).square() + (q.y() - axis(4)).square() + (q.z() - axis(5)).square();
        const Eigen::ArrayXd d2 = (uu + vv - 2.0 * (uu * vv).sqrt()).max(0.0);
        Eigen::Map<Eigen::ArrayXd>(out, len) = (1.0 - d2 * inv_sigma2).max(0.0);
    };

    // Anchor block: upper triangle only, zero diagonal; it is symmetric.
    Matrix block(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s));
    parallel_for(s, [&](std::size_t i) {
        double* row = block.row(static_cast<Eigen::Index>(i)).data();
        row[i] = 0.0;
        affinity_row(anchors[i], i + 1, row + i + 1);
    });
    auto block_times = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        return block.selfadjointView<Eigen::Upper>() * x;
    };
    double peak = 0.0;
    for (std::size_t i = 0; i + 1 < s; ++i)
        peak = std::max(peak, block.row(static_cast<Eigen::Index>(i)).tail(static_cast<Eigen::Index>(s - 1 - i)).maxCoeff());
    const LeadingWeights lead = peak == 0.0
                                    ? detail::uniform_degenerate(static_cast<Eigen::Index>(s))
                                    : detail::power_iterate(static_cast<Eigen::Index>(s), block_times,
                                                            cfg.power_iterations);

    Eigen::VectorXd scores(static_cast<Eigen::Index>(n));
    const Eigen::VectorXd anchor_scores = block_times(lead.weights);
    std::vector<std::size_t> anchor_of(n, s);
    for (std::size_t j = 0; j < s; ++j) anchor_of[anchors[j]] = j;
    parallel_for(n, [&](std::size_t a) {
        if (anchor_of[a] < s) {
            scores(static_cast<Eigen::Index>(a)) = anchor_scores(static_cast<Eigen::Index>(anchor_of[a]));
            return;
        }
        std::vector<double> row(s);
        affinity_row(a, 0, row.data());
        scores(static_cast<Eigen::Index>(a)) =
            Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(s)).dot(lead.weights);
    });
    return scores;
}

/// Seeds: correspondences whose spectral score is a local maximum among those with
/// source points within `seed_radius`, at most ceil(seed_fraction |C|), best first.
/// Equal scores are broken by (source_index, target_index).
inline std::vector<std::size_t> select_seeds(const CorrespondenceSet& c, const PointCloud& source,
                                             const PointCloud& target, const EstimatorConfig& cfg,
                                             const Eigen::VectorXd* precomputed_scores = nullptr) {
    cfg.validate();
    detail::require(!c.empty(), ErrorCode::TooFewElements, "seed selection needs correspondences");
    const CorrespondencePoints pts(c, source, target);
    const Eigen::VectorXd scores = precomputed_scores ? *precomputed_scores : spectral_scores(pts, cfg);
    detail::require(static_cast<std::size_t>(scores.size()) == c.size(), ErrorCode::ShapeMismatch,
                    "one score per correspondence required");

    auto better = [&](std::size_t a, std::size_t b) {
        const auto ia = static_cast<Eigen::Index>(a), ib = static_cast<Eigen::Index>(b);
        if (scores(ia) != scores(ib)) return scores(ia) > scores(ib);
        return c[a].key() < c[b].key();
    };
    const GridIndex index(pts.source, cfg.seed_radius);
    std::vector<std::size_t> seeds;
    for (std::size_t a = 0; a < c.size(); ++a) {
        bool local_max = true;
        for (std::size_t b : index.radius(pts.source[a], cfg.seed_radius))
            if (b != a && better(b, a)) {
                local_max = false;
                break;
            }
        if (local_max) seeds.push_back(a);
    }
    std::sort(seeds.begin(), seeds.end(), better);
    const auto cap = static_cast<std::size_t>(std::ceil(cfg.seed_fraction * static_cast<double>(c.size())));
    if (seeds.size() > cap) seeds.resize(cap);
    return seeds;
}

// ---------------------------------------------------------------------------
// Consensus sets and feature compatibility

/// The seed plus its consensus_k - 1 nearest correspondences under cfg.consensus_metric.
inline ConsensusSet build_consensus(std::size_t seed, const CorrespondenceSet& c, const PointCloud& source,
                                    const EstimatorConfig& cfg, const GridIndex* source_index = nullptr,
                                    const std::vector<Vec3>* source_points = nullptr) {
    const auto k = static_cast<std::size_t>(cfg.consensus_k);
    detail::require(cfg.consensus_k >= 1, ErrorCode::InvalidArgument, "consensus_k must be positive");
    detail::require(c.size() >= k, ErrorCode::TooFewElements,
                    "consensus needs at least " + std::to_string(k) + " correspondences, got " +
                        std::to_string(c.size()));
    detail::require(seed < c.size(), ErrorCode::OutOfRange, "seed index out of range");
    detail::require(c.source_size() == source.size(), ErrorCode::ShapeMismatch,
                    "correspondence set does not belong to the source cloud");

    std::vector<Vec3> local_points;
    if (!source_points) {
        local_points.reserve(c.size());
        for (const auto& p : c) local_points.push_back(source[p.source_index]);
        source_points = &local_points;
    }
    const Vec3& anchor = (*source_points)[seed];
    const double seed_conf = c[seed].confidence;

    struct Candidate {
        double primary;
        double secondary;
        std::size_t index;
    };
    std::vector<Candidate> cands;
    if (cfg.consensus_metric == ConsensusMetric::Spatial) {
        std::vector<std::size_t> pool;
        if (source_index) {
            // Everything within the k-th nearest distance, so ties at the boundary are all seen.
            const auto nn = source_index->knn(anchor, k);
            const double r = std::sqrt(nn.back().second) * (1.0 + 1e-12) + 1e-15;
            pool = source_index->radius(anchor, r);
        } else {
            pool.resize(c.size());
            std::iota(pool.begin(), pool.end(), std::size_t{0});
        }
        for (std::size_t i : pool)
            if (i != seed) cands.push_back({((*source_points)[i] - anchor).squaredNorm(), -c[i].confidence, i});
    } else {
        for (std::size_t i = 0; i < c.size(); ++i)
            if (i != seed)
                cands.push_back({std::abs(c[i].confidence - seed_conf), ((*source_points)[i] - anchor).squaredNorm(), i});
    }
    auto order = [&](const Candidate& a, const Candidate& b) {
        if (a.primary != b.primary) return a.primary < b.primary;
        if (a.secondary != b.secondary) return a.secondary < b.secondary;
        return c[a.index].key() < c[b.index].key();
    };
    const std::size_t take = std::min(k - 1, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(take), cands.end(), order);

    ConsensusSet cs;
    cs.seed = seed;
    cs.members.push_back(seed);
    for (std::size_t i = 0; i < take; ++i) cs.members.push_back(cands[i].index);
    cs.weights.assign(cs.members.size(), 1.0);
    return cs;
}

/// Per-member feature score from the descriptor distance between its endpoints:
/// D <- 1 - D / max(D), then sigmoid((D - mean(D)) * sigma_s). Compatibility of two
/// members is the smaller of their scores.
inline CompatibilityMatrix feature_compatibility(const std::vector<double>& raw_distances, double sigma_s) {
    const auto k = static_cast<Eigen::Index>(raw_distances.size());
    detail::require(k >= 1, ErrorCode::TooFewElements, "empty consensus set");
    Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(raw_distances.data(), k);
    detail::require(d.allFinite() && d.minCoeff() >= 0.0, ErrorCode::InvalidArgument,
                    "feature distances must be finite and nonnegative");
    const double max_d = d.maxCoeff();
    if (max_d > 0.0)
        d = (1.0 - d.array() / max_d).matrix();
    else
        d.setConstant(0.5); // identical features everywhere: every member equally similar
    const double mean = d.mean();
    CompatibilityMatrix out;
    out.scores = d.unaryExpr([&](double x) { return 1.0 / (1.0 + std::exp(-(x - mean) * sigma_s)); });
    out.values.resize(k, k);
    for (Eigen::Index a = 0; a < k; ++a)
        for (Eigen::Index b = 0; b < k; ++b) out.values(a, b) = std::min(out.scores(a), out.scores(b));
    return out;
}

inline CompatibilityMatrix feature_compatibility(const ConsensusSet& cs, const CorrespondenceSet& c,
                                                 const PointCloud& source, const PointCloud& target,
                                                 const EstimatorConfig& cfg) {
    const Matrix& fs = source.descriptors();
    const Matrix& ft = target.descriptors();
    detail::require(fs.cols() == ft.cols(), ErrorCode::ShapeMismatch, "descriptor widths differ");
    std::vector<double> dist;
    dist.reserve(cs.members.size());
    for (std::size_t m : cs.members) {
        const auto& p = c[m];
        dist.push_back((fs.row(static_cast<Eigen::Index>(p.source_index)) -
                        ft.row(static_cast<Eigen::Index>(p.target_index)))
                           .norm());
    }
    return feature_compatibility(dist, cfg.sigma_s);
}

// ---------------------------------------------------------------------------
// Hypothesis selection

struct Hypothesis {
    std::size_t index = 0;
    std::size_t inlier_count = 0;
};

namespace detail {

/// Structure-of-arrays copy of correspondence endpoints for fast residual counting.
struct ResidualData {
    std::vector<double> px, py, pz, qx, qy, qz;

    explicit ResidualData(const CorrespondencePoints& pts) {
        const std::size_t n = pts.source.size();
        for (auto* v : {&px, &py, &pz, &qx, &qy, &qz}) v->resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            px[i] = pts.source[i].x(), py[i] = pts.source[i].y(), pz[i] = pts.source[i].z();
            qx[i] = pts.target[i].x(), qy[i] = pts.target[i].y(), qz[i] = pts.target[i].z();
        }
    }

    std::size_t size() const noexcept { return px.size(); }

    /// Number of pairs with squared residual strictly below `bound`.
    std::size_t count_below(const RigidTransform& t, double bound) const {
        const Mat3& r = t.rotation();
        const Vec3& s = t.translation();
        const double r00 = r(0, 0), r01 = r(0, 1), r02 = r(0, 2), r10 = r(1, 0), r11 = r(1, 1), r12 = r(1, 2),
                     r20 = r(2, 0), r21 = r(2, 1), r22 = r(2, 2), tx = s.x(), ty = s.y(), tz = s.z();
        const std::size_t n = size();
        std::size_t count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double ex = r00 * px[i] + r01 * py[i] + r02 * pz[i] + tx - qx[i];
            const double ey = r10 * px[i] + r11 * py[i] + r12 * pz[i] + ty - qy[i];
            const double ez = r20 * px[i] + r21 * py[i] + r22 * pz[i] + tz - qz[i];
            count += (ex * ex + ey * ey + ez * ez < bound) ? 1u : 0u;
        }
        return count;
    }
};

inline double acceptance_bound(const EstimatorConfig& cfg) {
    return cfg.squared_acceptance ? cfg.tau_a : cfg.tau_a * cfg.tau_a;
}

} // namespace detail

/// Candidate with the most pairs inside the acceptance radius; ties go to the earliest.
inline Hypothesis select_hypothesis(const std::vector<RigidTransform>& candidates, const CorrespondenceSet& c,
                                    const PointCloud& source, const PointCloud& target, const EstimatorConfig& cfg) {
    detail::require(!candidates.empty(), ErrorCode::TooFewElements, "no candidate transforms");
    const detail::ResidualData data(CorrespondencePoints(c, source, target));
    const double bound = detail::acceptance_bound(cfg);
    std::vector<std::size_t> counts(candidates.size());
    parallel_for(candidates.size(), [&](std::size_t i) { counts[i] = data.count_below(candidates[i], bound); });
    Hypothesis best{0, counts[0]};
    for (std::size_t i = 1; i < counts.size(); ++i)
        if (counts[i] > best.inlier_count) best = {i, counts[i]};
    return best;
}

// ---------------------------------------------------------------------------
// Estimators

/// Feature-similarity estimator. Input order does not matter: the set is first
/// ordered by (source_index, target_index).
inline Estimate fsr_estimate(const CorrespondenceSet& input, const PointCloud& source, const PointCloud& target,
                             const EstimatorConfig& cfg) {
    cfg.validate();
    detail::require(input.size() >= static_cast<std::size_t>(cfg.consensus_k), ErrorCode::TooFewElements,
                    "fsr needs at least consensus_k = " + std::to_string(cfg.consensus_k) + " correspondences");
    const CorrespondenceSet c = input.canonical();
    const CorrespondencePoints pts(c, source, target);
    const auto seeds = select_seeds(c, source, target, cfg);
    const GridIndex index(pts.source);

    std::vector<std::optional<RigidTransform>> fits(seeds.size());
    parallel_for(seeds.size(), [&](std::size_t s) {
        ConsensusSet cs = build_consensus(seeds[s], c, source, cfg, &index, &pts.source);
        const CompatibilityMatrix cm = feature_compatibility(cs, c, source, target, cfg);
        const LeadingWeights lead = leading_weights(cm.values, cfg.power_iterations);
        std::vector<Vec3> src, tgt;
        for (std::size_t m : cs.members) {
            src.push_back(pts.source[m]);
            tgt.push_back(pts.target[m]);
        }
        cs.weights.assign(lead.weights.data(), lead.weights.data() + lead.weights.size());
        fits[s] = detail::try_weighted_svd(src, tgt, cs.weights);
    });

    std::vector<RigidTransform> candidates;
    for (auto& f : fits)
        if (f) candidates.push_back(*f);
    detail::require(!candidates.empty(), ErrorCode::DegenerateInput, "every seed produced a degenerate consensus set");
    const Hypothesis best = select_hypothesis(candidates, c, source, target, cfg);
    return {candidates[best.index], best.inlier_count, candidates.size()};
}

/// 3-point RANSAC with inlier counting under tau_a, refit on the best model's inliers.
///
/// Iterations run in fixed batches, each with its own generator derived from
/// cfg.rng_seed, so the result does not depend on the thread count.
inline Estimate ransac_estimate(const CorrespondenceSet& c, const PointCloud& source, const PointCloud& target,
                                const EstimatorConfig& cfg) {
    cfg.validate();
    detail::require(c.size() >= 3, ErrorCode::TooFewElements, "ransac needs at least 3 correspondences");
    const CorrespondencePoints pts(c, source, target);
    const detail::ResidualData data(pts);
    const double bound = detail::acceptance_bound(cfg);
    const std::size_t n = c.size();

    constexpr std::size_t kBatch = 1024;
    const auto total = static_cast<std::size_t>(cfg.ransac_iterations);
    const std::size_t batches = (total + kBatch - 1) / kBatch;
    struct Best {
        std::size_t count = 0;
        std::size_t iteration = 0;
        std::optional<RigidTransform> model;
    };
    std::vector<Best> per_batch(batches);
    parallel_for(batches, [&](std::size_t b) {
        Rng rng(derive_seed(cfg.rng_seed, b, 0x7a5ac));
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::vector<Vec3> src(3), tgt(3);
        const std::vector<double> unit(3, 1.0);
        Best best;
        const std::size_t end = std::min(total, (b + 1) * kBatch);
        for (std::size_t it = b * kBatch; it < end; ++it) {
            std::size_t i0 = pick(rng), i1 = pick(rng), i2 = pick(rng);
            while (i1 == i0) i1 = pick(rng);
            while (i2 == i0 || i2 == i1) i2 = pick(rng);
            src = {pts.source[i0], pts.source[i1], pts.source[i2]};
            tgt = {pts.target[i0], pts.target[i1], pts.target[i2]};
            auto model = detail::try_weighted_svd(src, tgt, unit);
            if (!model) continue;
            const std::size_t count = data.count_below(*model, bound);
            if (!best.model || count > best.count) best = {count, it, model};
        }
        per_batch[b] = std::move(best);
    });

    const Best* winner = nullptr;
    for (const auto& b : per_batch)
        if (b.model && (!winner || b.count > winner->count)) winner = &b;
    detail::require(winner != nullptr, ErrorCode::DegenerateInput, "ransac found no non-degenerate sample");

    std::vector<Vec3> src, tgt;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 r = (*winner->model)(pts.source[i]) - pts.target[i];
        if (r.squaredNorm() < bound) {
            src.push_back(pts.source[i]);
            tgt.push_back(pts.target[i]);
        }
    }
    RigidTransform result = *winner->model;
    if (auto refit = detail::try_weighted_svd(src, tgt, std::vector<double>(src.size(), 1.0))) result = *refit;
    return {result, data.count_below(result, bound), total};
}

/// Single weighted SVD over every correspondence, weighted by confidence.
inline Estimate wsvd_estimate(const CorrespondenceSet& c, const PointCloud& source, const PointCloud& target,
                              const EstimatorConfig& cfg) {
    detail::require(c.size() >= 3, ErrorCode::TooFewElements, "weighted svd needs at least 3 correspondences");
    const CorrespondencePoints pts(c, source, target);
    std::vector<double> w;
    w.reserve(c.size());
    for (const auto& p : c) w.push_back(std::max(0.0, p.confidence));
    const RigidTransform t = weighted_svd(pts.source, pts.target, w);
    const detail::ResidualData data(pts);
    return {t, data.count_below(t, detail::acceptance_bound(cfg)), 1};
}

} // namespace oaareg
