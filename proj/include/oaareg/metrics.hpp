#pragma once

// Evaluation quantities for correspondences, estimated poses and overlap scores.

#include "oaareg/attention.hpp"
#include "oaareg/coarse_match.hpp"
#include "oaareg/core.hpp"
#include "oaareg/spatial.hpp"
#include "oaareg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <vector>

namespace oaareg {

/// Defaults follow the indoor/outdoor evaluation protocol.
struct MetricThresholds {
    double inlier_distance = 0.1; // IR residual threshold (m)
    double fmr_ratio = 0.05;      // FMR: IR must exceed 5%
    double rmse = 0.2;            // indoor RR: RMSE < 0.2 m
    double rre_deg = 5.0;         // outdoor RR: RRE < 5 deg
    double rte_m = 2.0;           // outdoor RR: RTE < 2 m
};

enum class RecallCriterion { Rmse, RotationTranslation };

struct InlierStats {
    double ir = 0.0;
    bool fmr_hit = false;
    std::size_t inliers = 0;
    std::size_t total = 0;
};

/// IR = fraction of pairs with |R p + t - q| < tau under the ground truth; a pair of
/// clouds counts toward FMR when IR > fmr_threshold.
inline InlierStats inlier_stats(const CorrespondenceSet& c, const PointCloud& source, const PointCloud& target,
                                const RigidTransform& gt, double tau = 0.1, double fmr_threshold = 0.05) {
    InlierStats out;
    out.total = c.size();
    if (c.empty()) return out;
    c.check_against(source, target);
    for (const auto& p : c)
        if ((gt(source[p.source_index]) - target[p.target_index]).norm() < tau) ++out.inliers;
    out.ir = static_cast<double>(out.inliers) / static_cast<double>(out.total);
    out.fmr_hit = out.ir > fmr_threshold;
    return out;
}

struct RegistrationErrors {
    double rre_deg = 0.0;
    double rte_m = 0.0;
    double rmse_m = 0.0;
};

/// Geodesic angle between two rotations in degrees. Evaluated as
/// atan2(|vee(D - D^T)| / 2, (tr D - 1) / 2) with D = A^T B, which equals
/// arccos((tr D - 1) / 2) but keeps full precision near zero.
inline double rotation_angle_deg(const Mat3& a, const Mat3& b) {
    const Mat3 d = a.transpose() * b;
    const Vec3 axis(d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1));
    const double angle = std::atan2(0.5 * axis.norm(), 0.5 * (d.trace() - 1.0));
    return angle * 180.0 / std::numbers::pi;
}

/// RRE, RTE and the RMSE between est(p) and gt(p) over the given source points
/// (typically the source ends of the true correspondences; all points when empty).
inline RegistrationErrors registration_errors(const RigidTransform& est, const RigidTransform& gt,
                                              const PointCloud& source,
                                              const std::vector<std::size_t>& points = {}) {
    RegistrationErrors out;
    out.rre_deg = rotation_angle_deg(gt.rotation(), est.rotation());
    out.rte_m = (est.translation() - gt.translation()).norm();
    double acc = 0.0;
    std::size_t n = 0;
    auto add = [&](const Vec3& p) {
        acc += (est(p) - gt(p)).squaredNorm();
        ++n;
    };
    if (points.empty())
        for (const auto& p : source.points()) add(p);
    else
        for (std::size_t i : points) add(source[i]);
    out.rmse_m = n ? std::sqrt(acc / static_cast<double>(n)) : 0.0;
    return out;
}

inline bool registration_success(const RegistrationErrors& e, RecallCriterion criterion,
                                 const MetricThresholds& th = {}) {
    if (criterion == RecallCriterion::Rmse) return e.rmse_m < th.rmse;
    return e.rre_deg < th.rre_deg && e.rte_m < th.rte_m;
}

/// Mean squared nearest-neighbor distance from a to b plus the same from b to a.
inline double chamfer(const PointCloud& a, const PointCloud& b) {
    detail::require(!a.empty() && !b.empty(), ErrorCode::TooFewElements, "chamfer distance needs nonempty clouds");
    auto directed = [](const PointCloud& from, const PointCloud& to) {
        const GridIndex index(to.points());
        double acc = 0.0;
        for (const auto& p : from.points()) acc += index.nearest(p).second;
        return acc / static_cast<double>(from.size());
    };
    return directed(a, b) + directed(b, a);
}

struct PatchStats {
    double pir = 0.0; // patch pairs that truly overlap / all patch pairs
    double pop = 0.0; // precision of predicted overlap superpoints
};

/// PIR over patch pairs and POP over both clouds' superpoint overlap predictions.
inline PatchStats patch_stats(const PatchCorrespondenceSet& pairs, const PatchOverlapTruth& truth,
                              const std::vector<std::uint8_t>& predicted_source,
                              const std::vector<std::uint8_t>& predicted_target) {
    detail::require(predicted_source.size() == truth.source_labels.size() &&
                        predicted_target.size() == truth.target_labels.size(),
                    ErrorCode::ShapeMismatch, "prediction lengths must match superpoint counts");
    PatchStats out;
    if (!pairs.empty()) {
        std::size_t hits = 0;
        for (const auto& p : pairs) hits += truth.overlaps(p.source, p.target) ? 1 : 0;
        out.pir = static_cast<double>(hits) / static_cast<double>(pairs.size());
    }
    std::size_t tp = 0, fp = 0;
    auto tally = [&](const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& label) {
        for (std::size_t i = 0; i < pred.size(); ++i) {
            if (!pred[i]) continue;
            (label[i] ? tp : fp) += 1;
        }
    };
    tally(predicted_source, truth.source_labels);
    tally(predicted_target, truth.target_labels);
    out.pop = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    return out;
}

/// Mean of label * log(o) + (1 - label) * log(1 - o), scores clamped to
/// [1e-12, 1 - 1e-12]. This is the log-likelihood, so it is <= 0; see overlap_bce_loss.
inline double overlap_bce(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    detail::require(scores.size() == labels.size(), ErrorCode::ShapeMismatch, "scores and labels differ in length");
    detail::require(!scores.empty(), ErrorCode::TooFewElements, "overlap_bce needs at least one score");
    double acc = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double o = std::clamp(scores[i], 1e-12, 1.0 - 1e-12);
        acc += labels[i] ? std::log(o) : std::log(1.0 - o);
    }
    return acc / static_cast<double>(scores.size());
}

/// Conventional nonnegative binary cross-entropy, -overlap_bce.
inline double overlap_bce_loss(const std::vector<double>& scores, const std::vector<std::uint8_t>& labels) {
    return -overlap_bce(scores, labels);
}

/// Average of both clouds' overlap_bce values.
inline double overlap_bce_pair(const OverlapScores& source, const std::vector<std::uint8_t>& source_labels,
                               const OverlapScores& target, const std::vector<std::uint8_t>& target_labels) {
    return 0.5 * (overlap_bce(source.scores, source_labels) + overlap_bce(target.scores, target_labels));
}

} // namespace oaareg
