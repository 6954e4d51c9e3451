#pragma once

// End-to-end runs: configuration, single registrations and benchmark sweeps.

#include "oaareg/attention.hpp"
#include "oaareg/coarse_match.hpp"
#include "oaareg/core.hpp"
#include "oaareg/estimator.hpp"
#include "oaareg/fine_match.hpp"
#include "oaareg/io.hpp"
#include "oaareg/metrics.hpp"
#include "oaareg/parallel.hpp"
#include "oaareg/synth.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace oaareg {

using Json = nlohmann::ordered_json;

/// Error raised inside one pipeline stage; the message is prefixed with the stage.
class StageError : public Error {
  public:
    StageError(std::string stage, const Error& cause)
        : Error(Preformatted{}, cause.code(), stage + ": " + cause.what()), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

  private:
    std::string stage_;
};

struct RunConfig {
    SceneSpec scene;
    MatchConfig match;
    FineMatchConfig fine;
    EstimatorConfig estimator_cfg;

    std::string estimator = "fsr";          // fsr | ransac | wsvd
    std::string overlap_source = "oracle";  // oracle | attention | none
    std::string neighborhood = "feature";   // feature | spatial
    std::string consensus_metric = "spatial"; // spatial | confidence
    std::string recall_criterion = "rmse";  // rmse | rre_rte
    double oracle_score = 0.9;              // score given to labelled overlap superpoints
    std::size_t num_samples = 0;            // keep the most confident N dense matches; 0 keeps all
    std::size_t trials = 1;

    MetricThresholds thresholds;

    std::string source;                  // input cloud paths; empty means synthetic
    std::string target;
    std::vector<double> gt_transform;    // row-major 4x4 for file inputs, optional
    std::string report;                  // JSON report path
    std::string aligned;                 // aligned source PLY path
    std::string csv;                     // benchmark CSV path

    std::vector<double> sweep_descriptor_noise;
    std::vector<double> sweep_overlap_fraction;
    std::vector<std::string> sweep_estimator;

    RunConfig() { match.softmax_temperature = 0.01; }

    bool file_inputs() const { return !source.empty() || !target.empty(); }

    void validate() const {
        scene.validate();
        match.validate();
        fine.validate();
        estimator_cfg.validate();
        auto one_of = [](const std::string& key, const std::string& v, std::initializer_list<const char*> allowed) {
            for (const char* a : allowed)
                if (v == a) return;
            std::string list;
            for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
            throw Error(ErrorCode::InvalidArgument, key + " must be one of {" + list + "}, got '" + v + "'");
        };
        one_of("estimator", estimator, {"fsr", "ransac", "wsvd"});
        for (const auto& e : sweep_estimator) one_of("sweep_estimator", e, {"fsr", "ransac", "wsvd"});
        one_of("overlap_source", overlap_source, {"oracle", "attention", "none"});
        one_of("neighborhood", neighborhood, {"feature", "spatial"});
        one_of("consensus_metric", consensus_metric, {"spatial", "confidence"});
        one_of("recall_criterion", recall_criterion, {"rmse", "rre_rte"});
        detail::require(oracle_score > 0.0 && oracle_score < 1.0, ErrorCode::InvalidArgument,
                        "oracle_score must be in (0, 1)");
        detail::require(trials >= 1, ErrorCode::InvalidArgument, "trials must be at least 1");
        detail::require(source.empty() == target.empty(), ErrorCode::InvalidArgument,
                        "source and target must be given together");
        detail::require(gt_transform.empty() || gt_transform.size() == 16, ErrorCode::InvalidArgument,
                        "gt_transform must hold 16 row-major values");
        detail::require(!(file_inputs() && overlap_source == "oracle" && gt_transform.empty()),
                        ErrorCode::InvalidArgument, "overlap_source 'oracle' needs gt_transform for file inputs");
        for (double v : sweep_descriptor_noise)
            detail::require(v >= 0.0, ErrorCode::InvalidArgument, "sweep_descriptor_noise values must be >= 0");
        for (double v : sweep_overlap_fraction)
            detail::require(v > 0.0 && v <= 1.0, ErrorCode::InvalidArgument,
                            "sweep_overlap_fraction values must be in (0, 1]");
        const auto& th = thresholds;
        for (double v : {th.inlier_distance, th.fmr_ratio, th.rmse, th.rre_deg, th.rte_m})
            detail::require(v > 0.0, ErrorCode::InvalidArgument, "metric thresholds must be positive");
    }

    MatchConfig match_config() const {
        MatchConfig m = match;
        m.neighborhood = neighborhood == "spatial" ? NeighborSpace::Spatial : NeighborSpace::Feature;
        return m;
    }

    EstimatorConfig estimator_config(std::uint64_t seed) const {
        EstimatorConfig e = estimator_cfg;
        e.consensus_metric = consensus_metric == "confidence" ? ConsensusMetric::Confidence : ConsensusMetric::Spatial;
        e.rng_seed = seed;
        return e;
    }

    RecallCriterion criterion() const {
        return recall_criterion == "rmse" ? RecallCriterion::Rmse : RecallCriterion::RotationTranslation;
    }
};

namespace detail {

/// Calls f(key, member) for every configurable field, in a fixed order.
template <typename Config, typename F>
void visit_fields(Config& c, F&& f) {
    f("point_count", c.scene.point_count);
    f("overlap_fraction", c.scene.overlap_fraction);
    f("noise_sigma", c.scene.noise_sigma);
    f("rotation_magnitude", c.scene.rotation_magnitude);
    f("translation_magnitude", c.scene.translation_magnitude);
    f("descriptor_dim", c.scene.descriptor_dim);
    f("coarse_descriptor_dim", c.scene.coarse_descriptor_dim);
    f("descriptor_noise", c.scene.descriptor_noise);
    f("outlier_fraction", c.scene.outlier_fraction);
    f("rng_seed", c.scene.rng_seed);
    f("voxel_size", c.scene.voxel_size);
    f("theta_m", c.match.theta_m);
    f("theta_o", c.match.theta_o);
    f("knn", c.match.knn);
    f("softmax_temperature", c.match.softmax_temperature);
    f("neighborhood", c.neighborhood);
    f("sinkhorn_iterations", c.fine.sinkhorn_iterations);
    f("fine_temperature", c.fine.temperature);
    f("dustbin_score", c.fine.dustbin_score);
    f("patch_cap", c.fine.patch_cap);
    f("seed_radius", c.estimator_cfg.seed_radius);
    f("seed_fraction", c.estimator_cfg.seed_fraction);
    f("consensus_k", c.estimator_cfg.consensus_k);
    f("sigma_s", c.estimator_cfg.sigma_s);
    f("tau_a", c.estimator_cfg.tau_a);
    f("ransac_iterations", c.estimator_cfg.ransac_iterations);
    f("spectral_cap", c.estimator_cfg.spectral_cap);
    f("power_iterations", c.estimator_cfg.power_iterations);
    f("squared_acceptance", c.estimator_cfg.squared_acceptance);
    f("consensus_metric", c.consensus_metric);
    f("estimator", c.estimator);
    f("overlap_source", c.overlap_source);
    f("oracle_score", c.oracle_score);
    f("num_samples", c.num_samples);
    f("trials", c.trials);
    f("recall_criterion", c.recall_criterion);
    f("inlier_threshold", c.thresholds.inlier_distance);
    f("fmr_threshold", c.thresholds.fmr_ratio);
    f("rmse_threshold", c.thresholds.rmse);
    f("rre_threshold", c.thresholds.rre_deg);
    f("rte_threshold", c.thresholds.rte_m);
    f("source", c.source);
    f("target", c.target);
    f("gt_transform", c.gt_transform);
    f("report", c.report);
    f("aligned", c.aligned);
    f("csv", c.csv);
    f("sweep_descriptor_noise", c.sweep_descriptor_noise);
    f("sweep_overlap_fraction", c.sweep_overlap_fraction);
    f("sweep_estimator", c.sweep_estimator);
}

template <typename T>
void assign_json(T& member, const Json& value, const std::string& key) {
    try {
        if constexpr (std::is_same_v<T, double>) {
            detail::require(value.is_number(), ErrorCode::InvalidArgument, "expected a number");
            member = value.get<double>();
        } else if constexpr (std::is_same_v<T, bool>) {
            detail::require(value.is_boolean(), ErrorCode::InvalidArgument, "expected true or false");
            member = value.get<bool>();
        } else if constexpr (std::is_integral_v<T>) {
            detail::require(value.is_number_integer(), ErrorCode::InvalidArgument, "expected an integer");
            if constexpr (std::is_unsigned_v<T>)
                detail::require(value.is_number_unsigned() || value.get<long long>() >= 0, ErrorCode::InvalidArgument,
                                "expected a nonnegative integer");
            member = value.get<T>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            detail::require(value.is_string(), ErrorCode::InvalidArgument, "expected a string");
            member = value.get<std::string>();
        } else {
            detail::require(value.is_array(), ErrorCode::InvalidArgument, "expected an array");
            member = value.get<T>();
        }
    } catch (const Error& e) {
        throw Error(ErrorCode::InvalidArgument, "config key '" + key + "': " + e.what());
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "config key '" + key + "': " + e.what());
    }
}

template <typename T>
Json parse_flag_text(const std::string& text, const std::string& key) {
    auto number = [&](const std::string& s) {
        Json j = Json::parse(s, nullptr, false);
        if (j.is_discarded() || !j.is_number())
            throw Error(ErrorCode::InvalidArgument, "flag --" + key + ": '" + s + "' is not a number");
        return j;
    };
    if constexpr (std::is_same_v<T, std::string>) {
        return Json(text);
    } else if constexpr (std::is_same_v<T, bool>) {
        if (text == "true" || text == "1") return Json(true);
        if (text == "false" || text == "0") return Json(false);
        throw Error(ErrorCode::InvalidArgument, "flag --" + key + ": expected true or false");
    } else if constexpr (std::is_arithmetic_v<T>) {
        return number(text);
    } else {
        Json arr = Json::array();
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item.empty()) continue;
            if constexpr (std::is_same_v<typename T::value_type, std::string>)
                arr.push_back(item);
            else
                arr.push_back(number(item));
        }
        return arr;
    }
}

} // namespace detail

/// Every configuration key, in serialization order.
inline std::vector<std::string> config_keys() {
    std::vector<std::string> keys;
    RunConfig c;
    detail::visit_fields(c, [&](const char* k, auto&) { keys.emplace_back(k); });
    return keys;
}

inline Json to_json(const RunConfig& cfg) {
    Json j = Json::object();
    RunConfig copy = cfg;
    detail::visit_fields(copy, [&](const char* k, auto& member) { j[k] = member; });
    return j;
}

/// Applies every key of a JSON object; unknown keys are rejected.
inline void apply_json(RunConfig& cfg, const Json& j) {
    detail::require(j.is_object(), ErrorCode::InvalidArgument, "config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool found = false;
        detail::visit_fields(cfg, [&](const char* k, auto& member) {
            if (it.key() != k) return;
            found = true;
            detail::assign_json(member, it.value(), it.key());
        });
        detail::require(found, ErrorCode::InvalidArgument, "unknown config key '" + it.key() + "'");
    }
}

/// Applies one command-line override; lists are comma separated.
inline void apply_flag(RunConfig& cfg, const std::string& key, const std::string& text) {
    bool found = false;
    detail::visit_fields(cfg, [&](const char* k, auto& member) {
        if (key != k) return;
        found = true;
        using T = std::decay_t<decltype(member)>;
        detail::assign_json(member, detail::parse_flag_text<T>(text, key), key);
    });
    detail::require(found, ErrorCode::InvalidArgument, "unknown config key '" + key + "'");
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    detail::require(static_cast<bool>(in), ErrorCode::InvalidArgument, "cannot open config '" + path + "'");
    Json j = Json::parse(in, nullptr, false);
    detail::require(!j.is_discarded(), ErrorCode::Parse, "config '" + path + "' is not valid JSON");
    RunConfig cfg;
    apply_json(cfg, j);
    return cfg;
}

// ---------------------------------------------------------------------------
// Reports

struct EvalReport {
    std::optional<double> ir, fmr, rr, rre_deg, rte_m, rmse_m, chamfer, pir, pop, overlap_bce;
    std::size_t trials = 0;
    std::size_t failures = 0;
    double correspondences = 0.0; // mean dense correspondences per trial
    double patch_pairs = 0.0;     // mean retained superpoint pairs per trial
    MetricThresholds thresholds;
    RecallCriterion criterion = RecallCriterion::Rmse;
    std::optional<RigidTransform> transform; // single-trial runs only
};

inline Json to_json(const EvalReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
    Json j = Json::object();
    j["ir"] = opt(r.ir);
    j["fmr"] = opt(r.fmr);
    j["rr"] = opt(r.rr);
    j["rre_deg"] = opt(r.rre_deg);
    j["rte_m"] = opt(r.rte_m);
    j["rmse_m"] = opt(r.rmse_m);
    j["chamfer"] = opt(r.chamfer);
    j["pir"] = opt(r.pir);
    j["pop"] = opt(r.pop);
    j["overlap_bce"] = opt(r.overlap_bce);
    j["counts"] = {{"trials", r.trials},
                   {"failures", r.failures},
                   {"correspondences", r.correspondences},
                   {"patch_pairs", r.patch_pairs}};
    j["thresholds"] = {{"inlier_distance_m", r.thresholds.inlier_distance},
                       {"fmr_ratio", r.thresholds.fmr_ratio},
                       {"rmse_m", r.thresholds.rmse},
                       {"rre_deg", r.thresholds.rre_deg},
                       {"rte_m", r.thresholds.rte_m},
                       {"recall_criterion", r.criterion == RecallCriterion::Rmse ? "rmse" : "rre_rte"}};
    if (r.transform) {
        Json m = Json::array();
        const Eigen::Matrix4d t = r.transform->matrix();
        for (int i = 0; i < 4; ++i) m.push_back({t(i, 0), t(i, 1), t(i, 2), t(i, 3)});
        j["transform"] = m;
    } else {
        j["transform"] = nullptr;
    }
    return j;
}

// ---------------------------------------------------------------------------
// One pair

/// Everything up to (not including) pose estimation.
struct PreparedPair {
    PointCloud source; // dense, with descriptors
    PointCloud target;
    std::optional<GroundTruth> truth;
    PointCloud source_superpoints;
    PointCloud target_superpoints;
    PatchAssignment source_patches;
    PatchAssignment target_patches;
    OverlapScores source_scores;
    OverlapScores target_scores;
    std::optional<PatchOverlapTruth> patch_truth;
    std::optional<DescriptorPair> coarse; // per-point descriptors pooled into superpoint features
    PatchCorrespondenceSet patch_pairs;
    CorrespondenceSet correspondences;
};

struct PairOutcome {
    RigidTransform transform;
    std::optional<InlierStats> inliers;
    std::optional<RegistrationErrors> errors;
    bool registered = false;
    double chamfer = 0.0;
    std::optional<PatchStats> patches;
    std::optional<double> overlap_bce;
    std::size_t correspondences = 0;
    std::size_t patch_pairs = 0;
    double estimation_seconds = 0.0;
};

/// True correspondences for clouds given with a reference pose: each source point is
/// paired with the target point nearest to its transformed position when closer than
/// `tau`, one to one, closest pairs first.
inline GroundTruth derive_truth(const PointCloud& source, const PointCloud& target, const RigidTransform& gt,
                                double tau) {
    GroundTruth out;
    out.transform = gt;
    out.source_overlap.assign(source.size(), 0);
    out.target_overlap.assign(target.size(), 0);
    const GridIndex index(target.points());
    struct Cand {
        double d2;
        std::size_t s, t;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < source.size(); ++i) {
        const auto [j, d2] = index.nearest(gt(source[i]));
        if (d2 < tau * tau) cands.push_back({d2, i, j});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.d2 != b.d2) return a.d2 < b.d2;
        return std::make_pair(a.s, a.t) < std::make_pair(b.s, b.t);
    });
    std::vector<Correspondence> pairs;
    for (const auto& c : cands) {
        if (out.source_overlap[c.s] || out.target_overlap[c.t]) continue;
        out.source_overlap[c.s] = out.target_overlap[c.t] = 1;
        pairs.push_back({c.s, c.t, 1.0});
    }
    std::sort(pairs.begin(), pairs.end(),
              [](const Correspondence& a, const Correspondence& b) { return a.key() < b.key(); });
    out.true_correspondences = CorrespondenceSet(source.size(), target.size(), pairs);
    return out;
}

namespace detail {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(name, e);
    } catch (const std::exception& e) {
        throw StageError(name, Error(ErrorCode::InvalidArgument, e.what()));
    }
}

inline std::uint64_t trial_seed(std::uint64_t root, std::size_t trial, std::uint64_t salt) {
    return derive_seed(root, trial, salt);
}

/// The `count` most confident correspondences, ties to the lower (source, target).
inline CorrespondenceSet top_confident(const CorrespondenceSet& c, std::size_t count) {
    if (count == 0 || c.size() <= count) return c;
    std::vector<Correspondence> all(c.begin(), c.end());
    std::sort(all.begin(), all.end(), [](const Correspondence& a, const Correspondence& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        return a.key() < b.key();
    });
    all.resize(count);
    std::sort(all.begin(), all.end(), [](const Correspondence& a, const Correspondence& b) { return a.key() < b.key(); });
    return CorrespondenceSet(c.source_size(), c.target_size(), all);
}

inline Matrix coordinates(const PointCloud& cloud) {
    Matrix m(static_cast<Eigen::Index>(cloud.size()), 3);
    for (std::size_t i = 0; i < cloud.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = cloud[i].transpose();
    return m;
}

inline RigidTransform transform_from_rows(const std::vector<double>& v) {
    Mat3 r;
    Vec3 t;
    for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) r(i, k) = v[static_cast<std::size_t>(4 * i + k)];
        t(i) = v[static_cast<std::size_t>(4 * i + 3)];
    }
    return RigidTransform(r, t);
}

} // namespace detail

/// Synthesis or loading, superpoints, overlap scores, coarse and fine matching.
inline PreparedPair prepare_pair(const RunConfig& cfg, std::size_t trial) {
    PreparedPair p;
    const std::uint64_t root = cfg.scene.rng_seed;

    if (cfg.file_inputs()) {
        detail::stage("load", [&] {
            p.source = load_cloud(cfg.source);
            p.target = load_cloud(cfg.target);
            detail::require(p.source.has_descriptors() && p.target.has_descriptors(), ErrorCode::InvalidArgument,
                            "input clouds need f_0..f_{d-1} descriptor properties");
            if (!cfg.gt_transform.empty())
                p.truth = derive_truth(p.source, p.target, detail::transform_from_rows(cfg.gt_transform),
                                       cfg.thresholds.inlier_distance);
        });
    } else {
        detail::stage("synth", [&] {
            SceneSpec spec = cfg.scene;
            spec.rng_seed = detail::trial_seed(root, trial, 1);
            ScenePair scene = generate_pair(spec);
            DescriptorPair d = simulate_descriptors(scene.source.size(), scene.target.size(),
                                                    scene.truth.true_correspondences, spec.descriptor_dim,
                                                    spec.descriptor_noise, detail::trial_seed(root, trial, 2));
            p.coarse = simulate_descriptors(scene.source.size(), scene.target.size(), scene.truth.true_correspondences,
                                            spec.coarse_descriptor_dim, spec.descriptor_noise,
                                            detail::trial_seed(root, trial, 5));
            p.source = scene.source.with_descriptors(std::move(d.source));
            p.target = scene.target.with_descriptors(std::move(d.target));
            p.truth = std::move(scene.truth);
        });
    }

    Matrix source_features, target_features;
    detail::stage("superpoints", [&] {
        p.source_superpoints = voxel_downsample(p.source, cfg.scene.voxel_size);
        p.target_superpoints = voxel_downsample(p.target, cfg.scene.voxel_size);
        p.source_patches = assign_patches(p.source, p.source_superpoints);
        p.target_patches = assign_patches(p.target, p.target_superpoints);
        const Matrix& src_desc = p.coarse ? p.coarse->source : p.source.descriptors();
        const Matrix& tgt_desc = p.coarse ? p.coarse->target : p.target.descriptors();
        source_features = pool_descriptors(src_desc, p.source_patches, p.source, p.source_superpoints);
        target_features = pool_descriptors(tgt_desc, p.target_patches, p.target, p.target_superpoints);
        if (p.truth)
            p.patch_truth = patch_overlap_truth(p.source_patches, p.target_patches, p.truth->true_correspondences);
    });

    detail::stage("overlap", [&] {
        const std::size_t ns = p.source_superpoints.size(), nt = p.target_superpoints.size();
        if (cfg.overlap_source == "oracle") {
            auto scores = [&](const std::vector<std::uint8_t>& labels) {
                OverlapScores s;
                for (auto l : labels) s.scores.push_back(l ? cfg.oracle_score : 1.0 - cfg.oracle_score);
                s.weight_map = s.scores;
                return s;
            };
            p.source_scores = scores(p.patch_truth->source_labels);
            p.target_scores = scores(p.patch_truth->target_labels);
        } else if (cfg.overlap_source == "attention") {
            const auto d = static_cast<std::size_t>(source_features.cols());
            const std::uint64_t wseed = detail::trial_seed(root, 0, 4);
            const AttentionWeights token_w = AttentionWeights::random(d, derive_seed(wseed, 0));
            const AttentionWeights update_w = AttentionWeights::random(d, derive_seed(wseed, 1));
            Rng rng(derive_seed(wseed, 2));
            std::uniform_real_distribution<double> u(-1.0, 1.0);
            Eigen::VectorXd projection(static_cast<Eigen::Index>(d));
            for (Eigen::Index i = 0; i < projection.size(); ++i) projection(i) = u(rng);
            OverlapDetection det = detect_overlap(source_features, target_features, token_w, update_w, projection);
            source_features = std::move(det.source_features);
            target_features = std::move(det.target_features);
            p.source_scores = std::move(det.source_scores);
            p.target_scores = std::move(det.target_scores);
        } else {
            p.source_scores = OverlapScores::constant(ns, 1.0);
            p.target_scores = OverlapScores::constant(nt, 1.0);
        }
    });

    detail::stage("coarse_match", [&] {
        const MatchConfig mc = cfg.match_config();
        const SimilarityMatrix s = similarity(source_features, target_features);
        const SoftMatches soft = soft_match(s, mc);
        PatchCorrespondenceSet pairs;
        if (mc.neighborhood == NeighborSpace::Spatial)
            pairs = knn_expand_prune(s, soft, detail::coordinates(p.source_superpoints),
                                     detail::coordinates(p.target_superpoints), mc);
        else
            pairs = knn_expand_prune(s, soft, source_features, target_features, mc);
        if (cfg.overlap_source == "none")
            p.patch_pairs = std::move(pairs);
        else
            p.patch_pairs = overlap_filter(pairs, p.source_scores, p.target_scores, mc,
                                           p.source_superpoints.size(), p.target_superpoints.size());
    });

    detail::stage("fine_match", [&] {
        const CorrespondenceSet dense = extract_dense(p.patch_pairs, p.source_patches, p.target_patches,
                                                      p.source.descriptors(), p.target.descriptors(), cfg.fine);
        p.correspondences = detail::top_confident(dense, cfg.num_samples);
    });
    return p;
}

/// Pose estimation with the named estimator, then every available metric.
inline PairOutcome finish_pair(const PreparedPair& p, const RunConfig& cfg, const std::string& estimator,
                               std::size_t trial) {
    PairOutcome out;
    out.correspondences = p.correspondences.size();
    out.patch_pairs = p.patch_pairs.size();
    detail::stage("estimator", [&] {
        const EstimatorConfig ec = cfg.estimator_config(detail::trial_seed(cfg.scene.rng_seed, trial, 3));
        const auto start = std::chrono::steady_clock::now();
        Estimate e;
        if (estimator == "fsr")
            e = fsr_estimate(p.correspondences, p.source, p.target, ec);
        else if (estimator == "ransac")
            e = ransac_estimate(p.correspondences, p.source, p.target, ec);
        else
            e = wsvd_estimate(p.correspondences, p.source, p.target, ec);
        out.estimation_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.transform = e.transform;
    });
    detail::stage("metrics", [&] {
        const auto& th = cfg.thresholds;
        out.chamfer = chamfer(apply_transform(out.transform, p.source), p.target);
        if (!p.truth) return;
        out.inliers = inlier_stats(p.correspondences, p.source, p.target, p.truth->transform, th.inlier_distance,
                                   th.fmr_ratio);
        std::vector<std::size_t> support;
        for (const auto& c : p.truth->true_correspondences) support.push_back(c.source_index);
        out.errors = registration_errors(out.transform, p.truth->transform, p.source, support);
        out.registered = registration_success(*out.errors, cfg.criterion(), th);
        if (p.patch_truth) {
            auto predicted = [&](const OverlapScores& s) {
                std::vector<std::uint8_t> v;
                for (double x : s.scores) v.push_back(x > cfg.match.theta_o ? 1 : 0);
                return v;
            };
            out.patches = patch_stats(p.patch_pairs, *p.patch_truth, predicted(p.source_scores),
                                      predicted(p.target_scores));
            if (cfg.overlap_source != "none")
                out.overlap_bce = overlap_bce_pair(p.source_scores, p.patch_truth->source_labels, p.target_scores,
                                                   p.patch_truth->target_labels);
        }
    });
    return out;
}

namespace detail {

struct Accumulator {
    std::vector<double> values;
    void add(double v) { values.push_back(v); }
    std::optional<double> mean() const {
        if (values.empty()) return std::nullopt;
        double s = 0.0;
        for (double v : values) s += v;
        return s / static_cast<double>(values.size());
    }
    std::optional<double> stddev() const {
        auto m = mean();
        if (!m) return std::nullopt;
        double s = 0.0;
        for (double v : values) s += (v - *m) * (v - *m);
        return std::sqrt(s / static_cast<double>(values.size()));
    }
};

struct CellStats {
    std::map<std::string, Accumulator> metric;
    Accumulator seconds;
    std::size_t trials = 0;
    std::size_t failures = 0;
    std::vector<std::string> errors;

    void add(const PairOutcome& o) {
        metric["chamfer"].add(o.chamfer);
        metric["correspondences"].add(static_cast<double>(o.correspondences));
        metric["patch_pairs"].add(static_cast<double>(o.patch_pairs));
        if (o.inliers) {
            metric["ir"].add(o.inliers->ir);
            metric["fmr"].add(o.inliers->fmr_hit ? 1.0 : 0.0);
        }
        if (o.errors) {
            metric["rr"].add(o.registered ? 1.0 : 0.0);
            metric["rre_deg"].add(o.errors->rre_deg);
            metric["rte_m"].add(o.errors->rte_m);
            metric["rmse_m"].add(o.errors->rmse_m);
        }
        if (o.patches) {
            metric["pir"].add(o.patches->pir);
            metric["pop"].add(o.patches->pop);
        }
        if (o.overlap_bce) metric["overlap_bce"].add(*o.overlap_bce);
        seconds.add(o.estimation_seconds);
    }

    std::optional<double> mean(const std::string& k) const {
        auto it = metric.find(k);
        return it == metric.end() ? std::nullopt : it->second.mean();
    }
    std::optional<double> stddev(const std::string& k) const {
        auto it = metric.find(k);
        return it == metric.end() ? std::nullopt : it->second.stddev();
    }
};

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    detail::require(static_cast<bool>(out), ErrorCode::InvalidArgument, "cannot open '" + path + "' for writing");
    out << text;
    detail::require(static_cast<bool>(out), ErrorCode::InvalidArgument, "write to '" + path + "' failed");
}

inline std::string format_number(const std::optional<double>& v) {
    if (!v) return "";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.10g", *v);
    return buf;
}

} // namespace detail

struct RegisterResult {
    EvalReport report;
    std::vector<PairOutcome> outcomes;   // one per successful trial
    std::vector<std::string> errors;     // one per failed trial
};

/// Runs cfg.trials registrations (one for file inputs) and aggregates the report.
/// Writes the JSON report and the aligned source when the paths are set.
inline RegisterResult run_register(const RunConfig& cfg) {
    cfg.validate();
    RegisterResult result;
    const std::size_t trials = cfg.file_inputs() ? 1 : cfg.trials;
    detail::CellStats stats;
    std::optional<PreparedPair> first;
    for (std::size_t t = 0; t < trials; ++t) {
        try {
            PreparedPair p = prepare_pair(cfg, t);
            PairOutcome o = finish_pair(p, cfg, cfg.estimator, t);
            stats.add(o);
            result.outcomes.push_back(o);
            if (t == 0) first = std::move(p);
        } catch (const Error& e) {
            if (trials == 1) throw;
            result.errors.push_back("trial " + std::to_string(t) + ": " + e.what());
        }
    }

    EvalReport& r = result.report;
    r.trials = trials;
    r.failures = result.errors.size();
    r.thresholds = cfg.thresholds;
    r.criterion = cfg.criterion();
    r.ir = stats.mean("ir");
    r.fmr = stats.mean("fmr");
    r.rr = stats.mean("rr");
    r.rre_deg = stats.mean("rre_deg");
    r.rte_m = stats.mean("rte_m");
    r.rmse_m = stats.mean("rmse_m");
    r.chamfer = stats.mean("chamfer");
    r.pir = stats.mean("pir");
    r.pop = stats.mean("pop");
    r.overlap_bce = stats.mean("overlap_bce");
    r.correspondences = stats.mean("correspondences").value_or(0.0);
    r.patch_pairs = stats.mean("patch_pairs").value_or(0.0);
    if (trials == 1 && !result.outcomes.empty()) r.transform = result.outcomes.front().transform;

    if (!cfg.report.empty()) {
        Json j = to_json(r);
        j["estimator"] = cfg.estimator;
        j["config"] = to_json(cfg);
        detail::write_text(cfg.report, j.dump(2) + "\n");
    }
    if (!cfg.aligned.empty() && first && !result.outcomes.empty())
        write_cloud(cfg.aligned, apply_transform(result.outcomes.front().transform, first->source));
    return result;
}

struct BenchmarkCell {
    double descriptor_noise = 0.0;
    double overlap_fraction = 0.0;
    std::string estimator;
    detail::CellStats stats;

    bool ok() const { return stats.trials > stats.failures; }
};

struct BenchmarkResult {
    std::vector<BenchmarkCell> cells;
    std::string csv;        // metrics, reproducible byte for byte
    std::string timing_csv; // estimation wall-clock per cell

    bool all_ok() const {
        for (const auto& c : cells)
            if (!c.ok()) return false;
        return true;
    }
};

inline const std::vector<std::string>& benchmark_metrics() {
    static const std::vector<std::string> names = {"ir",     "fmr",     "rr",  "rre_deg", "rte_m",
                                                   "rmse_m", "chamfer", "pir", "pop",     "overlap_bce",
                                                   "correspondences", "patch_pairs"};
    return names;
}

/// Grid over descriptor noise x overlap fraction x estimator, cfg.trials scenes per
/// cell. A scene is shared by every estimator of its (noise, overlap) pair. A failed
/// trial is counted in its cell and the sweep continues.
inline BenchmarkResult run_benchmark(const RunConfig& cfg) {
    cfg.validate();
    detail::require(!cfg.file_inputs(), ErrorCode::InvalidArgument, "benchmark runs on synthetic scenes only");
    const std::vector<double> noises =
        cfg.sweep_descriptor_noise.empty() ? std::vector<double>{cfg.scene.descriptor_noise} : cfg.sweep_descriptor_noise;
    const std::vector<double> overlaps =
        cfg.sweep_overlap_fraction.empty() ? std::vector<double>{cfg.scene.overlap_fraction} : cfg.sweep_overlap_fraction;
    const std::vector<std::string> estimators =
        cfg.sweep_estimator.empty() ? std::vector<std::string>{cfg.estimator} : cfg.sweep_estimator;

    BenchmarkResult result;
    for (double noise : noises)
        for (double overlap : overlaps) {
            RunConfig c = cfg;
            c.scene.descriptor_noise = noise;
            c.scene.overlap_fraction = overlap;
            const std::size_t first_cell = result.cells.size();
            for (const auto& e : estimators) result.cells.push_back({noise, overlap, e, {}});
            for (std::size_t t = 0; t < cfg.trials; ++t) {
                std::optional<PreparedPair> p;
                std::string prep_error;
                try {
                    p = prepare_pair(c, t);
                } catch (const Error& err) {
                    prep_error = err.what();
                }
                for (std::size_t k = 0; k < estimators.size(); ++k) {
                    auto& cell = result.cells[first_cell + k];
                    cell.stats.trials += 1;
                    if (!p) {
                        cell.stats.failures += 1;
                        cell.stats.errors.push_back(prep_error);
                        continue;
                    }
                    try {
                        cell.stats.add(finish_pair(*p, c, estimators[k], t));
                    } catch (const Error& err) {
                        cell.stats.failures += 1;
                        cell.stats.errors.push_back(err.what());
                    }
                }
            }
        }

    std::ostringstream csv, timing;
    csv << "descriptor_noise,overlap_fraction,estimator,trials,failures";
    for (const auto& m : benchmark_metrics()) csv << ',' << m << "_mean," << m << "_std";
    csv << '\n';
    timing << "descriptor_noise,overlap_fraction,estimator,trials,estimation_s_mean,estimation_s_std,"
              "speedup_vs_ransac\n";
    for (const auto& cell : result.cells) {
        csv << detail::format_number(cell.descriptor_noise) << ',' << detail::format_number(cell.overlap_fraction)
            << ',' << cell.estimator << ',' << cell.stats.trials << ',' << cell.stats.failures;
        for (const auto& m : benchmark_metrics())
            csv << ',' << detail::format_number(cell.stats.mean(m)) << ',' << detail::format_number(cell.stats.stddev(m));
        csv << '\n';

        std::optional<double> speedup;
        for (const auto& other : result.cells)
            if (other.estimator == "ransac" && other.descriptor_noise == cell.descriptor_noise &&
                other.overlap_fraction == cell.overlap_fraction) {
                auto mine = cell.stats.seconds.mean(), theirs = other.stats.seconds.mean();
                if (mine && theirs && *mine > 0.0) speedup = *theirs / *mine;
            }
        timing << detail::format_number(cell.descriptor_noise) << ',' << detail::format_number(cell.overlap_fraction)
               << ',' << cell.estimator << ',' << cell.stats.trials << ','
               << detail::format_number(cell.stats.seconds.mean()) << ','
               << detail::format_number(cell.stats.seconds.stddev()) << ',' << detail::format_number(speedup) << '\n';
    }
    result.csv = csv.str();
    result.timing_csv = timing.str();

    if (!cfg.csv.empty()) {
        detail::write_text(cfg.csv, result.csv);
        std::string timing_path = cfg.csv;
        const auto dot = timing_path.rfind('.');
        const auto slash = timing_path.find_last_of('/');
        if (dot != std::string::npos && (slash == std::string::npos || dot > slash))
            timing_path.insert(dot, "_timing");
        else
            timing_path += "_timing";
        detail::write_text(timing_path, result.timing_csv);
    }
    return result;
}

} // namespace oaareg
