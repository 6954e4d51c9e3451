#pragma once

// Single-head attention forward passes used by the matching stages: softmax
// attention, kernelized linear attention, rotary position embedding, and the
// overlap-token block that scores superpoints for overlap membership.
//
// No training happens here. Projection weights are inputs; AttentionWeights::random
// provides a seeded initialization for tests and the benchmark harness.

#include "oaareg/core.hpp"
#include "oaareg/parallel.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <variant>
#include <vector>

namespace oaareg {

/// N x d token features.
using FeatureMatrix = Matrix;
using OverlapToken = Eigen::RowVectorXd;

struct AttentionWeights {
    Matrix query;
    Matrix key;
    Matrix value;
    Matrix output;

    std::size_t width() const { return static_cast<std::size_t>(query.rows()); }

    static AttentionWeights identity(std::size_t d) {
        const auto n = static_cast<Eigen::Index>(d);
        return {Matrix::Identity(n, n), Matrix::Identity(n, n), Matrix::Identity(n, n), Matrix::Identity(n, n)};
    }

    /// Entries uniform in [-1/sqrt(d), 1/sqrt(d)], deterministic in `seed`.
    static AttentionWeights random(std::size_t d, std::uint64_t seed) {
        Rng rng(seed);
        const double bound = 1.0 / std::sqrt(static_cast<double>(d));
        std::uniform_real_distribution<double> dist(-bound, bound);
        const auto n = static_cast<Eigen::Index>(d);
        auto draw = [&] {
            Matrix m(n, n);
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
            return m;
        };
        AttentionWeights w;
        w.query = draw();
        w.key = draw();
        w.value = draw();
        w.output = draw();
        return w;
    }

    void validate() const {
        const Eigen::Index d = query.rows();
        for (const Matrix* m : {&query, &key, &value, &output}) {
            detail::require(m->rows() == d && m->cols() == d, ErrorCode::ShapeMismatch,
                            "attention projections must all be d x d");
            detail::require(m->allFinite(), ErrorCode::NonFinite, "attention projection has non-finite entries");
        }
    }
};

namespace detail {

inline void check_attention_inputs(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
                                   const AttentionWeights& w) {
    w.validate();
    const Eigen::Index d = w.query.rows();
    require(q.cols() == d && k.cols() == d && v.cols() == d, ErrorCode::ShapeMismatch,
            "feature width must match projection width " + std::to_string(d));
    require(k.rows() == v.rows(), ErrorCode::ShapeMismatch, "keys and values must have the same number of rows");
    require(k.rows() >= 1, ErrorCode::TooFewElements, "attention needs at least one key");
    require(q.allFinite() && k.allFinite() && v.allFinite(), ErrorCode::NonFinite, "attention inputs must be finite");
}

/// elu(x) + 1 with alpha = 1.
inline double elu_plus_one(double x) { return x > 0.0 ? x + 1.0 : std::exp(x); }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Sigmoid kept strictly inside (0, 1).
inline double open_sigmoid(double x) {
    constexpr double eps = 1e-15;
    return std::clamp(sigmoid(x), eps, 1.0 - eps);
}

} // namespace detail

/// softmax(Q K^T / sqrt(d)) V, with Q = q Wq, K = k Wk, V = v Wv, then the output projection.
inline FeatureMatrix exact_attention(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
                                     const AttentionWeights& w) {
    detail::check_attention_inputs(q, k, v, w);
    const Matrix qp = q * w.query;
    const Matrix kp = k * w.key;
    const Matrix vp = v * w.value;
    Matrix scores = (qp * kp.transpose()) / std::sqrt(static_cast<double>(w.width()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        auto row = scores.row(i);
        row.array() = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
    }
    return (scores * vp) * w.output;
}

/// Kernelized attention with phi = elu + 1. phi(K)^T V is formed first, so the
/// cost is O(N d^2) instead of O(N^2 d).
inline FeatureMatrix linear_attention(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
                                      const AttentionWeights& w) {
    detail::check_attention_inputs(q, k, v, w);
    const Matrix phi_q = (q * w.query).unaryExpr(&detail::elu_plus_one);
    const Matrix phi_k = (k * w.key).unaryExpr(&detail::elu_plus_one);
    const Matrix vp = v * w.value;

    const Matrix kv = phi_k.transpose() * vp;                        // d x d
    const Eigen::RowVectorXd k_sum = phi_k.colwise().sum();           // 1 x d
    Matrix out = phi_q * kv;                                          // N x d
    const Eigen::VectorXd normalizer = phi_q * k_sum.transpose();     // N
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        detail::require(normalizer(i) > 0.0 && std::isfinite(normalizer(i)), ErrorCode::DegenerateInput,
                        "linear attention normalizer vanished for row " + std::to_string(i));
        out.row(i) /= normalizer(i);
    }
    return out * w.output;
}

namespace detail {

inline double rotary_frequency(std::size_t pair, std::size_t channels) {
    return std::pow(10000.0, -2.0 * static_cast<double>(pair) / static_cast<double>(channels));
}

inline void rotate_pairs(Eigen::Ref<Eigen::RowVectorXd> row, Eigen::Index offset, Eigen::Index channels,
                         double position) {
    for (Eigen::Index p = 0; p < channels / 2; ++p) {
        const double angle =
            position * rotary_frequency(static_cast<std::size_t>(p), static_cast<std::size_t>(channels));
        const double c = std::cos(angle), s = std::sin(angle);
        const double x0 = row(offset + 2 * p), x1 = row(offset + 2 * p + 1);
        row(offset + 2 * p) = c * x0 - s * x1;
        row(offset + 2 * p + 1) = s * x0 + c * x1;
    }
}

} // namespace detail

/// Rotary embedding with scalar (token index) positions: channel pair p of row i
/// is rotated by positions[i] * 10000^(-2p/d).
inline FeatureMatrix rotary_embed(const FeatureMatrix& x, const std::vector<std::int64_t>& positions) {
    detail::require(x.cols() % 2 == 0, ErrorCode::InvalidArgument, "rotary embedding needs an even width");
    detail::require(static_cast<Eigen::Index>(positions.size()) == x.rows(), ErrorCode::ShapeMismatch,
                    "one position per row required");
    FeatureMatrix out = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::RowVectorXd row = out.row(i);
        detail::rotate_pairs(row, 0, x.cols(), static_cast<double>(positions[static_cast<std::size_t>(i)]));
        out.row(i) = row;
    }
    return out;
}

/// Rotary embedding with 3D positions: channels split into three equal groups,
/// group a rotated by coordinate a with its own frequency ladder.
inline FeatureMatrix rotary_embed(const FeatureMatrix& x, const std::vector<Vec3>& positions) {
    detail::require(x.cols() % 2 == 0, ErrorCode::InvalidArgument, "rotary embedding needs an even width");
    detail::require(x.cols() % 6 == 0, ErrorCode::InvalidArgument,
                    "3D rotary embedding needs a width divisible by 6 (three even groups)");
    detail::require(static_cast<Eigen::Index>(positions.size()) == x.rows(), ErrorCode::ShapeMismatch,
                    "one position per row required");
    const Eigen::Index group = x.cols() / 3;
    FeatureMatrix out = x;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        Eigen::RowVectorXd row = out.row(i);
        for (Eigen::Index a = 0; a < 3; ++a)
            detail::rotate_pairs(row, a * group, group, positions[static_cast<std::size_t>(i)](a));
        out.row(i) = row;
    }
    return out;
}

/// Overlap token: channel-wise max over rows, refined by one cross-attention with
/// the token as query and `h` as keys and values.
inline OverlapToken overlap_token_forward(const FeatureMatrix& h, const AttentionWeights& w) {
    detail::require(h.rows() >= 1, ErrorCode::TooFewElements, "overlap token needs at least one feature row");
    const FeatureMatrix pooled = h.colwise().maxCoeff();
    return exact_attention(pooled, h, h, w).row(0);
}

/// Features made overlap-aware by attending to the other cloud's decoded token,
/// with a residual connection: h + attn(Q = h, K = V = token).
inline FeatureMatrix overlap_guided_update(const FeatureMatrix& h, const OverlapToken& other_token,
                                           const AttentionWeights& w) {
    const FeatureMatrix token = other_token;
    return h + exact_attention(h, token, token, w);
}

struct OverlapScores {
    std::vector<double> scores;     // overlap confidence per superpoint, in (0, 1)
    std::vector<double> weight_map; // per-superpoint token affinity, in (0, 1)

    std::size_t size() const noexcept { return scores.size(); }

    /// Every superpoint gets the same score.
    static OverlapScores constant(std::size_t n, double value) {
        return {std::vector<double>(n, value), std::vector<double>(n, value)};
    }
};

/// w_i = sigmoid(h_i . token); score_i = sigmoid((w_i h_i + h_i) . W_o).
inline OverlapScores overlap_confidence(const FeatureMatrix& h_o, const OverlapToken& token_o,
                                        const Eigen::VectorXd& projection) {
    detail::require(token_o.size() == h_o.cols() && projection.size() == h_o.cols(), ErrorCode::ShapeMismatch,
                    "token, projection and feature widths must agree");
    OverlapScores out;
    out.scores.reserve(static_cast<std::size_t>(h_o.rows()));
    out.weight_map.reserve(static_cast<std::size_t>(h_o.rows()));
    for (Eigen::Index i = 0; i < h_o.rows(); ++i) {
        const double weight = detail::open_sigmoid(h_o.row(i).dot(token_o));
        const double logit = ((weight + 1.0) * h_o.row(i)).dot(projection.transpose());
        out.weight_map.push_back(weight);
        out.scores.push_back(detail::open_sigmoid(logit));
    }
    return out;
}

struct OverlapDetection {
    FeatureMatrix source_features; // overlap-aware source features
    FeatureMatrix target_features;
    OverlapScores source_scores;
    OverlapScores target_scores;
};

/// Full overlap-detection block for a superpoint pair: tokens from each side, cross
/// updates guided by the other side's token, then per-superpoint confidence.
inline OverlapDetection detect_overlap(const FeatureMatrix& source, const FeatureMatrix& target,
                                       const AttentionWeights& token_weights, const AttentionWeights& update_weights,
                                       const Eigen::VectorXd& projection) {
    const OverlapToken token_src = overlap_token_forward(source, token_weights);
    const OverlapToken token_tgt = overlap_token_forward(target, token_weights);
    OverlapDetection out;
    out.source_features = overlap_guided_update(source, token_tgt, update_weights);
    out.target_features = overlap_guided_update(target, token_src, update_weights);
    out.source_scores = overlap_confidence(out.source_features, token_src, projection);
    out.target_scores = overlap_confidence(out.target_features, token_tgt, projection);
    return out;
}

} // namespace oaareg
