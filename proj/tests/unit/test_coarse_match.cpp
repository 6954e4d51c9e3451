#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace oaareg;
using namespace testutil;

namespace {

Matrix unit_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& r : rows) {
        Eigen::Index j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

SimilarityMatrix constant_similarity(Eigen::Index rows, Eigen::Index cols, double v) {
    return SimilarityMatrix(Matrix::Constant(rows, cols, v));
}

} // namespace

TEST(Similarity, AnalyticValues) {
    const Matrix src = unit_rows({{1, 0, 0}});
    const Matrix tgt = unit_rows({{1, 0, 0}, {0, 1, 0}, {-1, 0, 0}});
    const SimilarityMatrix s = similarity(src, tgt);
    EXPECT_NEAR(s(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(s(0, 1), std::exp(-2.0), 1e-15);
    EXPECT_NEAR(s(0, 2), std::exp(-4.0), 1e-15);
}

TEST(Similarity, NormalizesRowsFirst) {
    const SimilarityMatrix s = similarity(unit_rows({{3, 0}}), unit_rows({{0.5, 0}}));
    EXPECT_NEAR(s(0, 0), 1.0, 1e-15);
}

TEST(Similarity, RejectsZeroRow) {
    try {
        similarity(unit_rows({{0, 0}}), unit_rows({{1, 0}}));
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::DegenerateInput);
    }
}

TEST(SoftMatch, SingleEntryRetained) {
    MatchConfig cfg;
    const SoftMatches m = soft_match(constant_similarity(1, 1, 0.3), cfg);
    ASSERT_EQ(m.row_matches.size(), 1u);
    ASSERT_EQ(m.column_matches.size(), 1u);
    EXPECT_DOUBLE_EQ(m.row_matches.pairs[0].probability, 1.0);
}

TEST(SoftMatch, TwoEqualEntriesBothRetained) {
    MatchConfig cfg;
    const SoftMatches m = soft_match(constant_similarity(1, 2, 0.5), cfg);
    ASSERT_EQ(m.row_matches.size(), 2u);
    for (const auto& p : m.row_matches) EXPECT_DOUBLE_EQ(p.probability, 0.5);
}

TEST(SoftMatch, TwentyOneEqualEntriesNoneRetained) {
    MatchConfig cfg;
    ASSERT_EQ(cfg.theta_m, 0.05);
    const SoftMatches m = soft_match(constant_similarity(1, 21, 0.5), cfg);
    EXPECT_TRUE(m.row_matches.empty());
    EXPECT_NEAR(m.row_probabilities(0, 0), 1.0 / 21.0, 1e-15);
}

TEST(SoftMatch, DualSoftmaxRowsAndColumnsSumToOne) {
    Rng rng(1);
    const SimilarityMatrix s(random_matrix(6, 9, rng, 0.05, 1.0));
    const auto [rows, cols] = dual_softmax(s, 0.3);
    for (Eigen::Index i = 0; i < 6; ++i) EXPECT_NEAR(rows.row(i).sum(), 1.0, 1e-14);
    for (Eigen::Index j = 0; j < 9; ++j) EXPECT_NEAR(cols.col(j).sum(), 1.0, 1e-14);
}

TEST(KnnExpandPrune, RejectsZeroK) {
    MatchConfig cfg;
    cfg.knn = 0;
    const SimilarityMatrix s = constant_similarity(3, 3, 0.5);
    EXPECT_THROW(soft_match(s, cfg), Error);
}

TEST(KnnExpandPrune, RejectsKAtLeastCloudSize) {
    MatchConfig cfg;
    cfg.knn = 2;
    const SimilarityMatrix s = constant_similarity(2, 3, 0.5);
    const SoftMatches soft = soft_match(s, cfg);
    EXPECT_THROW(knn_expand_prune(s, soft, Matrix::Identity(2, 2), Matrix::Identity(3, 3), cfg), Error);
}

TEST(KnnExpandPrune, IdentityLikeTwoByTwo) {
    MatchConfig cfg;
    cfg.knn = 1;
    Matrix v(2, 2);
    v << 1.0, std::exp(-4.0), std::exp(-4.0), 1.0;
    const SimilarityMatrix s(v);
    const SoftMatches soft = soft_match(s, cfg);
    const auto out = knn_expand_prune(s, soft, Matrix::Identity(2, 2), Matrix::Identity(2, 2), cfg);
    EXPECT_TRUE(out.contains(0, 0));
    EXPECT_TRUE(out.contains(1, 1));
    // Raw-similarity softmax of (1, e^-4) keeps the off-diagonal above 0.05 too.
    const double off = std::exp(std::exp(-4.0)) / (std::exp(1.0) + std::exp(std::exp(-4.0)));
    EXPECT_EQ(out.contains(0, 1), off >= cfg.theta_m);
}

TEST(KnnExpandPrune, ContainsMutualBestPairsAboveThreshold) {
    Rng rng(2);
    for (int trial = 0; trial < 30; ++trial) {
        MatchConfig cfg;
        cfg.softmax_temperature = trial % 2 ? 0.05 : 1.0;
        const Matrix fs = random_matrix(12, 5, rng), ft = random_matrix(15, 5, rng);
        const SimilarityMatrix s = similarity(fs, ft);
        const SoftMatches soft = soft_match(s, cfg);
        const auto out = knn_expand_prune(s, soft, fs, ft, cfg);
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            Eigen::Index j;
            s.values().row(i).maxCoeff(&j);
            Eigen::Index back;
            s.values().col(j).maxCoeff(&back);
            if (back == i && soft.passes(static_cast<std::size_t>(i), static_cast<std::size_t>(j), cfg.theta_m))
                EXPECT_TRUE(out.contains(static_cast<std::size_t>(i), static_cast<std::size_t>(j)));
        }
        for (const auto& p : out) EXPECT_TRUE(soft.passes(p.source, p.target, cfg.theta_m));
    }
}

TEST(KnnExpandPrune, CandidatesFollowTheProcedure) {
    Rng rng(3);
    MatchConfig cfg;
    cfg.softmax_temperature = 0.1;
    const Matrix fs = random_matrix(8, 4, rng), ft = random_matrix(9, 4, rng);
    const SimilarityMatrix s = similarity(fs, ft);
    const SoftMatches soft = soft_match(s, cfg);
    const auto out = knn_expand_prune(s, soft, fs, ft, cfg);

    std::set<std::pair<std::size_t, std::size_t>> expected;
    auto knn_rows = [&](const Matrix& e, Eigen::Index anchor) {
        std::vector<std::pair<double, Eigen::Index>> d;
        for (Eigen::Index r = 0; r < e.rows(); ++r)
            if (r != anchor) d.emplace_back((e.row(r) - e.row(anchor)).squaredNorm(), r);
        std::sort(d.begin(), d.end());
        std::vector<Eigen::Index> out_rows{anchor};
        for (int k = 0; k < cfg.knn; ++k) out_rows.push_back(d[static_cast<std::size_t>(k)].second);
        return out_rows;
    };
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        Eigen::Index best;
        s.values().row(i).maxCoeff(&best);
        for (Eigen::Index j : knn_rows(ft, best))
            if (soft.passes(static_cast<std::size_t>(i), static_cast<std::size_t>(j), cfg.theta_m))
                expected.emplace(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    }
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
        Eigen::Index best;
        s.values().col(j).maxCoeff(&best);
        for (Eigen::Index i : knn_rows(fs, best))
            if (soft.passes(static_cast<std::size_t>(i), static_cast<std::size_t>(j), cfg.theta_m))
                expected.emplace(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    }
    std::set<std::pair<std::size_t, std::size_t>> got;
    for (const auto& p : out) got.insert(p.key());
    EXPECT_EQ(got, expected);
}

TEST(OverlapFilter, AllOnesKeepsEverything) {
    MatchConfig cfg;
    PatchCorrespondenceSet c;
    c.pairs = {{0, 1, 0.2}, {1, 0, 0.7}, {2, 2, 0.1}};
    const auto out = overlap_filter(c, OverlapScores::constant(3, 1.0), OverlapScores::constant(3, 1.0), cfg, 3, 3);
    EXPECT_EQ(out.pairs, c.pairs);
}

TEST(OverlapFilter, AllZerosRemovesEverything) {
    MatchConfig cfg;
    PatchCorrespondenceSet c;
    c.pairs = {{0, 1, 0.2}, {1, 0, 0.7}};
    EXPECT_TRUE(
        overlap_filter(c, OverlapScores::constant(2, 0.0), OverlapScores::constant(2, 0.0), cfg, 2, 2).empty());
}

TEST(OverlapFilter, MatchesPredicate) {
    Rng rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    MatchConfig cfg;
    PatchCorrespondenceSet c;
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t j = 0; j < 10; ++j)
            if (u(rng) < 0.4) c.pairs.push_back({i, j, u(rng)});
    OverlapScores src, tgt;
    for (int i = 0; i < 10; ++i) src.scores.push_back(u(rng)), tgt.scores.push_back(u(rng));
    src.weight_map = src.scores;
    tgt.weight_map = tgt.scores;
    src.scores[3] = cfg.theta_o; // boundary: strictly greater required
    const auto out = overlap_filter(c, src, tgt, cfg, 10, 10);
    std::vector<PatchCorrespondence> expected;
    for (const auto& p : c)
        if (src.scores[p.source] > cfg.theta_o && tgt.scores[p.target] > cfg.theta_o) expected.push_back(p);
    EXPECT_EQ(out.pairs, expected);
}

TEST(OverlapFilter, RejectsLengthMismatch) {
    MatchConfig cfg;
    EXPECT_THROW(overlap_filter({}, OverlapScores::constant(2, 1), OverlapScores::constant(3, 1), cfg, 3, 3), Error);
}
