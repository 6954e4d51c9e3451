#include "helpers.hpp"

#include <gtest/gtest.h>

using namespace oaareg;
using namespace testutil;

namespace {

ScenePair scene(double overlap, std::uint64_t seed, std::size_t n = 2000, double noise = 0.0) {
    SceneSpec spec;
    spec.point_count = n;
    spec.overlap_fraction = overlap;
    spec.noise_sigma = noise;
    spec.rng_seed = seed;
    return generate_pair(spec);
}

// Nearest target descriptor for each source row (brute force, ties to lower index).
std::vector<std::size_t> descriptor_nn(const Matrix& a, const Matrix& b) {
    const Matrix dots = a * b.transpose();
    std::vector<std::size_t> out;
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < b.rows(); ++j)
            if (dots(i, j) > dots(i, best)) best = j;
        out.push_back(static_cast<std::size_t>(best));
    }
    return out;
}

double geometric_ir(const ScenePair& s, const std::vector<std::size_t>& match, const std::vector<std::size_t>& rows) {
    std::size_t hit = 0;
    for (std::size_t i : rows) hit += (s.truth.transform(s.source[i]) - s.target[match[i]]).norm() < 0.1;
    return static_cast<double>(hit) / static_cast<double>(rows.size());
}

std::vector<std::size_t> all_rows(std::size_t n) {
    std::vector<std::size_t> r(n);
    std::iota(r.begin(), r.end(), std::size_t{0});
    return r;
}

} // namespace

TEST(GeneratePair, FullOverlapNoiseFree) {
    const ScenePair s = scene(1.0, 1);
    ASSERT_EQ(s.source.size(), s.target.size());
    EXPECT_EQ(s.truth.true_correspondences.size(), s.source.size());
    for (const auto& c : s.truth.true_correspondences)
        EXPECT_LT((s.truth.transform(s.source[c.source_index]) - s.target[c.target_index]).norm(), 1e-12);
    for (auto l : s.truth.source_overlap) EXPECT_EQ(l, 1);
}

TEST(GeneratePair, MeasuredOverlapNearRequested) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const double sigma = 0.001;
        const ScenePair s = scene(0.3, seed, 4000, sigma);
        const PointCloud moved = apply_transform(invert(s.truth.transform), s.target);
        const GridIndex index(moved.points());
        std::size_t near = 0;
        for (const auto& p : s.source.points()) near += std::sqrt(index.nearest(p).second) <= 3 * sigma + 1e-9;
        EXPECT_NEAR(static_cast<double>(near) / static_cast<double>(s.source.size()), 0.3, 0.05);
    }
}

TEST(GeneratePair, DeterministicForSeed) {
    const ScenePair a = scene(0.5, 9, 1000, 0.01), b = scene(0.5, 9, 1000, 0.01);
    EXPECT_EQ(a.source.points(), b.source.points());
    EXPECT_EQ(a.target.points(), b.target.points());
    EXPECT_EQ(a.truth.transform.matrix(), b.truth.transform.matrix());
    const ScenePair c = scene(0.5, 10, 1000, 0.01);
    EXPECT_NE(a.source.points(), c.source.points());
}

TEST(GeneratePair, NoiseIsTruncated) {
    const double sigma = 0.02;
    const ScenePair s = scene(1.0, 3, 1000, sigma);
    for (const auto& c : s.truth.true_correspondences)
        EXPECT_LE((s.truth.transform(s.source[c.source_index]) - s.target[c.target_index]).norm(), 3 * sigma + 1e-12);
}

TEST(GeneratePair, OutliersAreUnlabelled) {
    SceneSpec spec;
    spec.point_count = 1000;
    spec.outlier_fraction = 0.2;
    const ScenePair s = generate_pair(spec);
    std::size_t labelled = 0;
    for (auto l : s.truth.source_overlap) labelled += l;
    EXPECT_EQ(labelled, s.truth.true_correspondences.size());
    EXPECT_LT(labelled, s.source.size());
}

TEST(SimulateDescriptors, NoiseFreeMutualNearestIsExact) {
    const ScenePair s = scene(0.5, 4, 1500);
    const DescriptorPair d = simulate_descriptors(s.source.size(), s.target.size(), s.truth.true_correspondences, 32,
                                                  0.0, 44);
    const auto fwd = descriptor_nn(d.source, d.target), bwd = descriptor_nn(d.target, d.source);
    for (const auto& c : s.truth.true_correspondences) {
        EXPECT_EQ(fwd[c.source_index], c.target_index);
        EXPECT_EQ(bwd[c.target_index], c.source_index);
    }
    for (Eigen::Index i = 0; i < d.source.rows(); ++i) EXPECT_NEAR(d.source.row(i).norm(), 1.0, 1e-12);
}

TEST(SimulateDescriptors, LargeNoiseMatchesRandomBaseline) {
    std::vector<double> ir, base;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const ScenePair s = scene(0.5, seed, 2000);
        const DescriptorPair d = simulate_descriptors(s.source.size(), s.target.size(),
                                                      s.truth.true_correspondences, 32, 2.0, 100 + seed);
        const auto rows = all_rows(s.source.size());
        ir.push_back(geometric_ir(s, descriptor_nn(d.source, d.target), rows));
        Rng rng(200 + seed);
        std::uniform_int_distribution<std::size_t> pick(0, s.target.size() - 1);
        std::vector<std::size_t> random_match;
        for (std::size_t i = 0; i < s.source.size(); ++i) random_match.push_back(pick(rng));
        base.push_back(geometric_ir(s, random_match, rows));
    }
    // Welch-style comparison of the per-seed means.
    auto stats = [](const std::vector<double>& v) {
        double m = 0, q = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        for (double x : v) q += (x - m) * (x - m);
        return std::make_pair(m, q / static_cast<double>(v.size() - 1));
    };
    const auto [mi, vi] = stats(ir);
    const auto [mb, vb] = stats(base);
    const double se = std::sqrt(vi / 10.0 + vb / 10.0);
    EXPECT_LT(std::abs(mi - mb), 3.0 * se + 1e-3) << "ir " << mi << " baseline " << mb;
}

TEST(SimulateDescriptors, IrFallsWithNoise) {
    const std::vector<double> noises = {0.0, 0.2, 0.5, 1.0};
    std::vector<double> mean(noises.size(), 0.0);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const ScenePair s = scene(0.5, seed, 1000);
        for (std::size_t k = 0; k < noises.size(); ++k) {
            const DescriptorPair d = simulate_descriptors(s.source.size(), s.target.size(),
                                                          s.truth.true_correspondences, 32, noises[k], seed);
            // Inlier ratio of mutual-nearest descriptor matches on the overlap.
            const auto fwd = descriptor_nn(d.source, d.target), bwd = descriptor_nn(d.target, d.source);
            std::vector<std::size_t> mutual;
            for (std::size_t i = 0; i < fwd.size(); ++i)
                if (s.truth.source_overlap[i] && bwd[fwd[i]] == i) mutual.push_back(i);
            mean[k] += geometric_ir(s, fwd, mutual) / 20.0;
        }
    }
    EXPECT_DOUBLE_EQ(mean[0], 1.0);
    for (std::size_t k = 1; k < mean.size(); ++k) EXPECT_LE(mean[k], mean[k - 1]);
    EXPECT_LT(mean.back(), mean.front());
}

TEST(OverlapOracle, IdenticalCloudsAllOverlap) {
    Rng rng(5);
    const PointCloud c(random_points(100, rng));
    const OverlapLabels l = overlap_oracle(c, c, RigidTransform::identity(), 0.01);
    for (auto v : l.source) EXPECT_EQ(v, 1);
    for (auto v : l.target) EXPECT_EQ(v, 1);
}

TEST(OverlapOracle, DisjointCloudsNoOverlap) {
    Rng rng(6);
    const PointCloud a(random_points(50, rng, 0, 1)), b(random_points(50, rng, 5, 6));
    const OverlapLabels l = overlap_oracle(a, b, RigidTransform::identity(), 0.5);
    for (auto v : l.source) EXPECT_EQ(v, 0);
    for (auto v : l.target) EXPECT_EQ(v, 0);
}

TEST(OverlapOracle, MatchesExhaustiveScan) {
    Rng rng(7);
    const PointCloud a(random_points(300, rng)), b(random_points(250, rng));
    const RigidTransform t = random_transform(rng);
    const PointCloud bt = apply_transform(t, b);
    const OverlapLabels l = overlap_oracle(b, apply_transform(t, a), t, 0.15);
    // Labels computed on (b, t(a)) under t: b is moved by t first.
    for (std::size_t i = 0; i < b.size(); ++i) {
        bool hit = false;
        for (std::size_t j = 0; j < a.size(); ++j) hit |= (bt[i] - t(a[j])).norm() <= 0.15;
        EXPECT_EQ(l.source[i], hit ? 1 : 0);
    }
    const PointCloud at = apply_transform(t, a);
    for (std::size_t j = 0; j < a.size(); ++j) {
        bool hit = false;
        for (std::size_t i = 0; i < b.size(); ++i) hit |= (bt[i] - at[j]).norm() <= 0.15;
        EXPECT_EQ(l.target[j], hit ? 1 : 0);
    }
}

TEST(VoxelDownsample, CentroidsPerCell) {
    const PointCloud c({Vec3(0.01, 0.01, 0.01), Vec3(0.03, 0.05, 0.07), Vec3(0.15, 0.0, 0.0)});
    const PointCloud v = voxel_downsample(c, 0.1);
    ASSERT_EQ(v.size(), 2u);
    EXPECT_LT((v[0] - Vec3(0.02, 0.03, 0.04)).norm(), 1e-15);
    EXPECT_LT((v[1] - Vec3(0.15, 0.0, 0.0)).norm(), 1e-15);
}

TEST(PoolDescriptors, NormalizedMeanOfMembers) {
    const PointCloud dense({Vec3(0, 0, 0), Vec3(0.01, 0, 0), Vec3(1, 0, 0)});
    const PointCloud sp({Vec3(0, 0, 0), Vec3(1, 0, 0)});
    Matrix d(3, 2);
    d << 1, 0, 0, 1, 3, 4;
    const PatchAssignment a = assign_patches(dense, sp);
    const Matrix pooled = pool_descriptors(d, a, dense, sp);
    EXPECT_NEAR(pooled(0, 0), 1 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(pooled(0, 1), 1 / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(pooled(1, 0), 0.6, 1e-15);
    EXPECT_NEAR(pooled(1, 1), 0.8, 1e-15);
}

TEST(PatchOverlapTruth, PairsFromTrueCorrespondences) {
    PatchAssignment src, tgt;
    src.patch_of = {0, 0, 1};
    src.members = {{0, 1}, {2}};
    tgt.patch_of = {1, 0, 1};
    tgt.members = {{1}, {0, 2}};
    const CorrespondenceSet truth(3, 3, {{0, 2, 1}, {2, 1, 1}});
    const PatchOverlapTruth t = patch_overlap_truth(src, tgt, truth);
    EXPECT_TRUE(t.overlaps(0, 1));
    EXPECT_TRUE(t.overlaps(1, 0));
    EXPECT_FALSE(t.overlaps(0, 0));
    EXPECT_EQ(t.source_labels, (std::vector<std::uint8_t>{1, 1}));
    EXPECT_EQ(t.target_labels, (std::vector<std::uint8_t>{1, 1}));
}

TEST(SampleCorrespondences, PlantedInlierRatio) {
    const ScenePair s = scene(1.0, 8, 3000);
    const CorrespondenceSet c = sample_correspondences(s.truth, 500, 0.3, 8);
    EXPECT_EQ(c.size(), 500u);
    const InlierStats st = inlier_stats(c, s.source, s.target, s.truth.transform, 1e-9);
    EXPECT_GE(st.inliers, 150u);
    EXPECT_LT(st.inliers, 160u);
}
