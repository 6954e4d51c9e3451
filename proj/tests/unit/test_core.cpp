#include "helpers.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace oaareg;
using namespace testutil;

TEST(ApplyTransform, IdentityLeavesCloudUnchanged) {
    Rng rng(1);
    const PointCloud cloud(random_points(30, rng));
    const PointCloud out = apply_transform(RigidTransform::identity(), cloud);
    for (std::size_t i = 0; i < cloud.size(); ++i) EXPECT_EQ(out[i], cloud[i]);
}

TEST(ApplyTransform, QuarterTurnAboutZ) {
    const RigidTransform t(axis_angle(Vec3::UnitZ(), std::numbers::pi / 2), Vec3::Zero());
    const PointCloud out = apply_transform(t, PointCloud({Vec3(1, 0, 0)}));
    EXPECT_NEAR((out[0] - Vec3(0, 1, 0)).norm(), 0.0, 1e-15);
}

TEST(ApplyTransform, InverseRestoresCloud) {
    Rng rng(2);
    const PointCloud cloud(random_points(50, rng));
    const RigidTransform t = random_transform(rng);
    const PointCloud back = apply_transform(invert(t), apply_transform(t, cloud));
    for (std::size_t i = 0; i < cloud.size(); ++i) EXPECT_LT((back[i] - cloud[i]).norm(), 1e-12);
}

TEST(ApplyTransform, KeepsDescriptors) {
    Matrix d(2, 3);
    d << 1, 2, 3, 4, 5, 6;
    const PointCloud cloud({Vec3(0, 0, 0), Vec3(1, 1, 1)}, d);
    const PointCloud out = apply_transform(RigidTransform(Mat3::Identity(), Vec3(1, 0, 0)), cloud);
    EXPECT_EQ(out.descriptors(), d);
}

TEST(Compose, IdentityOnLeft) {
    Rng rng(3);
    const RigidTransform t = random_transform(rng);
    const RigidTransform c = compose(RigidTransform::identity(), t);
    EXPECT_LT((c.matrix() - t.matrix()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Compose, WithInverseIsIdentity) {
    Rng rng(4);
    const RigidTransform t = random_transform(rng);
    const RigidTransform c = compose(t, invert(t));
    EXPECT_LT((c.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Compose, MatchesPointwiseDoubleApplication) {
    Rng rng(5);
    const RigidTransform a = random_transform(rng), b = random_transform(rng);
    const RigidTransform ab = compose(a, b);
    for (const auto& p : random_points(20, rng)) EXPECT_LT((ab(p) - a(b(p))).norm(), 1e-12);
}

TEST(Invert, Identity) {
    EXPECT_EQ(invert(RigidTransform::identity()).matrix(), Eigen::Matrix4d::Identity());
}

TEST(Invert, PureTranslation) {
    const RigidTransform inv = invert(RigidTransform(Mat3::Identity(), Vec3(0, 0, 1)));
    EXPECT_EQ(inv.translation(), Vec3(0, 0, -1));
    EXPECT_EQ(inv.rotation(), Mat3::Identity());
}

TEST(Invert, LeftInverse) {
    Rng rng(6);
    for (int k = 0; k < 10; ++k) {
        const RigidTransform t = random_transform(rng);
        const RigidTransform c = compose(invert(t), t);
        EXPECT_LT((c.matrix() - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    }
}

TEST(RigidTransform, RejectsReflectionAndShear) {
    Mat3 reflect = Mat3::Identity();
    reflect(2, 2) = -1;
    EXPECT_THROW(RigidTransform(reflect, Vec3::Zero()), Error);
    Mat3 shear = Mat3::Identity();
    shear(0, 1) = 1e-6;
    try {
        RigidTransform(shear, Vec3::Zero());
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonOrthonormal);
    }
}

TEST(RigidTransform, PolarProjectionLandsInSO3) {
    Rng rng(7);
    const Mat3 r = random_rotation(rng);
    const Mat3 noisy = r + 1e-4 * random_matrix(3, 3, rng);
    const RigidTransform t = RigidTransform::from_polar(noisy, Vec3::Zero());
    EXPECT_LT((t.rotation() - r).cwiseAbs().maxCoeff(), 1e-3);
    EXPECT_NEAR(t.rotation().determinant(), 1.0, 1e-12);
}

TEST(PointCloud, RejectsNonFinitePoints) {
    try {
        PointCloud({Vec3(0, 0, 0), Vec3(std::nan(""), 0, 0)});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonFinite);
    }
}

TEST(PointCloud, DescriptorRowsMustMatch) {
    EXPECT_THROW(PointCloud({Vec3::Zero()}, Matrix::Zero(2, 4)), Error);
}

TEST(CorrespondenceSet, RejectsOutOfRangeAndDuplicates) {
    CorrespondenceSet c(3, 3);
    c.add({0, 1, 0.5});
    EXPECT_THROW(c.add({3, 0, 1.0}), Error);
    EXPECT_THROW(c.add({0, 1, 0.2}), Error);
    EXPECT_TRUE(c.contains(0, 1));
    EXPECT_FALSE(c.contains(1, 0));
}

TEST(CorrespondenceSet, CanonicalOrder) {
    const CorrespondenceSet c(4, 4, {{2, 1, 1}, {0, 3, 1}, {2, 0, 1}});
    const auto k = c.canonical();
    ASSERT_EQ(k.size(), 3u);
    EXPECT_EQ(k[0].key(), std::make_pair(std::size_t{0}, std::size_t{3}));
    EXPECT_EQ(k[1].key(), std::make_pair(std::size_t{2}, std::size_t{0}));
    EXPECT_EQ(k[2].key(), std::make_pair(std::size_t{2}, std::size_t{1}));
}

TEST(Parallel, ResultsIndependentOfThreadCount) {
    std::vector<double> a(1000), b(1000);
    parallel_for(a.size(), [&](std::size_t i) { a[i] = std::sin(static_cast<double>(i)); }, 1);
    parallel_for(b.size(), [&](std::size_t i) { b[i] = std::sin(static_cast<double>(i)); }, 7);
    EXPECT_EQ(a, b);
}

TEST(Parallel, RethrowsLowestFailingIndex) {
    try {
        parallel_for(100, [](std::size_t i) {
            if (i == 30 || i == 90) throw std::runtime_error(std::to_string(i));
        }, 4);
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_STREQ(e.what(), "30");
    }
}

TEST(GridIndex, MatchesBruteForce) {
    Rng rng(8);
    const auto pts = random_points(500, rng);
    const GridIndex index(pts);
    for (const auto& q : random_points(50, rng, -1.5, 1.5)) {
        std::vector<std::pair<double, std::size_t>> all;
        for (std::size_t i = 0; i < pts.size(); ++i) all.emplace_back((pts[i] - q).squaredNorm(), i);
        std::sort(all.begin(), all.end());
        const auto knn = index.knn(q, 7);
        ASSERT_EQ(knn.size(), 7u);
        for (std::size_t k = 0; k < 7; ++k) EXPECT_EQ(knn[k].first, all[k].second);
        const auto within = index.radius(q, 0.3);
        std::size_t expected = 0;
        for (const auto& [d2, i] : all) expected += d2 <= 0.3 * 0.3 ? 1 : 0;
        EXPECT_EQ(within.size(), expected);
    }
}
