#include "helpers.hpp"

#include <gtest/gtest.h>

#include <bit>
#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace oaareg;
using namespace testutil;

namespace {

class TempDir {
  public:
    TempDir() {
        path_ = std::filesystem::temp_directory_path() /
                ("oaareg_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                 ::testing::UnitTest::GetInstance()->current_test_info()->name());
        std::filesystem::create_directories(path_);
    }
    ~TempDir() { std::filesystem::remove_all(path_); }
    std::string file(const std::string& name, const std::string& content) const {
        const auto p = path_ / name;
        std::ofstream(p, std::ios::binary) << content;
        return p.string();
    }
    std::string path(const std::string& name) const { return (path_ / name).string(); }

  private:
    std::filesystem::path path_;
};

ParseError expect_parse_error(const std::string& path) {
    try {
        load_cloud(path);
    } catch (const ParseError& e) {
        return e;
    }
    ADD_FAILURE() << "no parse error for " << path;
    return ParseError(ParseErrorKind::Unreadable, path, 0, ParseError::Unit::Line, "none");
}

const char* kHeader3 = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
                       "property float z\nend_header\n";

} // namespace

TEST(LoadCloud, AsciiPlyThreePoints) {
    TempDir dir;
    const auto path = dir.file("a.ply", std::string(kHeader3) + "0 0 0\n1 0 0\n0 1 0.5\n");
    const PointCloud c = load_cloud(path);
    ASSERT_EQ(c.size(), 3u);
    EXPECT_EQ(c[2], Vec3(0, 1, 0.5));
    EXPECT_FALSE(c.has_descriptors());
}

TEST(LoadCloud, XyzWithTrailingBlankLines) {
    TempDir dir;
    const auto path = dir.file("a.xyz", "# comment\n1 2 3\n4 5 6\n\n\n   \n");
    const PointCloud c = load_cloud(path);
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c[1], Vec3(4, 5, 6));
}

TEST(LoadCloud, XyzExtraColumnsAreDescriptors) {
    TempDir dir;
    const PointCloud c = load_cloud(dir.file("d.xyz", "0 0 0 0.5 0.25\n1 1 1 -1 2\n"));
    ASSERT_TRUE(c.has_descriptors());
    EXPECT_EQ(c.descriptors().cols(), 2);
    EXPECT_EQ(c.descriptors()(1, 1), 2.0);
}

TEST(LoadCloud, PlyWithDescriptorsAndExtraElements) {
    TempDir dir;
    const std::string text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n"
                             "property double x\nproperty double y\nproperty double z\nproperty uchar red\n"
                             "property float f_0\nproperty float f_1\nelement face 1\n"
                             "property list uchar int vertex_indices\nend_header\n"
                             "0 0 0 255 0.5 1\n1 2 3 0 -1 0\n3 0 1 1\n";
    const PointCloud c = load_cloud(dir.file("f.ply", text));
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c[1], Vec3(1, 2, 3));
    EXPECT_EQ(c.descriptors()(0, 0), 0.5);
    EXPECT_EQ(c.descriptors()(1, 0), -1.0);
}

TEST(LoadCloud, RoundTripIsBitExact) {
    TempDir dir;
    Rng rng(1);
    std::vector<Vec3> pts = random_points(200, rng, -1e3, 1e3);
    pts[0] = Vec3(1e-300, -0.0, 3.141592653589793);
    const PointCloud c(pts, random_matrix(200, 5, rng));
    for (auto enc : {PlyEncoding::BinaryLittleEndian, PlyEncoding::Ascii}) {
        const auto path = dir.path(enc == PlyEncoding::Ascii ? "a.ply" : "b.ply");
        write_cloud(path, c, enc);
        const PointCloud back = load_cloud(path);
        ASSERT_EQ(back.size(), c.size());
        for (std::size_t i = 0; i < c.size(); ++i)
            for (int k = 0; k < 3; ++k) EXPECT_EQ(std::bit_cast<std::uint64_t>(back[i](k)), std::bit_cast<std::uint64_t>(c[i](k)));
        EXPECT_EQ(back.descriptors(), c.descriptors());
    }
}

TEST(LoadCloud, BinaryFloat32) {
    TempDir dir;
    std::string data = "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\n"
                       "property float y\nproperty float z\nend_header\n";
    const float v[6] = {1.5f, -2.0f, 0.25f, 3.0f, 4.0f, 5.0f};
    data.append(reinterpret_cast<const char*>(v), sizeof(v));
    const PointCloud c = load_cloud(dir.file("f32.ply", data));
    ASSERT_EQ(c.size(), 2u);
    EXPECT_EQ(c[0], Vec3(1.5, -2.0, 0.25));
}

TEST(LoadCloud, MalformedHeader) {
    TempDir dir;
    const auto e = expect_parse_error(dir.file("h.ply", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n"
                                                      "property float y\nend_header\n0 0\n"));
    EXPECT_EQ(e.kind(), ParseErrorKind::MalformedHeader);
    const auto e2 = expect_parse_error(dir.file("g.ply", "ply\nformat ascii 1.0\nelement vertex one\n"));
    EXPECT_EQ(e2.kind(), ParseErrorKind::MalformedHeader);
    EXPECT_EQ(e2.location(), 3u);
    EXPECT_EQ(e2.unit(), ParseError::Unit::Line);
}

TEST(LoadCloud, CountMismatch) {
    TempDir dir;
    const auto few = expect_parse_error(dir.file("few.ply", std::string(kHeader3) + "0 0 0\n1 1 1\n"));
    EXPECT_EQ(few.kind(), ParseErrorKind::CountMismatch);
    const auto many = expect_parse_error(dir.file("many.ply", std::string(kHeader3) + "0 0 0\n1 1 1\n2 2 2\n3 3 3\n"));
    EXPECT_EQ(many.kind(), ParseErrorKind::CountMismatch);
    const auto cols = expect_parse_error(dir.file("cols.xyz", "0 0 0\n1 1 1 1\n"));
    EXPECT_EQ(cols.kind(), ParseErrorKind::CountMismatch);
    EXPECT_EQ(cols.location(), 2u);

    std::string bin = "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\n"
                      "property double y\nproperty double z\nend_header\n";
    bin.append(std::string(5 * sizeof(double), '\0'));
    const auto trunc = expect_parse_error(dir.file("trunc.ply", bin));
    EXPECT_EQ(trunc.kind(), ParseErrorKind::CountMismatch);
    EXPECT_EQ(trunc.unit(), ParseError::Unit::Byte);
}

TEST(LoadCloud, NonFiniteCoordinate) {
    TempDir dir;
    const auto e = expect_parse_error(dir.file("n.ply", std::string(kHeader3) + "0 0 0\n1 nan 1\n2 2 2\n"));
    EXPECT_EQ(e.kind(), ParseErrorKind::NonFiniteCoordinate);
    EXPECT_EQ(e.location(), 9u);
    const auto x = expect_parse_error(dir.file("n.xyz", "0 0 0\ninf 0 0\n"));
    EXPECT_EQ(x.kind(), ParseErrorKind::NonFiniteCoordinate);
    EXPECT_EQ(x.location(), 2u);
    EXPECT_NE(std::string(x.what()).find("n.xyz:2"), std::string::npos);
}

TEST(LoadCloud, MissingFile) {
    const auto e = expect_parse_error("/nonexistent/dir/cloud.ply");
    EXPECT_EQ(e.kind(), ParseErrorKind::Unreadable);
}
