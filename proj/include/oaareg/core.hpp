#pragma once

// Shared domain types: point clouds, rigid transforms and correspondences.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace oaareg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
/// Row-major dense matrix; one row per token / point.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class ErrorCode {
    InvalidArgument,
    ShapeMismatch,
    NonOrthonormal,
    NonFinite,
    DegenerateInput,
    TooFewElements,
    OutOfRange,
    Infeasible,
    Parse,
};

inline const char* to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::ShapeMismatch: return "shape mismatch";
    case ErrorCode::NonOrthonormal: return "non-orthonormal rotation";
    case ErrorCode::NonFinite: return "non-finite value";
    case ErrorCode::DegenerateInput: return "degenerate input";
    case ErrorCode::TooFewElements: return "too few elements";
    case ErrorCode::OutOfRange: return "index out of range";
    case ErrorCode::Infeasible: return "infeasible request";
    case ErrorCode::Parse: return "parse error";
    }
    return "unknown";
}

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

  protected:
    struct Preformatted {};
    Error(Preformatted, ErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}

  private:
    ErrorCode code_;
};

namespace detail {

inline void require(bool ok, ErrorCode code, const std::string& what) {
    if (!ok) throw Error(code, what);
}

} // namespace detail

/// Ordered 3D points (meters) with an optional descriptor row per point.
class PointCloud {
  public:
    PointCloud() = default;

    explicit PointCloud(std::vector<Vec3> points, std::optional<Matrix> descriptors = std::nullopt)
        : points_(std::move(points)), descriptors_(std::move(descriptors)) {
        for (std::size_t i = 0; i < points_.size(); ++i)
            detail::require(points_[i].allFinite(), ErrorCode::NonFinite,
                            "point " + std::to_string(i) + " has a non-finite coordinate");
        if (descriptors_) {
            detail::require(static_cast<std::size_t>(descriptors_->rows()) == points_.size(),
                            ErrorCode::ShapeMismatch, "descriptor rows must equal point count");
            detail::require(descriptors_->allFinite(), ErrorCode::NonFinite, "descriptors must be finite");
        }
    }

    std::size_t size() const noexcept { return points_.size(); }
    bool empty() const noexcept { return points_.empty(); }

    const Vec3& operator[](std::size_t i) const { return points_[i]; }
    const std::vector<Vec3>& points() const noexcept { return points_; }

    bool has_descriptors() const noexcept { return descriptors_.has_value(); }
    const Matrix& descriptors() const {
        detail::require(descriptors_.has_value(), ErrorCode::InvalidArgument, "cloud has no descriptors");
        return *descriptors_;
    }
    const std::optional<Matrix>& maybe_descriptors() const noexcept { return descriptors_; }

    PointCloud with_descriptors(Matrix descriptors) const { return PointCloud(points_, std::move(descriptors)); }

    /// Points as a 3 x N matrix.
    Eigen::Matrix3Xd matrix() const {
        Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(points_.size()));
        for (std::size_t i = 0; i < points_.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = points_[i];
        return m;
    }

  private:
    std::vector<Vec3> points_;
    std::optional<Matrix> descriptors_;
};

/// Rigid motion x -> R x + t with R in SO(3).
class RigidTransform {
  public:
    static constexpr double kOrthonormalTolerance = 1e-9;

    RigidTransform() : rotation_(Mat3::Identity()), translation_(Vec3::Zero()) {}

    /// Rejects rotations that are not orthonormal with determinant +1 (tolerance 1e-9).
    RigidTransform(const Mat3& rotation, const Vec3& translation) : rotation_(rotation), translation_(translation) {
        detail::require(rotation.allFinite() && translation.allFinite(), ErrorCode::NonFinite,
                        "transform has non-finite entries");
        const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
        detail::require(ortho <= kOrthonormalTolerance, ErrorCode::NonOrthonormal,
                        "R^T R deviates from identity by " + std::to_string(ortho));
        const double det = rotation.determinant();
        detail::require(std::abs(det - 1.0) <= kOrthonormalTolerance, ErrorCode::NonOrthonormal,
                        "det(R) = " + std::to_string(det));
    }

    static RigidTransform identity() { return {}; }

    /// Projects an approximately orthonormal matrix onto SO(3) via polar decomposition.
    /// Only the weighted-SVD estimator goes through this path.
    static RigidTransform from_polar(const Mat3& approx_rotation, const Vec3& translation) {
        Eigen::JacobiSVD<Mat3> svd(approx_rotation, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Mat3 d = Mat3::Identity();
        d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
        return {svd.matrixU() * d * svd.matrixV().transpose(), translation};
    }

    const Mat3& rotation() const noexcept { return rotation_; }
    const Vec3& translation() const noexcept { return translation_; }

    Vec3 operator()(const Vec3& p) const { return rotation_ * p + translation_; }

    Eigen::Matrix4d matrix() const {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = rotation_;
        m.topRightCorner<3, 1>() = translation_;
        return m;
    }

  private:
    Mat3 rotation_;
    Vec3 translation_;
};

inline PointCloud apply_transform(const RigidTransform& t, const PointCloud& cloud) {
    std::vector<Vec3> out;
    out.reserve(cloud.size());
    for (const auto& p : cloud.points()) out.push_back(t(p));
    return PointCloud(std::move(out), cloud.maybe_descriptors());
}

/// compose(a, b) applies b first, then a.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation() * b.rotation(), a.rotation() * b.translation() + a.translation()};
}

inline RigidTransform invert(const RigidTransform& t) {
    const Mat3 rt = t.rotation().transpose();
    return {rt, -rt * t.translation()};
}

struct Correspondence {
    std::size_t source_index = 0;
    std::size_t target_index = 0;
    double confidence = 1.0;

    std::pair<std::size_t, std::size_t> key() const noexcept { return {source_index, target_index}; }
};

/// Index pairs into a source and a target cloud; (source, target) pairs are unique.
class CorrespondenceSet {
  public:
    CorrespondenceSet() = default;
    CorrespondenceSet(std::size_t source_size, std::size_t target_size)
        : source_size_(source_size), target_size_(target_size) {}

    CorrespondenceSet(std::size_t source_size, std::size_t target_size, const std::vector<Correspondence>& pairs)
        : CorrespondenceSet(source_size, target_size) {
        pairs_.reserve(pairs.size());
        for (const auto& c : pairs) add(c);
    }

    void add(const Correspondence& c) {
        detail::require(c.source_index < source_size_ && c.target_index < target_size_, ErrorCode::OutOfRange,
                        "correspondence (" + std::to_string(c.source_index) + ", " +
                            std::to_string(c.target_index) + ") outside cloud sizes");
        detail::require(std::isfinite(c.confidence), ErrorCode::NonFinite, "confidence must be finite");
        detail::require(keys_.insert(c.key()).second, ErrorCode::InvalidArgument,
                        "duplicate correspondence (" + std::to_string(c.source_index) + ", " +
                            std::to_string(c.target_index) + ")");
        pairs_.push_back(c);
    }

    bool contains(std::size_t source_index, std::size_t target_index) const {
        return keys_.count({source_index, target_index}) != 0;
    }

    std::size_t size() const noexcept { return pairs_.size(); }
    bool empty() const noexcept { return pairs_.empty(); }
    const Correspondence& operator[](std::size_t i) const { return pairs_[i]; }
    const std::vector<Correspondence>& pairs() const noexcept { return pairs_; }
    auto begin() const noexcept { return pairs_.begin(); }
    auto end() const noexcept { return pairs_.end(); }

    std::size_t source_size() const noexcept { return source_size_; }
    std::size_t target_size() const noexcept { return target_size_; }

    /// Same pairs ordered by (source_index, target_index).
    CorrespondenceSet canonical() const {
        std::vector<Correspondence> sorted = pairs_;
        std::sort(sorted.begin(), sorted.end(),
                  [](const Correspondence& a, const Correspondence& b) { return a.key() < b.key(); });
        return CorrespondenceSet(source_size_, target_size_, sorted);
    }

    void check_against(const PointCloud& source, const PointCloud& target) const {
        detail::require(source.size() == source_size_ && target.size() == target_size_, ErrorCode::ShapeMismatch,
                        "correspondence set does not belong to the given clouds");
    }

  private:
    std::size_t source_size_ = 0;
    std::size_t target_size_ = 0;
    std::vector<Correspondence> pairs_;
    std::set<std::pair<std::size_t, std::size_t>> keys_;
};

/// Rotation about a unit axis by an angle in radians.
inline Mat3 axis_angle(const Vec3& axis, double angle) {
    return Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
}

} // namespace oaareg
