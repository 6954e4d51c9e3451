#pragma once

// Point cloud files: PLY (ascii, binary_little_endian) and whitespace XYZ text.

#include "oaareg/core.hpp"

#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace oaareg {

enum class ParseErrorKind { MalformedHeader, CountMismatch, NonFiniteCoordinate, Unreadable };

inline const char* to_string(ParseErrorKind k) {
    switch (k) {
    case ParseErrorKind::MalformedHeader: return "malformed header";
    case ParseErrorKind::CountMismatch: return "inconsistent counts";
    case ParseErrorKind::NonFiniteCoordinate: return "non-finite coordinate";
    case ParseErrorKind::Unreadable: return "unreadable file";
    }
    return "parse error";
}

/// Location is a 1-based line for text content and a byte offset for binary payloads.
class ParseError : public Error {
  public:
    enum class Unit { Line, Byte };

    ParseError(ParseErrorKind kind, std::string path, std::size_t location, Unit unit, const std::string& what)
        : Error(ErrorCode::Parse, path + (unit == Unit::Line ? ":" : "@") + std::to_string(location) + ": " +
                                      to_string(kind) + ": " + what),
          kind_(kind), path_(std::move(path)), location_(location), unit_(unit) {}

    ParseErrorKind kind() const noexcept { return kind_; }
    const std::string& path() const noexcept { return path_; }
    std::size_t location() const noexcept { return location_; }
    Unit unit() const noexcept { return unit_; }

  private:
    ParseErrorKind kind_;
    std::string path_;
    std::size_t location_;
    Unit unit_;
};

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        const std::size_t b = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i > b) out.push_back(s.substr(b, i - b));
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view tok) {
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec == std::errc() && ptr == tok.data() + tok.size()) return v;
    // from_chars rejects "nan"/"inf" spellings on some libraries; strtod as fallback.
    const std::string copy(tok);
    char* end = nullptr;
    v = std::strtod(copy.c_str(), &end);
    if (end != copy.c_str() && *end == '\0') return v;
    return std::nullopt;
}

inline std::optional<std::size_t> parse_count(std::string_view tok) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) return std::nullopt;
    return v;
}

/// Byte width of a PLY scalar type, 0 when unknown.
inline std::size_t ply_type_size(std::string_view t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32") return 4;
    if (t == "double" || t == "float64") return 8;
    return 0;
}

inline double read_scalar(const unsigned char* p, std::string_view t) {
    auto load = [&](auto value) {
        std::memcpy(&value, p, sizeof(value));
        return static_cast<double>(value);
    };
    static_assert(std::endian::native == std::endian::little, "binary PLY reader assumes a little-endian host");
    if (t == "char" || t == "int8") return load(std::int8_t{});
    if (t == "uchar" || t == "uint8") return load(std::uint8_t{});
    if (t == "short" || t == "int16") return load(std::int16_t{});
    if (t == "ushort" || t == "uint16") return load(std::uint16_t{});
    if (t == "int" || t == "int32") return load(std::int32_t{});
    if (t == "uint" || t == "uint32") return load(std::uint32_t{});
    if (t == "float" || t == "float32") return load(float{});
    return load(double{});
}

struct PlyProperty {
    std::string name;
    std::string type;       // scalar type, or item type for lists
    std::string count_type; // nonempty for list properties
};

struct PlyElement {
    std::string name;
    std::size_t count = 0;
    std::vector<PlyProperty> properties;
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(ParseErrorKind::Unreadable, path, 0, ParseError::Unit::Byte, "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline PointCloud finish_cloud(std::vector<Vec3> pts, std::vector<double> desc, std::size_t dim) {
    std::optional<Matrix> d;
    if (dim > 0) {
        d = Matrix(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(dim));
        for (std::size_t i = 0; i < pts.size(); ++i)
            for (std::size_t k = 0; k < dim; ++k)
                (*d)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = desc[i * dim + k];
    }
    return PointCloud(std::move(pts), std::move(d));
}

inline PointCloud parse_ply(const std::string& path, const std::string& data) {
    using U = ParseError::Unit;
    auto fail = [&](ParseErrorKind k, std::size_t loc, U u, const std::string& msg) -> ParseError {
        return ParseError(k, path, loc, u, msg);
    };

    std::size_t pos = 0, line_no = 0;
    auto next_line = [&]() -> std::optional<std::string_view> {
        if (pos >= data.size()) return std::nullopt;
        std::size_t end = data.find('\n', pos);
        if (end == std::string::npos) end = data.size();
        std::string_view line(data.data() + pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        pos = end + 1;
        ++line_no;
        return line;
    };

    auto magic = next_line();
    if (!magic || *magic != "ply") throw fail(ParseErrorKind::MalformedHeader, 1, U::Line, "missing 'ply' magic");
    bool binary = false, have_format = false;
    std::vector<PlyElement> elements;
    bool ended = false;
    while (auto line = next_line()) {
        const auto tok = split_ws(*line);
        if (tok.empty()) continue;
        if (tok[0] == "comment" || tok[0] == "obj_info") continue;
        if (tok[0] == "end_header") {
            ended = true;
            break;
        }
        if (tok[0] == "format") {
            if (tok.size() != 3) throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line, "bad format line");
            if (tok[1] == "ascii")
                binary = false;
            else if (tok[1] == "binary_little_endian")
                binary = true;
            else
                throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line,
                           "unsupported format '" + std::string(tok[1]) + "'");
            have_format = true;
        } else if (tok[0] == "element") {
            std::optional<std::size_t> n;
            if (tok.size() != 3 || !(n = parse_count(tok[2])))
                throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line, "bad element line");
            elements.push_back({std::string(tok[1]), *n, {}});
        } else if (tok[0] == "property") {
            if (elements.empty())
                throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line, "property before any element");
            PlyProperty p;
            if (tok.size() == 5 && tok[1] == "list") {
                p = {std::string(tok[4]), std::string(tok[3]), std::string(tok[2])};
                if (!ply_type_size(p.type) || !ply_type_size(p.count_type))
                    throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line, "unknown list property type");
            } else if (tok.size() == 3) {
                p = {std::string(tok[2]), std::string(tok[1]), ""};
                if (!ply_type_size(p.type))
                    throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line,
                               "unknown property type '" + p.type + "'");
            } else {
                throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line, "bad property line");
            }
            elements.back().properties.push_back(std::move(p));
        } else {
            throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line,
                       "unexpected keyword '" + std::string(tok[0]) + "'");
        }
    }
    if (!ended) throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line, "missing end_header");
    if (!have_format) throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line, "missing format line");

    const PlyElement* vertex = nullptr;
    for (const auto& e : elements)
        if (e.name == "vertex") vertex = &e;
    if (!vertex) throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line, "no vertex element");

    // Locate x, y, z and the f_0..f_{d-1} descriptor run.
    int ix = -1, iy = -1, iz = -1;
    std::vector<int> feature_slot;
    for (std::size_t i = 0; i < vertex->properties.size(); ++i) {
        const auto& p = vertex->properties[i];
        const bool list = !p.count_type.empty();
        const int slot = static_cast<int>(i);
        if (p.name == "x" || p.name == "y" || p.name == "z") {
            if (list || (p.type != "float" && p.type != "float32" && p.type != "double" && p.type != "float64"))
                throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line,
                           "coordinate '" + p.name + "' must be float32 or float64");
            (p.name == "x" ? ix : p.name == "y" ? iy : iz) = slot;
        } else if (p.name.size() > 2 && p.name.rfind("f_", 0) == 0 && !list) {
            if (auto k = parse_count(std::string_view(p.name).substr(2))) {
                if (feature_slot.size() <= *k) feature_slot.resize(*k + 1, -1);
                feature_slot[*k] = slot;
            }
        }
    }
    if (ix < 0 || iy < 0 || iz < 0)
        throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line, "vertex element lacks x, y or z");
    for (std::size_t k = 0; k < feature_slot.size(); ++k)
        if (feature_slot[k] < 0)
            throw fail(ParseErrorKind::MalformedHeader, line_no, U::Line,
                       "descriptor property f_" + std::to_string(k) + " missing");
    const std::size_t dim = feature_slot.size();

    std::vector<Vec3> pts;
    std::vector<double> desc;
    pts.reserve(vertex->count);
    desc.reserve(vertex->count * dim);
    std::vector<double> values;

    auto store = [&](std::size_t loc, U unit) {
        const Vec3 p(values[static_cast<std::size_t>(ix)], values[static_cast<std::size_t>(iy)],
                     values[static_cast<std::size_t>(iz)]);
        if (!p.allFinite())
            throw fail(ParseErrorKind::NonFiniteCoordinate, loc, unit,
                       "vertex " + std::to_string(pts.size()) + " has a non-finite coordinate");
        pts.push_back(p);
        for (int s : feature_slot) desc.push_back(values[static_cast<std::size_t>(s)]);
    };

    if (!binary) {
        for (const auto& e : elements) {
            for (std::size_t r = 0; r < e.count; ++r) {
                std::optional<std::string_view> line;
                do {
                    line = next_line();
                } while (line && split_ws(*line).empty());
                if (!line)
                    throw fail(ParseErrorKind::CountMismatch, line_no + 1, U::Line,
                               "element '" + e.name + "' declares " + std::to_string(e.count) + " rows, file has " +
                                   std::to_string(r));
                const auto tok = split_ws(*line);
                std::size_t t = 0;
                values.assign(e.properties.size(), 0.0);
                for (std::size_t i = 0; i < e.properties.size(); ++i) {
                    const auto& p = e.properties[i];
                    auto need = [&](std::size_t n) {
                        if (t + n > tok.size())
                            throw fail(ParseErrorKind::CountMismatch, line_no, U::Line,
                                       "row has too few values for element '" + e.name + "'");
                    };
                    if (!p.count_type.empty()) {
                        need(1);
                        auto n = parse_count(tok[t]);
                        if (!n) throw fail(ParseErrorKind::CountMismatch, line_no, U::Line, "bad list length");
                        t += 1;
                        need(*n);
                        t += *n;
                        continue;
                    }
                    need(1);
                    auto v = parse_double(tok[t]);
                    if (!v)
                        throw fail(ParseErrorKind::CountMismatch, line_no, U::Line,
                                   "cannot parse '" + std::string(tok[t]) + "' as a number");
                    values[i] = *v;
                    ++t;
                }
                if (t != tok.size())
                    throw fail(ParseErrorKind::CountMismatch, line_no, U::Line,
                               "row has " + std::to_string(tok.size()) + " values, expected " + std::to_string(t));
                if (&e == vertex) store(line_no, U::Line);
            }
        }
        while (auto line = next_line())
            if (!split_ws(*line).empty())
                throw fail(ParseErrorKind::CountMismatch, line_no, U::Line, "data beyond the declared element counts");
    } else {
        const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
        std::size_t off = pos;
        auto need = [&](std::size_t n, const std::string& what) {
            if (off + n > data.size())
                throw fail(ParseErrorKind::CountMismatch, off, U::Byte, "payload ends inside " + what);
        };
        for (const auto& e : elements) {
            for (std::size_t r = 0; r < e.count; ++r) {
                const std::size_t row_start = off;
                values.assign(e.properties.size(), 0.0);
                for (std::size_t i = 0; i < e.properties.size(); ++i) {
                    const auto& p = e.properties[i];
                    if (!p.count_type.empty()) {
                        const std::size_t cs = ply_type_size(p.count_type);
                        need(cs, "element '" + e.name + "' row " + std::to_string(r));
                        const double n = read_scalar(bytes + off, p.count_type);
                        off += cs;
                        if (!(n >= 0.0))
                            throw fail(ParseErrorKind::CountMismatch, off - cs, U::Byte, "negative list length");
                        const std::size_t skip = static_cast<std::size_t>(n) * ply_type_size(p.type);
                        need(skip, "element '" + e.name + "' row " + std::to_string(r));
                        off += skip;
                        continue;
                    }
                    const std::size_t sz = ply_type_size(p.type);
                    need(sz, "element '" + e.name + "' row " + std::to_string(r));
                    values[i] = read_scalar(bytes + off, p.type);
                    off += sz;
                }
                if (&e == vertex) store(row_start, U::Byte);
            }
        }
        if (off != data.size())
            throw fail(ParseErrorKind::CountMismatch, off, U::Byte,
                       std::to_string(data.size() - off) + " bytes beyond the declared element counts");
    }
    return finish_cloud(std::move(pts), std::move(desc), dim);
}

/// One point per nonblank line: x y z, optionally followed by descriptor values.
/// Every nonblank line must carry the same number of columns.
inline PointCloud parse_xyz(const std::string& path, const std::string& data) {
    using U = ParseError::Unit;
    std::vector<Vec3> pts;
    std::vector<double> desc;
    std::optional<std::size_t> columns;
    std::istringstream in(data);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto tok = split_ws(line);
        if (tok.empty() || tok[0].front() == '#') continue;
        if (!columns) {
            if (tok.size() < 3)
                throw ParseError(ParseErrorKind::CountMismatch, path, line_no, U::Line,
                                 "expected at least 3 columns, found " + std::to_string(tok.size()));
            columns = tok.size();
        } else if (tok.size() != *columns) {
            throw ParseError(ParseErrorKind::CountMismatch, path, line_no, U::Line,
                             "found " + std::to_string(tok.size()) + " columns, earlier lines have " +
                                 std::to_string(*columns));
        }
        std::vector<double> v;
        for (auto t : tok) {
            auto d = parse_double(t);
            if (!d)
                throw ParseError(ParseErrorKind::CountMismatch, path, line_no, U::Line,
                                 "cannot parse '" + std::string(t) + "' as a number");
            v.push_back(*d);
        }
        const Vec3 p(v[0], v[1], v[2]);
        if (!p.allFinite())
            throw ParseError(ParseErrorKind::NonFiniteCoordinate, path, line_no, U::Line, "non-finite coordinate");
        pts.push_back(p);
        desc.insert(desc.end(), v.begin() + 3, v.end());
    }
    return finish_cloud(std::move(pts), std::move(desc), columns ? *columns - 3 : 0);
}

} // namespace detail

/// Loads .ply (ascii or binary_little_endian) or whitespace XYZ text, by content:
/// a file starting with "ply" is parsed as PLY.
inline PointCloud load_cloud(const std::string& path) {
    const std::string data = detail::read_file(path);
    if (data.rfind("ply", 0) == 0 && (data.size() == 3 || data[3] == '\n' || data[3] == '\r'))
        return detail::parse_ply(path, data);
    return detail::parse_xyz(path, data);
}

enum class PlyEncoding { BinaryLittleEndian, Ascii };

/// Writes x, y, z (and f_i descriptors when present) as float64.
inline void write_cloud(const std::string& path, const PointCloud& cloud,
                        PlyEncoding encoding = PlyEncoding::BinaryLittleEndian) {
    std::ofstream out(path, std::ios::binary);
    detail::require(static_cast<bool>(out), ErrorCode::InvalidArgument, "cannot open '" + path + "' for writing");
    const std::size_t dim = cloud.has_descriptors() ? static_cast<std::size_t>(cloud.descriptors().cols()) : 0;
    out << "ply\nformat " << (encoding == PlyEncoding::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n"
        << "element vertex " << cloud.size() << "\n"
        << "property double x\nproperty double y\nproperty double z\n";
    for (std::size_t k = 0; k < dim; ++k) out << "property double f_" << k << "\n";
    out << "end_header\n";
    std::vector<double> row(3 + dim);
    char buf[32];
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud[i];
        row[0] = p.x(), row[1] = p.y(), row[2] = p.z();
        for (std::size_t k = 0; k < dim; ++k)
            row[3 + k] = cloud.descriptors()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        if (encoding == PlyEncoding::Ascii) {
            for (std::size_t k = 0; k < row.size(); ++k) {
                std::snprintf(buf, sizeof(buf), "%.17g", row[k]);
                out << (k ? " " : "") << buf;
            }
            out << '\n';
        } else {
            out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(double)));
        }
    }
    detail::require(static_cast<bool>(out), ErrorCode::InvalidArgument, "write to '" + path + "' failed");
}

} // namespace oaareg
