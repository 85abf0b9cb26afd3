#include "met/mesh_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>

#include "met/error.hpp"

namespace met {

namespace {

/// Line-oriented tokenizer that tracks 1-based line numbers and skips blank
/// lines and `#` comments.
class LineReader {
public:
    explicit LineReader(std::istream& in) : in_(in) {}

    bool next(std::vector<std::string>& tokens) {
        std::string line;
        while (std::getline(in_, line)) {
            ++line_no_;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            tokens.clear();
            std::istringstream ss(line);
            std::string tok;
            while (ss >> tok) tokens.push_back(tok);
            if (!tokens.empty()) return true;
        }
        return false;
    }

    void require(std::vector<std::string>& tokens, const char* what) {
        if (!next(tokens)) throw ParseError(std::string("unexpected end of file while reading ") + what, line_no_ + 1);
    }

    std::size_t line() const { return line_no_; }

private:
    std::istream& in_;
    std::size_t line_no_ = 0;
};

double to_double(const std::string& tok, std::size_t line) {
    try {
        std::size_t used = 0;
        double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ParseError("expected a real number, got '" + tok + "'", line);
    }
}

long to_long(const std::string& tok, std::size_t line) {
    long v = 0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
        throw ParseError("expected an integer, got '" + tok + "'", line);
    return v;
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

void check_triangle(const Face& f, std::size_t nv, std::size_t line) {
    for (int idx : f)
        if (idx < 0 || static_cast<std::size_t>(idx) >= nv) throw ParseError("index out of range", line);
    if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) throw ParseError("face repeats a vertex index", line);
}

}  // namespace

void Mesh::validate() const {
    const auto nv = vertices.size();
    for (std::size_t i = 0; i < faces.size(); ++i) {
        const auto& f = faces[i];
        for (int idx : f)
            if (idx < 0 || static_cast<std::size_t>(idx) >= nv)
                throw DataError("face " + std::to_string(i) + " has an index out of range");
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
            throw DataError("face " + std::to_string(i) + " repeats a vertex index");
    }
    if (!normals.empty()) {
        if (normals.size() != faces.size()) throw DataError("normal count does not match face count");
        for (std::size_t i = 0; i < normals.size(); ++i)
            if (std::abs(normals[i].norm() - 1.0) > 1e-6)
                throw DataError("normal of face " + std::to_string(i) + " is not unit length");
    }
}

int LabelMap::map(long raw) {
    auto [it, inserted] = index_.try_emplace(raw, static_cast<int>(order_.size()));
    if (inserted) order_.push_back(raw);
    return it->second;
}

Mesh parse_off(std::istream& in) {
    LineReader reader(in);
    std::vector<std::string> tok;
    if (!reader.next(tok)) throw ParseError("empty file, expected OFF header", 1);

    std::size_t first = 0;
    if (tok[0] == "OFF") {
        first = 1;
    } else if (tok[0].rfind("OFF", 0) == 0 && tok[0].size() > 3) {
        throw ParseError("unsupported OFF variant '" + tok[0] + "'", reader.line());
    } else {
        throw ParseError("malformed header, expected 'OFF'", reader.line());
    }
    if (tok.size() == first) reader.require(tok, "counts"), first = 0;
    if (tok.size() - first < 2) throw ParseError("malformed counts line", reader.line());
    const long nv = to_long(tok[first], reader.line());
    const long nf = to_long(tok[first + 1], reader.line());
    if (nv < 0 || nf < 0) throw ParseError("negative element count", reader.line());

    Mesh mesh;
    mesh.vertices.reserve(static_cast<std::size_t>(nv));
    mesh.faces.reserve(static_cast<std::size_t>(nf));
    for (long i = 0; i < nv; ++i) {
        reader.require(tok, "vertices");
        if (tok.size() < 3) throw ParseError("vertex needs 3 coordinates", reader.line());
        mesh.vertices.emplace_back(to_double(tok[0], reader.line()), to_double(tok[1], reader.line()),
                                   to_double(tok[2], reader.line()));
    }
    for (long i = 0; i < nf; ++i) {
        reader.require(tok, "faces");
        const long arity = to_long(tok[0], reader.line());
        if (arity != 3) throw ParseError("non-triangular face with " + std::to_string(arity) + " vertices", reader.line());
        if (tok.size() < 4) throw ParseError("face line is truncated", reader.line());
        Face f;
        for (int k = 0; k < 3; ++k) {
            const long idx = to_long(tok[1 + k], reader.line());
            if (idx < 0 || idx >= nv) throw ParseError("index out of range", reader.line());
            f[k] = static_cast<int>(idx);
        }
        check_triangle(f, mesh.vertices.size(), reader.line());
        mesh.faces.push_back(f);
    }
    return mesh;
}

Mesh parse_obj(std::istream& in) {
    Mesh mesh;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ss(line);
        std::string kind;
        if (!(ss >> kind)) continue;
        if (kind == "v") {
            std::string x, y, z;
            if (!(ss >> x >> y >> z)) throw ParseError("vertex needs 3 coordinates", line_no);
            mesh.vertices.emplace_back(to_double(x, line_no), to_double(y, line_no), to_double(z, line_no));
        } else if (kind == "f") {
            std::vector<std::string> refs;
            std::string r;
            while (ss >> r) refs.push_back(r);
            if (refs.size() != 3)
                throw ParseError("non-triangular face with " + std::to_string(refs.size()) + " vertices", line_no);
            Face f;
            for (int k = 0; k < 3; ++k) {
                const auto slash = refs[k].find('/');
                const long idx = to_long(refs[k].substr(0, slash), line_no);
                const long nv = static_cast<long>(mesh.vertices.size());
                long resolved = idx > 0 ? idx - 1 : nv + idx;
                if (idx == 0 || resolved < 0 || resolved >= nv) throw ParseError("unresolvable vertex index", line_no);
                f[k] = static_cast<int>(resolved);
            }
            check_triangle(f, mesh.vertices.size(), line_no);
            mesh.faces.push_back(f);
        }
    }
    return mesh;
}

Mesh parse_ply(std::istream& in, std::vector<Rgb>* face_colors) {
    std::string line;
    std::size_t line_no = 0;
    auto getline = [&]() {
        if (!std::getline(in, line)) throw ParseError("unexpected end of file", line_no + 1);
        ++line_no;
        line = trim(line);
    };
    getline();
    if (line != "ply") throw ParseError("malformed header, expected 'ply'", line_no);

    struct Element {
        std::string name;
        long count = 0;
        std::vector<std::string> props;
    };
    std::vector<Element> elements;
    for (;;) {
        getline();
        std::istringstream ss(line);
        std::string kw;
        ss >> kw;
        if (kw == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt != "ascii") throw ParseError("binary PLY is not supported, use ASCII PLY 1.0", line_no);
        } else if (kw == "element") {
            Element e;
            std::string count;
            ss >> e.name >> count;
            e.count = to_long(count, line_no);
            elements.push_back(e);
        } else if (kw == "property") {
            if (elements.empty()) throw ParseError("property before element", line_no);
            std::string type, name;
            ss >> type;
            if (type == "list") {
                std::string ct, it;
                ss >> ct >> it;
            }
            ss >> name;
            elements.back().props.push_back(name);
        } else if (kw == "end_header") {
            break;
        } else if (kw != "comment" && kw != "obj_info" && !kw.empty()) {
            throw ParseError("unknown header keyword '" + kw + "'", line_no);
        }
    }

    Mesh mesh;
    if (face_colors) face_colors->clear();
    for (const auto& e : elements) {
        auto prop_index = [&](const std::string& n) {
            auto it = std::find(e.props.begin(), e.props.end(), n);
            return it == e.props.end() ? -1 : static_cast<int>(it - e.props.begin());
        };
        for (long i = 0; i < e.count; ++i) {
            getline();
            std::istringstream ss(line);
            std::vector<std::string> tok;
            std::string t;
            while (ss >> t) tok.push_back(t);
            if (e.name == "vertex") {
                const int ix = prop_index("x"), iy = prop_index("y"), iz = prop_index("z");
                if (ix < 0 || iy < 0 || iz < 0) throw ParseError("vertex element lacks x/y/z", line_no);
                if (tok.size() < e.props.size()) throw ParseError("vertex line is truncated", line_no);
                mesh.vertices.emplace_back(to_double(tok[ix], line_no), to_double(tok[iy], line_no),
                                           to_double(tok[iz], line_no));
            } else if (e.name == "face") {
                if (tok.empty()) throw ParseError("empty face line", line_no);
                const long arity = to_long(tok[0], line_no);
                if (arity != 3) throw ParseError("non-triangular face with " + std::to_string(arity) + " vertices", line_no);
                if (tok.size() < 4) throw ParseError("face line is truncated", line_no);
                Face f;
                for (int k = 0; k < 3; ++k) f[k] = static_cast<int>(to_long(tok[1 + k], line_no));
                check_triangle(f, mesh.vertices.size(), line_no);
                mesh.faces.push_back(f);
                if (face_colors && tok.size() >= 7) {
                    Rgb c;
                    for (int k = 0; k < 3; ++k) c[k] = static_cast<std::uint8_t>(to_long(tok[4 + k], line_no));
                    face_colors->push_back(c);
                }
            }
        }
    }
    return mesh;
}

Mesh parse_off(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse_off(in);
}

Mesh parse_obj(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse_obj(in);
}

Mesh parse_ply(std::string_view text, std::vector<Rgb>* face_colors) {
    std::istringstream in{std::string(text)};
    return parse_ply(in, face_colors);
}

Mesh load_mesh(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open mesh file '" + path + "'");
    auto ends_with = [&](const char* ext) {
        std::string lower = path;
        std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
        const std::string e(ext);
        return lower.size() >= e.size() && lower.compare(lower.size() - e.size(), e.size(), e) == 0;
    };
    try {
        if (ends_with(".off")) return parse_off(in);
        if (ends_with(".obj")) return parse_obj(in);
        if (ends_with(".ply")) return parse_ply(in);
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
    throw DataError("unrecognized mesh extension for '" + path + "'");
}

LabelVec parse_face_labels(std::istream& in, std::size_t n_faces, LabelMap* shared) {
    LabelMap local;
    LabelMap& map = shared ? *shared : local;
    LabelVec out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty()) continue;
        out.labels.push_back(map.map(to_long(t, line_no)));
    }
    if (out.labels.size() != n_faces)
        throw DataError("label count mismatch: " + std::to_string(out.labels.size()) + " labels for " +
                        std::to_string(n_faces) + " faces");
    out.num_classes = map.size();
    return out;
}

LabelVec parse_face_labels(std::string_view text, std::size_t n_faces, LabelMap* shared) {
    std::istringstream in{std::string(text)};
    return parse_face_labels(in, n_faces, shared);
}

std::string write_off(const Mesh& mesh) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "OFF\n" << mesh.vertices.size() << ' ' << mesh.faces.size() << " 0\n";
    for (const auto& v : mesh.vertices) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (const auto& f : mesh.faces) out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
    return out.str();
}

std::string write_ply_face_colors(const Mesh& mesh, const std::vector<Rgb>& colors) {
    if (colors.size() != mesh.faces.size()) throw DataError("color count does not match face count");
    std::ostringstream out;
    out << "ply\nformat ascii 1.0\n";
    out << "element vertex " << mesh.vertices.size() << '\n';
    out << "property float x\nproperty float y\nproperty float z\n";
    out << "element face " << mesh.faces.size() << '\n';
    out << "property list uchar int vertex_indices\n";
    out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "end_header\n";
    out << std::setprecision(9);
    for (const auto& v : mesh.vertices) out << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
        const auto& f = mesh.faces[i];
        const auto& c = colors[i];
        out << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << ' ' << int(c[0]) << ' ' << int(c[1]) << ' '
            << int(c[2]) << '\n';
    }
    return out.str();
}

std::string write_ply_colored(const Mesh& mesh, const LabelVec& labels, const std::vector<Rgb>& palette) {
    if (static_cast<int>(palette.size()) < labels.num_classes)
        throw DataError("palette too small: " + std::to_string(palette.size()) + " colors for " +
                        std::to_string(labels.num_classes) + " classes");
    if (labels.labels.size() != mesh.faces.size()) throw DataError("label count does not match face count");
    std::vector<Rgb> colors;
    colors.reserve(labels.labels.size());
    for (int l : labels.labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= palette.size())
            throw DataError("label " + std::to_string(l) + " has no palette entry");
        colors.push_back(palette[l]);
    }
    return write_ply_face_colors(mesh, colors);
}

std::vector<Rgb> make_palette(std::size_t n) {
    // Golden-ratio hue walk with three saturation/value tiers; collisions are
    // nudged along the value axis.
    std::vector<Rgb> out;
    std::set<Rgb> seen;
    for (std::size_t i = 0; i < n; ++i) {
        const double h = std::fmod(0.08 + static_cast<double>(i) * 0.618033988749895, 1.0) * 6.0;
        const int tier = static_cast<int>(i % 3);
        const double s = 0.85 - 0.25 * tier;
        double v = 0.95 - 0.2 * ((i / 3) % 2) - 0.1 * tier;
        for (int attempt = 0;; ++attempt) {
            const double c = v * s;
            const double x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
            const double m = v - c;
            double r = 0, g = 0, b = 0;
            switch (static_cast<int>(h) % 6) {
                case 0: r = c, g = x; break;
                case 1: r = x, g = c; break;
                case 2: g = c, b = x; break;
                case 3: g = x, b = c; break;
                case 4: r = x, b = c; break;
                default: r = c, b = x; break;
            }
            Rgb rgb{static_cast<std::uint8_t>(std::lround((r + m) * 255)),
                    static_cast<std::uint8_t>(std::lround((g + m) * 255)),
                    static_cast<std::uint8_t>(std::lround((b + m) * 255))};
            if (seen.insert(rgb).second) {
                out.push_back(rgb);
                break;
            }
            v = std::fmod(v + 0.0137 * (attempt + 1), 0.7) + 0.3;
        }
    }
    return out;
}

namespace {

struct CellKey {
    long long x, y, z;
    bool operator==(const CellKey&) const = default;
};

struct CellHash {
    std::size_t operator()(const CellKey& k) const {
        std::size_t h = std::hash<long long>()(k.x);
        h = h * 1000003u ^ std::hash<long long>()(k.y);
        h = h * 1000003u ^ std::hash<long long>()(k.z);
        return h;
    }
};

}  // namespace

Mesh merge_duplicate_vertices(const Mesh& mesh, double eps, std::vector<int>& kept_faces) {
    if (eps < 0) throw DataError("merge tolerance must be nonnegative");
    const double cell = eps > 0 ? eps : 1.0;
    auto key_of = [&](const Vec3& p) {
        if (eps == 0) return CellKey{0, 0, 0};
        return CellKey{static_cast<long long>(std::floor(p.x() / cell)), static_cast<long long>(std::floor(p.y() / cell)),
                       static_cast<long long>(std::floor(p.z() / cell))};
    };

    // representatives bucketed by grid cell; for eps == 0 an exact-coordinate map
    std::unordered_map<CellKey, std::vector<int>, CellHash> grid;
    std::map<std::array<double, 3>, int> exact;
    Mesh out;
    std::vector<int> remap(mesh.vertices.size(), -1);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& p = mesh.vertices[i];
        int found = -1;
        if (eps == 0) {
            auto it = exact.find({p.x(), p.y(), p.z()});
            if (it != exact.end()) found = it->second;
        } else {
            const CellKey k = key_of(p);
            for (long long dx = -1; dx <= 1; ++dx)
                for (long long dy = -1; dy <= 1; ++dy)
                    for (long long dz = -1; dz <= 1; ++dz) {
                        auto it = grid.find({k.x + dx, k.y + dy, k.z + dz});
                        if (it == grid.end()) continue;
                        for (int rep : it->second)
                            if ((out.vertices[rep] - p).norm() <= eps && (found < 0 || rep < found)) found = rep;
                    }
        }
        if (found < 0) {
            found = static_cast<int>(out.vertices.size());
            out.vertices.push_back(p);
            if (eps == 0)
                exact.emplace(std::array<double, 3>{p.x(), p.y(), p.z()}, found);
            else
                grid[key_of(p)].push_back(found);
        }
        remap[i] = found;
    }

    kept_faces.clear();
    for (std::size_t i = 0; i < mesh.faces.size(); ++i) {
        Face f{remap[mesh.faces[i][0]], remap[mesh.faces[i][1]], remap[mesh.faces[i][2]]};
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2]) continue;
        out.faces.push_back(f);
        kept_faces.push_back(static_cast<int>(i));
    }
    return out;
}

Mesh merge_duplicate_vertices(const Mesh& mesh, double eps) {
    std::vector<int> kept;
    return merge_duplicate_vertices(mesh, eps, kept);
}

}  // namespace met
